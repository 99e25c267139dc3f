"""Training-free adversarial purification from a deep-image-prior trace.

The defense fits an untrained generator to the (possibly attacked) input,
reads every recorded reconstruction through the victim classifier, finds
where the labels flip, pins the images that sit on those decision
boundaries, nudges them away from the input and averages them.

Typical use::

    from dipdefense import GeneratorConfig, create_adapter, defend

    clf = create_adapter("keras-cifar10-cnn")
    result = defend(x_adv, clf, GeneratorConfig.cifar())
    result.predicted_label, result.reconstructed
"""

from .attacks import AdversarialBatch, AttackConfig, bim, bpda_attack, fgsm, mifgsm, pgd, run_attack
from .boundary import (
    CrossBoundaryPair,
    DetectionConfig,
    OnBoundaryImage,
    detect_cross_boundary,
    interpolate,
    localize_on_boundary,
    select_last_k,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    DefenseError,
    InputError,
    NoCrossingError,
    OptimizationDivergedError,
)
from .generator import DipTrace, GeneratorConfig, build_generator, run_dip_trace, sample_noise
from .metrics import SsimConfig, accuracy, psnr, ssim
from .reconstruct import (
    DefenseResult,
    ReconstructionConfig,
    defend,
    perturb_to_manifold,
    reconstruct_from_trace,
    stitch,
)
from .synthetic import LinearClassifier, ScriptedTrace, analytic_boundary_alpha, scripted_trace_decisions
from .victim import (
    ClassifierAdapter,
    DecisionTrace,
    TorchClassifier,
    available_adapters,
    create_adapter,
    map_trace_to_decisions,
    predict,
    predict_labels,
    register_adapter,
)

__version__ = "0.1.0"
