"""Walkthrough: attack one CIFAR-10 image, purify it, and plot the trace.

Writes ``walkthrough.png`` / ``walkthrough.csv`` next to this script.

    python notebooks/defense_walkthrough.py
"""

from pathlib import Path

import numpy as np

from dipdefense import AttackConfig, GeneratorConfig, create_adapter, defend, predict_labels, run_attack, ssim
from dipdefense.harness.data import bundled_cifar10_samples
from dipdefense.harness.plots import emit_defense_visualization
from dipdefense.tensorio import load_image
from dipdefense.victim import CIFAR10_CLASSES


def main():
    clf = create_adapter("keras-cifar10-cnn")
    path, label = bundled_cifar10_samples()[0]
    x = load_image(path)

    # PGD at 8/255 with the default 20 steps and a random start
    x_adv = run_attack(clf, x, label, AttackConfig.from_255("PGD", 8, seed=0))
    print(f"true {CIFAR10_CLASSES[label]}, clean pred {CIFAR10_CLASSES[predict_labels(clf, x)[0]]}, "
          f"adversarial pred {CIFAR10_CLASSES[predict_labels(clf, x_adv)[0]]}")

    result = defend(x_adv, clf, GeneratorConfig.cifar(), diagnostics=True)
    print(f"defended pred {CIFAR10_CLASSES[result.predicted_label]}, pairs used {result.pairs_used}, "
          f"fallback {result.used_fallback}")
    print(f"SSIM(rec, clean) {ssim(result.reconstructed, x):.3f}, "
          f"Linf(rec - clean) {np.abs(result.reconstructed - x).max() * 255:.1f}/255")

    info = emit_defense_visualization(result, Path(__file__).with_name("walkthrough"), CIFAR10_CLASSES)
    print("label flips at iterations", info["markers"])


if __name__ == "__main__":
    main()
