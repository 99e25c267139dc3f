"""Victim classifier adapters and projection of a trace into decision space."""

from __future__ import annotations

import importlib.util
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CapabilityError, ConfigurationError, InputError
from .metrics import SsimConfig, ssim


def softmax(logits, axis=-1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class ClassifierAdapter:
    """Interface every victim classifier implements.

    Subclasses provide ``logits``; differentiable ones also provide
    ``loss_gradient``. Inputs are always raw [0, 1] images: any model-specific
    normalization happens inside the adapter.
    """

    num_classes: int
    input_shape: tuple[int, ...] | None = None
    differentiable = False
    thread_safe = True

    def logits(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_gradient(self, images: np.ndarray, labels) -> np.ndarray:
        """Gradient of the per-image cross-entropy loss w.r.t. the input pixels."""
        raise CapabilityError(f"{type(self).__name__} does not expose gradients")

    def check_batch(self, images, dtype=np.float32) -> np.ndarray:
        images = np.ascontiguousarray(images, dtype=dtype)
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4:
            raise InputError(f"expected a batch of (C, H, W) images, got shape {images.shape}")
        if self.input_shape is not None and tuple(images.shape[1:]) != tuple(self.input_shape):
            raise InputError(f"adapter expects images of shape {self.input_shape}, got {images.shape[1:]}")
        return images


def predict(adapter: ClassifierAdapter, images) -> np.ndarray:
    """Softmax confidences, shape (N, num_classes)."""
    batch = adapter.check_batch(images)
    return softmax(adapter.logits(batch))


def predict_labels(adapter: ClassifierAdapter, images) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class id
    return np.argmax(predict(adapter, images), axis=1)


class TorchClassifier(ClassifierAdapter):
    """Adapter around a ``torch.nn.Module`` producing class scores.

    The module sees ``(x * input_scale - mean) / std``. Images are evaluated
    one at a time so that batched and single-image results are bit-identical.
    """

    differentiable = True

    def __init__(self, model: nn.Module, num_classes: int, mean=0.0, std=1.0, input_scale=1.0,
                 input_shape=None):
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.num_classes = int(num_classes)
        self.mean = torch.as_tensor(mean, dtype=torch.float32).reshape(-1, 1, 1)
        self.std = torch.as_tensor(std, dtype=torch.float32).reshape(-1, 1, 1)
        self.input_scale = float(input_scale)
        self.input_shape = tuple(input_shape) if input_shape is not None else None

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model((x * self.input_scale - self.mean) / self.std)

    def logits(self, images):
        batch = torch.from_numpy(self.check_batch(images))
        with torch.no_grad():
            out = [self._forward(batch[i : i + 1]) for i in range(batch.shape[0])]
        return torch.cat(out).double().numpy()

    def loss_gradient(self, images, labels):
        batch = torch.from_numpy(self.check_batch(images).copy())
        labels = torch.as_tensor(np.atleast_1d(labels), dtype=torch.long)
        grads = []
        for i in range(batch.shape[0]):
            x = batch[i : i + 1].clone().requires_grad_(True)
            loss = F.cross_entropy(self._forward(x), labels[i : i + 1])
            (g,) = torch.autograd.grad(loss, x)
            grads.append(g)
        return torch.cat(grads).numpy()


# decision trace --------------------------------------------------------------


@dataclass
class DecisionTrace:
    """Classifier view of a trace, one entry per stored sample."""

    iterations: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    qualities: np.ndarray

    def __len__(self):
        return len(self.iterations)

    @property
    def entries(self):
        return list(zip(self.iterations.tolist(), self.labels.tolist(), self.confidences, self.qualities.tolist()))


def decisions_from_confidences(iterations, confidences, qualities) -> DecisionTrace:
    conf = np.asarray(confidences, dtype=np.float64)
    return DecisionTrace(
        iterations=np.asarray(iterations, dtype=np.int64),
        labels=np.argmax(conf, axis=1),
        confidences=conf,
        qualities=np.asarray(qualities, dtype=np.float64),
    )


def map_trace_to_decisions(trace, adapter: ClassifierAdapter, reference=None,
                           ssim_config: SsimConfig = SsimConfig()) -> DecisionTrace:
    """Label, confidences and SSIM-to-reference for every trace sample.

    ``reference`` defaults to the trace target (the image being purified).
    """
    if len(trace) == 0:
        raise InputError("cannot map an empty trace")
    ref = trace.target if reference is None else np.asarray(reference, dtype=np.float32)
    conf = predict(adapter, trace.images)
    quality = [ssim(img, ref, ssim_config) for img in trace.images]
    return decisions_from_confidences(trace.iterations, conf, quality)


# registry --------------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., ClassifierAdapter]] = {}


def register_adapter(name: str, factory: Callable[..., ClassifierAdapter]) -> None:
    _REGISTRY[name] = factory


def create_adapter(name: str, **kwargs) -> ClassifierAdapter:
    if name not in _REGISTRY:
        raise ConfigurationError(f"unknown adapter {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def available_adapters() -> list[str]:
    return sorted(_REGISTRY)


# bundled pretrained CIFAR-10 CNN ---------------------------------------------

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


def _keras_cnn() -> nn.Sequential:
    layers: list[nn.Module] = []
    cin = 3
    for i, c in enumerate((64, 64, 128, 128, 64, 64)):
        layers += [nn.Conv2d(cin, c, 3), nn.ReLU(), nn.BatchNorm2d(c, eps=1e-3)]
        if i in (1, 3):
            layers.append(nn.MaxPool2d(2))
        cin = c
    layers.append(nn.Flatten())
    for a, b in ((64, 1024), (1024, 512), (512, 10)):
        layers += [nn.Linear(a, b), nn.ReLU()]
    return nn.Sequential(*layers)


def default_cifar10_weights() -> Path:
    """Location of the h5 file shipped by the ``cifar-10-model`` distribution."""
    spec = importlib.util.find_spec("cifar_10_model")
    if spec is None or not spec.submodule_search_locations:
        raise ConfigurationError(
            "no weights path given and the 'cifar-10-model' package is not installed "
            "(pip install --no-deps cifar-10-model==7.4.0)"
        )
    path = Path(list(spec.submodule_search_locations)[0]) / "trained_models" / "cnn_model.h5"
    if not path.exists():
        raise ConfigurationError(f"expected weights at {path}")
    return path


def load_keras_cifar10_cnn(weights_path=None) -> nn.Sequential:
    """Rebuild the Keras 6-conv CIFAR-10 CNN in torch from its h5 weight file.

    The network expects channel-first input on the 0-255 scale.
    """
    import h5py

    path = Path(weights_path) if weights_path else default_cifar10_weights()
    if not path.exists():
        raise ConfigurationError(f"weights file {path} not found")
    model = _keras_cnn()
    convs = [m for m in model if isinstance(m, nn.Conv2d)]
    bns = [m for m in model if isinstance(m, nn.BatchNorm2d)]
    denses = [m for m in model if isinstance(m, nn.Linear)]

    def name(base, i):
        return base if i == 0 else f"{base}_{i}"

    with h5py.File(path, "r") as f:
        w = f["model_weights"]

        def get(layer, key):
            return torch.from_numpy(np.array(w[layer][layer][key + ":0"], dtype=np.float32))

        for i, m in enumerate(convs):
            n = name("conv2d", i)
            m.weight.data = get(n, "kernel").permute(3, 2, 0, 1).contiguous()
            m.bias.data = get(n, "bias")
        for i, m in enumerate(bns):
            n = name("batch_normalization", i)
            m.weight.data = get(n, "gamma")
            m.bias.data = get(n, "beta")
            m.running_mean.data = get(n, "moving_mean")
            m.running_var.data = get(n, "moving_variance")
        for i, m in enumerate(denses):
            n = name("dense", i)
            m.weight.data = get(n, "kernel").T.contiguous()
            m.bias.data = get(n, "bias")
    return model.eval()


def _keras_cifar10_factory(weights_path=None, **_):
    return TorchClassifier(load_keras_cifar10_cnn(weights_path), 10, input_scale=255.0, input_shape=(3, 32, 32))


def _torchscript_factory(path, num_classes, mean=0.0, std=1.0, input_scale=1.0, **_):
    """Any TorchScript classifier saved with ``torch.jit.save``."""
    if not Path(path).exists():
        raise ConfigurationError(f"model file {path} not found")
    model = torch.jit.load(str(path), map_location="cpu")
    return TorchClassifier(model, int(num_classes), mean=mean, std=std, input_scale=float(input_scale))


register_adapter("keras-cifar10-cnn", _keras_cifar10_factory)
register_adapter("torchscript", _torchscript_factory)
