"""Analytic classifiers and scripted traces.

These stand in for the victim network and the generator so that boundary
detection, localization and stitching can be checked against closed-form
answers while still running through the production code paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, NoCrossingError
from .generator import DipTrace
from .victim import ClassifierAdapter, DecisionTrace, decisions_from_confidences, register_adapter, softmax


class LinearClassifier(ClassifierAdapter):
    """Softmax of ``W @ x + b`` over the flattened image.

    Args:
        weights: (C, d) matrix.
        bias: (C,) vector; zeros if omitted.
        input_shape: image shape whose size is ``d``; defaults to (1, 1, d).
    """

    differentiable = True

    def __init__(self, weights, bias=None, input_shape=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError("weights must be a (C, d) matrix")
        c, d = self.weights.shape
        self.bias = np.zeros(c) if bias is None else np.asarray(bias, dtype=np.float64).reshape(c)
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ConfigurationError("classifier parameters must be finite")
        self.num_classes = c
        self.input_shape = tuple(input_shape) if input_shape is not None else (1, 1, d)
        if int(np.prod(self.input_shape)) != d:
            raise ConfigurationError(f"input_shape {self.input_shape} does not have {d} pixels")

    @classmethod
    def two_class_from_gaps(cls, left, right, gap_left, gap_right) -> "LinearClassifier":
        """Two-class classifier whose logit gap (class 0 minus class 1) takes
        ``gap_left`` at image ``left`` and ``gap_right`` at image ``right``.

        The gap is affine in the pixels, so along the segment between the two
        images it is exactly linear in the interpolation weight.
        """
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        diff = (left - right).ravel()
        norm2 = float(diff @ diff)
        if norm2 == 0.0:
            raise InputError("left and right images coincide")
        w = diff * (gap_left - gap_right) / norm2
        b = gap_left - float(w @ left.ravel())
        weights = np.stack([w, np.zeros_like(w)])
        return cls(weights, np.array([b, 0.0]), input_shape=left.shape)

    def logits(self, images):
        # float64 throughout so the closed forms hold to rounding error
        batch = self.check_batch(images, np.float64)
        return batch.reshape(batch.shape[0], -1) @ self.weights.T + self.bias

    def loss_gradient(self, images, labels):
        batch = self.check_batch(images, np.float64)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        p = softmax(self.logits(batch))
        p[np.arange(len(labels)), labels] -= 1.0
        return (p @ self.weights).reshape(batch.shape)

    def loss(self, images, labels) -> np.ndarray:
        """Per-image cross-entropy, used by finite-difference checks."""
        z = self.logits(images)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        zmax = z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
        return lse - z[np.arange(len(labels)), labels]


def analytic_boundary_alpha(gap_left: float, gap_right: float) -> float:
    """Root of ``a * gap_left + (1 - a) * gap_right = 0``."""
    if gap_left == 0.0 and gap_right == 0.0:
        raise NoCrossingError("both gaps are zero; every weight is a root")
    if np.sign(gap_left) == np.sign(gap_right):
        raise NoCrossingError(f"gaps {gap_left} and {gap_right} share a sign")
    return -gap_right / (gap_left - gap_right)


@dataclass
class ScriptedTrace:
    """Hand-written trace: waypoint images plus injected quality values.

    Iteration indices default to 1, 2, ..., n.
    """

    waypoints: list
    qualities: list
    iterations: list | None = None
    target: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = [np.asarray(w, dtype=np.float32) for w in self.waypoints]
        if not self.waypoints:
            raise InputError("a scripted trace needs at least one waypoint")
        shape = self.waypoints[0].shape
        if any(w.shape != shape for w in self.waypoints):
            raise InputError("waypoint shapes differ")
        if len(self.qualities) != len(self.waypoints):
            raise InputError("one quality value per waypoint is required")
        if self.iterations is None:
            self.iterations = list(range(1, len(self.waypoints) + 1))
        if len(self.iterations) != len(self.waypoints):
            raise InputError("one iteration index per waypoint is required")

    def as_dip_trace(self) -> DipTrace:
        images = np.stack(self.waypoints)
        target = images[-1] if self.target is None else np.asarray(self.target, dtype=np.float32)
        mse = np.mean((images.astype(np.float64) - target) ** 2, axis=(1, 2, 3))
        return DipTrace(np.asarray(self.iterations, dtype=np.int64), images, mse, target)


def scripted_trace_decisions(trace: ScriptedTrace, clf: ClassifierAdapter) -> DecisionTrace:
    """Labels and confidences from ``clf``; qualities copied from the script."""
    images = np.stack(trace.waypoints)
    if clf.input_shape is not None and tuple(images.shape[1:]) != tuple(clf.input_shape):
        raise InputError(f"waypoints have shape {images.shape[1:]}, classifier expects {clf.input_shape}")
    conf = softmax(clf.logits(images))
    return decisions_from_confidences(trace.iterations, conf, trace.qualities)


def _synthetic_linear_factory(path=None, num_classes=2, dim=16, seed=0, scale=1.0, **_):
    """Build from an ``.npz`` holding ``weights``/``bias`` or draw a random one."""
    if path:
        if not Path(path).exists():
            raise ConfigurationError(f"weights file {path} not found")
        data = np.load(path)
        shape = tuple(int(v) for v in data["input_shape"]) if "input_shape" in data else None
        return LinearClassifier(data["weights"], data.get("bias"), input_shape=shape)
    rng = np.random.default_rng(int(seed))
    w = rng.normal(scale=float(scale), size=(int(num_classes), int(dim)))
    return LinearClassifier(w, rng.normal(scale=0.1, size=int(num_classes)))


register_adapter("synthetic-linear", _synthetic_linear_factory)
