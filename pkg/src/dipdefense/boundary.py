"""Cross-boundary detection on a decision trace and 1-D boundary localization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .victim import ClassifierAdapter, DecisionTrace, predict


@dataclass(frozen=True)
class DetectionConfig:
    tau: float = 0.7
    warmup_t0: int = 50
    max_pairs_k: int = 15
    grid_sections_n: int = 20

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"tau must lie in [0, 1], got {self.tau}")
        if self.warmup_t0 < 0:
            raise ConfigurationError("warmup_t0 must be >= 0")
        if self.max_pairs_k < 1:
            raise ConfigurationError("max_pairs_k must be >= 1")
        if self.grid_sections_n < 2:
            raise ConfigurationError("grid_sections_n must be >= 2")


@dataclass
class CrossBoundaryPair:
    """Two consecutive trace samples whose predicted labels differ.

    ``index`` is the generator iteration of the left sample and ``position``
    its slot in the stored trace.
    """

    index: int
    position: int
    left: np.ndarray
    right: np.ndarray
    left_label: int
    right_label: int
    left_quality: float


@dataclass
class OnBoundaryImage:
    image: np.ndarray
    alpha: float
    gap: float
    source_index: int
    # set when the winning class at alpha is neither pair label
    off_pair_argmax: bool = False
    grid_gaps: np.ndarray | None = field(default=None, repr=False)


def cross_boundary_positions(decisions: DecisionTrace, cfg: DetectionConfig) -> np.ndarray:
    """Trace positions i with a label flip to i+1, quality gate and warmup met."""
    y = np.asarray(decisions.labels)
    if len(y) < 2:
        return np.empty(0, dtype=np.int64)
    flips = y[:-1] != y[1:]
    gate = np.asarray(decisions.qualities)[:-1] >= cfg.tau
    warm = np.asarray(decisions.iterations)[:-1] > cfg.warmup_t0
    return np.flatnonzero(flips & gate & warm)


def detect_cross_boundary(decisions: DecisionTrace, cfg: DetectionConfig, images=None) -> list[CrossBoundaryPair]:
    """All cross-boundary pairs in trace order.

    Args:
        decisions: the decision trace.
        cfg: detection thresholds.
        images: (n, C, H, W) trace images aligned with ``decisions``; pairs
            carry ``None`` images when omitted.
    """
    if images is not None and len(images) != len(decisions):
        raise InputError(f"{len(images)} images for {len(decisions)} decisions")
    pairs = []
    for i in cross_boundary_positions(decisions, cfg):
        pairs.append(
            CrossBoundaryPair(
                index=int(decisions.iterations[i]),
                position=int(i),
                left=None if images is None else images[i],
                right=None if images is None else images[i + 1],
                left_label=int(decisions.labels[i]),
                right_label=int(decisions.labels[i + 1]),
                left_quality=float(decisions.qualities[i]),
            )
        )
    return pairs


def select_last_k(pairs: list, k: int) -> list:
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    return list(pairs[-k:])


def interpolate(left, right, alpha: float) -> np.ndarray:
    """``alpha * left + (1 - alpha) * right`` pixelwise."""
    left = np.asarray(left)
    right = np.asarray(right)
    if left.shape != right.shape:
        raise InputError(f"shape mismatch: {left.shape} vs {right.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    dtype = np.result_type(left.dtype, right.dtype, np.float32)
    return (alpha * left + (1.0 - alpha) * right).astype(dtype, copy=False)


def alpha_grid(n: int) -> np.ndarray:
    return np.arange(n + 1, dtype=np.float64) / n


def localize_on_boundary(pair: CrossBoundaryPair, adapter: ClassifierAdapter, n: int = 20) -> OnBoundaryImage:
    """Grid search for the interpolant where the two pair classes tie.

    Evaluates the confidence gap between ``left_label`` and ``right_label``
    at alpha = 0, 1/n, ..., 1 and returns the minimizer (smallest alpha on
    ties). For a single sign change of the gap the returned alpha is within
    1/(2n) of the true crossing.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if pair.left is None or pair.right is None:
        raise InputError("pair carries no images")
    alphas = alpha_grid(n)
    candidates = np.stack([interpolate(pair.left, pair.right, a) for a in alphas])
    conf = predict(adapter, candidates)
    gaps = np.abs(conf[:, pair.left_label] - conf[:, pair.right_label])
    best = int(np.argmin(gaps))
    image = np.clip(candidates[best], 0.0, 1.0)
    winner = int(np.argmax(conf[best]))
    return OnBoundaryImage(
        image=image,
        alpha=float(alphas[best]),
        gap=float(gaps[best]),
        source_index=pair.index,
        off_pair_argmax=winner not in (pair.left_label, pair.right_label),
        grid_gaps=gaps,
    )
