"""On-manifold perturbation, stitching and the end-to-end defense."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import DetectionConfig, OnBoundaryImage, detect_cross_boundary, localize_on_boundary, select_last_k
from .errors import ConfigurationError, InputError
from .generator import DipTrace, GeneratorConfig, run_dip_trace
from .metrics import SsimConfig
from .tensorio import save_image, write_tensor
from .victim import ClassifierAdapter, DecisionTrace, map_trace_to_decisions, predict_labels


@dataclass(frozen=True)
class ReconstructionConfig:
    beta: float = 0.5

    def __post_init__(self):
        if not self.beta >= 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")


@dataclass
class Diagnostics:
    """What the defense saw, kept for plotting and auditing."""

    decisions: DecisionTrace
    detected: list[int]
    selected: list[int]
    boundary: list[OnBoundaryImage]
    trace: DipTrace | None = field(default=None, repr=False)


@dataclass
class DefenseResult:
    reconstructed: np.ndarray
    used_fallback: bool
    pairs_used: int
    predicted_label: int
    per_stage: Diagnostics | None = None
    alphas: list[float] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "predicted_label": int(self.predicted_label),
            "used_fallback": bool(self.used_fallback),
            "pairs_used": int(self.pairs_used),
            "alphas": [float(a) for a in self.alphas],
            "gaps": [float(g) for g in self.gaps],
        }

    def save(self, directory, stem: str = "reconstruction") -> None:
        """Write ``<stem>.json``, ``<stem>.png`` and ``<stem>.dpt`` into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        save_image(d / f"{stem}.png", self.reconstructed)
        write_tensor(d / f"{stem}.dpt", self.reconstructed)


def perturb_to_manifold(x_bd, x0, beta: float) -> np.ndarray:
    """Step ``beta * (x_bd - x0)`` away from the input, then clip to [0, 1]."""
    x_bd = np.asarray(x_bd, dtype=np.float32)
    x0 = np.asarray(x0, dtype=np.float32)
    if x_bd.shape != x0.shape:
        raise InputError(f"shape mismatch: {x_bd.shape} vs {x0.shape}")
    if not beta >= 0:
        raise InputError(f"beta must be >= 0, got {beta}")
    if beta == 0:
        return x_bd.copy()
    return np.clip(x_bd + beta * (x_bd - x0), 0.0, 1.0).astype(np.float32)


def stitch(images) -> np.ndarray:
    """Pixelwise mean (float64 accumulation, float32 result)."""
    if len(images) == 0:
        raise InputError("nothing to stitch")
    stack = np.stack([np.asarray(im) for im in images])
    return stack.astype(np.float64).mean(axis=0).astype(np.float32)


def reconstruct_from_trace(
    trace: DipTrace,
    decisions: DecisionTrace,
    x0,
    adapter: ClassifierAdapter,
    det_cfg: DetectionConfig = DetectionConfig(),
    rec_cfg: ReconstructionConfig = ReconstructionConfig(),
    eval_adapter: ClassifierAdapter | None = None,
    diagnostics: bool = False,
) -> DefenseResult:
    """Everything after the generator run: detect, localize, perturb, stitch."""
    if len(trace) != len(decisions) or not np.array_equal(trace.iterations, decisions.iterations):
        raise InputError("trace and decision trace are not aligned")
    x0 = np.asarray(x0, dtype=np.float32)

    pairs = detect_cross_boundary(decisions, det_cfg, images=trace.images)
    chosen = select_last_k(pairs, det_cfg.max_pairs_k)
    boundary = [localize_on_boundary(p, adapter, det_cfg.grid_sections_n) for p in chosen]

    if boundary:
        manifold = [perturb_to_manifold(b.image, x0, rec_cfg.beta) for b in boundary]
        x_rec = stitch(manifold)
        fallback = False
    else:
        x_rec = stitch(trace.images[-det_cfg.max_pairs_k :])
        fallback = True

    judge = eval_adapter if eval_adapter is not None else adapter
    label = int(predict_labels(judge, x_rec[None])[0])
    stages = None
    if diagnostics:
        stages = Diagnostics(
            decisions=decisions,
            detected=[p.position for p in pairs],
            selected=[p.position for p in chosen],
            boundary=boundary,
            trace=trace,
        )
    return DefenseResult(
        reconstructed=x_rec,
        used_fallback=fallback,
        pairs_used=len(boundary),
        predicted_label=label,
        per_stage=stages,
        alphas=[b.alpha for b in boundary],
        gaps=[b.gap for b in boundary],
    )


def defend(
    x0,
    adapter: ClassifierAdapter,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    det_cfg: DetectionConfig = DetectionConfig(),
    rec_cfg: ReconstructionConfig = ReconstructionConfig(),
    eval_adapter: ClassifierAdapter | None = None,
    diagnostics: bool = False,
    ssim_config: SsimConfig = SsimConfig(),
) -> DefenseResult:
    """Purify ``x0``.

    Fits a fresh generator to ``x0``, reads the trace through ``adapter``,
    and rebuilds the image from the last boundary crossings. When
    ``eval_adapter`` is given the final label comes from it instead, so one
    model can guide the reconstruction while another is defended.
    """
    x0 = np.asarray(x0, dtype=np.float32)
    trace = run_dip_trace(x0, gen_cfg)
    decisions = map_trace_to_decisions(trace, adapter, x0, ssim_config)
    return reconstruct_from_trace(trace, decisions, x0, adapter, det_cfg, rec_cfg, eval_adapter, diagnostics)
