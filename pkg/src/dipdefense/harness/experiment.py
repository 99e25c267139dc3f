"""Experiment orchestration: attack, defend and score every image of a dataset."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..attacks import AdversarialBatch, run_attack
from ..errors import ConfigurationError
from ..generator import run_dip_trace
from ..metrics import ssim
from ..reconstruct import reconstruct_from_trace
from ..victim import create_adapter, map_trace_to_decisions, predict_labels
from .config import ExperimentConfig, resolve_output_dir
from .data import LabeledImage, load_dataset

# column order of the per-image table
ROW_FIELDS = (
    "image_id",
    "condition",
    "attack",
    "epsilon_255",
    "steps",
    "true_label",
    "undefended_pred",
    "defended_pred",
    "ssim_rec_clean",
    "ssim_rec_input",
    "ssim_input_clean",
    "linf_input_clean",
    "pairs_used",
    "used_fallback",
    "off_pair_count",
    "alphas",
    "gaps",
    "bpda_path_labels",
    "error",
)

INT_FIELDS = {"steps", "true_label", "undefended_pred", "defended_pred", "pairs_used", "off_pair_count"}
FLOAT_FIELDS = {"epsilon_255", "ssim_rec_clean", "ssim_rec_input", "ssim_input_clean", "linf_input_clean"}
LIST_FIELDS = {"alphas": float, "gaps": float, "bpda_path_labels": int}
BOOL_FIELDS = {"used_fallback"}


def derive_seed(*parts) -> int:
    """Stable 31-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()
    return int(digest[:8], 16) & 0x7FFFFFFF


def _mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else float("nan")


def compute_aggregates(rows: list[dict]) -> dict:
    """Summary numbers; a function of the rows alone.

    Failed rows (non-empty ``error``) count as misclassified and are left out
    of SSIM means. ``mean_defended_accuracy`` averages the defended accuracy
    over every condition present, clean included.
    """
    conditions: dict[str, list] = {}
    for r in rows:
        conditions.setdefault(r["condition"], []).append(r)
    per = {}
    for name, rs in conditions.items():
        n = len(rs)
        per[name] = {
            "count": n,
            "failures": sum(1 for r in rs if r["error"]),
            "undefended_accuracy": sum(r["undefended_pred"] == r["true_label"] for r in rs) / n,
            "defended_accuracy": sum(r["defended_pred"] == r["true_label"] for r in rs) / n,
            "mean_ssim_rec_clean": _mean([r["ssim_rec_clean"] for r in rs]),
            "mean_ssim_rec_input": _mean([r["ssim_rec_input"] for r in rs]),
            "fallback_rate": sum(bool(r["used_fallback"]) for r in rs) / n,
        }
    clean = per.get("clean")
    return {
        "num_images": len({r["image_id"] for r in rows}),
        "num_rows": len(rows),
        "clean_accuracy": clean["undefended_accuracy"] if clean else None,
        "clean_defended_accuracy": clean["defended_accuracy"] if clean else None,
        "mean_defended_accuracy": _mean([v["defended_accuracy"] for v in per.values()]),
        "mean_ssim_rec_clean": _mean([r["ssim_rec_clean"] for r in rows]),
        "conditions": {k: per[k] for k in sorted(per)},
    }


@dataclass
class EvaluationReport:
    """Per-(image, condition) rows plus the config snapshot they came from.

    Wall times live in ``timings`` (image id -> seconds) and are written to a
    separate file so the report itself stays reproducible byte for byte.
    """

    rows: list[dict]
    config: dict
    timings: dict = field(default_factory=dict, compare=False)

    @property
    def aggregates(self) -> dict:
        return compute_aggregates(self.rows)

    def condition_rows(self, condition: str) -> list[dict]:
        return [r for r in self.rows if r["condition"] == condition]


# per-image work ----------------------------------------------------------------


@dataclass
class _Context:
    cfg: ExperimentConfig
    adapter: object
    judge: object
    eval_adapter: object | None
    batches: dict


def _build_context(cfg: ExperimentConfig) -> _Context:
    adapter = create_adapter(cfg.adapter, **cfg.adapter_options)
    eval_adapter = create_adapter(cfg.eval_adapter, **cfg.eval_adapter_options) if cfg.eval_adapter else None
    batches = {}
    for spec in cfg.attacks:
        if spec.batch:
            if not (Path(spec.batch) / "manifest.json").exists():
                raise ConfigurationError(f"attack batch {spec.batch} has no manifest.json")
            b = AdversarialBatch.load(spec.batch)
            batches[spec.name] = dict(zip(b.image_ids, b.adversarials))
    return _Context(cfg, adapter, eval_adapter or adapter, eval_adapter, batches)


def _blank_row(item: LabeledImage, condition: str, attack: str, eps: float, steps: int) -> dict:
    return {
        "image_id": item.image_id,
        "condition": condition,
        "attack": attack,
        "epsilon_255": float(eps),
        "steps": int(steps),
        "true_label": int(item.label),
        "undefended_pred": -1,
        "defended_pred": -1,
        "ssim_rec_clean": float("nan"),
        "ssim_rec_input": float("nan"),
        "ssim_input_clean": float("nan"),
        "linf_input_clean": float("nan"),
        "pairs_used": 0,
        "used_fallback": False,
        "off_pair_count": 0,
        "alphas": [],
        "gaps": [],
        "bpda_path_labels": [],
        "error": "",
    }


def _defense_runner(ctx: _Context, gen_cfg):
    """Returns ``purify(x, combos)`` -> one DefenseResult per (det, rec) combo."""
    q = ctx.cfg.quality

    def purify(x, combos):
        trace = run_dip_trace(x, gen_cfg)
        decisions = map_trace_to_decisions(trace, ctx.adapter, x, q)
        return [reconstruct_from_trace(trace, decisions, x, ctx.adapter, det, rec, ctx.eval_adapter,
                                       diagnostics=True)
                for det, rec in combos]

    return purify


def _fill(row, result, x, clean, q):
    row.update(
        defended_pred=int(result.predicted_label),
        ssim_rec_clean=ssim(result.reconstructed, clean, q),
        ssim_rec_input=ssim(result.reconstructed, x, q),
        pairs_used=int(result.pairs_used),
        used_fallback=bool(result.used_fallback),
        alphas=[float(a) for a in result.alphas],
        gaps=[float(g) for g in result.gaps],
    )
    if result.per_stage is not None:
        row["off_pair_count"] = sum(b.off_pair_argmax for b in result.per_stage.boundary)


def evaluate_image(ctx: _Context, item: LabeledImage, combos: list) -> list[list[dict]]:
    """Rows for one image, one list per (DetectionConfig, ReconstructionConfig) combo."""
    cfg = ctx.cfg
    q = cfg.quality
    gen = cfg.generator.replace(rng_seed=derive_seed(cfg.seed, item.image_id, "generator", cfg.generator.rng_seed))
    purify = _defense_runner(ctx, gen)
    clean = item.image
    out = [[] for _ in combos]

    conditions = [("clean", None)] if cfg.evaluate_clean else []
    conditions += [(spec.name, spec) for spec in cfg.attacks]
    for name, spec in conditions:
        attack = spec.config.method if spec else "none"
        eps = spec.config.epsilon_255 if spec else 0.0
        steps = spec.config.steps if spec else 0
        rows = [_blank_row(item, name, attack, eps, steps) for _ in combos]
        try:
            path_labels = []
            if spec is None:
                x = clean
            elif spec.name in ctx.batches:
                if item.image_id not in ctx.batches[spec.name]:
                    raise KeyError(f"image {item.image_id} missing from batch {spec.batch}")
                x = ctx.batches[spec.name][item.image_id]
            else:
                acfg = replace(spec.config, seed=derive_seed(cfg.seed, item.image_id, spec.name, spec.config.seed))
                defense = None
                if acfg.method == "BPDA_PGD":
                    if len(combos) != 1:
                        raise ConfigurationError("BPDA attacks need a single defense configuration")
                    det, rec = combos[0]

                    def defense(img, det=det, rec=rec):
                        return purify(img, [(det, rec)])[0].reconstructed

                def record(step, purified):
                    path_labels.extend(int(v) for v in predict_labels(ctx.judge, purified))

                x = run_attack(ctx.judge, clean, item.label, acfg, defense, progress=record)
            x = np.asarray(x, dtype=np.float32)
            undefended = int(predict_labels(ctx.judge, x[None])[0])
            results = purify(x, combos)
            for row, result in zip(rows, results):
                row.update(
                    undefended_pred=undefended,
                    ssim_input_clean=ssim(x, clean, q),
                    linf_input_clean=float(np.max(np.abs(x - clean))),
                    bpda_path_labels=list(path_labels),
                )
                _fill(row, result, x, clean, q)
        except Exception as exc:  # recorded per image, never fatal
            for row in rows:
                row["error"] = f"{type(exc).__name__}: {exc}"
        for bucket, row in zip(out, rows):
            bucket.append(row)
    return out


# cache -------------------------------------------------------------------------


def _cache_file(cfg: ExperimentConfig, image_id: str) -> Path:
    return resolve_output_dir(cfg.output_dir) / "cache" / cfg.config_hash() / f"{image_id}.json"


def _read_cache(cfg, image_id):
    path = _cache_file(cfg, image_id)
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    return data["rows"], data["seconds"]


def _write_cache(cfg, image_id, rows, seconds):
    path = _cache_file(cfg, image_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"rows": rows, "seconds": seconds}))
    tmp.replace(path)


# drivers -----------------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(cfg):
    import torch

    torch.set_num_threads(1)
    _WORKER["ctx"] = _build_context(cfg)


def _worker_task(args):
    item, combos = args
    t0 = time.perf_counter()
    rows = evaluate_image(_WORKER["ctx"], item, combos)
    return rows, time.perf_counter() - t0


def _run_group(cfgs: list[ExperimentConfig], items, resume=True, progress=None):
    """Evaluate configs that share everything except detection/reconstruction."""
    base = cfgs[0]
    combos = [(c.detection, c.reconstruction) for c in cfgs]
    collected = {i: ([], {}) for i in range(len(cfgs))}
    todo = []
    for item in items:
        cached = [_read_cache(c, item.image_id) if resume else None for c in cfgs]
        if all(c is not None for c in cached):
            for i, (rows, secs) in enumerate(cached):
                collected[i][0].extend(rows)
                collected[i][1][item.image_id] = secs
            if progress:
                progress(item.image_id, True)
        else:
            todo.append(item)

    def finish(item, per_combo, seconds):
        for i, (c, rows) in enumerate(zip(cfgs, per_combo)):
            _write_cache(c, item.image_id, rows, seconds)
            collected[i][0].extend(rows)
            collected[i][1][item.image_id] = seconds
        if progress:
            progress(item.image_id, False)

    if todo and base.workers > 1:
        with ProcessPoolExecutor(base.workers, initializer=_worker_init, initargs=(base,)) as pool:
            for item, (per_combo, secs) in zip(todo, pool.map(_worker_task, [(it, combos) for it in todo])):
                finish(item, per_combo, secs)
    elif todo:
        ctx = _build_context(base)
        for item in todo:
            t0 = time.perf_counter()
            per_combo = evaluate_image(ctx, item, combos)
            finish(item, per_combo, time.perf_counter() - t0)

    reports = []
    for i, c in enumerate(cfgs):
        rows, timings = collected[i]
        order = {it.image_id: k for k, it in enumerate(items)}
        rows.sort(key=lambda r: order[r["image_id"]])
        reports.append(EvaluationReport(rows=rows, config=c.snapshot(), timings=dict(sorted(timings.items()))))
    return reports


def _load_items(cfg: ExperimentConfig):
    if cfg.dataset.sample_count is not None and cfg.dataset.sample_count < 1:
        raise ConfigurationError("sample_count must be >= 1")
    shape = create_adapter(cfg.adapter, **cfg.adapter_options).input_shape
    return load_dataset(cfg.dataset, expected_shape=shape)


def run_experiment(cfg: ExperimentConfig, resume: bool = True, progress=None) -> EvaluationReport:
    """Clean and attacked evaluation of every dataset image, with and without the defense.

    Finished images are cached under ``<output_dir>/cache/<config hash>/`` so
    an interrupted run picks up where it stopped.
    """
    items = _load_items(cfg)
    return _run_group([cfg], items, resume, progress)[0]


@dataclass
class SweepPoint:
    params: dict
    report: EvaluationReport


_SECTIONS = {"detection", "reconstruction", "generator"}


def expand_grid(grid: dict[str, list]) -> list[dict]:
    keys = list(grid)
    for k in keys:
        if k.partition(".")[0] not in _SECTIONS:
            raise ConfigurationError(f"sweep key {k!r} must be in one of {sorted(_SECTIONS)}")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def apply_params(cfg: ExperimentConfig, params: dict) -> ExperimentConfig:
    det, rec, gen = {}, {}, {}
    for key, value in params.items():
        section, _, name = key.partition(".")
        {"detection": det, "reconstruction": rec, "generator": gen}[section][name] = value
    try:
        return cfg.with_changes(
            detection=replace(cfg.detection, **det),
            reconstruction=replace(cfg.reconstruction, **rec),
            generator=cfg.generator.replace(**gen),
        )
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def run_sweep(cfg: ExperimentConfig, grid: dict[str, list], resume: bool = True, progress=None) -> list[SweepPoint]:
    """One report per grid point.

    Points that differ only in detection or reconstruction settings share a
    single generator run per image.
    """
    points = expand_grid(grid)
    cfgs = [apply_params(cfg, p) for p in points]
    items = _load_items(cfg)
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(cfgs):
        key = json.dumps(c.with_changes(detection=cfg.detection, reconstruction=cfg.reconstruction).snapshot(),
                         sort_keys=True)
        groups.setdefault(key, []).append(i)
    reports: dict[int, EvaluationReport] = {}
    for idx in groups.values():
        for i, r in zip(idx, _run_group([cfgs[i] for i in idx], items, resume, progress)):
            reports[i] = r
    return [SweepPoint(points[i], reports[i]) for i in range(len(points))]
