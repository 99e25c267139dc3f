"""Robustness curves and per-image defense visualizations (PNG + CSV sidecar)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import InputError  # noqa: E402
from ..reconstruct import DefenseResult, Diagnostics  # noqa: E402

CURVE_KINDS = ("bpda_iterations", "epsilon_sweep", "param_sensitivity")


@dataclass
class CurveSet:
    kind: str
    xlabel: str
    series: dict[str, list[tuple[float, float, int]]]  # name -> (x, accuracy, n)
    xticklabels: list[str] | None = None
    files: list[Path] = field(default_factory=list)


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix.lower() in (".png", ".csv") else p


def _accuracy(rows, pred_key="defended_pred"):
    n = len(rows)
    return sum(r[pred_key] == r["true_label"] for r in rows) / n, n


def _bpda_curves(reports) -> CurveSet:
    series = {}
    for k, rep in enumerate(reports):
        bpda = [r for r in rep.rows if r["attack"] == "BPDA_PGD"]
        for cond in sorted({r["condition"] for r in bpda}):
            rows = [r for r in bpda if r["condition"] == cond]
            steps = {r["steps"] for r in rows}
            if len(steps) != 1:
                raise InputError(f"condition {cond} mixes BPDA step counts {sorted(steps)}")
            s = steps.pop()
            name = cond if len(reports) == 1 else f"{k}:{cond}"
            pts = []
            for it in range(s + 1):
                ok = 0
                for r in rows:
                    path = r["bpda_path_labels"]
                    pred = path[it] if it < len(path) else (r["defended_pred"] if it == s else -1)
                    ok += pred == r["true_label"]
                pts.append((float(it), ok / len(rows), len(rows)))
            series[name] = pts
    if not series:
        raise InputError("no BPDA rows to plot")
    return CurveSet("bpda_iterations", "BPDA iteration", series)


def _epsilon_curves(reports) -> CurveSet:
    cells: dict[tuple[str, float], list] = {}
    owner: dict[tuple[str, float], int] = {}
    for k, rep in enumerate(reports):
        for r in rep.rows:
            if r["attack"] == "none":
                continue
            key = (r["attack"], r["epsilon_255"])
            if owner.setdefault(key, k) != k:
                raise InputError(f"{key[0]} at eps {key[1]:g}/255 appears in more than one report")
            cells.setdefault(key, []).append(r)
    if not cells:
        raise InputError("no attacked rows to plot")
    series = {}
    for method in sorted({m for m, _ in cells}):
        for pred, label in (("undefended_pred", "undefended"), ("defended_pred", "defended")):
            pts = []
            for eps in sorted(e for m, e in cells if m == method):
                acc, n = _accuracy(cells[(method, eps)], pred)
                pts.append((eps, acc, n))
            series[f"{method} {label}"] = pts
    return CurveSet("epsilon_sweep", "epsilon (x/255)", series)


def _flatten(snapshot: dict) -> dict:
    out = {}
    for section in ("generator", "detection", "reconstruction"):
        for k, v in snapshot.get(section, {}).items():
            out[f"{section}.{k}"] = tuple(v) if isinstance(v, list) else v
    return out


def _param_curves(reports) -> CurveSet:
    fixed = [{k: v for k, v in rep.config.items() if k not in ("generator", "detection", "reconstruction")}
             for rep in reports]
    if any(f != fixed[0] for f in fixed[1:]):
        raise InputError("reports differ in more than defense parameters")
    flat = [_flatten(rep.config) for rep in reports]
    varying = sorted(k for k in flat[0] if len({f[k] for f in flat}) > 1)
    numeric = len(varying) == 1 and all(isinstance(f[varying[0]], (int, float)) for f in flat)
    if numeric:
        xs = [float(f[varying[0]]) for f in flat]
        xlabel, ticks = varying[0], None
        if len(set(xs)) != len(xs):
            raise InputError("duplicate sweep points")
    else:
        xs = [float(i) for i in range(len(reports))]
        xlabel = ", ".join(varying) or "configuration"
        ticks = [",".join(f"{k.split('.')[-1]}={f[k]}" for k in varying) or "base" for f in flat]
    series: dict[str, list] = {}
    for x, rep in zip(xs, reports):
        agg = rep.aggregates
        for cond, vals in agg["conditions"].items():
            series.setdefault(cond, []).append((x, vals["defended_accuracy"], vals["count"]))
        series.setdefault("mean", []).append((x, agg["mean_defended_accuracy"], agg["num_images"]))
    conds = {len(v) for v in series.values()}
    if conds != {len(reports)}:
        raise InputError("reports do not share the same conditions")
    for v in series.values():
        v.sort()
    return CurveSet("param_sensitivity", xlabel, series, ticks)


def curve_data(reports: list, kind: str) -> CurveSet:
    if not reports:
        raise InputError("no reports given")
    if kind == "bpda_iterations":
        return _bpda_curves(reports)
    if kind == "epsilon_sweep":
        return _epsilon_curves(reports)
    if kind == "param_sensitivity":
        return _param_curves(reports)
    raise InputError(f"unknown curve kind {kind!r}; expected one of {CURVE_KINDS}")


def emit_curves(reports: list, kind: str, path) -> CurveSet:
    """Plot accuracy against the swept quantity; writes ``<path>.png`` and ``<path>.csv``."""
    curves = curve_data(reports, kind)
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)

    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "x", "accuracy", "n"])
        for name, pts in curves.series.items():
            for x, y, n in pts:
                w.writerow([name, repr(x), repr(y), n])

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in curves.series.items():
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_xlabel(curves.xlabel)
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    if curves.xticklabels:
        ax.set_xticks(range(len(curves.xticklabels)))
        ax.set_xticklabels(curves.xticklabels, rotation=30, ha="right", fontsize=7)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".png"), dpi=120)
    plt.close(fig)
    curves.files = [stem.with_suffix(".png"), stem.with_suffix(".csv")]
    return curves


def read_curve_csv(path) -> dict[str, list[tuple[float, float, int]]]:
    out: dict[str, list] = {}
    with open(_stem(path).with_suffix(".csv"), newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["series"], []).append((float(r["x"]), float(r["accuracy"]), int(r["n"])))
    return out


def _to_hwc(img):
    return np.clip(np.asarray(img).transpose(1, 2, 0), 0, 1).squeeze()


def emit_defense_visualization(diagnostics, path, class_names=None) -> dict:
    """Confidence curves with flip markers and an image strip.

    Args:
        diagnostics: a ``DefenseResult`` produced with ``diagnostics=True``
            or its ``Diagnostics``.
        path: output stem; ``.png`` and ``.csv`` files are written.

    Returns:
        ``{"files": [...], "markers": [iterations of detected flips]}``.
    """
    reconstructed = None
    if isinstance(diagnostics, DefenseResult):
        reconstructed = diagnostics.reconstructed
        diagnostics = diagnostics.per_stage
    if not isinstance(diagnostics, Diagnostics):
        raise InputError("no diagnostics recorded; run defend(..., diagnostics=True)")
    dec = diagnostics.decisions
    its = np.asarray(dec.iterations)
    conf = np.asarray(dec.confidences)
    markers = [int(its[p]) for p in diagnostics.detected]
    selected = {int(its[p]) for p in diagnostics.selected}
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)

    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "label", "quality", "flip"] + [f"conf_{c}" for c in range(conf.shape[1])])
        flips = set(markers)
        for i in range(len(its)):
            w.writerow([int(its[i]), int(dec.labels[i]), repr(float(dec.qualities[i])), int(its[i] in flips)]
                       + [repr(float(v)) for v in conf[i]])

    strip = [b.image for b in diagnostics.boundary]
    if reconstructed is not None:
        strip.append(reconstructed)
    rows = 2 if strip else 1
    fig = plt.figure(figsize=(8, 5 if strip else 3.5))
    ax = fig.add_subplot(rows, 1, 1)
    shown = [c for c in range(conf.shape[1]) if conf[:, c].max() > 0.05] or list(range(conf.shape[1]))
    for c in shown:
        name = class_names[c] if class_names else str(c)
        ax.plot(its, conf[:, c], label=name, lw=1)
    ax.plot(its, dec.qualities, "k--", lw=0.8, label="SSIM to input")
    for m in markers:
        ax.axvline(m, color="red" if m in selected else "grey", alpha=0.5, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("confidence")
    ax.legend(fontsize=6, ncol=2)
    if strip:
        n = len(strip)
        for k, img in enumerate(strip):
            sub = fig.add_subplot(rows, n, n + k + 1)
            sub.imshow(_to_hwc(img), cmap="gray" if img.shape[0] == 1 else None)
            sub.set_xticks([])
            sub.set_yticks([])
            if reconstructed is not None and k == n - 1:
                sub.set_title("stitched", fontsize=7)
            else:
                sub.set_title(f"a={diagnostics.boundary[k].alpha:.2f}", fontsize=7)
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".png"), dpi=120)
    plt.close(fig)
    return {"files": [stem.with_suffix(".png"), stem.with_suffix(".csv")], "markers": markers}
