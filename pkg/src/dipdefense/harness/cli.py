"""Command line entry point: ``dipdefense <attack|defend|evaluate|sweep|visualize>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import AdversarialBatch, run_attack
from ..errors import ConfigurationError, DefenseError, InputError
from ..reconstruct import defend
from ..tensorio import load_image
from ..victim import CIFAR10_CLASSES, create_adapter
from .config import ExperimentConfig, load_experiment_config, resolve_output_dir
from .data import load_dataset
from .experiment import derive_seed, run_experiment, run_sweep
from .plots import CURVE_KINDS, emit_curves, emit_defense_visualization
from .report import emit_report, read_report

log = logging.getLogger("dipdefense")


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "output_dir", None):
        overrides.append(f"experiment.output_dir={args.output_dir}")
    if args.config is None:
        from .config import apply_overrides, config_from_sections

        return config_from_sections(apply_overrides({}, overrides))
    return load_experiment_config(args.config, overrides)


def _out(cfg: ExperimentConfig) -> Path:
    d = resolve_output_dir(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _adapters(cfg):
    adapter = create_adapter(cfg.adapter, **cfg.adapter_options)
    ev = create_adapter(cfg.eval_adapter, **cfg.eval_adapter_options) if cfg.eval_adapter else None
    return adapter, ev


def _defense_fn(cfg, adapter, ev, image_id):
    gen = cfg.generator.replace(rng_seed=derive_seed(cfg.seed, image_id, "generator", cfg.generator.rng_seed))

    def run(x, diagnostics=False):
        return defend(x, adapter, gen, cfg.detection, cfg.reconstruction, ev, diagnostics, cfg.quality)

    return run


def cmd_attack(args) -> int:
    cfg = _config(args)
    specs = [s for s in cfg.attacks if not args.attack or s.name in args.attack]
    if not specs:
        raise ConfigurationError("no matching [attack:NAME] sections")
    adapter, ev = _adapters(cfg)
    judge = ev or adapter
    items = load_dataset(cfg.dataset, expected_shape=adapter.input_shape)
    for spec in specs:
        advs = []
        for item in items:
            acfg = replace(spec.config, seed=derive_seed(cfg.seed, item.image_id, spec.name, spec.config.seed))
            defense = None
            if acfg.method == "BPDA_PGD":
                run = _defense_fn(cfg, adapter, ev, item.image_id)

                def defense(img, run=run):
                    return run(img).reconstructed

            advs.append(run_attack(judge, item.image, item.label, acfg, defense))
            log.info("%s %s", spec.name, item.image_id)
        batch = AdversarialBatch(
            originals=[it.image for it in items],
            adversarials=advs,
            true_labels=[it.label for it in items],
            attack=spec.config,
            image_ids=[it.image_id for it in items],
            original_paths=[it.path for it in items],
        )
        target = _out(cfg) / "batches" / spec.name
        batch.save(target)
        print(f"{spec.name}: {len(advs)} images, max Linf {batch.max_linf() * 255:.3f}/255 -> {target}")
    return 0


def cmd_defend(args) -> int:
    cfg = _config(args)
    adapter, ev = _adapters(cfg)
    if args.batch:
        b = AdversarialBatch.load(args.batch)
        work = list(zip(b.image_ids, b.adversarials, b.true_labels))
    elif args.image:
        work = [(Path(p).stem, load_image(p, cfg.dataset.resize), args.label) for p in args.image]
    else:
        items = load_dataset(cfg.dataset, expected_shape=adapter.input_shape)
        work = [(it.image_id, it.image, it.label) for it in items]
    out = _out(cfg) / "reconstructions"
    summary = []
    for image_id, x, label in work:
        result = _defense_fn(cfg, adapter, ev, image_id)(np.asarray(x, dtype=np.float32))
        result.save(out, image_id)
        summary.append({"image_id": image_id, "label": label, **result.to_json()})
        print(f"{image_id}: predicted {result.predicted_label} (label {label}), pairs {result.pairs_used}"
              + (", fallback" if result.used_fallback else ""))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    labelled = [s for s in summary if s["label"] is not None]
    if labelled:
        acc = sum(s["predicted_label"] == s["label"] for s in labelled) / len(labelled)
        print(f"defended accuracy {acc:.3f} over {len(labelled)} images")
    return 0


def _print_aggregates(agg):
    print(f"images: {agg['num_images']}  ACC(mean over conditions): {agg['mean_defended_accuracy']:.3f}")
    for cond, v in agg["conditions"].items():
        print(f"  {cond:<20} undefended {v['undefended_accuracy']:.3f}  defended {v['defended_accuracy']:.3f}  "
              f"SSIM(rec, clean) {v['mean_ssim_rec_clean']:.3f}  fallback {v['fallback_rate']:.2f}")


def _progress(image_id, cached):
    log.info("%s %s", image_id, "cached" if cached else "done")


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg, resume=not args.no_resume, progress=_progress)
    target = emit_report(report, _out(cfg) / "report")
    _print_aggregates(report.aggregates)
    if len({(r["attack"], r["epsilon_255"]) for r in report.rows if r["attack"] != "none"}) > 1:
        emit_curves([report], "epsilon_sweep", target / "epsilon_sweep")
    if any(r["attack"] == "BPDA_PGD" for r in report.rows):
        emit_curves([report], "bpda_iterations", target / "bpda_iterations")
    print(f"report written to {target}")
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"grid entry {item!r} is not key=v1,v2,...")
        key, values = item.split("=", 1)
        parsed = []
        for v in values.split(","):
            v = v.strip()
            try:
                parsed.append(int(v))
            except ValueError:
                parsed.append(float(v))
        grid[key.strip()] = parsed
    return grid


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = _parse_grid(args.grid)
    points = run_sweep(cfg, grid, resume=not args.no_resume, progress=_progress)
    root = _out(cfg) / "sweep"
    for i, p in enumerate(points):
        emit_report(p.report, root / f"point{i:03d}")
        print(f"point{i:03d} {p.params}: ACC {p.report.aggregates['mean_defended_accuracy']:.3f}")
    emit_curves([p.report for p in points], "param_sensitivity", root / "param_sensitivity")
    print(f"sweep written to {root}")
    return 0


def cmd_visualize(args) -> int:
    if args.reports:
        curves = emit_curves([read_report(r) for r in args.reports], args.kind, args.out or "curves")
        print("wrote", ", ".join(map(str, curves.files)))
        return 0
    if not args.image:
        raise InputError("give --image for a defense visualization or --reports for curves")
    cfg = _config(args)
    adapter, ev = _adapters(cfg)
    x = load_image(args.image, cfg.dataset.resize)
    image_id = Path(args.image).stem
    if args.attack:
        spec = next((s for s in cfg.attacks if s.name == args.attack), None)
        if spec is None:
            raise ConfigurationError(f"no [attack:{args.attack}] section")
        if args.label is None:
            raise InputError("--label is needed to attack an image")
        acfg = replace(spec.config, seed=derive_seed(cfg.seed, image_id, spec.name, spec.config.seed))
        run = _defense_fn(cfg, adapter, ev, image_id)
        x = run_attack(ev or adapter, x, args.label, acfg, lambda img: run(img).reconstructed)
    result = _defense_fn(cfg, adapter, ev, image_id)(x, diagnostics=True)
    names = CIFAR10_CLASSES if adapter.num_classes == 10 else None
    stem = Path(args.out) if args.out else _out(cfg) / "visualize" / image_id
    info = emit_defense_visualization(result, stem, names)
    print(f"predicted {result.predicted_label}; flips at {info['markers']}; wrote {info['files'][0]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipdefense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment INI file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--output-dir", help="override [experiment] output_dir")

    p = sub.add_parser("attack", help="write adversarial batches for the configured attacks")
    common(p)
    p.add_argument("--attack", action="append", help="attack section name (default: all)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="purify a saved batch, images, or the configured dataset")
    common(p)
    p.add_argument("--batch", help="AdversarialBatch directory")
    p.add_argument("--image", action="append", help="image file (repeatable)")
    p.add_argument("--label", type=int, help="true label for --image inputs")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("evaluate", help="full clean + attack protocol with a report")
    common(p)
    p.add_argument("--no-resume", action="store_true", help="ignore cached per-image results")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over defense parameters")
    common(p)
    p.add_argument("--grid", action="append", required=True, metavar="SECTION.KEY=V1,V2")
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("visualize", help="defense trace plot for one image, or curves from reports")
    common(p, config_required=False)
    p.add_argument("--image")
    p.add_argument("--label", type=int)
    p.add_argument("--attack", help="attack section to apply before defending")
    p.add_argument("--reports", nargs="+", help="report directories for curve plots")
    p.add_argument("--kind", choices=CURVE_KINDS, default="epsilon_sweep")
    p.add_argument("--out", help="output stem")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DefenseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
