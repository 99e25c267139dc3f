"""Experiment configuration: INI file sections mapped onto the component configs.

Example file::

    [experiment]
    seed = 0
    output_dir = runs/cifar-pgd

    [dataset]
    directory = data/cifar10-samples
    labels = labels.csv
    sample_count = 100

    [adapter]
    name = keras-cifar10-cnn

    [generator]
    preset = cifar
    max_iterations = 1000

    [detection]
    tau = 0.7
    warmup_t0 = 50
    max_pairs_k = 15
    grid_sections_n = 20

    [reconstruction]
    beta = 0.5

    [attack:pgd8]
    method = PGD
    epsilon = 8          ; 0-255 scale
    steps = 20

Relative paths resolve against the config file's directory, except
``output_dir`` which resolves against ``$DIPDEFENSE_HOME`` when that is set.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..attacks import AttackConfig
from ..boundary import DetectionConfig
from ..errors import ConfigurationError
from ..generator import GeneratorConfig
from ..metrics import SsimConfig
from ..reconstruct import ReconstructionConfig
from ..tensorio import read_config_file

HOME_ENV = "DIPDEFENSE_HOME"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ConfigurationError(f"not a boolean: {raw!r}")


def _number(raw):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if "/" in s:
        num, den = s.split("/")
        return float(num) / float(den)
    try:
        return int(s)
    except ValueError:
        return float(s)


@dataclass
class DatasetConfig:
    directory: str = ""
    labels: str = "labels.csv"
    sample_count: int | None = None
    resize: int | None = None
    sample_seed: int = 0


@dataclass
class AttackSpec:
    """One named attack condition; ``batch`` points at a saved AdversarialBatch."""

    name: str
    config: AttackConfig
    batch: str | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    adapter: str = "keras-cifar10-cnn"
    adapter_options: dict = field(default_factory=dict)
    eval_adapter: str | None = None
    eval_adapter_options: dict = field(default_factory=dict)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    quality: SsimConfig = field(default_factory=SsimConfig)
    attacks: list[AttackSpec] = field(default_factory=list)
    output_dir: str = "dipdefense-output"
    seed: int = 0
    workers: int = 1
    evaluate_clean: bool = True

    def snapshot(self) -> dict:
        """JSON-safe description used in reports and for cache keys."""
        return {
            "dataset": asdict(self.dataset),
            "adapter": self.adapter,
            "adapter_options": dict(sorted(self.adapter_options.items())),
            "eval_adapter": self.eval_adapter,
            "eval_adapter_options": dict(sorted(self.eval_adapter_options.items())),
            "generator": self.generator.to_dict(),
            "detection": asdict(self.detection),
            "reconstruction": asdict(self.reconstruction),
            "quality": asdict(self.quality),
            "attacks": [{"name": a.name, "batch": a.batch, **a.config.to_dict()} for a in self.attacks],
            "seed": self.seed,
            "evaluate_clean": self.evaluate_clean,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_changes(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def resolve_output_dir(raw: str) -> Path:
    p = Path(os.path.expanduser(raw))
    home = os.environ.get(HOME_ENV)
    if not p.is_absolute() and home:
        p = Path(home) / p
    return p


def _resolve(base: Path, raw: str | None) -> str | None:
    if raw is None or raw == "":
        return raw
    p = Path(os.path.expanduser(raw))
    return str(p if p.is_absolute() else (base / p))


def apply_overrides(sections: dict[str, dict], overrides: list[str] | None) -> dict[str, dict]:
    """Apply ``section.key=value`` strings (``key=value`` targets ``[experiment]``)."""
    out = {k: dict(v) for k, v in sections.items()}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, _, key = lhs.strip().rpartition(".")
        out.setdefault(section or "experiment", {})[key] = value.strip()
    return out


def config_from_sections(sections: dict[str, dict], base_dir=".") -> ExperimentConfig:
    base = Path(base_dir)
    known = {"", "experiment", "dataset", "adapter", "eval_adapter", "generator", "detection",
             "reconstruction", "quality"}
    for name in sections:
        if name not in known and not name.startswith("attack:"):
            raise ConfigurationError(f"unknown config section [{name}]")

    exp = {**sections.get("", {}), **sections.get("experiment", {})}
    ds = dict(sections.get("dataset", {}))
    dataset = DatasetConfig(
        directory=_resolve(base, ds.pop("directory", "")) or "",
        labels=ds.pop("labels", "labels.csv"),
        sample_count=int(ds.pop("sample_count")) if "sample_count" in ds else None,
        resize=int(ds.pop("resize")) if ds.get("resize", "").strip() not in ("", "none") else None,
        sample_seed=int(ds.pop("sample_seed", 0)),
    )
    ds.pop("resize", None)
    if ds:
        raise ConfigurationError(f"unknown [dataset] keys: {sorted(ds)}")

    ad = dict(sections.get("adapter", {}))
    adapter = ad.pop("name", "keras-cifar10-cnn")
    adapter_options = {k: (_resolve(base, v) if k.endswith("path") else v) for k, v in ad.items()}
    ev = dict(sections.get("eval_adapter", {}))
    eval_adapter = ev.pop("name", None)
    eval_options = {k: (_resolve(base, v) if k.endswith("path") else v) for k, v in ev.items()}

    gen = dict(sections.get("generator", {}))
    preset = gen.pop("preset", "cifar")
    generator = GeneratorConfig.preset(preset, **GeneratorConfig.parse_values(gen))

    det = {k: _number(v) for k, v in sections.get("detection", {}).items()}
    rec = {k: _number(v) for k, v in sections.get("reconstruction", {}).items()}
    qual = {k: _number(v) for k, v in sections.get("quality", {}).items()}
    try:
        detection = DetectionConfig(**det)
        reconstruction = ReconstructionConfig(**rec)
        quality = SsimConfig(**qual)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc

    attacks = []
    for name, values in sections.items():
        if name.startswith("attack:"):
            attacks.append(parse_attack_section(name.split(":", 1)[1], values, base))

    return ExperimentConfig(
        dataset=dataset,
        adapter=adapter,
        adapter_options=adapter_options,
        eval_adapter=eval_adapter,
        eval_adapter_options=eval_options,
        generator=generator,
        detection=detection,
        reconstruction=reconstruction,
        quality=quality,
        attacks=attacks,
        output_dir=exp.get("output_dir", "dipdefense-output"),
        seed=int(exp.get("seed", 0)),
        workers=int(exp.get("workers", 1)),
        evaluate_clean=parse_bool(exp.get("evaluate_clean", True)),
    )


def parse_attack_section(name: str, values: dict, base=Path(".")) -> AttackSpec:
    """Attack keys: method, epsilon (0-255), steps, step_size (0-255),
    random_start, momentum_decay, seed, batch."""
    v = dict(values)
    method = v.pop("method", "PGD")
    batch = _resolve(Path(base), v.pop("batch", None))
    if "epsilon" not in v:
        raise ConfigurationError(f"[attack:{name}] needs an epsilon (0-255 scale)")
    kwargs = {"epsilon_255": float(_number(v.pop("epsilon")))}
    if "steps" in v:
        kwargs["steps"] = int(v.pop("steps"))
    if "step_size" in v:
        kwargs["step_size_255"] = float(_number(v.pop("step_size")))
    if "random_start" in v:
        kwargs["random_start"] = parse_bool(v.pop("random_start"))
    if "momentum_decay" in v:
        kwargs["momentum_decay"] = float(v.pop("momentum_decay"))
    if "seed" in v:
        kwargs["seed"] = int(v.pop("seed"))
    if v:
        raise ConfigurationError(f"unknown keys in [attack:{name}]: {sorted(v)}")
    eps = kwargs.pop("epsilon_255")
    return AttackSpec(name=name, config=AttackConfig.from_255(method, eps, **kwargs), batch=batch)


def load_experiment_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    sections = apply_overrides(read_config_file(path), overrides)
    return config_from_sections(sections, base_dir=path.parent)
