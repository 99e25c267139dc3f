"""L-infinity evasion attacks and the identity-BPDA attack on a defense.

All functions take raw [0, 1] images, either one (C, H, W) image or a batch
(N, C, H, W), and return arrays of the same shape. ``epsilon`` and step sizes
are in [0, 1] pixel units; use :meth:`AttackConfig.from_255` for budgets
quoted on the 0-255 scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CapabilityError, ConfigurationError, InputError
from .tensorio import read_tensor, write_tensor
from .victim import ClassifierAdapter

METHODS = ("FGSM", "PGD", "BIM", "MIFGSM", "BPDA_PGD")


@dataclass(frozen=True)
class AttackConfig:
    method: str = "PGD"
    epsilon: float = 8.0 / 255.0
    steps: int = 20
    step_size: float | None = None
    random_start: bool | None = None
    momentum_decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        method = self.method.upper()
        if method not in METHODS:
            raise ConfigurationError(f"unknown attack method {self.method!r}; known: {METHODS}")
        object.__setattr__(self, "method", method)
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.step_size is None:
            object.__setattr__(self, "step_size", 2.5 * self.epsilon / self.steps)
        if method != "FGSM" and self.epsilon > 0 and not self.step_size > 0:
            raise ConfigurationError("iterative attacks need step_size > 0")
        if self.random_start is None:
            object.__setattr__(self, "random_start", method in ("PGD", "BPDA_PGD"))

    @classmethod
    def from_255(cls, method: str, epsilon_255: float, **kwargs) -> "AttackConfig":
        if "step_size_255" in kwargs:
            kwargs["step_size"] = kwargs.pop("step_size_255") / 255.0
        return cls(method=method, epsilon=epsilon_255 / 255.0, **kwargs)

    @property
    def epsilon_255(self) -> float:
        return self.epsilon * 255.0

    @property
    def name(self) -> str:
        return f"{self.method}-eps{self.epsilon_255:g}" + (f"-it{self.steps}" if self.method != "FGSM" else "")

    def to_dict(self) -> dict:
        return asdict(self)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise InputError(f"expected (C, H, W) or (N, C, H, W) images, got {x.shape}")
    return x, False


def _labels(y, n):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (n,):
        raise InputError(f"{y.size} labels for {n} images")
    return y


def _require_gradients(adapter):
    if not getattr(adapter, "differentiable", False):
        raise CapabilityError(f"{type(adapter).__name__} does not expose gradients")


def _project(x_adv, x, eps):
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def fgsm(adapter: ClassifierAdapter, x, y, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size ``epsilon``."""
    _require_gradients(adapter)
    batch, single = _as_batch(x)
    labels = _labels(y, len(batch))
    eps = np.float32(epsilon)
    grad = adapter.loss_gradient(batch, labels)
    out = np.clip(batch + eps * np.sign(grad).astype(np.float32), 0.0, 1.0)
    return out[0] if single else out


def _random_start(batch, eps, seed):
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-eps, eps, size=batch.shape).astype(np.float32)
    return np.clip(batch + delta, 0.0, 1.0)


def _iterate(grad_fn, batch, labels, eps, steps, step_size, start, momentum=None):
    step = np.float32(step_size)
    x_adv = start
    acc = np.zeros(batch.shape, dtype=np.float64) if momentum is not None else None
    for _ in range(steps):
        grad = grad_fn(x_adv, labels)
        if acc is not None:
            g = grad.astype(np.float64)
            l1 = np.abs(g).reshape(len(g), -1).sum(axis=1).reshape((-1,) + (1,) * (g.ndim - 1))
            acc = momentum * acc + g / np.maximum(l1, np.finfo(np.float64).tiny)
            direction = np.sign(acc).astype(np.float32)
        else:
            direction = np.sign(grad).astype(np.float32)
        x_adv = _project(x_adv + step * direction, batch, eps)
    return x_adv


def pgd(adapter, x, y, epsilon, steps=20, step_size=None, random_start=True, seed=0) -> np.ndarray:
    """Projected signed-gradient ascent inside the epsilon ball."""
    _require_gradients(adapter)
    batch, single = _as_batch(x)
    labels = _labels(y, len(batch))
    eps = np.float32(epsilon)
    step_size = 2.5 * epsilon / steps if step_size is None else step_size
    start = _random_start(batch, eps, seed) if random_start else batch.copy()
    out = _iterate(adapter.loss_gradient, batch, labels, eps, steps, step_size, start)
    return out[0] if single else out


def bim(adapter, x, y, epsilon, steps=20, step_size=None) -> np.ndarray:
    return pgd(adapter, x, y, epsilon, steps, step_size, random_start=False)


def mifgsm(adapter, x, y, epsilon, steps=20, step_size=None, momentum_decay=1.0) -> np.ndarray:
    """Iterative FGSM with L1-normalized gradient momentum."""
    _require_gradients(adapter)
    batch, single = _as_batch(x)
    labels = _labels(y, len(batch))
    eps = np.float32(epsilon)
    step_size = 2.5 * epsilon / steps if step_size is None else step_size
    out = _iterate(adapter.loss_gradient, batch, labels, eps, steps, step_size, batch.copy(),
                   momentum=float(momentum_decay))
    return out[0] if single else out


def bpda_attack(adapter, defense: Callable, x, y, cfg: AttackConfig, progress=None) -> np.ndarray:
    """PGD through ``defense`` with an identity backward pass.

    Each step evaluates the loss gradient at ``defense(x_adv)`` and applies it
    to ``x_adv`` as if the defense were the identity map.

    Args:
        defense: maps one (C, H, W) image to its purified version.
        progress: optional ``progress(step, purified)`` callback, called with
            the purified batch each step evaluates.
    """
    _require_gradients(adapter)
    batch, single = _as_batch(x)
    labels = _labels(y, len(batch))
    eps = np.float32(cfg.epsilon)

    step = 0

    def grad_fn(x_adv, lab):
        nonlocal step
        purified = np.stack([np.asarray(defense(img), dtype=np.float32) for img in x_adv])
        if progress is not None:
            progress(step, purified)
        step += 1
        return adapter.loss_gradient(purified, lab)

    start = _random_start(batch, eps, cfg.seed) if cfg.random_start else batch.copy()
    out = _iterate(grad_fn, batch, labels, eps, cfg.steps, cfg.step_size, start)
    return out[0] if single else out


def run_attack(adapter, x, y, cfg: AttackConfig, defense: Callable | None = None, progress=None) -> np.ndarray:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "FGSM":
        return fgsm(adapter, x, y, cfg.epsilon)
    if cfg.method == "PGD":
        return pgd(adapter, x, y, cfg.epsilon, cfg.steps, cfg.step_size, cfg.random_start, cfg.seed)
    if cfg.method == "BIM":
        return bim(adapter, x, y, cfg.epsilon, cfg.steps, cfg.step_size)
    if cfg.method == "MIFGSM":
        return mifgsm(adapter, x, y, cfg.epsilon, cfg.steps, cfg.step_size, cfg.momentum_decay)
    if cfg.method == "BPDA_PGD":
        if defense is None:
            raise ConfigurationError("BPDA_PGD needs a defense callable")
        return bpda_attack(adapter, defense, x, y, cfg, progress)
    raise ConfigurationError(f"unhandled method {cfg.method}")


# persisted batches -------------------------------------------------------------


@dataclass
class AdversarialBatch:
    originals: list
    adversarials: list
    true_labels: list
    attack: AttackConfig
    image_ids: list = field(default_factory=list)
    original_paths: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.originals)
        if len(self.adversarials) != n or len(self.true_labels) != n:
            raise InputError("originals, adversarials and labels differ in length")
        if not self.image_ids:
            self.image_ids = [f"{i:05d}" for i in range(n)]
        if not self.original_paths:
            self.original_paths = [""] * n

    def max_linf(self) -> float:
        return max((float(np.max(np.abs(a - o))) for a, o in zip(self.adversarials, self.originals)), default=0.0)

    def save(self, directory) -> Path:
        d = Path(directory)
        (d / "original").mkdir(parents=True, exist_ok=True)
        (d / "adversarial").mkdir(parents=True, exist_ok=True)
        items = []
        for iid, path, lab, orig, adv in zip(self.image_ids, self.original_paths, self.true_labels,
                                             self.originals, self.adversarials):
            write_tensor(d / "original" / f"{iid}.dpt", orig)
            write_tensor(d / "adversarial" / f"{iid}.dpt", adv)
            items.append({
                "image_id": iid,
                "original_path": str(path),
                "label": int(lab),
                "epsilon": self.attack.epsilon,
                "epsilon_255": self.attack.epsilon_255,
                "method": self.attack.method,
                "seed": self.attack.seed,
                "original": f"original/{iid}.dpt",
                "adversarial": f"adversarial/{iid}.dpt",
            })
        manifest = {"attack": self.attack.to_dict(), "items": items}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return d / "manifest.json"

    @classmethod
    def load(cls, directory) -> "AdversarialBatch":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        attack = AttackConfig(**manifest["attack"])
        items = manifest["items"]
        return cls(
            originals=[read_tensor(d / it["original"]) for it in items],
            adversarials=[read_tensor(d / it["adversarial"]) for it in items],
            true_labels=[int(it["label"]) for it in items],
            attack=attack,
            image_ids=[it["image_id"] for it in items],
            original_paths=[it["original_path"] for it in items],
        )
