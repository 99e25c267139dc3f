"""Untrained encoder-decoder generator and the reconstruction trace it produces.

The network follows the usual deep-image-prior "skip" layout: each scale has a
strided downsampling branch, a recursive deeper level, bilinear upsampling,
and a thin skip branch concatenated back in before the upsampling convs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError, OptimizationDivergedError

log = logging.getLogger(__name__)

_LIST_FIELDS = ("filters_down", "filters_up", "kernel_down", "kernel_up", "skip_filters", "skip_kernels")


@dataclass(frozen=True)
class GeneratorConfig:
    num_scales: int = 3
    filters_down: tuple[int, ...] = (32, 32, 32)
    filters_up: tuple[int, ...] = (32, 32, 32)
    kernel_down: tuple[int, ...] = (3, 3, 3)
    kernel_up: tuple[int, ...] = (3, 3, 3)
    skip_filters: tuple[int, ...] = (3, 3, 3)
    skip_kernels: tuple[int, ...] = (1, 1, 1)
    upsample_mode: str = "bilinear"
    noise_channels: int = 4
    noise_scale: float = 1.0 / 30.0
    learning_rate: float = 0.01
    max_iterations: int = 1000
    trace_samples: int = 200
    rng_seed: int = 0

    def __post_init__(self):
        for name in _LIST_FIELDS:
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.num_scales < 1:
            raise ConfigurationError("num_scales must be >= 1")
        for name in _LIST_FIELDS:
            if len(getattr(self, name)) != self.num_scales:
                raise ConfigurationError(
                    f"{name} has {len(getattr(self, name))} entries, expected num_scales={self.num_scales}"
                )
            if any(v < 1 for v in getattr(self, name)):
                raise ConfigurationError(f"{name} entries must be positive")
        if self.upsample_mode != "bilinear":
            raise ConfigurationError(f"unsupported upsample_mode {self.upsample_mode!r}")
        if self.noise_channels < 1:
            raise ConfigurationError("noise_channels must be >= 1")
        if not self.noise_scale > 0 or not self.learning_rate > 0:
            raise ConfigurationError("noise_scale and learning_rate must be positive")
        if not 1 <= self.trace_samples <= self.max_iterations:
            raise ConfigurationError("need 1 <= trace_samples <= max_iterations")

    @property
    def stride(self) -> int:
        return self.max_iterations // self.trace_samples

    def sample_iterations(self) -> np.ndarray:
        """Iteration indices at which the trace records the generator output."""
        s = self.stride
        return np.arange(1, self.trace_samples + 1) * s - 1

    def replace(self, **changes) -> "GeneratorConfig":
        values = asdict(self)
        values.update(changes)
        return GeneratorConfig(**values)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "GeneratorConfig":
        return cls(**cls.parse_values(values))

    @classmethod
    def parse_values(cls, values: dict) -> dict:
        """Convert string values (as read from a config file) to field types."""
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown generator keys: {sorted(unknown)}")
        parsed = {}
        for key, raw in values.items():
            if not isinstance(raw, str):
                parsed[key] = raw
            elif key in _LIST_FIELDS:
                parsed[key] = tuple(int(v) for v in raw.replace(",", " ").split())
            elif key == "upsample_mode":
                parsed[key] = raw.strip()
            elif key == "noise_scale" and "/" in raw:
                num, den = raw.split("/")
                parsed[key] = float(num) / float(den)
            elif key in ("noise_scale", "learning_rate"):
                parsed[key] = float(raw)
            else:
                parsed[key] = int(raw)
        return parsed

    # presets ---------------------------------------------------------------

    @classmethod
    def cifar(cls, **overrides) -> "GeneratorConfig":
        """32x32 setup; identical to the ``medium`` network at T=1000."""
        return cls(**overrides)

    @classmethod
    def imagenet(cls, **overrides) -> "GeneratorConfig":
        base = dict(
            num_scales=5,
            filters_down=(64,) * 5,
            filters_up=(64,) * 5,
            kernel_down=(3,) * 5,
            kernel_up=(3,) * 5,
            skip_filters=(4,) * 5,
            skip_kernels=(1,) * 5,
            noise_scale=1.0 / 100.0,
            max_iterations=3000,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def small(cls, **overrides) -> "GeneratorConfig":
        base = dict(
            num_scales=2,
            filters_down=(16, 16),
            filters_up=(16, 16),
            kernel_down=(2, 2),
            kernel_up=(2, 2),
            skip_filters=(4, 4),
            skip_kernels=(1, 1),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def medium(cls, **overrides) -> "GeneratorConfig":
        return cls(**overrides)

    @classmethod
    def large(cls, **overrides) -> "GeneratorConfig":
        base = dict(
            num_scales=4,
            filters_down=(48,) * 4,
            filters_up=(48,) * 4,
            kernel_down=(4,) * 4,
            kernel_up=(4,) * 4,
            skip_filters=(4,) * 4,
            skip_kernels=(1,) * 4,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def preset(cls, name: str, **overrides) -> "GeneratorConfig":
        try:
            factory = {"cifar": cls.cifar, "imagenet": cls.imagenet, "small": cls.small,
                       "medium": cls.medium, "large": cls.large}[name]
        except KeyError:
            raise ConfigurationError(f"unknown generator preset {name!r}") from None
        return factory(**overrides)


# network -------------------------------------------------------------------


class _Conv(nn.Module):
    """Reflection-padded convolution; even kernels pad one extra pixel right/bottom.

    Feature maps too small to reflect (pad >= size, e.g. a 4-pixel kernel on
    the 2x2 bottom level of a 32x32 input) are replicate-padded instead.
    """

    def __init__(self, cin, cout, k, stride=1):
        super().__init__()
        lo, hi = (k - 1) // 2, k // 2
        self.pad = (lo, hi, lo, hi)
        self.conv = nn.Conv2d(cin, cout, k, stride=stride)

    def forward(self, x):
        if any(self.pad):
            mode = "reflect" if max(self.pad) < min(x.shape[-2:]) else "replicate"
            x = F.pad(x, self.pad, mode=mode)
        return self.conv(x)


def _unit(cin, cout, k, stride=1):
    return [_Conv(cin, cout, k, stride), nn.BatchNorm2d(cout), nn.LeakyReLU(0.2, inplace=True)]


class _Level(nn.Module):
    def __init__(self, cfg: GeneratorConfig, i: int, cin: int):
        super().__init__()
        nd, k = cfg.filters_down[i], cfg.kernel_down[i]
        deeper = _unit(cin, nd, k, stride=2) + _unit(nd, nd, k)
        if i < cfg.num_scales - 1:
            deeper.append(_Level(cfg, i + 1, nd))
            deep_out = cfg.filters_up[i + 1]
        else:
            deep_out = nd
        deeper.append(nn.Upsample(scale_factor=2, mode=cfg.upsample_mode, align_corners=False))
        self.deeper = nn.Sequential(*deeper)
        self.skip = nn.Sequential(*_unit(cin, cfg.skip_filters[i], cfg.skip_kernels[i]))
        merged = cfg.skip_filters[i] + deep_out
        nu = cfg.filters_up[i]
        self.merge = nn.Sequential(
            nn.BatchNorm2d(merged),
            *_unit(merged, nu, cfg.kernel_up[i]),
            *_unit(nu, nu, 1),
        )

    def forward(self, x):
        return self.merge(torch.cat([self.skip(x), self.deeper(x)], dim=1))


class SkipGenerator(nn.Module):
    """Multi-scale encoder-decoder with skip connections and sigmoid output."""

    def __init__(self, cfg: GeneratorConfig, out_channels: int = 3):
        super().__init__()
        self.config = cfg
        self.body = _Level(cfg, 0, cfg.noise_channels)
        self.head = nn.Conv2d(cfg.filters_up[0], out_channels, 1)

    def forward(self, z):
        return torch.sigmoid(self.head(self.body(z)))


def build_generator(config: GeneratorConfig, out_channels: int = 3) -> SkipGenerator:
    """Build a Xavier-initialized generator, deterministic under ``config.rng_seed``."""
    config.validate()
    gen = torch.Generator().manual_seed(int(config.rng_seed))
    net = SkipGenerator(config, out_channels)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.xavier_uniform_(m.weight, generator=gen)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return net


def sample_noise(height: int, width: int, config: GeneratorConfig) -> np.ndarray:
    """Fixed generator input, uniform on [0, noise_scale)."""
    if height < 1 or width < 1:
        raise InputError(f"noise dimensions must be positive, got {height}x{width}")
    gen = torch.Generator().manual_seed(int(config.rng_seed) + 1)
    z = torch.rand((config.noise_channels, height, width), generator=gen, dtype=torch.float32)
    return (z * config.noise_scale).numpy()


# trace -----------------------------------------------------------------------


@dataclass
class DipTrace:
    """Generator outputs recorded at equally spaced iterations.

    Attributes:
        iterations: (n,) strictly increasing iteration indices.
        images: (n, C, H, W) float32 outputs, each clipped to [0, 1].
        mse: (n,) mean-squared error of each stored image against ``target``.
        target: the image the generator was fitted to.
    """

    iterations: np.ndarray
    images: np.ndarray
    mse: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.iterations)

    @property
    def samples(self):
        return list(zip(self.iterations.tolist(), self.images, self.mse.tolist()))


def _pad_amounts(size, multiple):
    total = (-size) % multiple
    return total // 2, total - total // 2


def run_dip_trace(target, config: GeneratorConfig, progress=None) -> DipTrace:
    """Fit a fresh generator to ``target`` with Adam and record the trace.

    Args:
        target: (C, H, W) image in [0, 1].
        config: generator and optimization settings.
        progress: optional callable ``progress(iteration, loss)`` invoked at
            every recorded sample.
    """
    target = np.asarray(target, dtype=np.float32)
    if target.ndim != 3:
        raise InputError(f"target must be (C, H, W), got {target.shape}")
    if not np.all(np.isfinite(target)) or target.min() < 0.0 or target.max() > 1.0:
        raise InputError("target pixels must lie in [0, 1]")
    c, h, w = target.shape
    multiple = 2**config.num_scales
    (top, bottom), (left, right) = _pad_amounts(h, multiple), _pad_amounts(w, multiple)

    x0 = torch.from_numpy(target)[None]
    if top or bottom or left or right:
        x0 = F.pad(x0, (left, right, top, bottom), mode="reflect")
    ph, pw = x0.shape[-2:]

    net = build_generator(config, out_channels=c)
    net.train()
    z = torch.from_numpy(sample_noise(ph, pw, config))[None]
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    record_at = config.sample_iterations()
    n = len(record_at)
    images = np.empty((n, c, h, w), dtype=np.float32)
    mses = np.empty(n, dtype=np.float64)
    slot = 0

    for t in range(int(record_at[-1]) + 1):
        opt.zero_grad(set_to_none=True)
        out = net(z)
        loss = F.mse_loss(out, x0)
        if not torch.isfinite(loss):
            partial = DipTrace(record_at[:slot].copy(), images[:slot].copy(), mses[:slot].copy(), target)
            raise OptimizationDivergedError(f"non-finite loss at iteration {t}", t, partial)
        if t == record_at[slot]:
            img = out.detach()[0, :, top : top + h, left : left + w].clamp(0.0, 1.0).numpy()
            images[slot] = img
            mses[slot] = float(np.mean((img.astype(np.float64) - target) ** 2))
            if progress is not None:
                progress(t, float(loss))
            slot += 1
        loss.backward()
        opt.step()

    log.debug("dip trace done: %d samples, final mse %.3g", n, mses[-1])
    return DipTrace(record_at.copy(), images, mses, target)
