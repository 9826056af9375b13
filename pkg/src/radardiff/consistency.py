"""Consistency models distilled from a frozen diffusion teacher.

The consistency function is parameterised as
``f(x, sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in * x ++ c, c_noise)``
with ``c_skip(sigma_eps) = 1`` and ``c_out(sigma_eps) = 0``, so
``f(x, sigma_eps) = x`` holds for any network weights.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .denoisers import EDMDenoiser, TinyUNet, _NumpyPredictMixin, _sigma_column, _to_tensor, perceptual_distance
from .diffusion import NoiseSchedule, heun_step, karras_sigmas
from .errors import ConfigurationError, DomainError, NumericError


@dataclass
class DistillConfig:
    ema_decay: float = 0.999
    grid_size: int = 18
    metric: str = "l2"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-5

    def __post_init__(self):
        if not 0 <= self.ema_decay < 1:
            raise ConfigurationError("ema_decay must lie in [0, 1)")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.grid_size < 2:
            raise ConfigurationError("distillation grid needs at least 2 points")
        if self.metric not in ("l2", "perceptual"):
            raise ConfigurationError(f"unknown distillation metric {self.metric!r}")

    def to_dict(self):
        return asdict(self)


class ConsistencyModel(_NumpyPredictMixin, nn.Module):
    def __init__(
        self,
        net: TinyUNet | None = None,
        sigma_eps: float = 0.002,
        sigma_max: float = 80.0,
        sigma_data: float = 0.5,
    ):
        super().__init__()
        self.net = net or TinyUNet()
        self.sigma_eps = sigma_eps
        self.sigma_max = sigma_max
        self.sigma_data = sigma_data

    @classmethod
    def from_teacher(cls, teacher: EDMDenoiser, schedule: NoiseSchedule = NoiseSchedule()) -> "ConsistencyModel":
        """Student sharing the teacher's topology, initialised from its weights."""
        net = copy.deepcopy(teacher.net)
        for p in net.parameters():
            p.requires_grad_(True)
        return cls(net, schedule.sigma_min, schedule.sigma_max, teacher.sigma_data)

    def scalings(self, s: torch.Tensor):
        sd, eps = self.sigma_data, self.sigma_eps
        c_skip = sd**2 / ((s - eps) ** 2 + sd**2)
        c_out = sd * (s - eps) / torch.sqrt(sd**2 + s**2)
        c_in = 1 / torch.sqrt(s**2 + sd**2)
        return c_skip, c_out, c_in

    def forward(self, x, sigma, c=None):
        s = _sigma_column(sigma, x)
        lo, hi = float(s.min()), float(s.max())
        # small slack above sigma_max for float32 round-off of the grid
        if lo < self.sigma_eps or hi > self.sigma_max * (1 + 1e-6):
            raise DomainError(f"sigma outside [{self.sigma_eps}, {self.sigma_max}]: [{lo}, {hi}]")
        s = s[:, None, None, None]
        c_skip, c_out, c_in = self.scalings(s)
        inp = c_in * x
        if c is not None:
            inp = torch.cat([inp, c], dim=1)
        return c_skip * x + c_out * self.net(inp, torch.log(s.reshape(-1)) / 4)


def consistency_forward(model: ConsistencyModel, x_t, sigma, c=None):
    """numpy front-end for ``model(x_t, sigma, c)``."""
    return model.predict(x_t, sigma, c)


@torch.no_grad()
def ema_update(target: nn.Module, source: nn.Module, decay: float) -> None:
    """``target <- decay * target + (1 - decay) * source`` parameter-wise."""
    for pt, ps in zip(target.parameters(), source.parameters()):
        pt.mul_(decay).add_(ps, alpha=1.0 - decay)


def distill_grid(schedule: NoiseSchedule, n: int) -> np.ndarray:
    return karras_sigmas(n, schedule.sigma_min, schedule.sigma_max, schedule.rho)


def distill_loss(model, target, teacher, x0, c, n_idx, grid, noise, metric: str = "l2"):
    """Consistency distillation loss for fixed indices and noise (tensors in, scalar out).

    For every sample, ``x_hi = x0 + grid[n] * noise`` is moved to ``grid[n+1]``
    by one Heun step of the teacher and the student output at ``x_hi`` is
    compared against the target network at the teacher's estimate.
    """
    g = torch.as_tensor(grid, dtype=x0.dtype)
    s_hi = g[n_idx].reshape(-1, 1, 1, 1)
    s_lo = g[n_idx + 1].reshape(-1, 1, 1, 1)
    x_hi = x0 + s_hi * noise
    with torch.no_grad():
        x_lo = heun_step(lambda x, s: teacher(x, s.reshape(-1), c), x_hi, s_hi, s_lo)
        y_target = target(x_lo, s_lo.reshape(-1), c)
    y = model(x_hi, s_hi.reshape(-1), c)
    if metric == "l2":
        return ((y - y_target) ** 2).mean()
    return perceptual_distance(y, y_target)


def distill_step(
    model: ConsistencyModel,
    target: ConsistencyModel,
    teacher: EDMDenoiser,
    batch: dict,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
    grid: np.ndarray,
    ema_decay: float = 0.999,
    metric: str = "l2",
    batch_id: int = 0,
) -> float:
    """One distillation update; returns the loss before the update.

    ``grid`` is a decreasing sigma grid with at least two points; adjacent
    pairs ``(grid[n], grid[n+1])`` are sampled uniformly per example.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if len(grid) < 2:
        raise ConfigurationError("distillation grid needs at least 2 points")
    x0 = _to_tensor(batch["x0"], model)[:, None]
    c = batch.get("c")
    c = None if c is None else _to_tensor(c, model)[:, None]
    n_idx = torch.as_tensor(rng.integers(0, len(grid) - 1, x0.shape[0]))
    noise = _to_tensor(rng.standard_normal(tuple(x0.shape)), model)

    model.train()
    loss = distill_loss(model, target, teacher, x0, c, n_idx, grid, noise, metric)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericError(f"non-finite distillation loss in batch {batch_id}; sigma indices={n_idx.tolist()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    model.eval()
    ema_update(target, model, ema_decay)
    return value


def _noise_like(c, rng: np.random.Generator, shape=None):
    return rng.standard_normal(np.shape(c) if shape is None else shape)


def one_step_generate(model: ConsistencyModel, c, schedule: NoiseSchedule = NoiseSchedule(), rng=None, shape=None):
    """``clip(f(sigma_max * n, sigma_max, c), 0, 1)`` with one network call."""
    rng = np.random.default_rng() if rng is None else rng
    x = schedule.sigma_max * _noise_like(c, rng, shape)
    return np.clip(model.predict(x, schedule.sigma_max, c), 0.0, 1.0)


def multistep_levels(schedule: NoiseSchedule, k: int) -> np.ndarray:
    """Intermediate re-noising levels: interior points of a ``k+1`` point Karras grid."""
    return karras_sigmas(k + 1, schedule.sigma_min, schedule.sigma_max, schedule.rho)[1:k]


def multistep_generate(
    model: ConsistencyModel, c, schedule: NoiseSchedule = NoiseSchedule(), k: int = 1, rng=None, shape=None, levels=None
):
    """Alternate consistency jumps and re-noising, ``k`` network calls in total."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    x = model.predict(schedule.sigma_max * _noise_like(c, rng, shape), schedule.sigma_max, c)
    levels = multistep_levels(schedule, k) if levels is None else np.asarray(levels)
    for tau in levels[: k - 1]:
        z = _noise_like(c, rng, np.shape(x))
        x = model.predict(x + math.sqrt(tau**2 - model.sigma_eps**2) * z, tau, c)
    return np.clip(x, 0.0, 1.0)
