"""Variance-exploding diffusion: noise schedule, corruption and the Heun ODE sampler.

Denoisers follow a small duck-typed protocol: ``predict(x, sigma, c=None)``
takes a numpy array and returns the estimated clean sample of the same
shape.  The sampler integrates the probability-flow ODE
``dx/dsigma = (x - D(x; sigma, c)) / sigma`` over a decreasing sigma grid.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError


class Denoiser(Protocol):
    def predict(self, x: np.ndarray, sigma, c: np.ndarray | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    n_steps: int = 80
    sigma_data: float = 0.5
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min < sigma_max")

    def sigmas(self, n: int | None = None) -> np.ndarray:
        """Karras grid ``sigma_0 = sigma_max > ... > sigma_{n-1} = sigma_min`` followed by 0."""
        return np.append(karras_sigmas(self.n_steps if n is None else n, self.sigma_min, self.sigma_max, self.rho), 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def karras_sigmas(n: int, sigma_min: float = 0.002, sigma_max: float = 80.0, rho: float = 7.0) -> np.ndarray:
    if n == 1:
        return np.array([sigma_max], dtype=np.float64)
    ramp = np.arange(n) / (n - 1)
    lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
    s = (hi + ramp * (lo - hi)) ** rho
    # pin the endpoints; the power can be off by an ulp
    s[0], s[-1] = sigma_max, sigma_min
    return s


def add_noise(x0, sigma, rng: np.random.Generator) -> np.ndarray:
    """``x0 + sigma * n`` with standard normal ``n``; ``sigma`` may be per-sample."""
    x0 = np.asarray(x0, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise DomainError("sigma must be >= 0")
    if sigma.ndim:
        sigma = sigma.reshape(sigma.shape + (1,) * (x0.ndim - sigma.ndim))
    return x0 + sigma * rng.standard_normal(x0.shape)


def sample_training_sigma(rng: np.random.Generator, size=None, schedule: NoiseSchedule = NoiseSchedule()):
    """Log-normal training noise levels, ``ln sigma ~ N(p_mean, p_std^2)``."""
    return np.exp(schedule.p_mean + schedule.p_std * rng.standard_normal(size))


def denoising_score(denoiser: Denoiser, x, sigma: float, c=None) -> np.ndarray:
    """Score estimate ``(D(x; sigma) - x) / sigma^2``."""
    if not sigma > 0:
        raise DomainError("score is undefined at sigma = 0")
    x = np.asarray(x, dtype=np.float64)
    return (denoiser.predict(x, sigma, c) - x) / sigma**2


def heun_step(denoise, x, sigma, sigma_next):
    """One Heun move of the probability-flow ODE from ``sigma`` to ``sigma_next``.

    ``denoise(x, sigma)`` returns the clean estimate.  Works on numpy arrays
    and torch tensors alike; ``sigma`` may broadcast against ``x``.  ``sigma_next``
    must be positive.
    """
    d = (x - denoise(x, sigma)) / sigma
    x_next = x + (sigma_next - sigma) * d
    d_next = (x_next - denoise(x_next, sigma_next)) / sigma_next
    return x + (sigma_next - sigma) * 0.5 * (d + d_next)


def heun_sample(
    denoiser: Denoiser,
    c=None,
    schedule: NoiseSchedule = NoiseSchedule(),
    rng: np.random.Generator | None = None,
    shape=None,
    x_init=None,
    trace: list | None = None,
) -> np.ndarray:
    """Deterministic 2nd-order sampler from ``x = sigma_max * n`` down to sigma = 0.

    Heun steps are used between consecutive grid points and a final Euler
    step goes from ``sigma_min`` to 0, which reduces to the denoiser output.
    ``trace``, when given, receives ``(step, sigma, |x|, |D(x)|)`` rows.
    """
    sigmas = schedule.sigmas()
    if x_init is None:
        if shape is None:
            shape = np.shape(c) if c is not None else np.shape(getattr(denoiser, "mean"))
        rng = np.random.default_rng() if rng is None else rng
        x = sigmas[0] * rng.standard_normal(shape)
    else:
        x = np.asarray(x_init, dtype=np.float64)

    for i in range(len(sigmas) - 1):
        s, s_next = sigmas[i], sigmas[i + 1]
        den = denoiser.predict(x, s, c)
        if trace is not None:
            trace.append((i, float(s), float(np.linalg.norm(x)), float(np.linalg.norm(den))))
        if s_next == 0:
            x = den
        else:
            d = (x - den) / s
            x_euler = x + (s_next - s) * d
            d_next = (x_euler - denoiser.predict(x_euler, s_next, c)) / s_next
            x = x + (s_next - s) * 0.5 * (d + d_next)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sample at step {i} (sigma={s:.4g})")
    return x


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sigma", "x_norm", "denoised_norm"])
        w.writerows(trace)


class CountingDenoiser:
    """Wrap a denoiser and count ``predict`` calls."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def predict(self, x, sigma, c=None):
        self.calls += 1
        return self.inner.predict(x, sigma, c)

    def __getattr__(self, name):
        return getattr(self.inner, name)
