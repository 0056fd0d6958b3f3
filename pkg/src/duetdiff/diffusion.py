"""Noise schedules, the forward corruption map, and reverse-step rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import ShapeError, Tensor, add, gaussian, mul, scale, sub


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise variances and the derived signal-retention tables.

    betas[t-1] is the variance added at step t; alpha_bars[t-1] is the
    cumulative product of (1 - beta) up to t. Tables are float64.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def total_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t) -> float | np.ndarray:
        """Cumulative retention at step t, with alpha_bar(0) == 1."""
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.total_steps):
            raise ValueError(f"t={t} outside [0, {self.total_steps}]")
        table = np.concatenate(([1.0], self.alpha_bars))
        out = table[t_arr]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"t={t} outside [1, {self.total_steps}]")


def linear_schedule(total_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated between the endpoints, inclusive."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if total_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    return NoiseSchedule(betas)


def forward_diffuse(x0: Tensor, t, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Jump straight from clean data to the step-t corrupted sample.

    t may be an int or a per-sample int array matching the batch axis.
    """
    if eps.shape != x0.shape:
        raise ShapeError(f"forward_diffuse: eps shape {eps.shape} != x0 shape {x0.shape}")
    abar = sched.alpha_bar(t)
    if np.isscalar(abar):
        if t < 1:
            raise ValueError("forward_diffuse: t must be >= 1")
        c_signal = math.sqrt(abar)
        c_noise = math.sqrt(1.0 - abar)
        return add(scale(x0, c_signal), scale(eps, c_noise))
    if np.any(np.asarray(t) < 1):
        raise ValueError("forward_diffuse: t must be >= 1")
    shape = (-1,) + (1,) * (x0.ndim - 1)
    c_signal = np.sqrt(abar).reshape(shape).astype(x0.data.dtype)
    c_noise = np.sqrt(1.0 - abar).reshape(shape).astype(x0.data.dtype)
    return add(mul(x0, Tensor(c_signal)), mul(eps, Tensor(c_noise)))


def ddpm_step(xt: Tensor, t: int, eps_pred: Tensor, noise: Tensor | None, sched: NoiseSchedule) -> Tensor:
    """One ancestral reverse step t -> t-1 with fixed variance beta_t.

    The injected noise is suppressed at t == 1 (the final step is the
    deterministic mean).
    """
    sched._check_t(t)
    if eps_pred.shape != xt.shape:
        raise ShapeError("ddpm_step: eps_pred shape mismatch")
    beta = sched.beta(t)
    alpha = sched.alpha(t)
    abar = sched.alpha_bar(t)
    mean = scale(sub(xt, scale(eps_pred, beta / math.sqrt(1.0 - abar))), 1.0 / math.sqrt(alpha))
    if t == 1 or noise is None:
        return mean
    if noise.shape != xt.shape:
        raise ShapeError("ddpm_step: noise shape mismatch")
    return add(mean, scale(noise, math.sqrt(beta)))


def ddim_step(xt: Tensor, t: int, t_prev: int, eps_pred: Tensor, sched: NoiseSchedule) -> Tensor:
    """Deterministic reverse jump t -> t_prev (eta = 0)."""
    if not (0 <= t_prev < t <= sched.total_steps):
        raise ValueError(f"ddim_step: need 0 <= t_prev < t <= T, got ({t_prev}, {t})")
    if eps_pred.shape != xt.shape:
        raise ShapeError("ddim_step: eps_pred shape mismatch")
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t_prev)
    x0_hat = scale(sub(xt, scale(eps_pred, math.sqrt(1.0 - abar_t))), 1.0 / math.sqrt(abar_t))
    return add(scale(x0_hat, math.sqrt(abar_prev)), scale(eps_pred, math.sqrt(1.0 - abar_prev)))


def sdedit_init(cond_image: Tensor, strength: float, step_times: list[int],
                sched: NoiseSchedule, rng: Rng) -> tuple[Tensor, int]:
    """Partially noise a condition image to start a truncated trajectory.

    Returns (x_start, start_index): sampling covers only the final
    ``start_index`` entries of the descending ``step_times`` list, and
    start_index = floor(strength * N). strength 0 skips denoising entirely;
    strength 1 starts from the noisiest sampler time.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    n = len(step_times)
    # tiny epsilon guards against float-down (e.g. 0.7 * 50 -> 34.999...)
    start_index = int(math.floor(strength * n + 1e-9))
    if start_index == 0:
        return cond_image, 0
    t_start = step_times[n - start_index]
    eps = gaussian(rng, cond_image.shape, dtype=cond_image.data.dtype)
    return forward_diffuse(cond_image, t_start, eps, sched), start_index
