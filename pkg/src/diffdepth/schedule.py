"""DDPM variance schedule, forward diffusion, parameterization conversions, DDIM.

Index convention: ``betas[t-1]`` is the step-t variance for t in 1..T, and
``alpha_bars[t]`` is the cumulative product with ``alpha_bars[0] = 1`` so a
final DDIM step to t_prev = 0 terminates cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCount, InvalidRange, NonMonotoneSteps, ShapeMismatch

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_diffuse",
    "convert_param",
    "ddim_step",
    "ddpm_step",
    "respace",
]

PARAMETERIZATIONS = ("eps", "v", "x0")


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta table and cumulative alpha-bar table of a T-step diffusion."""

    T: int
    betas: np.ndarray        # shape (T,), betas[t-1] = beta_t
    alpha_bars: np.ndarray   # shape (T+1,), alpha_bars[0] = 1

    def alpha_bar(self, t: int) -> float:
        if not (0 <= t <= self.T):
            raise InvalidRange(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])


def make_schedule(kind: str, T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a ``linear`` or ``scaled_linear`` beta schedule of T steps."""
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "scaled_linear":
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T) ** 2
    else:
        raise InvalidRange(f"unknown schedule kind {kind!r}")
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def forward_diffuse(d0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noisy sample ``sqrt(abar_t) * d0 + sqrt(1 - abar_t) * eps``."""
    d0 = np.asarray(d0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if d0.shape != eps.shape:
        raise ShapeMismatch(f"d0 shape {d0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * d0 + np.sqrt(1.0 - ab) * eps


def convert_param(
    value: np.ndarray,
    src: str,
    dst: str,
    t: int,
    d_t: np.ndarray,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Convert between the eps / v / x0 parameterizations at timestep t.

    All three are affinely related through ``d_t``; with
    ``v = sqrt(abar)*eps - sqrt(1-abar)*x0`` the conversions are mutually
    consistent bijections for 1 <= t <= T.
    """
    if src not in PARAMETERIZATIONS or dst not in PARAMETERIZATIONS:
        raise ValueError(f"parameterizations must be one of {PARAMETERIZATIONS}")
    value = np.asarray(value, dtype=np.float64)
    d_t = np.asarray(d_t, dtype=np.float64)
    if value.shape != d_t.shape:
        raise ShapeMismatch(f"value shape {value.shape} != d_t shape {d_t.shape}")
    if not (1 <= t <= sched.T):
        raise InvalidRange(f"timestep {t} outside [1, {sched.T}]")
    if src == dst:
        return value.copy()
    ab = sched.alpha_bar(t)
    sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
    if src == "eps":
        eps = value
        x0 = (d_t - sb * eps) / sa
    elif src == "x0":
        x0 = value
        eps = (d_t - sa * x0) / sb
    else:  # v
        x0 = sa * d_t - sb * value
        eps = sb * d_t + sa * value
    if dst == "eps":
        return eps
    if dst == "x0":
        return x0
    return sa * eps - sb * x0


def ddim_step(
    d_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
) -> np.ndarray:
    """One deterministic DDIM update from timestep t down to t_prev.

    Estimates the clean map from the predicted noise and re-noises it at the
    target level; ``t_prev = 0`` lands on the clean estimate.  Stochastic
    sampling (eta > 0) is intentionally not provided.
    """
    d_t = np.asarray(d_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if d_t.shape != eps_hat.shape:
        raise ShapeMismatch(f"d_t shape {d_t.shape} != eps_hat shape {eps_hat.shape}")
    if not (0 <= t_prev < t <= sched.T):
        raise NonMonotoneSteps(f"need T >= t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if eta != 0.0:
        raise NotImplementedError("stochastic DDIM (eta > 0) is out of scope; use eta=0")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = (d_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_p) * x0_hat + np.sqrt(1.0 - ab_p) * eps_hat


def ddpm_step(*args, **kwargs):
    """Ancestral DDPM sampling stub; only deterministic DDIM is in scope."""
    raise NotImplementedError("ancestral DDPM sampling with noise injection is out of scope")


def respace(T: int, S: int) -> np.ndarray:
    """S evenly spaced timesteps descending from T to 1 (inclusive)."""
    if not (1 <= S <= T):
        raise InvalidCount(f"need 1 <= S <= T, got S={S}, T={T}")
    plan = np.round(np.linspace(T, 1, S)).astype(int)
    if plan[0] != T or plan[-1] < 1 or np.any(np.diff(plan) >= 0):
        raise InvalidCount(f"internal error: bad plan for T={T}, S={S}")
    return plan
