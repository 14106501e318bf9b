"""End-to-end inference and test-time ensembling.

A single inference pass encodes the image, initializes the depth latent from
seeded Gaussian noise and walks the re-spaced DDIM plan, feeding the denoiser
the depth latent concatenated with the image latent at every step.  Multiple
passes over the same image are merged by jointly fitting per-member scale and
shift that minimize pairwise disagreement plus a range regularizer, taking
the pixel-wise median as the merged prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .denoiser import concat_condition
from .depthnorm import replicate3
from .errors import NeedTwoMembers, NonFiniteObjective
from .mrnoise import gaussian_noise
from .schedule import NoiseSchedule, ddim_step

__all__ = [
    "InferenceConfig",
    "EnsembleSolution",
    "infer_once",
    "infer_ensemble",
    "ensemble_objective",
    "ensemble_align",
    "default_lambda",
    "minmax_normalize",
]


@dataclass(frozen=True)
class InferenceConfig:
    """Inference knobs: denoising steps, ensemble size, seeding."""

    steps: int = 50
    ensemble: int = 10
    seed: int = 0
    reg_lambda: float | None = None  # None: 0.02 * N / (N - 1)
    align_iters: int = 2000
    align_tol: float = 1e-8
    align_method: str = "nelder-mead"  # or "subgradient"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.ensemble < 1:
            raise ValueError(f"ensemble size must be >= 1, got {self.ensemble}")


@dataclass
class EnsembleSolution:
    """Per-member scale/shift, merged median map and per-pixel spread."""

    scales: np.ndarray
    shifts: np.ndarray
    merged: np.ndarray
    trace: list[float]
    spread: np.ndarray


def infer_once(
    image: np.ndarray,
    model,
    sched: NoiseSchedule,
    plan: np.ndarray,
    codec,
    noise_seed: int,
    init_latent: np.ndarray | None = None,
) -> np.ndarray:
    """One DDIM pass conditioned on ``image``; output in the normalized convention.

    Initialization is always plain Gaussian noise regardless of the training
    noise kind; ``init_latent`` overrides it (used by inversion oracles).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[1:]
    z_img = codec.encode_image(image)
    lh, lw = z_img.shape[1:]
    if init_latent is not None:
        z = np.asarray(init_latent, dtype=np.float64).copy()
    else:
        z = gaussian_noise(lh, lw, noise_seed)
    steps = list(np.asarray(plan, dtype=int)) + [0]
    for t, t_prev in zip(steps[:-1], steps[1:]):
        eps_hat = model(z, z_img, int(t))
        z = ddim_step(z, eps_hat, int(t), int(t_prev), sched)
    return codec.decode_depth(replicate3(z), h, w)


def minmax_normalize(grid: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Map a grid to [0, 1]; returns (normalized, scale, shift)."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    span = hi - lo
    if span < 1e-12:
        return np.zeros_like(g), 1.0, -lo
    s = 1.0 / span
    t = -lo * s
    return g * s + t, s, t


def default_lambda(n: int) -> float:
    """Regularizer weight balancing the pairwise term for an N-member ensemble."""
    if n < 2:
        return 0.02
    return 0.02 * n / (n - 1)


def _merged_median(members: np.ndarray) -> np.ndarray:
    # even member counts take the midpoint of the two central order statistics
    return np.median(members, axis=0)


def ensemble_objective(preds: np.ndarray, lam: float) -> float:
    """Pairwise RMS disagreement plus range regularizer of the median map.

    ``sqrt(mean over pairs of per-pixel mean squared difference)`` plus
    ``lam * (|min(m)| + |1 - max(m)|)`` where m is the pixel-wise median.
    """
    members = np.asarray(preds, dtype=np.float64)
    n = members.shape[0]
    if n < 2:
        raise NeedTwoMembers(f"objective needs >= 2 members, got {n}")
    pair_sum = 0.0
    for i in range(n - 1):
        diffs = members[i + 1 :] - members[i]
        pair_sum += float(np.mean(diffs**2, axis=tuple(range(1, diffs.ndim))).sum())
    b = n * (n - 1) // 2
    m = _merged_median(members)
    reg = abs(float(m.min())) + abs(1.0 - float(m.max()))
    return float(np.sqrt(pair_sum / b) + lam * reg)


def _apply_params(preds: np.ndarray, params: np.ndarray) -> np.ndarray:
    n = preds.shape[0]
    s = params[:n].reshape(n, 1, 1)
    t = params[n:].reshape(n, 1, 1)
    return preds * s + t


def _subgradient_descent(fun, x0: np.ndarray, iters: int, tol: float):
    """Two-sided finite-difference descent with backtracking; robust fallback
    for the non-smooth objective when a derivative-free run is not wanted."""
    x = x0.copy()
    fx = fun(x)
    step = 0.05
    trace = [fx]
    h = 1e-6
    for _ in range(iters):
        g = np.zeros_like(x)
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            xm = x.copy()
            xm[j] -= h
            g[j] = (fun(xp) - fun(xm)) / (2 * h)
        gn = np.linalg.norm(g)
        if gn < tol:
            break
        moved = False
        while step > 1e-12:
            cand = x - step * g / gn
            fc = fun(cand)
            if fc < fx - tol:
                x, fx = cand, fc
                step *= 1.5
                moved = True
                break
            step *= 0.5
        trace.append(fx)
        if not moved:
            break
    return x, fx, trace


def ensemble_align(
    preds: list[np.ndarray],
    lam: float | None = None,
    iters: int = 2000,
    tol: float = 1e-8,
    method: str = "nelder-mead",
) -> EnsembleSolution:
    """Jointly fit per-member scale/shift minimizing the ensemble objective.

    Members are initialized independently min-max normalized to [0, 1]; the
    optimizer is derivative-free by default because the median and absolute
    values make the objective non-smooth.  The returned solution never has a
    worse objective than the initialization.
    """
    members = np.stack([np.asarray(p, dtype=np.float64) for p in preds])
    n = members.shape[0]
    if n == 1:
        normed, s, t = minmax_normalize(members[0])
        return EnsembleSolution(
            scales=np.array([s]),
            shifts=np.array([t]),
            merged=normed,
            trace=[],
            spread=np.zeros_like(normed),
        )
    if lam is None:
        lam = default_lambda(n)

    init = np.empty(2 * n)
    for i in range(n):
        _, s, t = minmax_normalize(members[i])
        init[i] = s
        init[n + i] = t

    def fun(params):
        return ensemble_objective(_apply_params(members, params), lam)

    f0 = fun(init)
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective at initialization is {f0}")

    if method == "nelder-mead":
        best_trace = [f0]

        def record(xk):
            best_trace.append(min(best_trace[-1], fun(xk)))

        result = minimize(
            fun,
            init,
            method="Nelder-Mead",
            callback=record,
            options={"maxfev": iters, "fatol": tol, "xatol": tol, "disp": False},
        )
        params, fbest, trace = result.x, float(result.fun), best_trace
    elif method == "subgradient":
        params, fbest, trace = _subgradient_descent(fun, init, iters, tol)
    else:
        raise ValueError(f"unknown alignment method {method!r}")

    if not np.isfinite(fbest):
        raise NonFiniteObjective(f"objective diverged to {fbest}")
    if fbest > f0:
        params, fbest = init, f0
    aligned = _apply_params(members, params)
    return EnsembleSolution(
        scales=params[:n].copy(),
        shifts=params[n:].copy(),
        merged=_merged_median(aligned),
        trace=trace,
        spread=aligned.std(axis=0),
    )


def infer_ensemble(
    image: np.ndarray,
    model,
    sched: NoiseSchedule,
    plan: np.ndarray,
    codec,
    cfg: InferenceConfig,
) -> EnsembleSolution:
    """Run ``cfg.ensemble`` seeded inference passes and align/merge them."""
    preds = [
        infer_once(image, model, sched, plan, codec, noise_seed=cfg.seed + i)
        for i in range(cfg.ensemble)
    ]
    return ensemble_align(
        preds,
        lam=cfg.reg_lambda,
        iters=cfg.align_iters,
        tol=cfg.align_tol,
        method=cfg.align_method,
    )
