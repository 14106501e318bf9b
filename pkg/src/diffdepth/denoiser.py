"""Conditional denoisers and the training loop.

The denoiser contract is ``denoiser(depth_latent, image_latent, t) -> eps_hat``
where ``depth_latent`` is the noisy single-channel latent, ``image_latent``
the 3-channel conditioning latent of the same spatial shape, and ``t`` the
timestep.  Three realizations:

* :class:`OracleDenoiser` returns a stored true noise grid (test oracle);
* :func:`gaussian_analytic_denoiser` is the closed-form posterior-mean noise
  estimate for i.i.d. Gaussian data;
* :class:`ToyDenoiser` is a two-layer convolutional network with hand-written
  gradients, trained by :func:`train` with Adam on the eps- or v-objective.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivergedLoss, InvalidCount, MalformedFile, ShapeMismatch
from .mrnoise import NoiseSpec, multires_noise, substream
from .schedule import NoiseSchedule, convert_param, forward_diffuse

__all__ = [
    "concat_condition",
    "duplicate_halve_init",
    "OracleDenoiser",
    "gaussian_analytic_denoiser",
    "GaussianAnalyticDenoiser",
    "ToyDenoiser",
    "TrainConfig",
    "TrainItem",
    "train",
    "AdamState",
    "adam_update",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_csv",
]

WEIGHT_BLOCKS = ("w1", "b1", "w2", "b2")
CKPT_MAGIC = b"MGLD"
CKPT_VERSION = 1
_ACTIVATIONS = {"silu": 0}


def concat_condition(depth_latent: np.ndarray, image_latent: np.ndarray) -> np.ndarray:
    """Stack depth and image latents into a 4-channel input [depth, R, G, B]."""
    d = np.asarray(depth_latent, dtype=np.float64)
    img = np.asarray(image_latent, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeMismatch(f"depth latent must be 2-D, got {d.shape}")
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeMismatch(f"image latent must be (3, H, W), got {img.shape}")
    if img.shape[1:] != d.shape:
        raise ShapeMismatch(f"spatial shapes differ: depth {d.shape}, image {img.shape[1:]}")
    return np.concatenate([d[None], img], axis=0)


def duplicate_halve_init(weights: np.ndarray) -> np.ndarray:
    """Duplicate a conv weight block along its input-channel axis and halve it.

    The returned block consumes twice the channels and reproduces the original
    pre-activation exactly when both halves of the input are identical.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise ShapeMismatch(f"expected (out, in, k, k) weight block, got {w.shape}")
    return np.concatenate([w, w], axis=1) * 0.5


class OracleDenoiser:
    """Returns the stored true noise, ignoring the input; pipeline test oracle."""

    def __init__(self, true_eps: np.ndarray):
        self.true_eps = np.asarray(true_eps, dtype=np.float64)

    def __call__(self, depth_latent, image_latent, t):
        return self.true_eps.copy()


def gaussian_analytic_denoiser(
    d_t: np.ndarray, t: int, mu: float, sigma: float, sched: NoiseSchedule
) -> np.ndarray:
    """MMSE noise estimate for per-pixel i.i.d. data d0 ~ N(mu, sigma^2).

    The posterior mean of d0 given d_t is
    ``(sqrt(abar)*sigma^2*d_t + (1-abar)*mu) / (abar*sigma^2 + 1-abar)``;
    the noise estimate re-expresses d_t around it.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d_t = np.asarray(d_t, dtype=np.float64)
    ab = sched.alpha_bar(t)
    if ab >= 1.0:
        raise ValueError("analytic denoiser undefined at abar = 1 (t = 0)")
    denom = ab * sigma**2 + (1.0 - ab)
    mu_post = (np.sqrt(ab) * sigma**2 * d_t + (1.0 - ab) * mu) / denom
    return (d_t - np.sqrt(ab) * mu_post) / np.sqrt(1.0 - ab)


class GaussianAnalyticDenoiser:
    """Denoiser-interface wrapper around :func:`gaussian_analytic_denoiser`."""

    def __init__(self, mu: float, sigma: float, sched: NoiseSchedule):
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.sched = sched

    def __call__(self, depth_latent, image_latent, t):
        return gaussian_analytic_denoiser(depth_latent, t, self.mu, self.sigma, self.sched)


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def _silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded same-size cross-correlation, x (C,H,W), w (O,C,k,k)."""
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.einsum("chwij,ocij->ohw", win, w, optimize=True) + b[:, None, None]


def _conv_same_grad(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    """Gradients of _conv_same wrt (w, b, x); valid for odd kernel sizes."""
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    dw = np.einsum("ohw,chwij->ocij", dout, win, optimize=True)
    db = dout.sum(axis=(1, 2))
    dop = np.pad(dout, ((0, 0), (p, p), (p, p)))
    dwin = sliding_window_view(dop, (k, k), axis=(1, 2))
    dx = np.einsum("ohwij,ocij->chw", dwin, w[:, :, ::-1, ::-1], optimize=True)
    return dw, db, dx


def _sinusoidal_table(T: int, channels: int) -> np.ndarray:
    """Per-timestep embedding table of shape (T+1, channels), half sin/half cos."""
    half = channels // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = np.arange(T + 1)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass
class ToyDenoiser:
    """Two-layer conv net conv(4->F) -> silu -> conv(F->1) with a timestep bias.

    The sinusoidal timestep embedding is added per hidden channel before the
    nonlinearity; it is a fixed table, not a trained parameter.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    t_table: np.ndarray
    activation: str = "silu"

    @classmethod
    def create(cls, seed: int, hidden: int = 16, kernel: int = 3, T: int = 1000) -> "ToyDenoiser":
        if kernel % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        if hidden % 2 != 0:
            raise ValueError(f"hidden channel count must be even, got {hidden}")
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((hidden, 4, kernel, kernel)) * np.sqrt(2.0 / (4 * kernel**2))
        w2 = rng.standard_normal((1, hidden, kernel, kernel)) * np.sqrt(2.0 / (hidden * kernel**2))
        return cls(
            w1=w1,
            b1=np.zeros(hidden),
            w2=w2,
            b2=np.zeros(1),
            t_table=_sinusoidal_table(T, hidden),
        )

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def kernel(self) -> int:
        return self.w1.shape[2]

    @property
    def T(self) -> int:
        return self.t_table.shape[0] - 1

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_BLOCKS}

    def forward(self, x: np.ndarray, t: int) -> np.ndarray:
        y, _ = self.forward_with_cache(x, t)
        return y

    def forward_with_cache(self, x: np.ndarray, t: int):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != 4:
            raise ShapeMismatch(f"expected (4, H, W) input, got {x.shape}")
        if not (0 <= t <= self.T):
            raise ValueError(f"timestep {t} outside embedding table [0, {self.T}]")
        h1 = _conv_same(x, self.w1, self.b1) + self.t_table[t][:, None, None]
        a1 = _silu(h1)
        y = _conv_same(a1, self.w2, self.b2)[0]
        return y, (x, h1, a1)

    def backward(self, cache, grad_out: np.ndarray, frozen: tuple[str, ...] = ()):
        """Exact gradients of the scalar loss behind ``grad_out = dL/dy``."""
        x, h1, a1 = cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != x.shape[1:]:
            raise ShapeMismatch(f"grad shape {grad_out.shape} != output shape {x.shape[1:]}")
        dw2, db2, da1 = _conv_same_grad(a1, self.w2, grad_out[None])
        dh1 = da1 * _silu_prime(h1)
        dw1, db1, _ = _conv_same_grad(x, self.w1, dh1)
        grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
        for name in frozen:
            grads[name] = np.zeros_like(grads[name])
        return grads

    def __call__(self, depth_latent, image_latent, t):
        return self.forward(concat_condition(depth_latent, image_latent), t)


def toy_backward(model: ToyDenoiser, x: np.ndarray, t: int, grad_out: np.ndarray, frozen=()):
    """Forward + backward in one call; convenience for gradient checks."""
    _, cache = model.forward_with_cache(x, t)
    return model.backward(cache, grad_out, frozen=frozen)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per weight block."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_model(cls, model: ToyDenoiser) -> "AdamState":
        zeros = {k: np.zeros_like(w) for k, w in model.weights().items()}
        return cls(m=zeros, v={k: np.zeros_like(w) for k, w in model.weights().items()})


def adam_update(
    model: ToyDenoiser,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam step over all weight blocks."""
    state.step += 1
    for name in WEIGHT_BLOCKS:
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**state.step)
        v_hat = state.v[name] / (1.0 - beta2**state.step)
        block = getattr(model, name)
        block -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass(frozen=True)
class TrainItem:
    """One preprocessed training pair in latent space."""

    image_latent: np.ndarray   # (3, lh, lw)
    depth_latent: np.ndarray   # (lh, lw), normalized convention


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop knobs; defaults are the desk-scale ones."""

    objective: str = "v"
    iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    flip: bool = True
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    flip_mode: str = "joint"  # "image_only" is a negative-control diagnosis mode

    def __post_init__(self):
        if self.objective not in ("eps", "v"):
            raise ValueError(f"objective must be 'eps' or 'v', got {self.objective!r}")
        if self.iterations < 1:
            raise InvalidCount(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise InvalidCount(f"batch size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.flip_mode not in ("joint", "image_only"):
            raise ValueError(f"flip_mode must be 'joint' or 'image_only', got {self.flip_mode!r}")


def _default_noise_fn(spec: NoiseSpec):
    def draw(h, w, seed, t, T):
        return multires_noise(h, w, replace(spec, seed=seed), t, T)

    return draw


def train(
    model: ToyDenoiser,
    items: list[TrainItem],
    sched: NoiseSchedule,
    cfg: TrainConfig,
    noise_fn=None,
):
    """Minibatch Adam on E||target - prediction||^2 with target eps or v.

    The same drawn noise sample both corrupts the clean latent and (after
    conversion) serves as the regression target.  Horizontal flips are applied
    jointly to image and depth when enabled.  Returns the model and the
    per-iteration loss trace.
    """
    if not items:
        raise InvalidCount("training dataset is empty")
    if noise_fn is None:
        noise_fn = _default_noise_fn(cfg.noise)
    state = AdamState.for_model(model)
    trace = []
    for it in range(cfg.iterations):
        rng = substream(cfg.seed, 7, it)
        grads = {k: np.zeros_like(w) for k, w in model.weights().items()}
        loss_sum = 0.0
        for _ in range(cfg.batch_size):
            item = items[int(rng.integers(0, len(items)))]
            img, z0 = item.image_latent, item.depth_latent
            if cfg.flip and rng.random() < 0.5:
                img = img[:, :, ::-1]
                if cfg.flip_mode == "joint":
                    z0 = z0[:, ::-1]
            t = int(rng.integers(1, sched.T + 1))
            noise_seed = int(rng.integers(0, 2**31))
            eps = noise_fn(z0.shape[0], z0.shape[1], noise_seed, t, sched.T)
            d_t = forward_diffuse(z0, t, eps, sched)
            if cfg.objective == "eps":
                target = eps
            else:
                target = convert_param(eps, "eps", "v", t, d_t, sched)
            x = concat_condition(d_t, img)
            pred, cache = model.forward_with_cache(x, t)
            resid = pred - target
            loss_sum += float(np.mean(resid**2))
            grad_out = 2.0 * resid / (resid.size * cfg.batch_size)
            for name, g in model.backward(cache, grad_out).items():
                grads[name] += g
        loss = loss_sum / cfg.batch_size
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became non-finite at iteration {it}")
        adam_update(model, grads, state, cfg.learning_rate)
        trace.append(loss)
    return model, trace


def save_checkpoint(model: ToyDenoiser, path) -> None:
    """Versioned binary checkpoint: magic, version, shape header, f32 weights."""
    header = struct.pack(
        "<4sIIIII",
        CKPT_MAGIC,
        CKPT_VERSION,
        model.hidden,
        model.kernel,
        model.T,
        _ACTIVATIONS[model.activation],
    )
    with open(path, "wb") as f:
        f.write(header)
        for name in WEIGHT_BLOCKS:
            f.write(getattr(model, name).astype("<f4").tobytes())


def load_checkpoint(path) -> ToyDenoiser:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        blob = f.read()
    head_size = struct.calcsize("<4sIIIII")
    if len(blob) < head_size:
        raise MalformedFile(f"checkpoint {path} truncated before header")
    magic, version, hidden, kernel, T, act_id = struct.unpack("<4sIIIII", blob[:head_size])
    if magic != CKPT_MAGIC:
        raise MalformedFile(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise MalformedFile(f"unsupported checkpoint version {version}")
    acts = {v: k for k, v in _ACTIVATIONS.items()}
    if act_id not in acts:
        raise MalformedFile(f"unknown activation id {act_id}")
    shapes = {
        "w1": (hidden, 4, kernel, kernel),
        "b1": (hidden,),
        "w2": (1, hidden, kernel, kernel),
        "b2": (1,),
    }
    offset = head_size
    blocks = {}
    for name in WEIGHT_BLOCKS:
        shape = shapes[name]
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(blob):
            raise MalformedFile(f"checkpoint {path} truncated in block {name}")
        blocks[name] = (
            np.frombuffer(blob[offset : offset + nbytes], dtype="<f4").astype(np.float64).reshape(shape)
        )
        offset += nbytes
    if offset != len(blob):
        raise MalformedFile(f"checkpoint {path} has {len(blob) - offset} trailing bytes")
    return ToyDenoiser(
        t_table=_sinusoidal_table(T, hidden), activation=acts[act_id], **blocks
    )


def write_loss_csv(trace: list[float], path) -> None:
    """Loss trace as CSV with one row per iteration."""
    with open(path, "w") as f:
        f.write("iteration,loss\n")
        for i, loss in enumerate(trace):
            f.write(f"{i},{loss:.10g}\n")
