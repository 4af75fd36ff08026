"""Coordinate network: sinusoidal positional encoding into a tanh MLP with
a real-interleaved complex head, hand-written forward/backward passes, the
learning-rate schedule, Adam and gradient clipping.

Parameters travel as flat dicts of float arrays ("trees") so the optimizer
and clipping are agnostic to what they update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ParamTree = dict  # str -> np.ndarray

IN_DIM = 7  # [omega, src_xyz, mic_xyz]


@dataclass
class NfParams:
    enc_w: np.ndarray  # (E, 7)
    enc_b: np.ndarray  # (E,)
    hidden: list  # [(W, b), ...]
    head_w: np.ndarray  # (2*n_out, last_width); re/im interleaved rows
    gains: np.ndarray  # (7,)

    def __post_init__(self):
        self.enc_w = np.asarray(self.enc_w, dtype=float)
        self.enc_b = np.asarray(self.enc_b, dtype=float).reshape(-1)
        self.head_w = np.asarray(self.head_w, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float).reshape(-1)
        if self.enc_w.shape != (self.enc_b.shape[0], IN_DIM) or self.gains.shape != (IN_DIM,):
            raise ValueError("encoding shapes inconsistent")
        width = self.enc_b.shape[0]
        clean = []
        for w, b in self.hidden:
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float).reshape(-1)
            if w.shape != (b.shape[0], width):
                raise ValueError("hidden layer shape chain broken")
            clean.append((w, b))
            width = b.shape[0]
        self.hidden = clean
        if self.head_w.shape[1] != width or self.head_w.shape[0] % 2 != 0:
            raise ValueError("head shape inconsistent with last hidden width")
        for arr in self._arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("network parameters must be finite")

    def _arrays(self):
        yield self.enc_w
        yield self.enc_b
        for w, b in self.hidden:
            yield w
            yield b
        yield self.head_w
        yield self.gains

    @property
    def n_outputs(self) -> int:
        """Number of complex outputs."""
        return self.head_w.shape[0] // 2

    def to_tree(self, prefix: str = "nf.") -> ParamTree:
        tree = {prefix + "enc_w": self.enc_w, prefix + "enc_b": self.enc_b}
        for k, (w, b) in enumerate(self.hidden):
            tree[prefix + f"h{k}_w"] = w
            tree[prefix + f"h{k}_b"] = b
        tree[prefix + "head_w"] = self.head_w
        tree[prefix + "gains"] = self.gains
        return tree

    @staticmethod
    def from_tree(tree: ParamTree, prefix: str = "nf.") -> "NfParams":
        hidden = []
        k = 0
        while prefix + f"h{k}_w" in tree:
            hidden.append((tree[prefix + f"h{k}_w"], tree[prefix + f"h{k}_b"]))
            k += 1
        return NfParams(
            enc_w=tree[prefix + "enc_w"],
            enc_b=tree[prefix + "enc_b"],
            hidden=hidden,
            head_w=tree[prefix + "head_w"],
            gains=tree[prefix + "gains"],
        )


def init_nf_params(
    rng: np.random.Generator,
    encoding_dim: int,
    hidden_widths,
    n_complex_out: int,
    gains,
) -> NfParams:
    """Trainable encoding, Xavier-uniform tanh layers, zero head.

    The zero head makes the network output exactly zero at step 0, so a
    model that adds precomputed coefficients starts from them unchanged.
    """
    enc_w = rng.standard_normal((encoding_dim, IN_DIM)) / math.sqrt(IN_DIM)
    enc_b = rng.uniform(0.0, 2.0 * math.pi, size=encoding_dim)
    hidden = []
    fan_in = encoding_dim
    for width in hidden_widths:
        bound = math.sqrt(6.0 / (fan_in + width))
        hidden.append((rng.uniform(-bound, bound, size=(width, fan_in)), np.zeros(width)))
        fan_in = width
    head_w = np.zeros((2 * n_complex_out, fan_in))
    return NfParams(enc_w, enc_b, hidden, head_w, np.asarray(gains, dtype=float))


def unit_bounds() -> tuple[np.ndarray, np.ndarray]:
    """Bounds under which non-dimensionalization is the identity."""
    return -np.ones(IN_DIM), np.ones(IN_DIM)


def compute_bounds(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis (lo, hi) over an (N, 7) coordinate matrix."""
    coords = np.asarray(coords, dtype=float)
    return coords.min(axis=0), coords.max(axis=0)


def nondim(coords: np.ndarray, bounds) -> np.ndarray:
    """Affine map of each axis to [-1, 1]; degenerate axes go to 0."""
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    span = hi - lo
    safe = np.where(span > 0.0, span, 1.0)
    out = 2.0 * (np.asarray(coords, dtype=float) - lo) / safe - 1.0
    return np.where(span > 0.0, out, 0.0)


def positional_encoding(coords, enc_w, enc_b, gains, bounds) -> np.ndarray:
    """sin(2 pi W (g * z_nd) + b) for a batch of raw coordinates."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coords.shape[1] != enc_w.shape[1]:
        raise ValueError(f"expected {enc_w.shape[1]}-dim coordinates, got {coords.shape[1]}")
    u = nondim(coords, bounds) * np.asarray(gains, dtype=float)
    return np.sin(2.0 * math.pi * u @ np.asarray(enc_w, float).T + np.asarray(enc_b, float))


def nf_forward(params: NfParams, coords, bounds) -> np.ndarray:
    """Complex outputs, shape (N, n_outputs)."""
    out, _ = nf_forward_cached(params, coords, bounds)
    return out


def nf_forward_cached(params: NfParams, coords, bounds):
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    z_nd = nondim(coords, bounds)
    u = z_nd * params.gains
    pre = 2.0 * math.pi * u @ params.enc_w.T + params.enc_b
    h = np.sin(pre)
    acts = [h]
    for w, b in params.hidden:
        h = np.tanh(h @ w.T + b)
        acts.append(h)
    out_real = h @ params.head_w.T
    out = out_real[:, 0::2] + 1j * out_real[:, 1::2]
    cache = {"z_nd": z_nd, "u": u, "pre": pre, "acts": acts}
    return out, cache


def nf_backward(params: NfParams, cache, upstream) -> ParamTree:
    """Gradients of Re<upstream, output> for every parameter array.

    ``upstream`` is the complex cotangent, shape (N, n_outputs); its real
    and imaginary parts are the sensitivities of the interleaved real head
    outputs. Accumulation over the batch is a fixed-order matrix product.
    """
    upstream = np.atleast_2d(np.asarray(upstream, dtype=complex))
    n, d = upstream.shape
    g_out = np.empty((n, 2 * d))
    g_out[:, 0::2] = upstream.real
    g_out[:, 1::2] = upstream.imag

    acts = cache["acts"]
    grads: ParamTree = {}
    grads["nf.head_w"] = g_out.T @ acts[-1]
    g_h = g_out @ params.head_w
    for k in range(len(params.hidden) - 1, -1, -1):
        w, _ = params.hidden[k]
        g_a = g_h * (1.0 - acts[k + 1] ** 2)
        grads[f"nf.h{k}_w"] = g_a.T @ acts[k]
        grads[f"nf.h{k}_b"] = g_a.sum(axis=0)
        g_h = g_a @ w
    g_pre = g_h * np.cos(cache["pre"])
    grads["nf.enc_b"] = g_pre.sum(axis=0)
    grads["nf.enc_w"] = 2.0 * math.pi * g_pre.T @ cache["u"]
    g_u = 2.0 * math.pi * g_pre @ params.enc_w
    grads["nf.gains"] = (g_u * cache["z_nd"]).sum(axis=0)
    return grads


@dataclass
class LrSchedule:
    lr_start: float = 1e-4
    lr_base: float = 1e-3
    lr_floor: float = 1e-5
    warmup_steps: int = 1000
    decay_rate: float = 0.9
    decay_every: int = 1000


def lr_schedule(step: int, cfg: LrSchedule) -> float:
    """Linear ramp to lr_base, then exponential decay clamped at lr_floor."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr_start + (cfg.lr_base - cfg.lr_start) * step / cfg.warmup_steps
    lr = cfg.lr_base * cfg.decay_rate ** ((step - cfg.warmup_steps) / cfg.decay_every)
    return max(lr, cfg.lr_floor)


@dataclass
class AdamState:
    step: int
    m: ParamTree
    v: ParamTree

    @staticmethod
    def for_params(params: ParamTree) -> "AdamState":
        return AdamState(
            step=0,
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    state: AdamState,
    params: ParamTree,
    grads: ParamTree,
    lr,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Bias-corrected Adam without weight decay. Returns (params, state).

    ``lr`` is a float, or a dict mapping parameter keys to rates with a
    required "default" entry (used e.g. to move scalar kernel parameters
    faster than network weights).
    """
    t = state.step + 1
    new_params: ParamTree = {}
    new_m: ParamTree = {}
    new_v: ParamTree = {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {key}")
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        rate = lr[key] if isinstance(lr, dict) and key in lr else (lr["default"] if isinstance(lr, dict) else lr)
        new_params[key] = p - rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[key] = m
        new_v[key] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def clip_gradients(grads: ParamTree, max_norm: float = 1.0) -> ParamTree:
    """Scale the whole tree so its global L2 norm is at most max_norm."""
    if max_norm <= 0.0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}
