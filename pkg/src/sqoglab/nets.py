"""Small MLPs over flat parameter vectors, with exact reverse-mode gradients.

Networks are rectified-linear on hidden layers and identity on the output;
actors squash the output into the action box with a scaled tanh. Parameters
live in one flat float64 vector whose layout is (W_0, b_0, W_1, b_1, ...);
the hot array math is delegated to the selected kernel backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]  # input, hidden..., output
    init_seed: int

    def __post_init__(self):
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layout(self) -> list[tuple[int, int, int, int]]:
        """(w_offset, b_offset, fan_out, fan_in) per layer."""
        offsets = []
        pos = 0
        for l in range(self.n_layers):
            fan_in, fan_out = self.layer_sizes[l], self.layer_sizes[l + 1]
            offsets.append((pos, pos + fan_out * fan_in, fan_out, fan_in))
            pos += fan_out * fan_in + fan_out
        return offsets

    @property
    def n_params(self) -> int:
        total = 0
        for l in range(self.n_layers):
            total += self.layer_sizes[l + 1] * (self.layer_sizes[l] + 1)
        return total


def init_params(spec: MlpSpec) -> np.ndarray:
    """Fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded."""
    rng = np.random.default_rng(spec.init_seed)
    params = np.empty(spec.n_params)
    for w_off, b_off, fan_out, fan_in in spec.layout():
        bound = 1.0 / np.sqrt(fan_in)
        params[w_off:b_off] = rng.uniform(-bound, bound, size=fan_out * fan_in)
        params[b_off : b_off + fan_out] = rng.uniform(-bound, bound, size=fan_out)
    return params


def split_params(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views into the flat vector, one pair per layer (no copies)."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise ValueError(f"parameter vector must have length {spec.n_params}")
    out = []
    for w_off, b_off, fan_out, fan_in in spec.layout():
        w = params[w_off:b_off].reshape(fan_out, fan_in)
        b = params[b_off : b_off + fan_out]
        out.append((w, b))
    return out


def _as_batch(x: np.ndarray, width: int) -> tuple[np.ndarray, bool]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != width:
            raise ValueError(f"input width {x.shape[0]} != {width}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"input must be (n, {width})")
    return x, False


def _weight_lists(spec: MlpSpec, params: np.ndarray):
    layers = split_params(spec, params)
    return [w for w, _ in layers], [b for _, b in layers]


def forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    x2, squeeze = _as_batch(x, spec.layer_sizes[0])
    ws, bs = _weight_lists(spec, params)
    y = K.mlp_forward(x2, ws, bs)
    return y[0] if squeeze else y


def forward_cached(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    """Forward pass keeping activations and pre-activations for the backward pass."""
    x2, _ = _as_batch(x, spec.layer_sizes[0])
    ws, bs = _weight_lists(spec, params)
    y, activations, pre_acts = K.mlp_forward_cached(x2, ws, bs)
    return y, (activations, pre_acts)


def backward(
    spec: MlpSpec, params: np.ndarray, x: np.ndarray, upstream: np.ndarray, cache=None
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients.

    upstream is dLoss/dOutput, shape (n, output). Returns (dLoss/dParams flat,
    dLoss/dInput of shape (n, input)).
    """
    x2, _ = _as_batch(x, spec.layer_sizes[0])
    ws, bs = _weight_lists(spec, params)
    if cache is None:
        _, activations, pre_acts = K.mlp_forward_cached(x2, ws, bs)
    else:
        activations, pre_acts = cache
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    layer_grads, dx = K.mlp_backward(upstream, ws, activations, pre_acts)
    grad = np.empty(spec.n_params)
    for (w_off, b_off, fan_out, _fan_in), (dw, db) in zip(spec.layout(), layer_grads):
        grad[w_off:b_off] = np.asarray(dw).reshape(-1)
        grad[b_off : b_off + fan_out] = db
    return grad, np.asarray(dx)


# ---------------------------------------------------------------------------
# Optimizer and target tracking
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(n_params: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), beta1=beta1, beta2=beta2, eps=eps)


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected adaptive-moment update; rejects non-finite gradients."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError("gradient/parameter length mismatch")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise FloatingPointError(f"non-finite gradient (first bad coordinate: {bad})")
    new_params = np.ascontiguousarray(params, dtype=np.float64).copy()
    m = state.m.copy()
    v = state.v.copy()
    t = state.t + 1
    K.adam_step_inplace(
        new_params, np.ascontiguousarray(grad), m, v, t, lr, state.beta1, state.beta2, state.eps
    )
    return new_params, AdamState(m=m, v=v, t=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def soft_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """Polyak tracking: (1 - tau) target + tau online, per coordinate."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    return (1.0 - tau) * target + tau * online


# ---------------------------------------------------------------------------
# Bounded actor head
# ---------------------------------------------------------------------------


def squash_to_box(z: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Smooth bounded map onto [low, high]: center + half-range * tanh(z)."""
    center = (high + low) / 2.0
    half = (high - low) / 2.0
    return center + half * np.tanh(z)


def squash_backward(z: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """d squash / d z, evaluated elementwise."""
    half = (high - low) / 2.0
    return half * (1.0 - np.tanh(z) ** 2)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray, seed: int, step: int) -> None:
    """Two-line format: JSON header, then the flat parameter vector in decimal."""
    header = {
        "layer_sizes": list(spec.layer_sizes),
        "init_seed": spec.init_seed,
        "seed": int(seed),
        "step": int(step),
        "n_params": int(params.shape[0]),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(" ".join(format(float(p), ".17g") for p in params) + "\n")


def load_checkpoint(path) -> tuple[MlpSpec, np.ndarray, int, int]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        values = fh.readline().split()
    spec = MlpSpec(layer_sizes=tuple(header["layer_sizes"]), init_seed=int(header["init_seed"]))
    params = np.array([float(v) for v in values])
    if params.shape[0] != int(header["n_params"]) or params.shape[0] != spec.n_params:
        raise ValueError("checkpoint parameter count mismatch")
    return spec, params, int(header["seed"]), int(header["step"])
