"""Minimal trainable feed-forward substrate: dense layers, ReLU/sigmoid,
reverse-mode gradients, SGD-momentum and Adam, and finite-difference
gradient verification. No external ML framework.

Forward/backward operate on batches (rows) natively; 1-D inputs are treated
as a batch of one and squeezed on the way out. Parameters default to float32;
gradient checks build float64 networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ValidationError

IDENTITY = "identity"
SIGMOID = "sigmoid"
RELU = "relu"


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]
    output_activation: str = IDENTITY

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("Mlp needs at least one layer")
        if self.output_activation not in (IDENTITY, SIGMOID):
            raise ValidationError(f"unknown output activation {self.output_activation!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValidationError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float32) -> DenseLayer:
    """He-style fan-in uniform init, zero bias."""
    limit = np.sqrt(6.0 / in_dim)
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)
    b = np.zeros(out_dim, dtype=dtype)
    return DenseLayer(weights=w, bias=b)


def build_mlp(
    rng: np.random.Generator,
    dims: list[int],
    output_activation: str = IDENTITY,
    dtype=np.float32,
) -> Mlp:
    """Chain dense layers through the given dims, ReLU between them."""
    if len(dims) < 2:
        raise ValidationError("build_mlp needs at least [in_dim, out_dim]")
    layers = [init_dense(rng, dims[i], dims[i + 1], dtype) for i in range(len(dims) - 1)]
    return Mlp(layers=layers, output_activation=output_activation)


def _activation_of(mlp: Mlp, layer_index: int) -> str:
    return RELU if layer_index < len(mlp.layers) - 1 else mlp.output_activation


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Affine + activation composition; the tape feeds backward()."""
    x = np.asarray(x)
    was_1d = x.ndim == 1
    a = x[None, :] if was_1d else x
    if a.ndim != 2 or a.shape[1] != mlp.in_dim:
        raise ValidationError(f"input shape {x.shape} incompatible with in_dim {mlp.in_dim}")
    tape = [was_1d]
    for i, layer in enumerate(mlp.layers):
        z = a @ layer.weights.T + layer.bias
        act = _activation_of(mlp, i)
        prev = a
        if act == RELU:
            a = relu(z)
        elif act == SIGMOID:
            a = sigmoid(z)
        else:
            a = z
        tape.append((prev, z, a))
    if not np.isfinite(a).all():
        raise DivergenceError("forward pass produced non-finite values")
    return (a[0] if was_1d else a), tape


def backward(mlp: Mlp, tape: list, upstream: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact reverse-mode gradients.

    Returns ([(dW, db) per layer], d_input). Parameter gradients are summed
    over the batch; callers apply any averaging themselves.
    """
    was_1d = tape[0]
    records = tape[1:]
    if len(records) != len(mlp.layers):
        raise ValidationError("tape does not match this Mlp")
    d = np.asarray(upstream)
    if was_1d:
        d = d[None, :]
    if d.shape != records[-1][2].shape:
        raise ValidationError(f"upstream shape {upstream.shape} does not match output")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.layers)
    for i in range(len(mlp.layers) - 1, -1, -1):
        x_in, z, a = records[i]
        act = _activation_of(mlp, i)
        if act == RELU:
            dz = d * (z > 0)
        elif act == SIGMOID:
            dz = d * a * (1.0 - a)
        else:
            dz = d
        grads[i] = (dz.T @ x_in, dz.sum(axis=0))
        d = dz @ mlp.layers[i].weights
    return grads, (d[0] if was_1d else d)


def parameters(mlp: Mlp) -> list[np.ndarray]:
    out = []
    for layer in mlp.layers:
        out.append(layer.weights)
        out.append(layer.bias)
    return out


def grads_as_list(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


def flatten_params(params: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params]).astype(np.float32)


def unflatten_params(template: list[np.ndarray], flat: np.ndarray) -> list[np.ndarray]:
    out = []
    offset = 0
    for p in template:
        n = p.size
        out.append(np.asarray(flat[offset : offset + n], dtype=p.dtype).reshape(p.shape))
        offset += n
    if offset != flat.size:
        raise ValidationError(f"flat parameter size {flat.size} != expected {offset}")
    return out


@dataclass
class OptimizerState:
    rule: str
    step_size: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    step: int = 0
    slots: list = field(default_factory=list)


def make_optimizer(rule: str, step_size: float, params: list[np.ndarray], **kwargs) -> OptimizerState:
    if rule not in ("sgd_momentum", "adam"):
        raise ValidationError(f"unknown optimizer rule {rule!r}")
    if step_size < 0:
        raise ValidationError("step_size must be >= 0")
    state = OptimizerState(rule=rule, step_size=step_size, **kwargs)
    if rule == "sgd_momentum":
        state.slots = [np.zeros_like(p) for p in params]
    else:
        state.slots = [(np.zeros_like(p), np.zeros_like(p)) for p in params]
    return state


def apply_update(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One in-place optimizer step; deterministic given the state."""
    if len(params) != len(grads) or len(params) != len(state.slots):
        raise ValidationError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValidationError(f"grad shape {g.shape} != param shape {p.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient")
    state.step += 1
    if state.rule == "sgd_momentum":
        for p, g, v in zip(params, grads, state.slots):
            v *= state.momentum
            v += g
            p -= (state.step_size * v).astype(p.dtype, copy=False)
    else:
        b1, b2 = state.beta1, state.beta2
        bias1 = 1.0 - b1**state.step
        bias2 = 1.0 - b2**state.step
        for p, g, (m, v) in zip(params, grads, state.slots):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / bias1
            v_hat = v / bias2
            p -= (state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params


def numeric_gradients(loss_fn, params: list[np.ndarray], eps: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of a scalar loss over every parameter entry.

    Independent of backward(): perturbs parameters in place and calls the
    loss twice per entry. Use float64 parameters for meaningful comparisons.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            hi = loss_fn()
            flat_p[i] = orig - eps
            lo = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """max over entries of |a - n| / max(|a|, |n|, 1e-8)."""
    worst = 0.0
    for a, nmr in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(nmr)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - nmr) / denom)))
    return worst
