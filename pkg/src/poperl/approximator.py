"""Feed-forward actor/critic networks over a flat parameter vector.

Everything here works on a single ``np.ndarray`` of float64 weights so that
the ES can perturb a network by adding noise to one vector, and so that
the learner can hand Adam one flat gradient.  Layout per layer is the weight
matrix ``W`` (shape ``(out, in)``, row-major) followed by the bias ``b``.

Inputs may be a single vector ``(in,)`` or a batch ``(B, in)``; gradients
returned by :func:`backward` are summed over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericError

LN_EPS = 1e-5
HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    layer_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all network dimensions must be >= 1, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def num_params(self) -> int:
        return _layout(self)[1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{**d, "hidden_dims": tuple(d["hidden_dims"])})


def actor_spec(state_dim: int, action_dim: int, hidden=(64, 64), layer_norm=True) -> NetworkSpec:
    return NetworkSpec(state_dim, tuple(hidden), action_dim, "relu", "tanh", layer_norm)


def critic_spec(state_dim: int, action_dim: int, hidden=(64, 64), layer_norm=False) -> NetworkSpec:
    # (s, a) are concatenated at the input layer
    return NetworkSpec(state_dim + action_dim, tuple(hidden), 1, "relu", "identity", layer_norm)


@lru_cache(maxsize=None)
def _layout(spec: NetworkSpec):
    out = []
    off = 0
    for o, i in spec.layer_shapes:
        out.append((off, off + o * i, off + o * i + o, (o, i)))
        off += o * i + o
    return tuple(out), off


def unflatten(spec: NetworkSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views (no copies)."""
    params = np.asarray(params)
    layout, total = _layout(spec)
    if params.ndim != 1 or params.shape[0] != total:
        raise ConfigError(f"parameter vector has shape {params.shape}, expected ({total},)")
    return [(params[a:b].reshape(shape), params[b:c]) for a, b, c, shape in layout]


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both weights and biases."""
    chunks = []
    for o, i in spec.layer_shapes:
        bound = 1.0 / np.sqrt(i)
        chunks.append(rng.uniform(-bound, bound, size=o * i))
        chunks.append(rng.uniform(-bound, bound, size=o))
    return np.concatenate(chunks)


def _check_input(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ConfigError(f"input has shape {x.shape}, expected last dim {spec.input_dim}")
    return x


def forward_cached(spec: NetworkSpec, params: np.ndarray, x):
    """Forward pass that also returns what :func:`backward_cached` needs."""
    x = _check_input(spec, x)
    layers = unflatten(spec, params)
    cache = []
    h = x
    last = len(layers) - 1
    for li, (W, b) in enumerate(layers):
        z = h @ W.T
        z += b
        if li == last:
            out = np.tanh(z, out=z) if spec.output_activation == "tanh" else z
            cache.append((h, out, None))
            return out, cache
        if spec.layer_norm:
            # sums instead of np.mean: same values, far less overhead on single states
            n = z.shape[-1]
            z -= z.sum(axis=-1, keepdims=True) / n
            inv_std = 1.0 / np.sqrt(np.einsum("...i,...i->...", z, z)[..., None] / n + LN_EPS)
            z *= inv_std
        else:
            inv_std = None
        cache.append((h, z, inv_std))
        h = np.maximum(z, 0.0)
    raise AssertionError("unreachable")


def backward_cached(spec: NetworkSpec, params: np.ndarray, cache, upstream):
    layers = unflatten(spec, params)
    grad = np.zeros(spec.num_params)
    grad_layers = unflatten(spec, grad)
    h_last, out, _ = cache[-1]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != out.shape:
        raise ConfigError(f"upstream has shape {g.shape}, expected {out.shape}")
    dz = g * (1.0 - out * out) if spec.output_activation == "tanh" else g
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = grad_layers[li]
        h = cache[li][0]
        if dz.ndim == 1:
            gW[...] = np.outer(dz, h)
            gb[...] = dz
        else:
            gW[...] = dz.T @ h
            gb[...] = dz.sum(axis=0)
        dh = dz @ W
        if li == 0:
            return grad, dh
        _, n, inv_std = cache[li - 1]
        dh *= n > 0.0
        if inv_std is not None:
            # layer-norm backward: inv_std * (g - mean(g) - n * mean(g * n))
            corr = dh.mean(axis=-1, keepdims=True) + n * np.mean(dh * n, axis=-1, keepdims=True)
            dh -= corr
            dh *= inv_std
        dz = dh
    raise AssertionError("unreachable")


def forward(spec: NetworkSpec, params: np.ndarray, x) -> np.ndarray:
    return forward_cached(spec, params, x)[0]


def backward(spec: NetworkSpec, params: np.ndarray, x, upstream):
    """Gradients of ``sum(upstream * forward(x))`` w.r.t. params and input.

    Returns ``(param_grad, input_grad)``; ``param_grad`` shares the flat
    layout of ``params``.
    """
    out, cache = forward_cached(spec, params, x)
    return backward_cached(spec, params, cache, upstream)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float = 3e-4):
    """One Adam descent step on ``params`` (modified in place and returned)."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if grad.shape != params.shape:
        raise ConfigError(f"gradient shape {grad.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericError(f"non-finite gradient at {bad.size} coordinates (first: {bad[:5].tolist()})")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
