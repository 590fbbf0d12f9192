"""Small feed-forward networks with hand-written reverse mode, Gaussian policy
helpers and an Adam optimizer.

Parameters are kept in an ordered ``dict`` of float64 arrays named ``W0, b0,
W1, b1, ...`` (and ``log_std`` for actors). That flat layout is what the
optimizer, the checkpoint writer and the gradient checks all iterate over.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

Params = Dict[str, np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive sizes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """(fan_out, fan_in) per affine layer."""
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1


def _orthogonal(rng: np.random.Generator, shape: Tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def net_init(
    spec: NetSpec,
    seed: int,
    *,
    actor: bool = False,
    log_std_init: float = -0.5,
    output_gain: Optional[float] = None,
) -> Params:
    """Orthogonal initialisation, gain sqrt(2) on hidden layers.

    The last layer uses gain 0.01 for actors and 1.0 otherwise unless
    ``output_gain`` is given. Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    n = spec.n_layers
    for i, shape in enumerate(spec.layer_dims):
        if i < n - 1:
            gain = math.sqrt(2.0)
        elif output_gain is not None:
            gain = output_gain
        else:
            gain = 0.01 if actor else 1.0
        params[f"W{i}"] = _orthogonal(rng, shape, gain)
        params[f"b{i}"] = np.zeros(shape[0])
    if actor:
        params["log_std"] = np.full(spec.output_dim, float(log_std_init))
    return params


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


def _check_input(spec: NetSpec, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(
            f"expected input with {spec.input_dim} features, got shape {np.shape(x)}"
        )
    return x, single


def net_forward(spec: NetSpec, params: Params, x) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input_dim) array."""
    out, _ = forward_with_cache(spec, params, x)
    return out


def forward_with_cache(spec: NetSpec, params: Params, x):
    x, single = _check_input(spec, x)
    cache = [x]
    h = x
    n = spec.n_layers
    for i in range(n):
        z = h @ params[f"W{i}"].T + params[f"b{i}"]
        if i < n - 1:
            h = _act(spec.activation, z)
            cache.append(z)
            cache.append(h)
        else:
            h = z
    out = h[0] if single else h
    return out, (cache, single)


def net_backward(spec: NetSpec, params: Params, x, out_grad) -> Tuple[Params, np.ndarray]:
    """Gradients of ``sum(out_grad * net(x))`` w.r.t. parameters and input.

    Batched inputs accumulate parameter gradients over the batch.
    """
    _, cache = forward_with_cache(spec, params, x)
    return backward_from_cache(spec, params, cache, out_grad)


def backward_from_cache(spec: NetSpec, params: Params, cache, out_grad):
    acts, single = cache
    g = np.asarray(out_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (acts[0].shape[0], spec.output_dim):
        raise ValueError(f"out_grad shape {np.shape(out_grad)} does not match network output")
    grads: Params = {}
    n = spec.n_layers
    for i in reversed(range(n)):
        h_in = acts[0] if i == 0 else acts[2 * i]
        grads[f"W{i}"] = g.T @ h_in
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"W{i}"]
        if i > 0:
            z, h = acts[2 * i - 1], acts[2 * i]
            g = g * _act_grad(spec.activation, z, h)
    ordered = {k: grads[k] for k in params if k in grads}
    if "log_std" in params:
        ordered["log_std"] = np.zeros_like(params["log_std"])
    return ordered, (g[0] if single else g)


# --------------------------------------------------------------------------
# diagonal Gaussian policy head


def gaussian_logprob(mean, log_std, action) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_sample(mean, log_std, rng: np.random.Generator, *, log_std_floor: float = -20.0):
    mean = np.asarray(mean, dtype=np.float64)
    std = np.exp(np.maximum(np.asarray(log_std, dtype=np.float64), log_std_floor))
    return mean + std * rng.standard_normal(mean.shape)


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def gaussian_kl(mean, log_std, mean_old, log_std_old) -> np.ndarray:
    """KL(new || old) for diagonal Gaussians, summed over action dims."""
    var = np.exp(2.0 * log_std)
    var_old = np.exp(2.0 * log_std_old)
    d = mean - mean_old
    return np.sum(log_std_old - log_std + (var + d * d) / (2.0 * var_old) - 0.5, axis=-1)


# --------------------------------------------------------------------------
# optimizer


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 1.0
    log_std_bounds: Tuple[float, float] = (-5.0, 1.0)
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **kwargs) -> "OptimizerState":
        st = cls(**kwargs)
        st.m = {k: np.zeros_like(p) for k, p in params.items()}
        st.v = {k: np.zeros_like(p) for k, p in params.items()}
        return st

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.lr, self.beta1, self.beta2, self.eps, self.max_grad_norm,
            tuple(self.log_std_bounds), self.step,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def opt_step(params: Params, grads: Params, state: OptimizerState) -> Tuple[Params, OptimizerState]:
    """One Adam step on a minimisation objective, with global-norm clipping.

    Returns new params/state; inputs are not mutated.
    """
    if set(grads) != set(params):
        raise ValueError("gradient buffer does not match parameters")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {k}")
    norm = global_norm(grads)
    scale = 1.0
    if state.max_grad_norm and norm > state.max_grad_norm:
        scale = state.max_grad_norm / norm
    new = state.copy()
    new.step += 1
    b1, b2 = new.beta1, new.beta2
    c1 = 1.0 - b1 ** new.step
    c2 = 1.0 - b2 ** new.step
    out: Params = {}
    for k, p in params.items():
        g = grads[k] * scale
        m = b1 * new.m[k] + (1.0 - b1) * g
        v = b2 * new.v[k] + (1.0 - b2) * g * g
        new.m[k], new.v[k] = m, v
        upd = new.lr * (m / c1) / (np.sqrt(v / c2) + new.eps)
        q = p - upd
        if k == "log_std":
            q = np.clip(q, *new.log_std_bounds)
        out[k] = q
    return out, new


def param_count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def add_grads(a: Params, b: Params, scale: float = 1.0) -> Params:
    return {k: a[k] + scale * b[k] for k in a}

