"""Linear and small-MLP function approximators over a flat parameter vector.

Every network is evaluated and differentiated by hand against one flat
``numpy`` array so that optimizer formulas (inner products, traces, entrywise
scaling) are single array operations.  Hidden layers follow the convention

    pre = W h + b  ->  LayerNorm (optional)  ->  LeakyReLU

and the output layer is affine.  Linear architectures have no bias and no
hidden layers; append a constant feature if an intercept is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5
SOFTPLUS_SWITCH = 20.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

HEADS = ("value", "q", "softmax", "gaussian")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple[int, ...] = ()
    head: str = "value"
    n_out: int = 1  # actions for q/softmax, action dimension for gaussian
    kind: str = "mlp"
    layernorm: bool = True
    sparsity: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown kind {self.kind!r}", "kind")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}", "head")
        if self.input_dim < 1 or self.n_out < 1:
            raise ConfigError("widths must be positive", "input_dim")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive", "hidden")
        if self.kind == "linear" and self.hidden:
            raise ConfigError("linear architectures have no hidden layers", "hidden")
        if self.head == "value" and self.n_out != 1:
            raise ConfigError("value head has a single output", "n_out")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("must lie in [0, 1)", "sparsity")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "_lay", _build_layout(self))

    @property
    def out_width(self) -> int:
        return 2 * self.n_out if self.head == "gaussian" else self.n_out

    @property
    def dim(self) -> int:
        return _layout(self).dim

    @classmethod
    def linear(cls, input_dim, head="value", n_out=1):
        return cls(input_dim=input_dim, head=head, n_out=n_out, kind="linear", layernorm=False)


class _Layer(NamedTuple):
    w: slice
    b: slice | None
    gain: slice | None
    bias: slice | None
    shape: tuple[int, int]


class _Layout(NamedTuple):
    layers: tuple[_Layer, ...]  # hidden layers followed by the output layer
    dim: int


def _layout(arch: Architecture) -> _Layout:
    return arch._lay


def _build_layout(arch: Architecture) -> _Layout:
    layers = []
    pos = 0
    fan_in = arch.input_dim
    widths = list(arch.hidden) + [arch.out_width]
    for i, width in enumerate(widths):
        is_out = i == len(widths) - 1
        w = slice(pos, pos + width * fan_in)
        pos = w.stop
        b = gain = bias = None
        if arch.kind == "mlp":
            b = slice(pos, pos + width)
            pos = b.stop
            if arch.layernorm and not is_out:
                gain = slice(pos, pos + width)
                bias = slice(pos + width, pos + 2 * width)
                pos = bias.stop
        layers.append(_Layer(w, b, gain, bias, (width, fan_in)))
        fan_in = width
    return _Layout(tuple(layers), pos)


def _check(params, arch, obs):
    x = np.asarray(obs, dtype=float)
    params = np.asarray(params)
    if x.ndim != 1 or x.shape[0] != arch.input_dim:
        raise ConfigError(f"observation has shape {x.shape}, expected ({arch.input_dim},)", "obs")
    if params.shape != (arch.dim,):
        raise ConfigError(f"params have shape {params.shape}, expected ({arch.dim},)", "params")
    return x


def _forward(params, arch, x):
    """Raw head outputs plus the activations needed for backprop."""
    lay = _layout(arch)
    cache = []
    h = x
    for layer in lay.layers[:-1]:
        W = params[layer.w].reshape(layer.shape)
        pre = W @ h + params[layer.b]
        if layer.gain is not None:
            mu = pre.mean()
            cen = pre - mu
            inv_std = 1.0 / math.sqrt(float(cen @ cen) / cen.shape[0] + LN_EPS)
            nrm = cen * inv_std
            act_in = params[layer.gain] * nrm + params[layer.bias]
        else:
            nrm = inv_std = None
            act_in = pre
        out = np.where(act_in > 0, act_in, LEAKY_SLOPE * act_in)
        cache.append((h, nrm, inv_std, act_in))
        h = out
    last = lay.layers[-1]
    y = params[last.w].reshape(last.shape) @ h
    if last.b is not None:
        y = y + params[last.b]
    cache.append(h)
    return y, cache


def _backward(params, arch, cache, dy):
    """Gradient of ``dy . outputs`` with respect to the flat parameters."""
    lay = _layout(arch)
    grad = np.zeros(lay.dim)
    last = lay.layers[-1]
    h = cache[-1]
    grad[last.w] = np.outer(dy, h).ravel()
    if last.b is not None:
        grad[last.b] = dy
    if len(lay.layers) == 1:
        return grad
    dh = params[last.w].reshape(last.shape).T @ dy
    for layer, (h_in, nrm, inv_std, act_in) in zip(reversed(lay.layers[:-1]), reversed(cache[:-1])):
        d_act = dh * np.where(act_in > 0, 1.0, LEAKY_SLOPE)
        if layer.gain is not None:
            grad[layer.gain] = d_act * nrm
            grad[layer.bias] = d_act
            dn = d_act * params[layer.gain]
            d_pre = inv_std * (dn - dn.mean() - nrm * (dn @ nrm) / nrm.shape[0])
        else:
            d_pre = d_act
        grad[layer.w] = np.outer(d_pre, h_in).ravel()
        grad[layer.b] = d_pre
        dh = params[layer.w].reshape(layer.shape).T @ d_pre
    return grad


def forward_outputs(params, arch, obs):
    """All raw head outputs (the action-value array for a q head)."""
    x = _check(params, arch, obs)
    return _forward(params, arch, x)[0]


def forward_value(params, arch, obs) -> float:
    if arch.head != "value":
        raise ConfigError("forward_value needs a value head", "head")
    return float(forward_outputs(params, arch, obs)[0])


def grad_value(params, arch, obs):
    if arch.head != "value":
        raise ConfigError("grad_value needs a value head", "head")
    x = _check(params, arch, obs)
    _, cache = _forward(params, arch, x)
    return _backward(params, arch, cache, np.ones(1))


def value_and_grad(params, arch, obs):
    """V(s) and its gradient from a single forward pass."""
    x = _check(params, arch, obs)
    y, cache = _forward(params, arch, x)
    return float(y[0]), _backward(params, arch, cache, np.ones(1))


def q_values(params, arch, obs):
    if arch.head != "q":
        raise ConfigError("q_values needs a q head", "head")
    return forward_outputs(params, arch, obs)


def q_and_grad(params, arch, obs, action):
    """All action values at ``obs`` and the gradient of Q(obs, action)."""
    if arch.head != "q":
        raise ConfigError("q_and_grad needs a q head", "head")
    x = _check(params, arch, obs)
    if not 0 <= action < arch.n_out:
        raise ConfigError(f"action {action} outside [0, {arch.n_out})", "action")
    q, cache = _forward(params, arch, x)
    dy = np.zeros(arch.n_out)
    dy[action] = 1.0
    return q, _backward(params, arch, cache, dy)


# ---------------------------------------------------------------- policies


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > SOFTPLUS_SWITCH, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_SWITCH))))


def _softplus_grad(x):
    return np.where(x > SOFTPLUS_SWITCH, 1.0, 1.0 / (1.0 + np.exp(-np.minimum(x, SOFTPLUS_SWITCH))))


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class PolicyDistribution:
    kind: str  # "gaussian" or "softmax"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    logits: np.ndarray | None = None

    @property
    def probs(self):
        return softmax(self.logits)

    def log_prob(self, action) -> float:
        if self.kind == "softmax":
            a = int(action)
            if not 0 <= a < self.logits.shape[0]:
                raise ConfigError(f"action {a} out of range", "action")
            z = self.logits - self.logits.max()
            return float(z[a] - math.log(np.exp(z).sum()))
        a = np.asarray(action, dtype=float)
        u = (a - self.mean) / self.std
        return float(np.sum(-0.5 * u * u - np.log(self.std)) - HALF_LOG_2PI * self.mean.shape[0])

    def entropy(self) -> float:
        if self.kind == "softmax":
            p = self.probs
            nz = p > 0
            return float(-(p[nz] * np.log(p[nz])).sum())
        return float(np.sum(0.5 + HALF_LOG_2PI + np.log(self.std)))

    def sample(self, rng):
        if self.kind == "softmax":
            return sample_categorical(self.probs, rng.random())
        return self.mean + self.std * rng.standard_normal(self.mean.shape[0])


def sample_categorical(probs, u) -> int:
    """Inverse-CDF draw from ``probs`` with one uniform ``u`` in [0, 1)."""
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1))


def _policy_head(arch):
    if arch.head not in ("gaussian", "softmax"):
        raise ConfigError("policy operations need a gaussian or softmax head", "head")


def _dist(arch, y):
    if arch.head == "softmax":
        return PolicyDistribution("softmax", logits=y)
    m = arch.n_out
    return PolicyDistribution("gaussian", mean=y[:m], std=softplus(y[m:]))


def policy_forward(params, arch, obs) -> PolicyDistribution:
    _policy_head(arch)
    return _dist(arch, forward_outputs(params, arch, obs))


def _logprob_dy(arch, y, action):
    if arch.head == "softmax":
        a = int(action)
        if not 0 <= a < arch.n_out:
            raise ConfigError(f"action {a} outside [0, {arch.n_out})", "action")
        dy = -softmax(y)
        dy[a] += 1.0
        return dy
    m = arch.n_out
    mean, pre = y[:m], y[m:]
    std = softplus(pre)
    diff = np.asarray(action, dtype=float) - mean
    d_mean = diff / std**2
    d_std = diff**2 / std**3 - 1.0 / std
    return np.concatenate([d_mean, d_std * _softplus_grad(pre)])


def _entropy_dy(arch, y):
    if arch.head == "softmax":
        p = softmax(y)
        logp = np.log(np.maximum(p, np.finfo(float).tiny))
        ent = -(p * logp).sum()
        return -p * (logp + ent)
    m = arch.n_out
    pre = y[m:]
    return np.concatenate([np.zeros(m), _softplus_grad(pre) / softplus(pre)])


def logprob_and_grad(params, arch, obs, action):
    """log pi(action | obs) and its parameter gradient.

    Continuous actions must be the pre-clamp sample.
    """
    _policy_head(arch)
    x = _check(params, arch, obs)
    y, cache = _forward(params, arch, x)
    lp = _dist(arch, y).log_prob(action)
    return lp, _backward(params, arch, cache, _logprob_dy(arch, y, action))


def entropy_and_grad(params, arch, obs):
    _policy_head(arch)
    x = _check(params, arch, obs)
    y, cache = _forward(params, arch, x)
    return _dist(arch, y).entropy(), _backward(params, arch, cache, _entropy_dy(arch, y))


def policy_objective_grad(params, arch, obs, action, entropy_coef=0.0):
    """Gradient of ``log pi(a|s) + entropy_coef * H(pi(.|s))`` with one backward pass.

    Returns (log_prob, entropy, gradient).
    """
    _policy_head(arch)
    x = _check(params, arch, obs)
    y, cache = _forward(params, arch, x)
    dist = _dist(arch, y)
    dy = _logprob_dy(arch, y, action)
    if entropy_coef != 0.0:
        dy = dy + entropy_coef * _entropy_dy(arch, y)
    return dist.log_prob(action), dist.entropy(), _backward(params, arch, cache, dy)


# ----------------------------------------------------------------- init


def sparse_init(arch: Architecture, seed) -> np.ndarray:
    """Fan-in scaled uniform weights with a fixed fraction of each row zeroed.

    Every weight-matrix row gets exactly ``floor(sparsity * fan_in)`` zeros.
    Biases and LayerNorm offsets start at 0, LayerNorm gains at 1.
    """
    rng = np.random.default_rng(seed)
    lay = _layout(arch)
    params = np.zeros(lay.dim)
    for layer in lay.layers:
        rows, fan_in = layer.shape
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(rows, fan_in))
        n_zero = int(math.floor(arch.sparsity * fan_in + 1e-9))
        if n_zero:
            for row in W:
                row[rng.choice(fan_in, size=n_zero, replace=False)] = 0.0
        params[layer.w] = W.ravel()
        if layer.gain is not None:
            params[layer.gain] = 1.0
    return params


def weight_rows(params, arch):
    """Weight matrices in layer order (views into ``params``)."""
    return [params[l.w].reshape(l.shape) for l in _layout(arch).layers]
