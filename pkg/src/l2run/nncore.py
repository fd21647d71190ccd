"""Small differentiable feedforward networks with hand-written backprop.

Networks are described by a :class:`NetworkSpec` (a shared body followed by
``n_heads`` copies of a head branch) and their weights live in a
:class:`NetworkParams` mapping of named arrays. All activations are carried
as flat ``(batch, features)`` arrays; 1D convolutions reshape internally to
``(batch, channels, length)``.

Layer catalogue:

* ``dense``    -- affine map, optional layer norm, activation.
* ``conv1d``   -- "same"-padded 1D convolution, optional layer norm, activation.
* ``residual`` -- two conv1d layers with a skip connection,
  ``y = act(LN(x + conv2(act(LN(conv1(x))))))``.

Layer norm is always applied to the pre-activation, i.e. before the
nonlinearity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, ConfigurationError, NumericError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
LN_EPS = 1e-5

ACTIVATIONS = ("selu", "elu", "relu", "tanh", "sigmoid", "linear")
KINDS = ("dense", "conv1d", "residual")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int
    activation: str = "linear"
    layer_norm: bool = False
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.width < 1:
            raise ConfigurationError("layer width must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("conv kernel must be a positive odd integer")


def dense(width: int, activation: str = "linear", layer_norm: bool = False) -> LayerSpec:
    return LayerSpec("dense", width, activation, layer_norm)


def conv1d(channels: int, activation: str = "linear", layer_norm: bool = False, kernel: int = 3) -> LayerSpec:
    return LayerSpec("conv1d", channels, activation, layer_norm, kernel)


def residual(channels: int, activation: str = "relu", layer_norm: bool = False, kernel: int = 3) -> LayerSpec:
    return LayerSpec("residual", channels, activation, layer_norm, kernel)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    body: tuple[LayerSpec, ...]
    head: tuple[LayerSpec, ...] = ()
    n_heads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "head", tuple(self.head))
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be positive")
        if self.n_heads < 1:
            raise ConfigurationError("n_heads must be at least 1")
        if self.n_heads > 1 and not self.head:
            raise ConfigurationError("multiple heads need head layers")
        if not self.body and not self.head:
            raise ConfigurationError("network has no layers")
        _plan(self)  # validates shapes

    @property
    def output_dim(self) -> int:
        body, head = _plan(self)
        return (head or body)[-1].out_features

    def to_dict(self) -> dict:
        def layers(ls):
            return [dict(kind=l.kind, width=l.width, activation=l.activation,
                         layer_norm=l.layer_norm, kernel=l.kernel) for l in ls]
        return dict(input_dim=self.input_dim, body=layers(self.body),
                    head=layers(self.head), n_heads=self.n_heads)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(int(d["input_dim"]), tuple(LayerSpec(**l) for l in d["body"]),
                   tuple(LayerSpec(**l) for l in d.get("head", ())), int(d.get("n_heads", 1)))


def mlp(input_dim: int, hidden: tuple[int, ...], output_dim: int, activation: str = "relu",
        output_activation: str = "linear", layer_norm: bool = False) -> NetworkSpec:
    """Plain MLP; layer norm goes on every hidden layer, never on the output."""
    body = [dense(h, activation, layer_norm) for h in hidden]
    body.append(dense(output_dim, output_activation))
    return NetworkSpec(input_dim, tuple(body))


@dataclass(frozen=True)
class _Plan:
    spec: LayerSpec
    prefix: str
    index: int
    in_features: int
    out_features: int
    in_channels: int
    length: int


_plan_cache: dict[NetworkSpec, tuple[list[_Plan], list[_Plan]]] = {}


def _plan(spec: NetworkSpec) -> tuple[list[_Plan], list[_Plan]]:
    cached = _plan_cache.get(spec)
    if cached is not None:
        return cached

    def walk(layers, features, channels, length, prefix, start):
        out = []
        for j, ls in enumerate(layers):
            if ls.kind == "dense":
                plan = _Plan(ls, f"{prefix}{j}.", start + j, features, ls.width, channels, length)
                features, channels, length = ls.width, 1, ls.width
            else:
                if ls.kind == "residual" and channels != ls.width:
                    raise ConfigurationError(
                        f"residual block {prefix}{j} expects {ls.width} input channels, got {channels}")
                plan = _Plan(ls, f"{prefix}{j}.", start + j, features, ls.width * length, channels, length)
                features, channels = ls.width * length, ls.width
            out.append(plan)
        return out, features, channels, length

    body, f, c, l = walk(spec.body, spec.input_dim, 1, spec.input_dim, "body.", 0)
    head, *_ = walk(spec.head, f, c, l, "head{k}.", len(spec.body))
    _plan_cache[spec] = (body, head)
    return body, head


# ---------------------------------------------------------------- parameters


@dataclass
class NetworkParams:
    arrays: dict[str, np.ndarray]
    version: int = 0

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.arrays.items()}, self.version)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def max_abs_diff(self, other: "NetworkParams") -> float:
        return max(float(np.max(np.abs(self.arrays[k] - other.arrays[k]))) for k in self.arrays)

    def equals(self, other: "NetworkParams") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())


def _layer_shapes(p: _Plan) -> dict[str, tuple[int, ...]]:
    ls = p.spec
    shapes: dict[str, tuple[int, ...]] = {}
    if ls.kind == "dense":
        shapes["W"] = (p.in_features, ls.width)
        shapes["b"] = (ls.width,)
        if ls.layer_norm:
            shapes["ln_g"] = shapes["ln_b"] = (ls.width,)
    elif ls.kind == "conv1d":
        shapes["W"] = (ls.width, p.in_channels, ls.kernel)
        shapes["b"] = (ls.width,)
        if ls.layer_norm:
            shapes["ln_g"] = shapes["ln_b"] = (p.out_features,)
    else:
        c, k = ls.width, ls.kernel
        shapes.update(W1=(c, c, k), b1=(c,), W2=(c, c, k), b2=(c,))
        if ls.layer_norm:
            shapes.update(ln1_g=(p.out_features,), ln1_b=(p.out_features,),
                          ln2_g=(p.out_features,), ln2_b=(p.out_features,))
    return shapes


_head_cache: dict[tuple[NetworkSpec, int], list[_Plan]] = {}


def _head_plans(spec: NetworkSpec, k: int) -> list[_Plan]:
    key = (spec, k)
    if key not in _head_cache:
        _, head = _plan(spec)
        _head_cache[key] = [_Plan(p.spec, p.prefix.format(k=k), p.index, p.in_features, p.out_features,
                                  p.in_channels, p.length) for p in head]
    return _head_cache[key]


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    body, _ = _plan(spec)
    plans = list(body)
    for k in range(spec.n_heads if spec.head else 0):
        plans += _head_plans(spec, k)
    shapes = {}
    for p in plans:
        for name, shape in _layer_shapes(p).items():
            shapes[p.prefix + name] = shape
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32,
                final_scale: float = 1.0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains.

    ``final_scale`` multiplies the weights of the last layer of every output
    path (1e-3 is the usual choice for DDPG actors).
    """
    body, _ = _plan(spec)
    paths = [list(body)]
    if spec.head:
        paths = [list(body) + _head_plans(spec, k) for k in range(spec.n_heads)]
    finals = {path[-1].prefix for path in paths}
    arrays: dict[str, np.ndarray] = {}
    seen = set()
    for path in paths:
        for p in path:
            if p.prefix in seen:
                continue
            seen.add(p.prefix)
            for name, shape in _layer_shapes(p).items():
                if name.startswith("W"):
                    if len(shape) == 2:
                        fan_in, fan_out = shape
                    else:
                        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
                    lim = np.sqrt(6.0 / (fan_in + fan_out))
                    w = rng.uniform(-lim, lim, size=shape)
                    if p.prefix in finals:
                        w = w * final_scale
                    arrays[p.prefix + name] = w.astype(dtype)
                elif name.endswith("_g"):
                    arrays[p.prefix + name] = np.ones(shape, dtype=dtype)
                else:
                    arrays[p.prefix + name] = np.zeros(shape, dtype=dtype)
    return NetworkParams(arrays, 0)


# --------------------------------------------------------------- activations


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (np.tanh(0.5 * z) + 1)
    neg = np.expm1(np.minimum(z, 0))
    if name == "elu":
        return np.where(z > 0, z, neg)
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * neg)


def _activate_grad(name: str, z: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (z > 0)
    if name == "tanh":
        return dy * (1 - y * y)
    if name == "sigmoid":
        return dy * y * (1 - y)
    if name == "elu":
        return dy * np.where(z > 0, 1, y + 1)
    return dy * np.where(z > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA)


def _ln_forward(z, g, b):
    mu = z.mean(axis=1, keepdims=True)
    zc = z - mu
    inv = 1.0 / np.sqrt((zc * zc).mean(axis=1, keepdims=True) + LN_EPS)
    zhat = zc * inv
    return zhat * g + b, (zhat, inv)


def _ln_backward(dout, g, cache):
    zhat, inv = cache
    dg = (dout * zhat).sum(axis=0)
    db = dout.sum(axis=0)
    dzhat = dout * g
    dz = inv * (dzhat - dzhat.mean(axis=1, keepdims=True)
                - zhat * (dzhat * zhat).mean(axis=1, keepdims=True))
    return dz, dg, db


def layer_norm(z: np.ndarray) -> np.ndarray:
    """Per-sample standardization used inside layers (no gain/offset)."""
    z = np.atleast_2d(z)
    out, _ = _ln_forward(z, 1.0, 0.0)
    return out


def _conv_forward(x, W, b, channels, length):
    k = W.shape[2]
    pad = k // 2
    xr = x.reshape(x.shape[0], channels, length)
    xp = np.pad(xr, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)  # (B, C, L, k)
    z = np.tensordot(win, W, axes=([1, 3], [1, 2])).transpose(0, 2, 1) + b[None, :, None]
    return z.reshape(x.shape[0], -1), win


def _conv_backward(dz, W, win, channels, length, need_dx=True):
    out_ch, _, k = W.shape
    pad = k // 2
    B = dz.shape[0]
    dzr = dz.reshape(B, out_ch, length)
    dW = np.tensordot(dzr, win, axes=([0, 2], [0, 2]))
    db = dzr.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dwin = np.einsum("bol,ock->bclk", dzr, W)
        dxp = np.zeros((B, channels, length + 2 * pad), dtype=dz.dtype)
        for j in range(k):
            dxp[:, :, j:j + length] += dwin[:, :, :, j]
        dx = dxp[:, :, pad:pad + length].reshape(B, -1)
    return dW, db, dx


# ---------------------------------------------------------- forward/backward


def _check(y, p: _Plan):
    if not np.isfinite(y).all():
        raise NumericError(f"non-finite activation in layer {p.index} ({p.prefix[:-1]})", layer=p.index)


def _layer_forward(p: _Plan, a: Mapping[str, np.ndarray], x: np.ndarray):
    ls = p.spec
    pre = p.prefix
    if ls.kind == "residual":
        z1, win1 = _conv_forward(x, a[pre + "W1"], a[pre + "b1"], ls.width, p.length)
        ln1 = None
        if ls.layer_norm:
            z1n, ln1 = _ln_forward(z1, a[pre + "ln1_g"], a[pre + "ln1_b"])
        else:
            z1n = z1
        h = _activate(ls.activation, z1n)
        z2, win2 = _conv_forward(h, a[pre + "W2"], a[pre + "b2"], ls.width, p.length)
        s = x + z2
        ln2 = None
        if ls.layer_norm:
            sn, ln2 = _ln_forward(s, a[pre + "ln2_g"], a[pre + "ln2_b"])
        else:
            sn = s
        y = _activate(ls.activation, sn)
        return y, (win1, ln1, z1n, h, win2, ln2, sn, y)
    if ls.kind == "dense":
        z = x @ a[pre + "W"] + a[pre + "b"]
        win = None
    else:
        z, win = _conv_forward(x, a[pre + "W"], a[pre + "b"], p.in_channels, p.length)
    ln = None
    if ls.layer_norm:
        z, ln = _ln_forward(z, a[pre + "ln_g"], a[pre + "ln_b"])
    y = _activate(ls.activation, z)
    return y, (x, win, ln, z, y)


def _layer_backward(p: _Plan, a, cache, dy, grads, need_dx):
    ls = p.spec
    pre = p.prefix
    if ls.kind == "residual":
        win1, ln1, z1n, h, win2, ln2, sn, y = cache
        ds = _activate_grad(ls.activation, sn, y, dy)
        if ln2 is not None:
            ds, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _ln_backward(ds, a[pre + "ln2_g"], ln2)
        grads[pre + "W2"], grads[pre + "b2"], dh = _conv_backward(ds, a[pre + "W2"], win2, ls.width, p.length)
        dz1 = _activate_grad(ls.activation, z1n, h, dh)
        if ln1 is not None:
            dz1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _ln_backward(dz1, a[pre + "ln1_g"], ln1)
        grads[pre + "W1"], grads[pre + "b1"], dx1 = _conv_backward(
            dz1, a[pre + "W1"], win1, ls.width, p.length, need_dx)
        return ds + dx1 if need_dx else None
    x, win, ln, z, y = cache
    dz = _activate_grad(ls.activation, z, y, dy)
    if ln is not None:
        dz, grads[pre + "ln_g"], grads[pre + "ln_b"] = _ln_backward(dz, a[pre + "ln_g"], ln)
    if ls.kind == "dense":
        grads[pre + "W"] = x.T @ dz
        grads[pre + "b"] = dz.sum(axis=0)
        return dz @ a[pre + "W"].T if need_dx else None
    grads[pre + "W"], grads[pre + "b"], dx = _conv_backward(
        dz, a[pre + "W"], win, p.in_channels, p.length, need_dx)
    return dx


def _path(spec: NetworkSpec, head: int) -> tuple[list[_Plan], list[_Plan]]:
    body, _ = _plan(spec)
    if not spec.head:
        if head != 0:
            raise ConfigurationError("network has a single output path")
        return body, []
    if not 0 <= head < spec.n_heads:
        raise ConfigurationError(f"head {head} out of range for K={spec.n_heads}")
    return body, _head_plans(spec, head)


def _as_batch(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"input shape {x.shape} does not match input_dim {spec.input_dim}")
    return x, single


@dataclass
class Tape:
    """Cached activations from one forward pass, reused by :func:`backward`."""

    head: int
    caches: list = field(default_factory=list)
    output: np.ndarray | None = None


def forward_tape(spec: NetworkSpec, params: NetworkParams, x, head: int = 0) -> tuple[np.ndarray, Tape]:
    x, single = _as_batch(spec, x)
    body, hplans = _path(spec, head)
    tape = Tape(head)
    a = params.arrays
    for p in body + hplans:
        x, cache = _layer_forward(p, a, x)
        _check(x, p)
        tape.caches.append(cache)
    tape.output = x
    return (x[0] if single else x), tape


def forward(spec: NetworkSpec, params: NetworkParams, x, head: int = 0) -> np.ndarray:
    """Deterministic forward pass through the body and head ``head``."""
    return forward_tape(spec, params, x, head)[0]


def forward_heads(spec: NetworkSpec, params: NetworkParams, x) -> np.ndarray:
    """Outputs of every head, shape ``(K, batch, out)``; the body runs once."""
    x, single = _as_batch(spec, x)
    body, _ = _plan(spec)
    a = params.arrays
    for p in body:
        x, _ = _layer_forward(p, a, x)
        _check(x, p)
    if not spec.head:
        outs = [x]
    else:
        outs = []
        for k in range(spec.n_heads):
            h = x
            for p in _head_plans(spec, k):
                h, _ = _layer_forward(p, a, h)
                _check(h, p)
            outs.append(h)
    out = np.stack(outs)
    return out[:, 0] if single else out


def backward(spec: NetworkSpec, params: NetworkParams, x, upstream, head: int = 0,
             tape: Tape | None = None, param_grads: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of ``sum(upstream * forward(x))``.

    Returns ``(grads, dx)`` where ``grads`` maps parameter names on the active
    path (body plus head ``head``) to arrays shaped like the parameters and
    ``dx`` is the gradient with respect to the input. With
    ``param_grads=False`` the returned dict is empty.
    """
    xb, single = _as_batch(spec, x)
    if tape is None or tape.head != head:
        _, tape = forward_tape(spec, params, xb, head)
    dy = np.asarray(upstream, dtype=tape.output.dtype)
    if dy.ndim == 1:
        dy = dy[None, :]
    if dy.shape != tape.output.shape:
        raise ConfigurationError(f"upstream shape {dy.shape} != output shape {tape.output.shape}")
    body, hplans = _path(spec, head)
    plans = body + hplans
    grads: dict[str, np.ndarray] = {}
    a = params.arrays
    for i in range(len(plans) - 1, -1, -1):
        dy = _layer_backward(plans[i], a, tape.caches[i], dy, grads, True)
        if not np.isfinite(dy).all():
            raise NumericError(f"non-finite gradient in layer {plans[i].index}", layer=plans[i].index)
    if not param_grads:
        grads = {}
    return grads, (dy[0] if single else dy)


# ---------------------------------------------------------------- optimizers


@dataclass(frozen=True)
class LinearDecay:
    start: float
    end: float
    steps: int

    def __call__(self, step: int) -> float:
        frac = min(max(step, 0) / self.steps, 1.0)
        return self.start + (self.end - self.start) * frac


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float | LinearDecay = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")

    def learning_rate(self) -> float:
        return self.lr(self.step) if callable(self.lr) else float(self.lr)

    def reset(self, kind: str | None = None, lr: float | LinearDecay | None = None) -> None:
        """Drop moments; optionally switch kind and learning rate."""
        if kind is not None:
            if kind not in ("adam", "sgd"):
                raise ConfigurationError(f"unknown optimizer {kind!r}")
            self.kind = kind
        if lr is not None:
            self.lr = lr
        self.m.clear()
        self.v.clear()
        self.t.clear()


def adam_step(params: NetworkParams, grads: Mapping[str, np.ndarray], opt: OptimizerState,
              lr_scale: float = 1.0) -> NetworkParams:
    """One Adam step on the parameters that have gradients; others are shared untouched."""
    lr = opt.learning_rate() * lr_scale
    b1, b2 = opt.beta1, opt.beta2
    out = dict(params.arrays)
    for name, g in grads.items():
        p = params.arrays[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = opt.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = opt.v[name]
        t = opt.t.get(name, 0) + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        opt.m[name], opt.v[name], opt.t[name] = m, v, t
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        out[name] = p - lr * mhat / (np.sqrt(vhat) + opt.eps)
    opt.step += 1
    return NetworkParams(out, params.version + 1)


def sgd_step(params: NetworkParams, grads: Mapping[str, np.ndarray], opt: OptimizerState,
             lr_scale: float = 1.0) -> NetworkParams:
    lr = opt.learning_rate() * lr_scale
    out = dict(params.arrays)
    for name, g in grads.items():
        if g.shape != out[name].shape:
            raise ConfigurationError(f"gradient shape mismatch for {name}")
        out[name] = out[name] - lr * g
    opt.step += 1
    return NetworkParams(out, params.version + 1)


def optimizer_step(params: NetworkParams, grads: Mapping[str, np.ndarray], opt: OptimizerState,
                   lr_scale: float = 1.0) -> NetworkParams:
    step = adam_step if opt.kind == "adam" else sgd_step
    return step(params, grads, opt, lr_scale)


def soft_update(target: NetworkParams, online: NetworkParams, tau: float,
                names: list[str] | None = None) -> NetworkParams:
    """``target + tau * (online - target)`` elementwise; ``tau == 1`` copies."""
    if not 0 < tau <= 1:
        raise ConfigurationError("tau must lie in (0, 1]")
    out = dict(target.arrays)
    for name in names if names is not None else target.arrays:
        t, o = target.arrays[name], online.arrays[name]
        if t.shape != o.shape:
            raise ConfigurationError(f"shape mismatch for {name}: {t.shape} vs {o.shape}")
        out[name] = o.copy() if tau == 1 else t + tau * (o - t)
    return NetworkParams(out, target.version + 1)


# ------------------------------------------------------------ parameter noise


def perturb_parameters(params: NetworkParams, sigma: float, rng: np.random.Generator) -> NetworkParams:
    """Copy with N(0, sigma^2) added to every array, layer-norm gains included."""
    if not np.isfinite(sigma):
        raise ConfigurationError("sigma must be finite")
    if sigma == 0:
        return params.copy()
    out = {k: (v + rng.normal(0.0, sigma, size=v.shape)).astype(v.dtype) for k, v in params.arrays.items()}
    return NetworkParams(out, params.version)


def action_distance(spec: NetworkSpec, params: NetworkParams, perturbed: NetworkParams, states,
                    head: int = 0) -> float:
    """Mean over states of the RMS (over action dims) difference between the two policies."""
    diff = forward(spec, perturbed, states, head) - forward(spec, params, states, head)
    diff = np.atleast_2d(diff)
    return float(np.mean(np.sqrt(np.mean(diff * diff, axis=1))))


def adapt_param_noise_sigma(sigma: float, measured_distance: float, target_distance: float,
                            factor: float = 1.01) -> float:
    if sigma < 0 or measured_distance < 0 or target_distance < 0:
        raise ConfigurationError("parameter-noise inputs must be non-negative")
    return sigma * factor if measured_distance < target_distance else sigma / factor


# ---------------------------------------------------------------- checkpoint

MAGIC = b"L2RCKPT1"


def save_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays as little-endian fp32 in the checkpoint layout."""
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_arrays(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if len(view) < 12 or bytes(view[:8]) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (count,) = struct.unpack_from("<I", view, 8)
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", view, off)
            off += 2
            if off + n > len(view):
                raise CheckpointError("truncated array name")
            name = bytes(view[off:off + n]).decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", view, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", view, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if off + size > len(view):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(view[off:off + size], dtype="<f4").astype(np.float32).reshape(dims)
            off += size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"bad array name: {exc}") from None
    if off != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return out


def params_to_arrays(params: NetworkParams, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in params.arrays.items()}


def params_from_arrays(arrays: Mapping[str, np.ndarray], prefix: str = "", version: int = 0) -> NetworkParams:
    return NetworkParams({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}, version)
