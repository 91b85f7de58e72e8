"""Small numpy MLPs with hand-written backprop, Gaussian policy heads and Adam.

Inputs are row batches ``(batch, features)``. Each hidden layer is
affine -> optional LayerNorm -> activation; the last layer is affine with the
configured output activation (linear by default).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -8.0, 2.0
LN_EPS = 1e-5
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
_A_MAX = np.nextafter(1.0, 0.0)

_ACTS = {
    "tanh": (np.tanh, lambda z, y: 1.0 - y ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, y: (z > 0).astype(z.dtype)),
    "linear": (lambda z: z, lambda z, y: np.ones_like(z)),
}


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"
    layernorm: bool = False
    gain: np.ndarray | None = None
    offset: np.ndarray | None = None

    def params(self) -> list[np.ndarray]:
        ps = [self.w, self.b]
        if self.layernorm:
            ps += [self.gain, self.offset]
        return ps


def _orthogonal(shape, gain, rng):
    a = rng.standard_normal(shape if shape[0] >= shape[1] else shape[::-1])
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


class MlpNet:
    """Feed-forward network; parameters and gradients are lists of arrays."""

    def __init__(self, sizes, activation="relu", layernorm=False, out_activation="linear",
                 out_gain=1.0, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers: list[Layer] = []
        n = len(sizes) - 1
        for i in range(n):
            last = i == n - 1
            fan_in, fan_out = sizes[i], sizes[i + 1]
            gain = out_gain if last else np.sqrt(2.0)
            layer = Layer(
                w=_orthogonal((fan_out, fan_in), gain, rng),
                b=np.zeros(fan_out),
                activation=out_activation if last else activation,
                layernorm=layernorm and not last,
            )
            if layer.layernorm:
                layer.gain = np.ones(fan_out)
                layer.offset = np.zeros(fan_out)
            self.layers.append(layer)

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def set_params(self, values) -> None:
        values = list(values)
        for p, v in zip(self.params(), values, strict=True):
            p[...] = v

    def copy(self) -> "MlpNet":
        other = object.__new__(MlpNet)
        other.layers = [
            Layer(l.w.copy(), l.b.copy(), l.activation, l.layernorm,
                  None if l.gain is None else l.gain.copy(),
                  None if l.offset is None else l.offset.copy())
            for l in self.layers
        ]
        return other

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input has {x.shape[1]} features, network expects {self.in_dim}")
        cache = []
        h = x
        for layer in self.layers:
            z = h @ layer.w.T + layer.b
            entry = {"x": h, "z": z}
            if layer.layernorm:
                mu = z.mean(axis=1, keepdims=True)
                var = z.var(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                zhat = (z - mu) * inv
                entry.update(zhat=zhat, inv=inv)
                z = zhat * layer.gain + layer.offset
            act, _ = _ACTS[layer.activation]
            y = act(z)
            entry.update(pre=z, y=y)
            cache.append(entry)
            h = y
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy, params=True):
        """Gradients of sum(dy * y) w.r.t. parameters (list) and input.

        With ``params=False`` only the input gradient is formed and the
        parameter list comes back empty.
        """
        grads: list[list[np.ndarray]] = []
        g = np.asarray(dy, dtype=float)
        for layer, entry in zip(reversed(self.layers), reversed(cache)):
            _, dact = _ACTS[layer.activation]
            g = g * dact(entry["pre"], entry["y"])
            lg = []
            if layer.layernorm:
                zhat, inv = entry["zhat"], entry["inv"]
                if params:
                    lg = [(g * zhat).sum(axis=0), g.sum(axis=0)]
                dzhat = g * layer.gain
                g = inv * (dzhat - dzhat.mean(axis=1, keepdims=True)
                           - zhat * (dzhat * zhat).mean(axis=1, keepdims=True))
            if params:
                grads.append([g.T @ entry["x"], g.sum(axis=0)] + lg)
            g = g @ layer.w
        flat = [p for lg in reversed(grads) for p in lg]
        return flat, g

    # checkpoint format: little-endian float64 blob + JSON manifest
    def save(self, path, extra: dict | None = None) -> None:
        path = Path(path)
        params = self.params()
        manifest = {
            "layers": [
                {"in": l.w.shape[1], "out": l.w.shape[0], "activation": l.activation, "layernorm": l.layernorm}
                for l in self.layers
            ],
            "shapes": [list(p.shape) for p in params],
            "extra": extra or {},
        }
        blob = np.concatenate([p.ravel() for p in params]).astype("<f8")
        path.with_suffix(".bin").write_bytes(blob.tobytes())
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))

    @staticmethod
    def manifest(path) -> dict:
        return json.loads(Path(path).with_suffix(".json").read_text())

    @classmethod
    def load(cls, path) -> "MlpNet":
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
        net = object.__new__(cls)
        net.layers = []
        for spec in manifest["layers"]:
            layer = Layer(np.zeros((spec["out"], spec["in"])), np.zeros(spec["out"]),
                          spec["activation"], spec["layernorm"])
            if layer.layernorm:
                layer.gain, layer.offset = np.ones(spec["out"]), np.zeros(spec["out"])
            net.layers.append(layer)
        expected = sum(int(np.prod(s)) for s in manifest["shapes"])
        if blob.size != expected:
            raise ValueError(f"checkpoint holds {blob.size} values, manifest expects {expected}")
        offset = 0
        for p in net.params():
            p[...] = blob[offset: offset + p.size].reshape(p.shape)
            offset += p.size
        return net


# --- Gaussian policy pieces --------------------------------------------------

@dataclass
class GaussianPolicyOut:
    mean: np.ndarray
    log_std: np.ndarray
    squashed: bool = True

    def __post_init__(self):
        self.log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def std(self):
        return np.exp(self.log_std)


def log_one_minus_tanh_sq(u):
    """log(1 - tanh(u)^2) without cancellation."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def sample_squashed_gaussian(out: GaussianPolicyOut, rng: np.random.Generator, noise=None):
    """a = tanh(mean + std * zeta); returns (a, log_prob, pre-squash u, zeta)."""
    zeta = rng.standard_normal(np.shape(out.mean)) if noise is None else noise
    u = out.mean + out.std * zeta
    # tanh rounds to +-1 for |u| > ~19; keep actions strictly inside the box
    a = np.clip(np.tanh(u), -_A_MAX, _A_MAX)
    log_prob = np.sum(-0.5 * zeta ** 2 - out.log_std - HALF_LOG_2PI - log_one_minus_tanh_sq(u), axis=-1)
    return a, log_prob, u, zeta


def squashed_log_prob(out: GaussianPolicyOut, a):
    """Density of a given squashed action (inverse of the sampler)."""
    a = np.clip(a, -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(a)
    zeta = (u - out.mean) / out.std
    return np.sum(-0.5 * zeta ** 2 - out.log_std - HALF_LOG_2PI - log_one_minus_tanh_sq(u), axis=-1)


def gaussian_log_prob(mean, log_std, a):
    z = (a - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z ** 2 - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float | np.ndarray:
    """Differential entropy of a diagonal Gaussian (pre-squash)."""
    log_std = np.asarray(log_std, dtype=float)
    return np.sum(0.5 * np.log(2 * np.pi * np.e) + log_std, axis=-1)


# --- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         [x.copy() for x in self.m], [x.copy() for x in self.v])


def adam_step(params, grads, state: AdamState, max_grad_norm: float | None = None) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if max_grad_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
        if norm > max_grad_norm:
            grads = [g * (max_grad_norm / norm) for g in grads]
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def polyak(target: MlpNet, source: MlpNet, tau: float) -> None:
    for pt, ps in zip(target.params(), source.params()):
        pt *= 1 - tau
        pt += tau * ps
