"""Flat-parameter feed-forward/GRU networks with exact backpropagation.

Every network works on sequences shaped (T, B, D). Fully connected layers and
activations act per time step; GRU layers carry a hidden state across T. All
parameters live in one float64 vector so optimizers, soft updates, federated
averaging and checkpoints treat every model alike.

GRU cell (gate order r, z, n):

    r = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
    z = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
    n = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("lrelu", "tanh", "sigmoid", "linear")


class ConfigError(ValueError):
    pass


def parse_layers(spec: str) -> tuple[int, list[tuple]]:
    """Parse ``"<in_dim>|gru:64,fc:32,lrelu,fc:2,tanh"``."""
    try:
        head, body = spec.split("|", 1)
        in_dim = int(head)
    except ValueError as exc:
        raise ConfigError(f"bad layer spec {spec!r}") from exc
    layers = []
    for tok in filter(None, (t.strip() for t in body.split(","))):
        kind, _, size = tok.partition(":")
        if kind in ("gru", "fc"):
            layers.append((kind, int(size)))
        elif kind in ACTIVATIONS and not size:
            layers.append((kind,))
        else:
            raise ConfigError(f"unknown layer {tok!r}")
    return in_dim, layers


def format_layers(in_dim: int, layers: list[tuple]) -> str:
    return f"{in_dim}|" + ",".join(":".join(map(str, l)) for l in layers)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Cache:
    entries: list = field(default_factory=list)
    h_final: list = field(default_factory=list)


class Network:
    """Parameter layout plus forward/backward for one layer stack."""

    def __init__(self, in_dim: int, layers: list[tuple], params=None, rng=None):
        self.in_dim = in_dim
        self.layers = [tuple(l) for l in layers]
        self.shapes = []  # (layer index, name, shape)
        dim = in_dim
        for i, layer in enumerate(self.layers):
            if layer[0] == "gru":
                h = layer[1]
                self.shapes += [(i, "Wx", (3 * h, dim)), (i, "Wh", (3 * h, h)),
                                (i, "bx", (3 * h,)), (i, "bh", (3 * h,))]
                dim = h
            elif layer[0] == "fc":
                self.shapes += [(i, "W", (layer[1], dim)), (i, "b", (layer[1],))]
                dim = layer[1]
        self.out_dim = dim
        self._offsets = []
        off = 0
        for i, name, shape in self.shapes:
            n = int(np.prod(shape))
            self._offsets.append((i, name, shape, off, off + n))
            off += n
        self.size = off
        if params is None:
            params = self.init_params(rng if rng is not None else np.random.default_rng())
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.size,):
            raise ConfigError(f"expected {self.size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def from_spec(cls, spec: str, params=None, rng=None) -> "Network":
        in_dim, layers = parse_layers(spec)
        return cls(in_dim, layers, params, rng)

    @property
    def spec(self) -> str:
        return format_layers(self.in_dim, self.layers)

    @property
    def gru_sizes(self) -> list[int]:
        return [l[1] for l in self.layers if l[0] == "gru"]

    def copy(self) -> "Network":
        return Network(self.in_dim, self.layers, self.params.copy())

    def init_params(self, rng) -> np.ndarray:
        out = []
        for i, name, shape in self.shapes:
            if name in ("Wx", "W"):
                fan_in = shape[1]
            elif name == "Wh":
                fan_in = shape[1]
            else:  # biases share the bound of their weight matrix
                fan_in = next(s[1] for j, n, s in self.shapes
                              if j == i and n in ("Wx", "W"))
            bound = 1.0 / np.sqrt(fan_in)
            out.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        return np.concatenate(out) if out else np.zeros(0)

    def unpack(self, flat: np.ndarray) -> list[dict]:
        """Views into ``flat`` grouped per layer."""
        views = [dict() for _ in self.layers]
        for i, name, shape, a, b in self._offsets:
            views[i][name] = flat[a:b].reshape(shape)
        return views

    def layer_slices(self) -> list[slice]:
        """Slice of the flat vector owned by each layer (empty for activations)."""
        bounds = {}
        off = 0
        for i, _, shape in self.shapes:
            n = int(np.prod(shape))
            bounds[i] = (bounds.get(i, (off, off))[0], off + n)
            off += n
        return [slice(*bounds.get(i, (0, 0))) for i in range(len(self.layers))]

    # ------------------------------------------------------------------ forward

    def forward(self, x, h0=None, resets=None, params=None):
        """Run the stack on ``x`` of shape (T, B, in_dim).

        ``h0`` is a list with one (B, H) array (or None) per GRU layer.
        ``resets`` is an optional boolean (T,) or (T, B) mask; where set, the
        recurrent state is zeroed before that step.
        Returns ``(y, cache)`` with ``cache.h_final`` the final GRU states.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ConfigError(f"input shape {x.shape} does not match in_dim={self.in_dim}")
        T, B, _ = x.shape
        p = self.unpack(self.params if params is None else params)
        keep = _keep_mask(resets, T, B)
        cache = Cache()
        gi = 0
        for layer, w in zip(self.layers, p):
            kind = layer[0]
            if kind == "fc":
                y = x @ w["W"].T + w["b"]
                cache.entries.append(x)
            elif kind == "gru":
                H = layer[1]
                h = np.zeros((B, H)) if h0 is None or h0[gi] is None else np.asarray(h0[gi], float)
                y, ent = _gru_forward(x, h, w, keep)
                cache.entries.append(ent)
                cache.h_final.append(y[-1].copy())
                gi += 1
            else:
                y = _act(kind, x)
                cache.entries.append(y if kind in ("tanh", "sigmoid") else x)
            x = y
        return x, cache

    # ----------------------------------------------------------------- backward

    def backward(self, cache: Cache, dy, dh_final=None, params=None):
        """Gradients of a scalar objective given its gradient ``dy`` w.r.t. the output.

        Returns ``(grad_flat, dx, dh0)`` where ``dh0`` lists the gradient with
        respect to each GRU layer's initial state.
        """
        p = self.unpack(self.params if params is None else params)
        grad = np.zeros(self.size)
        gviews = self.unpack(grad)
        d = np.asarray(dy, dtype=np.float64)
        n_gru = len(self.gru_sizes)
        gi = n_gru
        dh0 = [None] * n_gru
        for idx in range(len(self.layers) - 1, -1, -1):
            kind = self.layers[idx][0]
            ent = cache.entries[idx]
            if kind == "fc":
                w, g = p[idx], gviews[idx]
                g["W"] += np.einsum("tbo,tbi->oi", d, ent)
                g["b"] += d.sum(axis=(0, 1))
                d = d @ w["W"]
            elif kind == "gru":
                gi -= 1
                dhf = None if dh_final is None else dh_final[gi]
                d, dh0[gi] = _gru_backward(ent, d, dhf, p[idx], gviews[idx])
            else:
                d = _act_grad(kind, ent, d)
        return grad, d, dh0


def _keep_mask(resets, T, B):
    if resets is None:
        return None
    r = np.asarray(resets, dtype=bool)
    if r.ndim == 1:
        r = np.repeat(r[:, None], B, axis=1)
    return (~r).astype(np.float64)[:, :, None]


def _act(kind, x):
    if kind == "lrelu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return _sigmoid(x)
    return x


def _act_grad(kind, ent, d):
    if kind == "lrelu":
        return np.where(ent > 0, d, LEAKY_SLOPE * d)
    if kind == "tanh":
        return d * (1.0 - ent ** 2)
    if kind == "sigmoid":
        return d * ent * (1.0 - ent)
    return d


def _gru_forward(x, h, w, keep):
    T, B, _ = x.shape
    H = h.shape[1]
    gx = x @ w["Wx"].T + w["bx"]
    hs = np.empty((T, B, H))
    hp_all = np.empty((T, B, H))
    r_all = np.empty((T, B, H))
    z_all = np.empty((T, B, H))
    n_all = np.empty((T, B, H))
    ghn_all = np.empty((T, B, H))
    for t in range(T):
        hp = h if keep is None else h * keep[t]
        gh = hp @ w["Wh"].T + w["bh"]
        rz = _sigmoid(gx[t, :, :2 * H] + gh[:, :2 * H])
        r, z = rz[:, :H], rz[:, H:]
        n = np.tanh(gx[t, :, 2 * H:] + r * gh[:, 2 * H:])
        h = (1.0 - z) * n + z * hp
        hs[t], hp_all[t], r_all[t], z_all[t], n_all[t], ghn_all[t] = h, hp, r, z, n, gh[:, 2 * H:]
    return hs, (x, hp_all, r_all, z_all, n_all, ghn_all, keep)


def _gru_backward(ent, dy, dh_final, w, g):
    x, hp_all, r_all, z_all, n_all, ghn_all, keep = ent
    T, B, H = hp_all.shape
    dx = np.empty_like(x)
    dgx_all = np.empty((T, B, 3 * H))
    dgh_all = np.empty((T, B, 3 * H))
    dh_next = np.zeros((B, H)) if dh_final is None else np.asarray(dh_final, float).copy()
    Wx, Wh = w["Wx"], w["Wh"]
    for t in range(T - 1, -1, -1):
        r, z, n, hp = r_all[t], z_all[t], n_all[t], hp_all[t]
        dh = dy[t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (hp - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn_all[t] * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dgx_all[t], dgh_all[t] = dgx, dgh
        dhp = dh * z + dgh @ Wh
        dh_next = dhp if keep is None else dhp * keep[t]
    g["Wx"] += np.einsum("tbo,tbi->oi", dgx_all, x)
    g["bx"] += dgx_all.sum(axis=(0, 1))
    g["Wh"] += np.einsum("tbo,tbi->oi", dgh_all, hp_all)
    g["bh"] += dgh_all.sum(axis=(0, 1))
    dx = dgx_all @ Wx
    return dx, dh_next


def forward(net: Network, x, h0=None, resets=None):
    """Functional wrapper: returns (output, cache, final hidden states)."""
    y, cache = net.forward(x, h0, resets)
    return y, cache, cache.h_final


def backward(net: Network, cache: Cache, dy, dh_final=None):
    return net.backward(cache, dy, dh_final)
