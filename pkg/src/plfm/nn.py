"""Pair-biased transformer trunk, parameter containers, Adam and checkpoints.

Reverse-mode differentiation is delegated to torch autograd running in
float64; the layers themselves (pair-biased attention, adaptive layer norm,
feed-forward) and the optimizer are written out here so that every
parameter has a stable name and a closed-form count.

All functions accept optional leading batch dimensions: ``seq`` is
``[..., L, c_seq]`` and ``pair`` is ``[..., L, L, c_pair]``.
"""

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import GraphConsumed, InvalidConfig, MissingCheckpoint, MissingTimes, ShapeMismatch

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
_NEG_INF = -1e9


@dataclass(frozen=True)
class NetConfig:
    c_seq: int = 64
    c_pair: int = 32
    n_layers: int = 2
    n_heads: int = 4
    time_conditioned: bool = False
    c_time: int = 32  # sinusoidal width per time value
    n_times: int = 2
    ff_mult: int = 4

    def validate(self):
        for name in ("c_seq", "c_pair", "n_layers", "n_heads", "c_time", "n_times", "ff_mult"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.c_seq % self.n_heads:
            raise InvalidConfig(f"n_heads={self.n_heads} does not divide c_seq={self.c_seq}")
        if self.c_time % 2:
            raise InvalidConfig("c_time must be even")
        return self

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None

    def to_dict(self):
        return asdict(self)


class Parameters:
    """Ordered mapping of names to float64 leaf tensors."""

    def __init__(self, tensors=None):
        self._t = OrderedDict()
        for k, v in (tensors or {}).items():
            self[k] = v

    def __setitem__(self, name, value):
        t = torch.as_tensor(np.asarray(value) if not torch.is_tensor(value) else value)
        self._t[name] = t.detach().to(DTYPE).clone().requires_grad_(True)

    def __getitem__(self, name):
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self):
        return list(self._t)

    def count(self):
        return int(sum(t.numel() for t in self._t.values()))

    def update(self, other):
        for k, v in other.items():
            self._t[k] = v
        return self

    def numpy(self):
        return OrderedDict((k, v.detach().numpy().copy()) for k, v in self._t.items())

    def copy(self):
        return Parameters(self.numpy())

    def equals(self, other):
        return self.names() == other.names() and all(
            torch.equal(self[k], other[k]) for k in self._t)


# ---------------------------------------------------------------------------
# initialisation


def _lecun(rng, n_in, n_out):
    return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))


def init_linear(params, name, rng, n_in, n_out, bias=True, zero=False):
    """Register ``name.w`` [n_in, n_out] (and ``name.b``) in ``params``."""
    params[f"{name}.w"] = np.zeros((n_in, n_out)) if zero else _lecun(rng, n_in, n_out)
    if bias:
        params[f"{name}.b"] = np.zeros(n_out)


def init_layernorm(params, name, width):
    params[f"{name}.g"] = np.ones(width)
    params[f"{name}.b"] = np.zeros(width)


def build_network(cfg, seed, prefix="trunk", params=None):
    """Deterministically initialised trunk parameters for ``cfg``.

    Weights are LeCun-normal, biases zero, layer-norm gains one. The
    adaptive-norm projection is zero so time conditioning starts as a no-op.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = Parameters() if params is None else params
    c, p, h = cfg.c_seq, cfg.c_pair, cfg.n_heads
    for layer in range(cfg.n_layers):
        b = f"{prefix}.{layer}"
        if cfg.time_conditioned:
            init_linear(params, f"{b}.ada", rng, cfg.c_time * cfg.n_times, 6 * c, zero=True)
        else:
            init_layernorm(params, f"{b}.ln_attn", c)
            init_layernorm(params, f"{b}.ln_ff", c)
        init_linear(params, f"{b}.q", rng, c, c, bias=False)
        init_linear(params, f"{b}.k", rng, c, c, bias=False)
        init_linear(params, f"{b}.v", rng, c, c, bias=False)
        init_linear(params, f"{b}.o", rng, c, c)
        init_layernorm(params, f"{b}.ln_pair", p)
        init_linear(params, f"{b}.pair_bias", rng, p, h, bias=False)
        init_linear(params, f"{b}.ff1", rng, c, cfg.ff_mult * c)
        init_linear(params, f"{b}.ff2", rng, cfg.ff_mult * c, c)
    init_layernorm(params, f"{prefix}.ln_out", c)
    return params


def trunk_parameter_count(cfg):
    """Closed-form parameter count of :func:`build_network`."""
    c, p, h, f = cfg.c_seq, cfg.c_pair, cfg.n_heads, cfg.ff_mult
    norm = (cfg.c_time * cfg.n_times + 1) * 6 * c if cfg.time_conditioned else 4 * c
    per_block = norm + 3 * c * c + (c * c + c) + 2 * p + p * h + (c * f * c + f * c) + (f * c * c + c)
    return cfg.n_layers * per_block + 2 * c


# ---------------------------------------------------------------------------
# layers


def linear(params, name, x):
    y = x @ params[f"{name}.w"]
    bias = f"{name}.b"
    return y + params[bias] if bias in params else y


def layer_norm(x, eps=1e-5):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps)


def affine_layer_norm(params, name, x):
    return layer_norm(x) * params[f"{name}.g"] + params[f"{name}.b"]


def time_embedding(times, c_time):
    """Sinusoidal embedding of each time separately, concatenated.

    ``times`` is ``[..., n_times]`` in [0, 1]; frequencies are geometric
    between 1 and 1000 (times are scaled to the usual 0..1000 step range).
    """
    half = c_time // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=DTYPE) / half)
    ang = 1000.0 * times[..., None] * freqs  # [..., n_times, half]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    return emb.reshape(*times.shape[:-1], times.shape[-1] * c_time)


def pair_biased_attention(params, name, x, pair, n_heads, mask=None):
    """Multi-head self-attention whose logits get a linear projection of the pair rep."""
    *lead, L, c = x.shape
    d = c // n_heads
    q = linear(params, f"{name}.q", x).reshape(*lead, L, n_heads, d)
    k = linear(params, f"{name}.k", x).reshape(*lead, L, n_heads, d)
    v = linear(params, f"{name}.v", x).reshape(*lead, L, n_heads, d)
    logits = torch.einsum("...ihd,...jhd->...hij", q, k) / math.sqrt(d)
    bias = linear(params, f"{name}.pair_bias", affine_layer_norm(params, f"{name}.ln_pair", pair))
    logits = logits + bias.movedim(-1, -3)
    if mask is not None:
        logits = logits + (1.0 - mask[..., None, None, :]) * _NEG_INF
    attn = torch.softmax(logits, dim=-1)
    out = torch.einsum("...hij,...jhd->...ihd", attn, v).reshape(*lead, L, c)
    return linear(params, f"{name}.o", out)


def feed_forward(params, name, x):
    return linear(params, f"{name}.ff2", torch.nn.functional.silu(linear(params, f"{name}.ff1", x)))


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def forward(params, cfg, seq, pair, times=None, mask=None, prefix="trunk"):
    """Run the transformer trunk; returns the updated sequence representation.

    Each block applies pair-biased attention and a SiLU feed-forward layer,
    both pre-normalised and added residually. With ``time_conditioned`` the
    norms are adaptive: shift, scale and gate come from a projection of the
    sinusoidal time embedding. A final layer norm closes the trunk. The pair
    representation is only read, never updated.
    """
    seq, pair = _as_tensor(seq), _as_tensor(pair)
    L = seq.shape[-2]
    if seq.shape[-1] != cfg.c_seq:
        raise ShapeMismatch(f"seq channels {seq.shape[-1]} != c_seq {cfg.c_seq}")
    if pair.shape[-3:] != (L, L, cfg.c_pair):
        raise ShapeMismatch(f"pair shape {tuple(pair.shape)} incompatible with L={L}")
    if pair.shape[:-3] != seq.shape[:-2]:
        raise ShapeMismatch("batch dimensions of seq and pair differ")
    if mask is not None:
        mask = _as_tensor(mask).to(DTYPE)
    if cfg.time_conditioned:
        if times is None:
            raise MissingTimes("time-conditioned network needs (t_x, t_z)")
        times = _as_tensor(times).to(DTYPE)
        if times.shape[-1] != cfg.n_times:
            raise ShapeMismatch(f"expected {cfg.n_times} times, got {times.shape[-1]}")
        emb = time_embedding(times, cfg.c_time)[..., None, :]  # broadcast over residues
    x = seq
    for layer in range(cfg.n_layers):
        b = f"{prefix}.{layer}"
        if cfg.time_conditioned:
            mod = linear(params, f"{b}.ada", emb)
            sh_a, sc_a, g_a, sh_f, sc_f, g_f = mod.chunk(6, dim=-1)
            h = layer_norm(x) * (1 + sc_a) + sh_a
            x = x + (1 + g_a) * pair_biased_attention(params, b, h, pair, cfg.n_heads, mask)
            h = layer_norm(x) * (1 + sc_f) + sh_f
            x = x + (1 + g_f) * feed_forward(params, b, h)
        else:
            h = affine_layer_norm(params, f"{b}.ln_attn", x)
            x = x + pair_biased_attention(params, b, h, pair, cfg.n_heads, mask)
            x = x + feed_forward(params, b, affine_layer_norm(params, f"{b}.ln_ff", x))
    return affine_layer_norm(params, f"{prefix}.ln_out", x)


# ---------------------------------------------------------------------------
# differentiation


class Graph:
    """A recorded scalar loss awaiting one backward pass."""

    def __init__(self, loss, inputs=()):
        self.loss = loss
        self.inputs = tuple(inputs)
        self.consumed = False

    @property
    def value(self):
        return float(self.loss.detach())


def record(loss, inputs=()):
    return Graph(loss, inputs)


def backward(params, graph):
    """Gradients of the graph's loss for every parameter (and recorded input).

    Returns ``(param_grads, input_grads)``; parameters the loss never touched
    get exact zeros. A graph can be differentiated once.
    """
    if graph.consumed:
        raise GraphConsumed("graph already differentiated")
    graph.consumed = True
    names = params.names()
    targets = [params[n] for n in names] + list(graph.inputs)
    grads = torch.autograd.grad(graph.loss, targets, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g.detach() for t, g in zip(targets, grads)]
    return OrderedDict(zip(names, grads[:len(names)])), list(grads[len(names):])


# ---------------------------------------------------------------------------
# optimisation


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {}
        self.v = {}

    def to_arrays(self, prefix="adam"):
        out = {f"{prefix}.m.{k}": v.numpy() for k, v in self.m.items()}
        out.update({f"{prefix}.v.{k}": v.numpy() for k, v in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays, step, prefix="adam", **kw):
        st = cls(**kw)
        st.step = int(step)
        for key, arr in arrays.items():
            for slot, table in (("m", st.m), ("v", st.v)):
                head = f"{prefix}.{slot}."
                if key.startswith(head):
                    table[key[len(head):]] = torch.as_tensor(arr, dtype=DTYPE)
        return st


def adam_step(params, grads, lr, state):
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"{name}: grad {tuple(g.shape)} vs param {tuple(p.shape)}")
            m = state.m.get(name, torch.zeros_like(p))
            v = state.v.get(name, torch.zeros_like(p))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            state.m[name], state.v[name] = m, v
            p -= lr * (m / c1) / (torch.sqrt(v / c2) + state.eps)
    return params


sgd_adam_step = adam_step


class EMA:
    """Exponential moving average of parameters (shadow copy)."""

    def __init__(self, params, decay=0.999):
        self.decay = decay
        self.shadow = params.copy()

    def update(self, params):
        with torch.no_grad():
            for name, p in params.items():
                s = self.shadow[name]
                s.mul_(self.decay).add_(p.detach(), alpha=1 - self.decay)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, arrays, meta):
    """Write named arrays plus a JSON header (with format version) to ``.npz``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(meta, version=CHECKPOINT_VERSION,
                  shapes={k: list(np.shape(v)) for k, v in arrays.items()})
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = OrderedDict((k, data[k]) for k in data.files if k != "__meta__")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise MissingCheckpoint(f"{path}: unsupported checkpoint version {meta.get('version')}")
    for k, shape in meta.get("shapes", {}).items():
        if k in arrays and list(arrays[k].shape) != shape:
            raise ShapeMismatch(f"{path}: {k} stored with shape {arrays[k].shape}, header {shape}")
    return arrays, meta
