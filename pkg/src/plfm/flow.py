"""Two-time conditional flow matching over CA coordinates and VAE latents.

Both modalities use the straight-line interpolant ``x_t = (1 - t) x0 + t x1``
from standard Gaussian noise, with their own independently drawn times.
The denoiser regresses the conditional velocities ``x1 - x0`` and
``z1 - z0``. CA coordinates live in model units (see ``features``).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import features as F
from . import motif as M
from .errors import InvalidConfig, ShapeMismatch
from .nn import (AdamState, NetConfig, Parameters, adam_step, backward, build_network,
                 forward, init_linear, linear, record)
from .vae import draw_batch_indices, encoder_tensors, length_groups, make_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeSamplerConfig:
    mix_weight_uniform: float = 0.02
    beta_params_x: tuple = (1.9, 1.0)
    beta_params_z: tuple = (1.0, 1.5)

    def validate(self):
        if not 0.0 <= self.mix_weight_uniform <= 1.0:
            raise InvalidConfig("mix_weight_uniform must be in [0, 1]")
        if min(*self.beta_params_x, *self.beta_params_z) <= 0:
            raise InvalidConfig("Beta parameters must be positive")
        return self


def _beta(rng, a, b, size):
    # two-Gamma construction: X/(X+Y) with X~Gamma(a), Y~Gamma(b)
    x = rng.standard_gamma(a, size)
    y = rng.standard_gamma(b, size)
    return x / (x + y)


def _mixture(rng, w, ab, size):
    use_uniform = rng.random(size) < w
    return np.where(use_uniform, rng.random(size), _beta(rng, ab[0], ab[1], size))


def sample_times(cfg, rng, size=None):
    """Independent (t_x, t_z) draws from the uniform/Beta mixtures."""
    cfg.validate()
    t_x = _mixture(rng, cfg.mix_weight_uniform, cfg.beta_params_x, size)
    t_z = _mixture(rng, cfg.mix_weight_uniform, cfg.beta_params_z, size)
    return t_x, t_z


def interpolate(x0, x1, t):
    """Straight-line interpolant (1 - t) x0 + t x1; ``t`` may broadcast."""
    if np.shape(x0) != np.shape(x1):
        raise ShapeMismatch(f"{np.shape(x0)} vs {np.shape(x1)}")
    if torch.is_tensor(x0) or torch.is_tensor(x1):
        return (1 - t) * x0 + t * x1
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    return (1 - np.asarray(t)) * x0 + np.asarray(t) * x1


# ---------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class FlowConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(time_conditioned=True))
    times: TimeSamplerConfig = field(default_factory=TimeSamplerConfig)
    use_x: bool = True  # False for the fully latent variant
    motif_mode: str = None  # None, "indexed" or "unindexed"
    motif_detail: str = "all_atom"

    def validate(self):
        if not self.net.time_conditioned:
            raise InvalidConfig("the denoiser trunk must be time conditioned")
        if self.motif_mode not in (None, "indexed", "unindexed"):
            raise InvalidConfig(f"unknown motif_mode {self.motif_mode!r}")
        if self.motif_detail not in ("all_atom", "tip_atom"):
            raise InvalidConfig(f"unknown motif_detail {self.motif_detail!r}")
        self.net.validate()
        self.times.validate()
        return self

    def to_dict(self):
        return dict(net=self.net.to_dict(), times=dict(
            mix_weight_uniform=self.times.mix_weight_uniform,
            beta_params_x=list(self.times.beta_params_x),
            beta_params_z=list(self.times.beta_params_z)),
            use_x=self.use_x, motif_mode=self.motif_mode, motif_detail=self.motif_detail)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        net = NetConfig.from_dict(dict(d.pop("net", {}), time_conditioned=True))
        t = dict(d.pop("times", {}))
        for k in ("beta_params_x", "beta_params_z"):
            if k in t:
                t[k] = tuple(t[k])
        try:
            return cls(net=net, times=TimeSamplerConfig(**t), **d).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


class Denoiser:
    def __init__(self, cfg, params):
        self.cfg = cfg.validate()
        self.params = params

    @classmethod
    def init(cls, cfg, seed):
        cfg.validate()
        rng = np.random.default_rng([seed, 2])
        net = cfg.net
        params = Parameters()
        F.init_projection(params, "den", rng, F.decoder_seq_width(cfg.use_x),
                          F.decoder_pair_width(cfg.use_x), net.c_seq, net.c_pair)
        if cfg.motif_mode:
            init_linear(params, "den.motif_in", rng, M.MOTIF_FEATURE_WIDTH, net.c_seq)
        build_network(net, int(rng.integers(2**31)), prefix="den.trunk", params=params)
        if cfg.use_x:
            init_linear(params, "den.vx", rng, net.c_seq, 3)
        init_linear(params, "den.vz", rng, net.c_seq, F.LATENT_DIM)
        return cls(cfg, params)


def velocity_tensors(den, x_t, z_t, t_x, t_z, motif_cond=None):
    """Predicted (v_x, v_z) tensors for batched inputs.

    ``x_t`` [B, L, 3] (model units, or None without the x modality), ``z_t``
    [B, L, 8], times [B]. ``motif_cond`` is a conditioning block from
    :func:`motif.motif_features` stacked over the batch ([B, L, 383] for
    indexed mode, [B, m, 383] appended rows for unindexed mode).
    """
    cfg = den.cfg
    z_t = np.asarray(z_t, dtype=np.float64)
    B, L = z_t.shape[:2]
    seq_raw, pair_raw = F.denoiser_features(x_t if cfg.use_x else None, z_t)
    s = linear(den.params, "den.seq_in", torch.as_tensor(seq_raw))
    if cfg.motif_mode == "indexed":
        s = s + linear(den.params, "den.motif_in", torch.as_tensor(motif_cond))
    elif cfg.motif_mode == "unindexed":
        rows = linear(den.params, "den.motif_in", torch.as_tensor(motif_cond))
        s = torch.cat([s, rows], dim=-2)
        pair_raw = M.extend_pair_unindexed(pair_raw, motif_cond.shape[-2])
    pair = linear(den.params, "den.pair_in", torch.as_tensor(pair_raw))
    times = torch.as_tensor(np.stack([np.broadcast_to(t_x, (B,)), np.broadcast_to(t_z, (B,))], -1),
                            dtype=torch.float64)
    h = forward(den.params, cfg.net, s, pair, times=times, prefix="den.trunk")[..., :L, :]
    v_x = linear(den.params, "den.vx", h) if cfg.use_x else None
    return v_x, linear(den.params, "den.vz", h)


def velocity(den, x_t, z_t, t_x, t_z, motif_cond=None):
    """Numpy velocities for a single (unbatched) state."""
    with torch.no_grad():
        v_x, v_z = velocity_tensors(
            den, None if x_t is None else np.asarray(x_t)[None], np.asarray(z_t)[None],
            np.array([t_x]), np.array([t_z]),
            None if motif_cond is None else np.asarray(motif_cond)[None])
    return (None if v_x is None else v_x[0].numpy()), v_z[0].numpy()


@dataclass
class FlowDraw:
    """Noise and times of one CFM loss evaluation."""

    x0: np.ndarray
    z0: np.ndarray
    t_x: np.ndarray
    t_z: np.ndarray


def draw_noise(cfg, shape_x, shape_z, rng):
    t_x, t_z = sample_times(cfg.times, rng, size=shape_z[0])
    return FlowDraw(rng.standard_normal(shape_x), rng.standard_normal(shape_z), t_x, t_z)


def cfm_loss_tensor(den, x1, z1, draw, motif_cond=None, velocity_fn=None):
    """Two-term CFM loss: squared norms summed over residues and channels, mean over batch.

    ``velocity_fn`` can replace the denoiser (used to inject oracles).
    """
    tx = draw.t_x[:, None, None]
    tz = draw.t_z[:, None, None]
    z_t = interpolate(draw.z0, z1, tz)
    use_x = den.cfg.use_x if den is not None else x1 is not None
    x_t = interpolate(draw.x0, x1, tx) if use_x else None
    fn = velocity_fn or (lambda *a: velocity_tensors(den, *a))
    v_x, v_z = fn(x_t, z_t, draw.t_x, draw.t_z, motif_cond)
    loss = ((torch.as_tensor(v_z) - torch.as_tensor(z1 - draw.z0)) ** 2).sum(dim=(-1, -2))
    if use_x:
        loss = loss + ((torch.as_tensor(v_x) - torch.as_tensor(x1 - draw.x0)) ** 2).sum(dim=(-1, -2))
    return loss.mean()


def cfm_loss(den, x1, z1, rng, motif_cond=None):
    """Scalar CFM loss for batched targets ``x1`` [B, L, 3] (model units) and ``z1``."""
    x1 = None if x1 is None else np.asarray(x1, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    draw = draw_noise(den.cfg, z1.shape[:2] + (3,), z1.shape, rng)
    return cfm_loss_tensor(den, x1, z1, draw, motif_cond)


# ---------------------------------------------------------------------------
# training


@dataclass
class FlowTrainState:
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    curve: list = field(default_factory=list)


def encode_dataset(vae, dataset, frames=None):
    """Frozen-encoder posterior (mu, log_sigma) per structure, plus centred CA (Angstrom)."""
    out = []
    for i, p in enumerate(dataset):
        b = make_batch([p])
        with torch.no_grad():
            mu, ls = encoder_tensors(vae, b.enc_seq, b.enc_pair_idx)
        ca = p.ca - (p.ca.mean(axis=0) if frames is None else frames[i])
        out.append((mu[0].numpy(), ls[0].numpy(), ca))
    return out


def train_flow(den, vae, dataset, steps, seed, batch_size=16, lr=1e-3, state=None,
               log_every=100, lr_floor=0.05, stop_at=None):
    """Adam on the CFM loss with a frozen VAE; per-step rng ``(seed, 2, step)``.

    Latent targets are re-sampled from the encoder posterior at every step.
    With motif conditioning enabled, each example gets a random motif drawn
    from its own structure and coordinates are centred on the motif CA
    centroid instead of the full CA centroid.
    """
    state = state or FlowTrainState()
    groups = length_groups(dataset)
    encoded = encode_dataset(vae, dataset) if not den.cfg.motif_mode else None
    stop = steps if stop_at is None else min(stop_at, steps)
    while state.step < stop:
        rng = np.random.default_rng([seed, 2, state.step])
        idx = draw_batch_indices(groups, batch_size, rng)
        cond = None
        if den.cfg.motif_mode:
            mus, lss, cas, conds = [], [], [], []
            n_motif = M.random_motif_size(dataset[idx[0]].length, rng)
            for i in idx:
                p = dataset[i]
                task_idx = M.random_motif_indices(p.length, n_motif, rng)
                rows, centre = M.training_condition(p, task_idx, den.cfg.motif_mode,
                                                    den.cfg.motif_detail)
                conds.append(rows)
                b = make_batch([p])
                with torch.no_grad():
                    mu, ls = encoder_tensors(vae, b.enc_seq, b.enc_pair_idx)
                mus.append(mu[0].numpy())
                lss.append(ls[0].numpy())
                cas.append(p.ca - centre)
            cond = _stack_conditions(conds)
        else:
            mus, lss, cas = zip(*[encoded[i] for i in idx])
        mu, ls, ca = np.stack(mus), np.stack(lss), np.stack(cas)
        z1 = mu + np.exp(ls) * rng.standard_normal(mu.shape)
        x1 = ca * F.COORD_SCALE if den.cfg.use_x else None
        draw = draw_noise(den.cfg, ca.shape, z1.shape, rng)
        loss = cfm_loss_tensor(den, x1, z1, draw, cond)
        grads, _ = backward(den.params, record(loss))
        rate = lr * (lr_floor + (1 - lr_floor) * 0.5 * (1 + np.cos(np.pi * state.step / max(steps, 1))))
        adam_step(den.params, grads, rate, state.adam)
        state.curve.append((state.step, float(loss.detach())))
        if log_every and state.step % log_every == 0:
            log.info("flow step %d loss %.4f", state.step, float(loss.detach()))
        state.step += 1
    return den, state


def _stack_conditions(conds):
    width = max(c.shape[0] for c in conds)
    if all(c.shape[0] == width for c in conds):
        return np.stack(conds)
    raise ShapeMismatch("unindexed motif blocks of different sizes in one batch")
