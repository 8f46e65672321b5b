"""Per-residue VAE over sequence and non-CA atoms, conditioned on CA coordinates.

The encoder maps a full structure to a factorised Gaussian over 8-dim
per-residue latents. The decoder maps (CA coordinates, latents) to residue
logits and mean positions for the 36 non-CA Atom37 slots. Training
minimises the negative beta-weighted ELBO.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import features as F
from . import residues as rc
from .errors import IndexOutOfRange, InvalidConfig, ShapeMismatch
from .nn import (AdamState, NetConfig, Parameters, adam_step, backward, build_network,
                 forward, init_linear, linear, record)
from .protein import from_coordinates

log = logging.getLogger(__name__)

NON_CA = rc.NON_CA_INDICES  # the 36 Atom37 slots other than CA


@dataclass(frozen=True)
class VaeConfig:
    beta: float = 1e-4
    latent_dim: int = F.LATENT_DIM
    net: NetConfig = field(default_factory=NetConfig)
    fully_latent: bool = False

    def validate(self):
        if self.beta < 0:
            raise InvalidConfig("beta must be >= 0")
        if self.latent_dim != F.LATENT_DIM:
            raise InvalidConfig(f"latent_dim is fixed at {F.LATENT_DIM} by the feature recipes")
        if self.net.time_conditioned:
            raise InvalidConfig("VAE networks are not time conditioned")
        self.net.validate()
        return self

    def to_dict(self):
        return dict(beta=self.beta, latent_dim=self.latent_dim, net=self.net.to_dict(),
                    fully_latent=self.fully_latent)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        net = NetConfig.from_dict(d.pop("net", {}))
        try:
            return cls(net=net, **d).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass
class LatentState:
    z: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass
class DecoderOutput:
    logits: np.ndarray  # [L, 20]
    mu_dec: np.ndarray  # [L, 36, 3] Angstrom, slots in NON_CA order
    ca: np.ndarray = None  # [L, 3] predicted CA (fully latent variant only)


class VAE:
    """Parameters plus configuration of an encoder/decoder pair."""

    def __init__(self, cfg, params):
        self.cfg = cfg.validate()
        self.params = params

    @classmethod
    def init(cls, cfg, seed):
        cfg.validate()
        rng = np.random.default_rng([seed, 1])
        net = cfg.net
        params = Parameters()
        F.init_projection(params, "enc", rng, F.ENCODER_SEQ_WIDTH, F.ENCODER_PAIR_WIDTH,
                          net.c_seq, net.c_pair)
        build_network(net, int(rng.integers(2**31)), prefix="enc.trunk", params=params)
        init_linear(params, "enc.head", rng, net.c_seq, 2 * cfg.latent_dim)
        use_x = not cfg.fully_latent
        F.init_projection(params, "dec", rng, F.decoder_seq_width(use_x),
                          F.decoder_pair_width(use_x), net.c_seq, net.c_pair)
        build_network(net, int(rng.integers(2**31)), prefix="dec.trunk", params=params)
        init_linear(params, "dec.logits", rng, net.c_seq, rc.NUM_RESTYPES)
        init_linear(params, "dec.coords", rng, net.c_seq, len(NON_CA) * 3)
        if cfg.fully_latent:
            init_linear(params, "dec.ca", rng, net.c_seq, 3)
        return cls(cfg, params)


# ---------------------------------------------------------------------------
# batched tensor paths


@dataclass
class Batch:
    """Stacked, centred training examples of one length."""

    enc_seq: np.ndarray  # [B, L, 382]
    enc_pair_idx: np.ndarray  # [B, L, L, 8]
    aatype: np.ndarray  # [B, L]
    ca: np.ndarray  # [B, L, 3] Angstrom
    non_ca: np.ndarray  # [B, L, 36, 3] Angstrom
    mask: np.ndarray  # [B, L, 36] ground-truth atom presence


def make_batch(structures):
    lengths = {p.length for p in structures}
    if len(lengths) != 1:
        raise ShapeMismatch(f"batch mixes lengths {sorted(lengths)}")
    cs = [p.centered() for p in structures]
    return Batch(
        enc_seq=np.stack([F.residue_block(p) for p in cs]),
        enc_pair_idx=np.stack([F.encoder_pair_indices(p) for p in cs]),
        aatype=np.stack([p.aatype for p in cs]),
        ca=np.stack([p.ca for p in cs]),
        non_ca=np.stack([p.atom37[:, NON_CA] for p in cs]),
        mask=np.stack([p.atom_mask[:, NON_CA] for p in cs]),
    )


def encoder_tensors(model, enc_seq, enc_pair_idx):
    """(mu, log_sigma) tensors [B, L, 8]."""
    pair = F.onehot_from_indices(enc_pair_idx, F.ENCODER_PAIR_WIDTH)
    s, z = F.project(model.params, "enc", enc_seq, pair)
    h = forward(model.params, model.cfg.net, s, z, prefix="enc.trunk")
    mu, log_sigma = linear(model.params, "enc.head", h).chunk(2, dim=-1)
    return mu, log_sigma


def decoder_tensors(model, x_ca, z):
    """Decoder heads for CA (model units, numpy, or None) and latents (tensor).

    Returns (logits, non_ca_angstrom, ca_angstrom_or_None); coordinates are
    predicted as offsets from CA so the network works in a local frame.
    """
    z = torch.as_tensor(z, dtype=torch.float64)
    use_x = not model.cfg.fully_latent
    seq_raw, pair_raw = F.decoder_features(x_ca if use_x else None, np.zeros(z.shape))
    seq_raw = torch.as_tensor(seq_raw)
    if use_x:
        seq_raw = torch.cat([seq_raw[..., :3], z], dim=-1)
    else:
        seq_raw = z
    s = linear(model.params, "dec.seq_in", seq_raw)
    pair = linear(model.params, "dec.pair_in", torch.as_tensor(pair_raw))
    h = forward(model.params, model.cfg.net, s, pair, prefix="dec.trunk")
    logits = linear(model.params, "dec.logits", h)
    offsets = linear(model.params, "dec.coords", h).reshape(*h.shape[:-1], len(NON_CA), 3)
    if use_x:
        ca = torch.as_tensor(np.asarray(x_ca, dtype=np.float64)) / F.COORD_SCALE
        pred_ca = None
    else:
        pred_ca = linear(model.params, "dec.ca", h) / F.COORD_SCALE
        ca = pred_ca
    return logits, ca[..., None, :] + offsets / F.COORD_SCALE, pred_ca


def kl_divergence(mu, log_sigma):
    """KL(N(mu, sigma^2) || N(0, 1)) summed over the trailing two axes."""
    return 0.5 * (mu ** 2 + torch.exp(2 * log_sigma) - 1.0 - 2 * log_sigma).sum(dim=(-1, -2))


def batch_loss(model, batch, eps):
    """Negative ELBO averaged over the batch, plus detached (ce, mse, kl) parts.

    ``eps`` is the reparameterisation noise [B, L, 8].
    """
    mu, log_sigma = encoder_tensors(model, batch.enc_seq, batch.enc_pair_idx)
    z = mu + torch.exp(log_sigma) * torch.as_tensor(eps)
    logits, mu_dec, pred_ca = decoder_tensors(model, batch.ca * F.COORD_SCALE, z)
    target = torch.as_tensor(batch.aatype)
    ce = torch.nn.functional.cross_entropy(logits.reshape(-1, rc.NUM_RESTYPES), target.reshape(-1),
                                           reduction="none").reshape(target.shape).sum(-1)
    diff = (mu_dec - torch.as_tensor(batch.non_ca)) * torch.as_tensor(batch.mask, dtype=torch.float64)[..., None]
    mse = 0.5 * (diff ** 2).sum(dim=(-1, -2, -3))
    if pred_ca is not None:
        mse = mse + 0.5 * ((pred_ca - torch.as_tensor(batch.ca)) ** 2).sum(dim=(-1, -2))
    kl = kl_divergence(mu, log_sigma)
    loss = (ce + mse + model.cfg.beta * kl).mean()
    parts = dict(ce=float(ce.detach().mean()), mse=float(mse.detach().mean()), kl=float(kl.detach().mean()))
    return loss, parts


# ---------------------------------------------------------------------------
# single-structure API


def encode(model, p, rng, eps=None):
    """Posterior parameters and a reparameterised sample for one structure."""
    batch = make_batch([p])
    with torch.no_grad():
        mu, log_sigma = encoder_tensors(model, batch.enc_seq, batch.enc_pair_idx)
    mu, log_sigma = mu[0].numpy(), log_sigma[0].numpy()
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    return LatentState(z=mu + np.exp(log_sigma) * eps, mu=mu, log_sigma=log_sigma)


def decode(model, x_ca, z):
    """Deterministic decoder heads; ``x_ca`` is in Angstrom (centred or not)."""
    x_ca = np.asarray(x_ca, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_ca.ndim != 2 or x_ca.shape[1] != 3 or z.shape != (x_ca.shape[0], model.cfg.latent_dim):
        raise ShapeMismatch(f"x {x_ca.shape} vs z {z.shape}")
    shift = x_ca.mean(axis=0)
    with torch.no_grad():
        logits, mu_dec, pred_ca = decoder_tensors(model, (x_ca - shift) * F.COORD_SCALE, z)
    return DecoderOutput(logits=logits.numpy(), mu_dec=mu_dec.numpy() + shift,
                         ca=None if pred_ca is None else pred_ca.numpy() + shift)


def structure_from_decoding(x_ca, out, name=""):
    """Argmax sequence, mean coordinates masked by the decoded sequence, CA pass-through."""
    aatype = np.argmax(out.logits, axis=-1)
    mask = rc.RESTYPE_ATOM37_MASK[aatype]
    atom37 = np.zeros((len(aatype), rc.NUM_ATOMS, 3))
    atom37[:, NON_CA] = out.mu_dec
    atom37[:, rc.CA_INDEX] = x_ca if out.ca is None else out.ca
    return from_coordinates(aatype, atom37, mask=mask, name=name)


def reconstruct(model, p, rng):
    state = encode(model, p, rng)
    out = decode(model, p.ca, state.z)
    q = structure_from_decoding(p.ca, out, name=p.name)
    return q.replace(residue_index=p.residue_index, chain_ids=p.chain_ids)


def elbo_loss(model, p, rng):
    """Negative ELBO of one structure and its (ce, mse, kl) parts."""
    eps = rng.standard_normal((1, p.length, model.cfg.latent_dim))
    loss, parts = batch_loss(model, make_batch([p]), eps)
    return float(loss.detach()), parts


def perturb_latent(z, residue, magnitude, rng):
    """Add ``magnitude`` times a random unit direction to row ``residue`` only."""
    z = np.array(z, dtype=np.float64)
    if not 0 <= residue < z.shape[0]:
        raise IndexOutOfRange(f"residue {residue} outside [0, {z.shape[0]})")
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    d = rng.standard_normal(z.shape[1])
    z[residue] += magnitude * d / np.linalg.norm(d)
    return z


def residue_errors(p, q):
    """Per-residue RMSD over atoms present in both structures (no superposition)."""
    both = p.atom_mask & q.atom_mask
    sq = np.sum((p.atom37 - q.atom37) ** 2, axis=-1) * both
    return np.sqrt(sq.sum(axis=1) / np.maximum(both.sum(axis=1), 1))


def reconstruction_metrics(p, q):
    """(sequence recovery, all-atom RMSD) of structure ``q`` against ``p``.

    RMSD runs over the ground-truth atom set. An atom ``q`` lacks sits at the
    origin and is counted as such, so sequence errors are penalised twice.
    """
    recovery = float(np.mean(p.aatype == q.aatype))
    sq = np.sum((p.atom37 - q.atom37) ** 2, axis=-1)[p.atom_mask]
    return recovery, float(np.sqrt(sq.mean()))


def decoder_metrics(model, p, rng):
    """(sequence recovery, masked RMSD) of one encode/decode round trip.

    The RMSD compares the raw decoder means with the ground-truth atoms under
    the ground-truth mask, which is exactly the set the likelihood supervises.
    """
    state = encode(model, p, rng)
    out = decode(model, p.ca, state.z)
    recovery = float(np.mean(np.argmax(out.logits, axis=-1) == p.aatype))
    mask = p.atom_mask[:, NON_CA]
    sq = np.sum((out.mu_dec - p.atom37[:, NON_CA]) ** 2, axis=-1)[mask]
    if out.ca is not None:
        sq = np.concatenate([sq, np.sum((out.ca - p.ca) ** 2, axis=-1)])
    return recovery, float(np.sqrt(sq.mean())) if sq.size else 0.0


# ---------------------------------------------------------------------------
# training


def length_groups(dataset):
    groups = {}
    for i, p in enumerate(dataset):
        groups.setdefault(p.length, []).append(i)
    return groups


def draw_batch_indices(groups, batch_size, rng):
    """Pick a length group (weighted by size) and sample a batch inside it."""
    keys = sorted(groups)
    sizes = np.array([len(groups[k]) for k in keys], dtype=np.float64)
    members = groups[keys[rng.choice(len(keys), p=sizes / sizes.sum())]]
    return rng.choice(members, size=min(batch_size, len(members)), replace=False)


@dataclass
class TrainState:
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    curve: list = field(default_factory=list)


def train_vae(model, dataset, steps, seed, batch_size=16, lr=1e-3, state=None,
              log_every=100, lr_floor=0.05, stop_at=None):
    """Adam on the negative ELBO with per-step rng streams ``(seed, 1, step)``.

    The learning rate follows a cosine decay from ``lr`` to ``lr * lr_floor``
    over ``steps``. ``stop_at`` ends the call early without changing that
    schedule, and passing the returned ``state`` back resumes exactly.
    Curve rows are (step, loss, ce, mse, kl).
    """
    state = state or TrainState()
    groups = length_groups(dataset)
    cache = {}

    def batch_for(idx):
        for i in idx:
            if i not in cache:
                cache[i] = make_batch([dataset[i]])
        parts = [cache[i] for i in idx]
        return Batch(*[np.concatenate([getattr(b, f) for b in parts]) for f in Batch.__dataclass_fields__])

    stop = steps if stop_at is None else min(stop_at, steps)
    while state.step < stop:
        rng = np.random.default_rng([seed, 1, state.step])
        batch = batch_for(draw_batch_indices(groups, batch_size, rng))
        eps = rng.standard_normal(batch.ca.shape[:2] + (model.cfg.latent_dim,))
        loss, parts = batch_loss(model, batch, eps)
        grads, _ = backward(model.params, record(loss))
        rate = lr * (lr_floor + (1 - lr_floor) * 0.5 * (1 + np.cos(np.pi * state.step / max(steps, 1))))
        adam_step(model.params, grads, rate, state.adam)
        state.curve.append((state.step, float(loss.detach()), parts["ce"], parts["mse"], parts["kl"]))
        if log_every and state.step % log_every == 0:
            log.info("vae step %d loss %.4f ce %.4f mse %.4f kl %.2f", state.step,
                     float(loss.detach()), parts["ce"], parts["mse"], parts["kl"])
        state.step += 1
    return model, state


def with_beta(cfg, beta):
    return replace(cfg, beta=beta)
