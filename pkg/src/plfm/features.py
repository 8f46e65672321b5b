"""Initial sequence and pair representations for encoder, decoder and denoiser.

Everything here is raw, non-learned featurisation in numpy; the learned
linear projections to ``c_seq`` / ``c_pair`` live in :func:`project`.

Coordinates enter the networks in *model units* (nanometres, Angstrom times
``COORD_SCALE``); distance binning always works in Angstrom.
"""

from dataclasses import dataclass

import numpy as np
import torch

from . import residues as rc
from .errors import ShapeMismatch
from .geometry import backbone_torsions, chi_angle_array, orientation_matrices
from .nn import init_linear, linear

COORD_SCALE = 0.1
RELSEQ_CAP = 64
RELSEQ_CLASSES = 131
RELSEQ_SENTINEL = 2 * RELSEQ_CAP + 1  # appended unindexed-motif rows
ANGLE_BINS = 20
LATENT_DIM = 8


@dataclass(frozen=True)
class BinningSpec:
    lo: float
    hi: float
    n_bins: int
    circular: bool = False

    def __post_init__(self):
        if not self.lo < self.hi or self.n_bins < 2:
            raise ValueError(f"bad binning spec {self}")


ANGLE_SPEC = BinningSpec(-np.pi, np.pi, ANGLE_BINS, circular=True)
ENCODER_DIST_SPEC = BinningSpec(1.0, 20.0, 20)
DECODER_DIST_SPEC = BinningSpec(1.0, 30.0, 30)


def bin_index(x, spec):
    """Bin index per entry (int array); NaN entries map to -1."""
    x = np.asarray(x, dtype=np.float64)
    nan = np.isnan(x)
    x = np.where(nan, spec.lo, x)
    if spec.circular:  # wrap onto [lo, hi) so that lo itself lands in bin 0
        x = spec.lo + np.mod(x - spec.lo, spec.hi - spec.lo)
    idx = np.floor((x - spec.lo) / (spec.hi - spec.lo) * spec.n_bins).astype(np.int64)
    idx = np.clip(idx, 0, spec.n_bins - 1)
    return np.where(nan, -1, idx)


def bin_onehot(x, spec):
    """One-hot [..., n_bins]; values outside [lo, hi] clamp, NaN gives all zeros."""
    idx = bin_index(x, spec)
    out = np.zeros(idx.shape + (spec.n_bins,))
    np.put_along_axis(out, np.maximum(idx, 0)[..., None], 1.0, axis=-1)
    return out * (idx >= 0)[..., None]


def relseq_class(i, j):
    """Class of the signed separation j - i capped at +-64, shifted to 0..128."""
    return np.clip(np.asarray(j) - np.asarray(i), -RELSEQ_CAP, RELSEQ_CAP) + RELSEQ_CAP


def relseq_onehot(i, j):
    out = np.zeros(np.shape(relseq_class(i, j)) + (RELSEQ_CLASSES,))
    np.put_along_axis(out, np.asarray(relseq_class(i, j))[..., None], 1.0, axis=-1)
    return out


def relseq_matrix(L):
    idx = np.arange(L)
    return relseq_onehot(idx[:, None], idx[None, :])


# ---------------------------------------------------------------------------
# encoder


ENCODER_SEQ_WIDTH = 111 + 111 + 20 + rc.MAX_CHI * ANGLE_BINS + 3 * ANGLE_BINS
ENCODER_PAIR_WIDTH = RELSEQ_CLASSES + 3 * ANGLE_BINS + 4 * ENCODER_DIST_SPEC.n_bins


def residue_block(p, detail="all_atom"):
    """Per-residue structural block [L, 382] shared by encoder and motif features.

    Columns: raw Atom37 coordinates (model units), coordinates relative to
    CA, residue one-hot, binned chi angles, binned backbone torsions. Callers
    centre the structure first; nothing here depends on the global frame
    except the raw block.
    With ``detail='tip_atom'`` only tip atoms keep coordinates and the angle
    blocks are zero.
    """
    L = p.length
    mask = p.atom_mask if detail == "all_atom" else p.atom_mask & rc.RESTYPE_TIP_MASK[p.aatype]
    xyz = p.atom37 * COORD_SCALE
    raw = np.where(mask[..., None], xyz, 0.0).reshape(L, -1)
    rel = np.where(mask[..., None], (p.atom37 - p.ca[:, None]) * COORD_SCALE, 0.0).reshape(L, -1)
    onehot = np.eye(rc.NUM_RESTYPES)[p.aatype]
    if detail == "all_atom":
        chi = bin_onehot(chi_angle_array(p), ANGLE_SPEC).reshape(L, -1)
        tors = bin_onehot(backbone_torsions(p), ANGLE_SPEC).reshape(L, -1)
    else:
        chi = np.zeros((L, rc.MAX_CHI * ANGLE_BINS))
        tors = np.zeros((L, 3 * ANGLE_BINS))
    return np.concatenate([raw, rel, onehot, chi, tors], axis=-1)


def encoder_pair_indices(p):
    """Hot column per one-hot group of the encoder pair features: [L, L, 8].

    Groups are relseq, the three orientation angles and the four backbone
    distances; entries are absolute column indices into the 271-wide pair
    block, or -1 for undefined values.
    """
    L = p.length
    idx = np.arange(L)
    groups = [relseq_class(idx[:, None], idx[None, :])]
    offset = RELSEQ_CLASSES
    orient = orientation_matrices(p)
    for k in range(3):
        b = bin_index(orient[..., k], ANGLE_SPEC)
        groups.append(np.where(b >= 0, b + offset, -1))
        offset += ANGLE_BINS
    ca = p.ca
    for name in rc.BACKBONE:
        j = rc.ATOM_INDEX[name]
        d = np.linalg.norm(ca[:, None] - p.atom37[None, :, j], axis=-1)
        b = bin_index(np.where(p.atom_mask[None, :, j], d, np.nan), ENCODER_DIST_SPEC)
        groups.append(np.where(b >= 0, b + offset, -1))
        offset += ENCODER_DIST_SPEC.n_bins
    return np.stack(groups, axis=-1)


def onehot_from_indices(indices, width):
    """Multi-hot rows from column indices (-1 entries contribute nothing)."""
    indices = np.asarray(indices)
    out = np.zeros(indices.shape[:-1] + (width + 1,))
    np.put_along_axis(out, np.where(indices < 0, width, indices), 1.0, axis=-1)
    return out[..., :width]


def encoder_features(p):
    """Raw (seq [L, 382], pair [L, L, 271]) encoder inputs of a structure."""
    return residue_block(p), onehot_from_indices(encoder_pair_indices(p), ENCODER_PAIR_WIDTH)


# ---------------------------------------------------------------------------
# decoder / denoiser


def decoder_seq_width(use_coords=True):
    return (3 if use_coords else 0) + LATENT_DIM


def decoder_pair_width(use_coords=True):
    return RELSEQ_CLASSES + (DECODER_DIST_SPEC.n_bins if use_coords else 0)


def decoder_features(x_ca, z):
    """Raw decoder inputs from CA coordinates (model units) and latents.

    ``x_ca`` is ``[..., L, 3]`` or ``None`` (fully latent variant, where the
    decoder sees latents only); ``z`` is ``[..., L, 8]``.
    """
    z = np.asarray(z, dtype=np.float64)
    L = z.shape[-2]
    lead = z.shape[:-2]
    rel = np.broadcast_to(relseq_matrix(L), lead + (L, L, RELSEQ_CLASSES))
    if x_ca is None:
        return z, np.array(rel)
    x_ca = np.asarray(x_ca, dtype=np.float64)
    if x_ca.shape[:-1] != z.shape[:-1] or x_ca.shape[-1] != 3:
        raise ShapeMismatch(f"x {x_ca.shape} and z {z.shape} disagree")
    d = np.linalg.norm(x_ca[..., :, None, :] - x_ca[..., None, :, :], axis=-1) / COORD_SCALE
    pair = np.concatenate([rel, bin_onehot(d, DECODER_DIST_SPEC)], axis=-1)
    return np.concatenate([x_ca, z], axis=-1), pair


def denoiser_features(x_t, z_t):
    """Same recipe as the decoder, applied to corrupted inputs."""
    return decoder_features(x_t, z_t)


# ---------------------------------------------------------------------------
# learned projections


def init_projection(params, prefix, rng, seq_width, pair_width, c_seq, c_pair):
    init_linear(params, f"{prefix}.seq_in", rng, seq_width, c_seq)
    init_linear(params, f"{prefix}.pair_in", rng, pair_width, c_pair)


def project(params, prefix, seq, pair):
    seq = torch.as_tensor(np.asarray(seq, dtype=np.float64))
    pair = torch.as_tensor(np.asarray(pair, dtype=np.float64))
    return linear(params, f"{prefix}.seq_in", seq), linear(params, f"{prefix}.pair_in", pair)
