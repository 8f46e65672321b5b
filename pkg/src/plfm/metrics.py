"""Evaluation metrics that need no external model.

Co-designability goes through a pluggable fold oracle; the clash score is a
van der Waals overlap proxy; side-chain statistics are circular histograms
of chi angles, and rotamer outliers are judged against densities built from a
reference corpus.
"""

import csv
import logging
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import residues as rc
from .errors import EmptySelection, LengthMismatch, MissingReference, OracleFailure
from .features import BinningSpec, bin_index
from .geometry import chi_angle_array, kabsch
from .protein import ProteinStructure, parse_pdb
from .sterics import count_clashes, structure_clashes

log = logging.getLogger(__name__)

CODESIGN_CUTOFF = 2.0
DEFAULT_CHI_BINS = 72
OUTLIER_THRESHOLD = 0.003


# ---------------------------------------------------------------------------
# fold oracles


class FoldOracle:
    """Sequence-to-structure predictor used for self-consistency checks.

    Subclasses implement :meth:`predict`. :meth:`fold` receives the whole
    generated structure so that test oracles can derive their answer from
    it; real predictors only look at the sequence.
    """

    def predict(self, sequence):
        raise NotImplementedError

    def fold(self, generated):
        return self.predict(generated.sequence)


class IdentityOracle(FoldOracle):
    """Returns the generated structure unchanged (perfect refolding)."""

    def fold(self, generated):
        return generated


class CommandOracle(FoldOracle):
    """Runs an external command: sequence on stdin, PDB text on stdout."""

    def __init__(self, command, timeout=600):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def predict(self, sequence):
        try:
            res = subprocess.run(self.command, input=sequence, capture_output=True, text=True,
                                 timeout=self.timeout, check=True)
        except (OSError, subprocess.SubprocessError) as exc:
            raise OracleFailure(f"fold command failed: {exc}") from None
        return parse_pdb(res.stdout)


def oracle_from_spec(spec):
    """``'identity'`` or ``'cmd:<command line>'``; ``None`` disables folding."""
    if spec in (None, "", "none"):
        return None
    if spec == "identity":
        return IdentityOracle()
    if spec.startswith("cmd:"):
        return CommandOracle(spec[4:])
    raise OracleFailure(f"unknown oracle spec {spec!r}")


# ---------------------------------------------------------------------------
# co-designability


def all_atom_rmsd(p, q):
    """RMSD over atoms present in both structures after Kabsch superposition."""
    if p.length != q.length:
        raise LengthMismatch(f"{p.length} vs {q.length} residues")
    shared = p.atom_mask & q.atom_mask
    A, B = p.atom37[shared], q.atom37[shared]
    if np.array_equal(A, B):  # skip the superposition's rounding noise
        return 0.0
    if len(A) < 3:
        return float(np.sqrt(np.mean(np.sum((A - A.mean(0) - B + B.mean(0)) ** 2, -1)))) if len(A) else 0.0
    R, t = kabsch(A, B)
    return float(np.sqrt(np.mean(np.sum((A @ R.T + t - B) ** 2, axis=-1))))


def ca_rmsd(p, q):
    """CA RMSD after Kabsch superposition (lengths must agree)."""
    if p.length != q.length:
        raise LengthMismatch(f"{p.length} vs {q.length} residues")
    R, t = kabsch(p.ca, q.ca)
    return float(np.sqrt(np.mean(np.sum((p.ca @ R.T + t - q.ca) ** 2, axis=-1))))


def codesignability(generated, oracle):
    """(designable, rmsd) comparing ``generated`` with its refolded counterpart.

    ``oracle`` is a :class:`FoldOracle`, a plain callable on the sequence, or
    an already refolded :class:`ProteinStructure`. The cutoff is strict.
    """
    if isinstance(oracle, ProteinStructure):
        refolded = oracle
    else:
        try:
            refolded = oracle.fold(generated) if isinstance(oracle, FoldOracle) \
                else oracle(generated.sequence)
        except OracleFailure:
            raise
        except Exception as exc:  # oracle implementations are foreign code
            raise OracleFailure(f"oracle raised {type(exc).__name__}: {exc}") from exc
    if refolded.length != generated.length:
        raise LengthMismatch(f"oracle returned {refolded.length} residues for {generated.length}")
    rmsd = all_atom_rmsd(generated, refolded)
    return rmsd < CODESIGN_CUTOFF, rmsd


# ---------------------------------------------------------------------------
# clashes


def clash_score_coords(coords, elements, excluded=()):
    """Clashes per 1000 atoms for raw coordinates (``excluded`` lists bonded pairs)."""
    n = len(elements)
    return 1000.0 * len(count_clashes(coords, elements, excluded)) / n if n else 0.0


def clash_score(p):
    """Clash-score proxy: overlapping heavy-atom pairs per 1000 atoms."""
    clashes, n = structure_clashes(p)
    return 1000.0 * len(clashes) / n if n else 0.0


# ---------------------------------------------------------------------------
# chi-angle statistics


@dataclass
class ChiHistogram:
    restype: str
    chi: int  # 0-based chi index
    density: np.ndarray  # probability mass per bin, sums to 1

    @property
    def n_bins(self):
        return len(self.density)

    def centers(self):
        w = 2 * np.pi / self.n_bins
        return -np.pi + w * (np.arange(self.n_bins) + 0.5)


def _chi_spec(n_bins):
    return BinningSpec(-np.pi, np.pi, n_bins, circular=True)


def _collect_chis(corpus, restype_index, chi_index):
    vals = []
    for p in corpus:
        sel = p.aatype == restype_index
        if sel.any():
            col = chi_angle_array(p)[sel, chi_index]
            vals.append(col[~np.isnan(col)])
    return np.concatenate(vals) if vals else np.zeros(0)


def chi_distribution(corpus, restype, chi_index, n_bins=DEFAULT_CHI_BINS):
    """Normalised circular histogram of one chi angle of one residue type."""
    corpus = list(corpus)
    if not corpus:
        raise EmptySelection("empty corpus")
    ri = rc.restype_index(restype)
    vals = _collect_chis(corpus, ri, chi_index)
    if len(vals) == 0:
        raise EmptySelection(f"no {rc.RESTYPES_3[ri]} residues with chi{chi_index + 1}")
    counts = np.bincount(bin_index(vals, _chi_spec(n_bins)), minlength=n_bins).astype(np.float64)
    return ChiHistogram(rc.RESTYPES_3[ri], chi_index, counts / counts.sum())


def reference_densities(corpus, n_bins=DEFAULT_CHI_BINS):
    """Histograms for every (residue type, chi) pair that occurs in ``corpus``."""
    corpus = list(corpus)
    out = {}
    for ri, name in enumerate(rc.RESTYPES_3):
        for k in range(len(rc.CHI_ATOMS[name])):
            try:
                out[(name, k)] = chi_distribution(corpus, name, k, n_bins)
            except EmptySelection:
                pass
    return out


def rotamer_outlier_fraction(corpus, reference, threshold=OUTLIER_THRESHOLD):
    """Fraction of side-chain-bearing residues with a chi in a low-density reference bin.

    Densities are measured relative to a uniform histogram (a flat reference
    has density 1 in every bin), so a bin is low density when
    ``mass * n_bins < threshold``. Residues without chi angles are not counted.
    """
    total = outliers = 0
    for p in corpus:
        chis = chi_angle_array(p)
        for i, a in enumerate(p.aatype):
            name = rc.RESTYPES_3[a]
            defined = [k for k in range(rc.MAX_CHI) if not np.isnan(chis[i, k])]
            if not defined:
                continue
            total += 1
            for k in defined:
                if (name, k) not in reference:
                    raise MissingReference(f"no reference density for {name} chi{k + 1}")
                h = reference[(name, k)]
                b = int(bin_index(chis[i, k], _chi_spec(h.n_bins)))
                if h.density[b] * h.n_bins < threshold:
                    outliers += 1
                    break
    if total == 0:
        log.warning("no residues with chi angles; outlier fraction reported as 0")
        return 0.0
    return outliers / total


def write_density_csv(path, densities):
    """CSV rows (residue, chi, bin_center_deg, density) for external plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["residue", "chi", "bin_center_deg", "density"])
        for (name, k), h in sorted(densities.items()):
            for c, d in zip(np.degrees(h.centers()), h.density):
                w.writerow([name, k + 1, f"{c:.2f}", f"{d:.6f}"])
    return path


def staggered_mass(hist, half_width_deg=30.0):
    """Probability mass within +-half_width of -60, 60 and 180 degrees."""
    centers = np.degrees(hist.centers())
    out = {}
    for mode in (-60.0, 60.0, 180.0):
        d = np.abs((centers - mode + 180.0) % 360.0 - 180.0)
        out[mode] = float(hist.density[d <= half_width_deg].sum())
    return out


# ---------------------------------------------------------------------------
# clustering


def cluster_count(items, similarity, threshold):
    """Number of single-linkage clusters where an edge means similarity >= threshold."""
    items = list(items)
    n = len(items)
    if n == 0:
        return 0
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if similarity(items[i], items[j]) >= threshold:
                rows.append(i)
                cols.append(j)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return int(connected_components(graph, directed=False)[0])
