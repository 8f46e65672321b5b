"""Motif scaffolding: contig grammar, placements, conditioning and evaluation.

A contig string interleaves scaffold length ranges ("5-20", "20") with motif
residue ranges taken from a reference chain ("A16-22", "B24"), separated by
slashes. A placement fixes every scaffold length and thereby the index of
each motif residue in the generated chain.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import features as F
from . import residues as rc
from .errors import (EmptySpec, Infeasible, MissingReference, ParseError, SizeMismatch)
from .geometry import kabsch

MOTIF_FEATURE_WIDTH = F.ENCODER_SEQ_WIDTH + 1  # structural block plus a presence flag


@dataclass(frozen=True)
class Scaffold:
    min: int
    max: int


@dataclass(frozen=True)
class Motif:
    chain: str
    start: int
    end: int

    @property
    def length(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class ContigSpec:
    segments: tuple

    @property
    def motif_length(self):
        return sum(s.length for s in self.segments if isinstance(s, Motif))

    @property
    def min_length(self):
        return self.motif_length + sum(s.min for s in self.segments if isinstance(s, Scaffold))

    @property
    def max_length(self):
        return self.motif_length + sum(s.max for s in self.segments if isinstance(s, Scaffold))

    def motif_residues(self):
        """(chain, residue number) of every motif residue in contig order."""
        return [(s.chain, r) for s in self.segments if isinstance(s, Motif)
                for r in range(s.start, s.end + 1)]


_SCAFFOLD = re.compile(r"^(\d+)(?:-(\d+))?$")
_MOTIF = re.compile(r"^([A-Za-z])(\d+)(?:-(\d+))?$")


def parse_contig(text):
    """Parse a slash-separated contig string into a :class:`ContigSpec`."""
    text = (text or "").strip()
    if not text:
        raise EmptySpec("empty contig string")
    segments = []
    for pos, token in enumerate(text.split("/")):
        token = token.strip()
        m = _SCAFFOLD.match(token)
        if m:
            lo = int(m.group(1))
            hi = int(m.group(2)) if m.group(2) is not None else lo
            if lo > hi:
                raise ParseError(f"scaffold range {token!r} has min > max", pos)
            segments.append(Scaffold(lo, hi))
            continue
        m = _MOTIF.match(token)
        if m:
            a = int(m.group(2))
            b = int(m.group(3)) if m.group(3) is not None else a
            if a > b:
                raise ParseError(f"motif range {token!r} is empty", pos)
            segments.append(Motif(m.group(1), a, b))
            continue
        raise ParseError(f"malformed token {token!r}", pos)
    return ContigSpec(tuple(segments))


def render(spec):
    """Inverse of :func:`parse_contig` (exact lengths are written as one number)."""
    out = []
    for s in spec.segments:
        if isinstance(s, Scaffold):
            out.append(str(s.min) if s.min == s.max else f"{s.min}-{s.max}")
        else:
            out.append(f"{s.chain}{s.start}" if s.start == s.end else f"{s.chain}{s.start}-{s.end}")
    return "/".join(out)


def count_motif_segments(spec):
    """Number of maximal runs of consecutive motif tokens."""
    runs, prev = 0, False
    for s in spec.segments:
        is_motif = isinstance(s, Motif)
        runs += is_motif and not prev
        prev = is_motif
    return runs


# ---------------------------------------------------------------------------
# placement


@dataclass(frozen=True)
class Placement:
    length: int
    motif_indices: tuple  # position in the generated chain of each motif residue
    segment_lengths: tuple


def sample_placement(spec, bounds, rng, max_tries=100_000):
    """Draw scaffold lengths uniformly in their ranges until the total fits ``bounds``."""
    lo, hi = bounds
    if spec.min_length > hi or spec.max_length < lo or lo > hi:
        raise Infeasible(f"contig lengths [{spec.min_length}, {spec.max_length}] miss [{lo}, {hi}]")
    for _ in range(max_tries):
        lengths = [int(rng.integers(s.min, s.max + 1)) if isinstance(s, Scaffold) else s.length
                   for s in spec.segments]
        total = sum(lengths)
        if lo <= total <= hi:
            break
    else:
        raise Infeasible(f"no placement within bounds after {max_tries} draws")
    idx, cursor = [], 0
    for s, n in zip(spec.segments, lengths):
        if isinstance(s, Motif):
            idx.extend(range(cursor, cursor + n))
        cursor += n
    return Placement(total, tuple(idx), tuple(lengths))


# ---------------------------------------------------------------------------
# tasks


@dataclass
class MotifTask:
    spec: ContigSpec
    reference: object  # ProteinStructure, usually parsed with all chains
    mode: str = "indexed"
    detail: str = "all_atom"
    bounds: tuple = None
    name: str = ""
    _kept: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("indexed", "unindexed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.detail not in ("all_atom", "tip_atom"):
            raise ValueError(f"unknown detail {self.detail!r}")
        if self.bounds is None:
            self.bounds = (self.spec.min_length, self.spec.max_length)
        self._resolve()

    def _resolve(self):
        ref = self.reference
        lookup = {(str(c), int(r)): i for i, (c, r) in enumerate(zip(ref.chain_ids, ref.residue_index))}
        self.reference_indices = []
        kept = []
        for k, key in enumerate(self.spec.motif_residues()):
            if key not in lookup:
                raise MissingReference(f"motif residue {key[0]}{key[1]} not in reference")
            i = lookup[key]
            self.reference_indices.append(i)
            if self.detail == "tip_atom" and not self.scope_mask(i).any():
                continue  # nothing to scaffold for this residue
            kept.append(k)
        self._kept = kept

    @property
    def kept(self):
        """Positions (in contig order) of motif residues that carry conditioning atoms."""
        return list(self._kept)

    def scope_mask(self, ref_i):
        """Atoms of reference residue ``ref_i`` covered by the evaluation/conditioning."""
        m = self.reference.atom_mask[ref_i].copy()
        if self.detail == "tip_atom":
            m &= rc.RESTYPE_TIP_MASK[self.reference.aatype[ref_i]]
        return m

    def motif_structure(self):
        idx = [self.reference_indices[k] for k in self._kept]
        return self.reference.select(np.array(idx, dtype=np.int64))

    def frame_origin(self):
        """CA centroid of the conditioning motif residues in reference coordinates.

        Conditioning features and generated scaffolds both live in the frame
        that puts this point at the origin.
        """
        idx = [self.reference_indices[k] for k in self._kept]
        return self.reference.ca[idx].mean(axis=0) if idx else np.zeros(3)


def motif_block(sub, detail):
    """[m, 383] conditioning rows for a motif sub-structure (centred on its CAs)."""
    block = F.residue_block(sub.centered(), detail)
    return np.concatenate([block, np.ones((sub.length, 1))], axis=-1)


def motif_features(task, placement):
    """Conditioning block for the denoiser.

    Indexed mode: [L, 383] with motif rows at their placement indices and
    zeros elsewhere. Unindexed mode: [m, 383] rows to append to the sequence
    representation, carrying no index information.
    """
    kept = task.kept
    if not kept:
        rows = np.zeros((0, MOTIF_FEATURE_WIDTH))
    else:
        rows = motif_block(task.motif_structure(), task.detail)
    if task.mode == "unindexed":
        return rows
    out = np.zeros((placement.length, MOTIF_FEATURE_WIDTH))
    if kept:
        out[np.array([placement.motif_indices[k] for k in kept])] = rows
    return out


def extend_pair_unindexed(pair_raw, m):
    """Grow a decoder-style pair block by ``m`` appended rows/columns.

    Every pair touching an appended row gets the relseq sentinel class and
    no distance information.
    """
    pair_raw = np.asarray(pair_raw)
    *lead, L, _, P = pair_raw.shape
    out = np.zeros((*lead, L + m, L + m, P))
    out[..., :L, :L, :] = pair_raw
    out[..., L:, :, F.RELSEQ_SENTINEL] = 1.0
    out[..., :L, L:, F.RELSEQ_SENTINEL] = 1.0
    return out


def random_motif_size(L, rng):
    return int(rng.integers(1, max(2, L // 4 + 1)))


def random_motif_indices(L, n, rng):
    """Training motif: one contiguous run or scattered residues, ``n`` in total."""
    n = min(n, L)
    if rng.random() < 0.5:
        start = int(rng.integers(0, L - n + 1))
        return np.arange(start, start + n)
    return np.sort(rng.choice(L, size=n, replace=False))


def training_condition(p, idx, mode, detail):
    """Conditioning rows for a motif cut from a training structure, plus the frame origin.

    The origin is the CA centroid of the motif residues that carry atoms
    (the whole-protein CA centroid when none do).
    """
    idx = np.asarray(idx, dtype=np.int64)
    if detail == "tip_atom":
        idx = np.array([i for i in idx if (p.atom_mask[i] & rc.RESTYPE_TIP_MASK[p.aatype[i]]).any()],
                       dtype=np.int64)
    if len(idx) == 0:
        rows = np.zeros((0, MOTIF_FEATURE_WIDTH))
        origin = p.ca.mean(axis=0)
    else:
        sub = p.select(idx)
        origin = sub.ca.mean(axis=0)
        rows = motif_block(sub, detail)
    if mode == "unindexed":
        return rows, origin
    out = np.zeros((p.length, MOTIF_FEATURE_WIDTH))
    out[idx] = rows
    return out, origin


# ---------------------------------------------------------------------------
# evaluation


def greedy_match(gt_motif_ca, generated_ca):
    """Each ground-truth motif CA, in order, claims its nearest unclaimed generated CA."""
    gt = np.asarray(gt_motif_ca, dtype=np.float64).reshape(-1, 3)
    gen = np.asarray(generated_ca, dtype=np.float64).reshape(-1, 3)
    if len(gt) > len(gen):
        raise SizeMismatch(f"{len(gt)} motif residues but only {len(gen)} generated")
    d = np.linalg.norm(gt[:, None] - gen[None], axis=-1)
    taken = np.zeros(len(gen), dtype=bool)
    out = []
    for row in d:
        row = np.where(taken, np.inf, row)
        j = int(np.argmin(row))
        taken[j] = True
        out.append(j)
    return np.array(out, dtype=np.int64)


CA_RMSD_CUTOFF = 1.0
MOTIF_RMSD_CUTOFF = 2.0
SC_RMSD_CUTOFF = 2.0


@dataclass
class ScaffoldReport:
    sequence_recovered: bool
    ca_rmsd: float
    ca_ok: bool
    motif_rmsd: float
    motif_ok: bool
    sc_rmsd: float
    designable: bool
    indices: list

    @property
    def success(self):
        return self.sequence_recovered and self.ca_ok and self.motif_ok and self.designable

    def to_dict(self):
        return dict(sequence_recovered=self.sequence_recovered, ca_rmsd=self.ca_rmsd,
                    ca_ok=self.ca_ok, motif_rmsd=self.motif_rmsd, motif_ok=self.motif_ok,
                    sc_rmsd=self.sc_rmsd, designable=self.designable, success=self.success,
                    indices=[int(i) for i in self.indices])


def _superpose_on(A, B):
    """Transform aligning A onto B: Kabsch for >= 3 points, translation otherwise."""
    if len(A) >= 3:
        return kabsch(A, B)
    return np.eye(3), B.mean(axis=0) - A.mean(axis=0)


def evaluate_scaffold(task, generated, refolded, placement=None):
    """Four-criterion success report for one generated scaffold.

    Motif residues are located through the placement (indexed mode) or by
    greedy CA matching against the reference motif expressed in the
    conditioning frame (unindexed mode). The generated motif is superposed on
    the reference motif CAs; that transform is reused for the atom-level
    RMSD, taken over the in-scope atoms present in both residues.
    """
    from .metrics import codesignability

    ref = task.reference
    kept = task.kept
    ref_idx = np.array([task.reference_indices[k] for k in kept], dtype=np.int64)
    ref_ca = ref.ca[ref_idx]
    if task.mode == "indexed":
        if placement is None:
            raise ValueError("indexed evaluation needs the placement")
        if placement.length != generated.length:
            raise SizeMismatch(f"placement length {placement.length} != {generated.length}")
        gen_idx = np.array([placement.motif_indices[k] for k in kept], dtype=np.int64)
    else:
        gen_idx = greedy_match(ref_ca - task.frame_origin(), generated.ca)
    seq_ok = bool(np.array_equal(generated.aatype[gen_idx], ref.aatype[ref_idx]))
    R, t = _superpose_on(generated.ca[gen_idx], ref_ca)
    ca_rmsd = float(np.sqrt(np.mean(np.sum((generated.ca[gen_idx] @ R.T + t - ref_ca) ** 2, -1))))
    sq, n = 0.0, 0
    for gi, ri in zip(gen_idx, ref_idx):
        both = task.scope_mask(ri) & generated.atom_mask[gi]
        moved = generated.atom37[gi][both] @ R.T + t
        sq += float(np.sum((moved - ref.atom37[ri][both]) ** 2))
        n += int(both.sum())
    motif_rmsd = float(np.sqrt(sq / n)) if n else float("inf")
    designable, sc = codesignability(generated, refolded)
    return ScaffoldReport(
        sequence_recovered=seq_ok, ca_rmsd=ca_rmsd, ca_ok=ca_rmsd < CA_RMSD_CUTOFF,
        motif_rmsd=motif_rmsd, motif_ok=motif_rmsd < MOTIF_RMSD_CUTOFF,
        sc_rmsd=sc, designable=designable, indices=list(gen_idx))


def embed_motif(task, placement, scaffold):
    """Copy the reference motif residues into ``scaffold`` at the placement indices.

    Motif atoms are copied verbatim, only shifted into the conditioning frame
    (see :meth:`MotifTask.frame_origin`), which yields the ideal generator
    output for closed-loop checks.
    """
    kept = task.kept
    ref_idx = np.array([task.reference_indices[k] for k in kept], dtype=np.int64)
    gen_idx = np.array([placement.motif_indices[k] for k in kept], dtype=np.int64)
    aatype = scaffold.aatype.copy()
    atom37 = scaffold.atom37.copy()
    mask = scaffold.atom_mask.copy()
    aatype[gen_idx] = task.reference.aatype[ref_idx]
    mask[gen_idx] = task.reference.atom_mask[ref_idx]
    shifted = task.reference.atom37[ref_idx] - task.frame_origin()
    atom37[gen_idx] = np.where(mask[gen_idx][..., None], shifted, 0.0)
    return scaffold.replace(aatype=aatype, atom37=atom37, atom_mask=mask)


class ReplayGenerator:
    """Stand-in generator that returns a fixed structure for every request."""

    def __init__(self, structure):
        self.structure = structure

    def __call__(self, length, seed):
        if length != self.structure.length:
            raise SizeMismatch(f"replay structure has length {self.structure.length}, asked {length}")
        return self.structure


# ---------------------------------------------------------------------------
# benchmark table: (name, min length, max length, all-atom contig, tip-atom contig)

BENCHMARK = (
    ("1PRW_AA", 60, 105, "5-20/A1-20/10-25/B1-20/5-20",
     "5-20/A16-22/1/A24/1/A26-32/1/A34-35/10-25/A52-58/1/A60/1/A62-71/5-20"),
    ("1BCF_AA", 96, 152, "8-15/A92-99/16-30/A123-130/16-30/A47-54/16-30/A18-25/8-15",
     "8-15/A92-96/1/A98-99/16-30/A123-128/1/A130/16-30/A47-54/16-30/A18-25/8-15"),
    ("5TPN_AA", 50, 75, "10-40/A163-181/10-40", "10-40/A163-181/10-40"),
    ("5IUS_AA", 57, 142, "0-30/B119-140/15-40/A63-82/0-30",
     "1-31/A120-123/1/A125-130/1/A132-140/15-40/A63-73/1/A75-82/0-30"),
    ("3IXT_AA", 50, 75, "10-40/P254-277/10-40", "10-40/P254-277/10-40"),
    ("5YUI_AA", 50, 100, "5-30/A93-97/5-20/B118-120/10-35/C198-200/10-30",
     "5-30/A93-97/5-20/A118-120/10-35/A198-200/10-30"),
    ("5AOU_AA", 230, 270, "40-60/A1051/20-40/A2083/20-35/A2110/100-140",
     "40-60/A1051/20-40/A2083/20-35/A2110/100-140"),
    ("5AOU_QUAD_AA", 230, 270, "40-60/A1051/20-40/A2083/20-35/A2110/60-80/A2180/40-60",
     "40-60/A1051/20-40/A2083/20-35/A2110/60-80/A2180/40-60"),
    ("7K4V_AA", 280, 320, "40-50/A44/3-8/A50/70-85/A127/150-200",
     "40-50/A44/3-8/A50/70-85/A127/150-200"),
    ("1YCR_AA", 40, 100, "10-40/B19-27/10-40", "10-40/B19-27/10-40"),
    ("4JHW_AA", 60, 90, "10-25/F196-212/15-30/F63-69/10-25", "10-25/F196-212/15-30/F63-69/10-25"),
    ("5WN9_AA", 35, 50, "10-40/A170-189/10-40", "10-40/A170-186/1/A188-189/10-40"),
    ("4ZYP_AA", 30, 50, "10-40/A422-436/10-40", "10-40/A422-429/1/A431-436/10-40"),
    ("6VW1_AA", 62, 83, "20-30/A24-42/4-10/A64-82/0-5", "20-30/A24-42/4-10/A64-65/1/A67-82/0-5"),
    ("1QJG_AA", 53, 103, "10-20/A38/15-30/A14/15-30/A99/10-20",
     "10-20/A14/15-30/A38/50-70/A99/25-30"),
    ("1QJG_AA_NATIVE", 115, 135, "10-20/A14/15-30/A38/50-70/A99/25-30",
     "10-20/A14/15-30/A38/50-70/A99/25-30"),
    ("2KL8_AA", 79, 79, "A1-7/20/A28-79", "A1-7/20/A28-79"),
    ("7MRX_AA_60", 60, 60, "0-38/B25-46/0-38", "0-38/B25-30/1/B32-42/1/B44-46/0-38"),
    ("7MRX_AA_85", 85, 85, "0-63/B25-46/0-63", "0-63/B25-30/1/B32-42/1/B44-46/0-63"),
    ("7MRX_AA_128", 128, 128, "0-122/B25-46/0-122", "0-122/B25-30/1/B32-42/1/B44-46/0-122"),
    ("5TRV_AA_SHORT", 56, 56, "0-35/A45-65/0-35", "1-36/A46-48/1/A50-55/1/A57-59/1/A61-65/0-35"),
    ("5TRV_AA_MED", 86, 86, "0-65/A45-65/0-65", "1-66/A46-48/1/A50-55/1/A57-59/1/A61-65/0-65"),
    ("5TRV_AA_LONG", 116, 116, "0-95/A45-65/0-95", "1-96/A46-48/1/A50-55/1/A57-59/1/A61-65/0-95"),
    ("6E6R_AA_SHORT", 48, 48, "0-35/A23-35/0-35", "0-35/A23-32/1/A34/1-36"),
    ("6E6R_AA_MED", 78, 78, "0-65/A23-35/0-65", "0-65/A23-32/1/A34/1-66"),
    ("6E6R_AA_LONG", 108, 108, "0-95/A23-35/0-95", "0-95/A23-32/1/A34/1-96"),
)
