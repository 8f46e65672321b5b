"""Atom37 protein representation, PDB reading/writing and toy structures."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import residues as rc
from .errors import LengthOutOfRange, MalformedRecord, MissingCA, UnknownResidue
from .geometry import place_atom, pairwise_distances

DEFAULT_B_FACTOR = 100.0


@dataclass(frozen=True, eq=False)
class ProteinStructure:
    """Single-chain (or multi-chain, for motif references) heavy-atom structure.

    ``atom37`` is [L, 37, 3] in Angstrom with exact zeros wherever
    ``atom_mask`` is false. ``residue_index`` and ``chain_ids`` carry the PDB
    numbering so motif ranges like ``A16-22`` can be resolved.
    """

    aatype: np.ndarray
    atom37: np.ndarray
    atom_mask: np.ndarray
    b_factor: np.ndarray = None
    residue_index: np.ndarray = None
    chain_ids: np.ndarray = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        aatype = np.asarray(self.aatype, dtype=np.int64).reshape(-1)
        L = aatype.shape[0]
        atom37 = np.asarray(self.atom37, dtype=np.float64).reshape(L, rc.NUM_ATOMS, 3)
        mask = np.asarray(self.atom_mask, dtype=bool).reshape(L, rc.NUM_ATOMS)
        b = (np.full(L, DEFAULT_B_FACTOR) if self.b_factor is None
             else np.asarray(self.b_factor, dtype=np.float64).reshape(L))
        ri = (np.arange(1, L + 1) if self.residue_index is None
              else np.asarray(self.residue_index, dtype=np.int64).reshape(L))
        ch = (np.array(["A"] * L, dtype="<U1") if self.chain_ids is None
              else np.asarray(self.chain_ids, dtype="<U1").reshape(L))
        if L and (aatype.min() < 0 or aatype.max() >= rc.NUM_RESTYPES):
            raise UnknownResidue("aatype out of range")
        if L and not mask[:, rc.CA_INDEX].all():
            raise MissingCA(f"residue {int(np.argmin(mask[:, rc.CA_INDEX]))} lacks CA")
        atom37 = np.where(mask[..., None], atom37, 0.0)
        for name, value in (("aatype", aatype), ("atom37", atom37), ("atom_mask", mask),
                            ("b_factor", b), ("residue_index", ri), ("chain_ids", ch)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def length(self):
        return int(self.aatype.shape[0])

    def __len__(self):
        return self.length

    @property
    def ca(self):
        return self.atom37[:, rc.CA_INDEX]

    @property
    def sequence(self):
        return "".join(rc.RESTYPES[a] for a in self.aatype)

    def is_complete(self):
        """True when every residue carries its full canonical atom set."""
        return bool(np.array_equal(self.atom_mask, rc.RESTYPE_ATOM37_MASK[self.aatype]))

    def check_invariants(self, complete=True):
        """Raise ValueError on any violated structural invariant."""
        canon = rc.RESTYPE_ATOM37_MASK[self.aatype]
        if complete and not np.array_equal(self.atom_mask, canon):
            raise ValueError("atom mask differs from canonical mask of the sequence")
        if (self.atom_mask & ~canon).any():
            raise ValueError("atom present that the residue type does not have")
        if not np.all(self.atom37[~self.atom_mask] == 0.0):
            raise ValueError("masked coordinates are not zero")
        if not np.isfinite(self.atom37).all():
            raise ValueError("non-finite coordinates")
        if self.length > 1:
            same_chain = self.chain_ids[1:] == self.chain_ids[:-1]
            d = np.linalg.norm(np.diff(self.ca, axis=0), axis=-1)[same_chain]
            if not (np.isfinite(d).all() and (d > 0).all()):
                raise ValueError("consecutive CA distance not positive")
        return True

    def replace(self, **kw):
        fields = dict(aatype=self.aatype, atom37=self.atom37, atom_mask=self.atom_mask,
                      b_factor=self.b_factor, residue_index=self.residue_index,
                      chain_ids=self.chain_ids, name=self.name)
        fields.update(kw)
        return ProteinStructure(**fields)

    def select(self, idx):
        idx = np.asarray(idx)
        return self.replace(aatype=self.aatype[idx], atom37=self.atom37[idx],
                            atom_mask=self.atom_mask[idx], b_factor=self.b_factor[idx],
                            residue_index=self.residue_index[idx],
                            chain_ids=self.chain_ids[idx])

    def translated(self, shift):
        return self.replace(atom37=self.atom37 + np.asarray(shift, dtype=np.float64))

    def centered(self):
        """Copy translated so the CA centroid sits at the origin."""
        if self.length == 0:
            return self
        return self.translated(-self.ca.mean(axis=0))

    def equals(self, other, atol=1e-3):
        return (
            self.length == other.length
            and np.array_equal(self.aatype, other.aatype)
            and np.array_equal(self.atom_mask, other.atom_mask)
            and np.allclose(self.atom37, other.atom37, atol=atol, rtol=0)
            and np.allclose(self.b_factor, other.b_factor, atol=5e-3, rtol=0)
            and np.array_equal(self.residue_index, other.residue_index)
            and np.array_equal(self.chain_ids, other.chain_ids)
        )


def from_coordinates(aatype, atom37, mask=None, **kw):
    """Structure whose mask is the canonical mask of ``aatype``."""
    aatype = np.asarray(aatype, dtype=np.int64)
    if mask is None:
        mask = rc.RESTYPE_ATOM37_MASK[aatype]
    return ProteinStructure(aatype=aatype, atom37=atom37, atom_mask=mask, **kw)


# ---------------------------------------------------------------------------
# PDB fixed-column records


def _field(line, lo, hi):
    return line[lo:hi] if len(line) >= lo else ""


def parse_pdb(text, all_chains=False, name=""):
    """Parse ATOM records into a ProteinStructure.

    Only the first model is read. By default only the first chain is kept;
    ``all_chains=True`` keeps every chain (used for motif references).
    Hydrogens, HETATM records and non-Atom37 atom names are ignored.
    """
    residues = {}
    order = []
    first_chain = None
    for lineno, line in enumerate(text.splitlines(), 1):
        rec = line[:6]
        if rec.startswith("ENDMDL"):
            break
        if not rec.startswith("ATOM  ") and rec != "ATOM":
            continue
        try:
            atom_name = line[12:16].strip()
            altloc = _field(line, 16, 17)
            resname = line[17:20].strip()
            chain = _field(line, 21, 22).strip() or "A"
            resseq = int(line[22:26])
            icode = _field(line, 26, 27).strip()
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
            bstr = _field(line, 60, 66).strip()
            bfac = float(bstr) if bstr else DEFAULT_B_FACTOR
            element = _field(line, 76, 78).strip()
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        if first_chain is None:
            first_chain = chain
        if not all_chains and chain != first_chain:
            continue
        if altloc not in ("", " ", "A", "1"):
            continue
        if element == "H" or element == "D" or (not element and atom_name.startswith("H")):
            continue
        if resname not in rc.THREE_TO_INDEX:
            raise UnknownResidue(f"line {lineno}: residue {resname!r}")
        key = (chain, resseq, icode)
        if key not in residues:
            residues[key] = {"resname": resname, "atoms": {}, "b": None}
            order.append(key)
        res = residues[key]
        if res["resname"] != resname:
            raise MalformedRecord(f"line {lineno}: residue {key} changes name")
        if atom_name in rc.ATOM_INDEX and atom_name not in res["atoms"]:
            res["atoms"][atom_name] = xyz
            if atom_name == "CA":
                res["b"] = bfac

    L = len(order)
    aatype = np.zeros(L, dtype=np.int64)
    atom37 = np.zeros((L, rc.NUM_ATOMS, 3))
    mask = np.zeros((L, rc.NUM_ATOMS), dtype=bool)
    bf = np.full(L, DEFAULT_B_FACTOR)
    resi = np.zeros(L, dtype=np.int64)
    chains = []
    for i, key in enumerate(order):
        res = residues[key]
        aatype[i] = rc.THREE_TO_INDEX[res["resname"]]
        if "CA" not in res["atoms"]:
            raise MissingCA(f"residue {key[0]}{key[1]}{key[2]} has no CA")
        canon = rc.RESTYPE_ATOM37_MASK[aatype[i]]
        for atom_name, xyz in res["atoms"].items():
            j = rc.ATOM_INDEX[atom_name]
            if canon[j]:
                atom37[i, j] = xyz
                mask[i, j] = True
        bf[i] = res["b"]
        resi[i] = key[1]
        chains.append(key[0])
    return ProteinStructure(aatype=aatype, atom37=atom37, atom_mask=mask, b_factor=bf,
                            residue_index=resi, chain_ids=np.array(chains, dtype="<U1"),
                            name=name)


def _format_atom_name(name):
    return name if len(name) == 4 else " " + name.ljust(3)


def write_pdb(p, remark=None):
    """Fixed-column PDB text with one ATOM record per present atom."""
    lines = []
    if remark:
        lines.append(f"REMARK   1 {remark}"[:80])
    serial = 1
    prev_chain = None
    for i in range(p.length):
        chain = str(p.chain_ids[i])
        if prev_chain is not None and chain != prev_chain:
            lines.append(f"TER   {serial:5d}")
            serial += 1
        prev_chain = chain
        resname = rc.RESTYPES_3[p.aatype[i]]
        for j in np.flatnonzero(p.atom_mask[i]):
            name = rc.ATOM37[j]
            x, y, z = p.atom37[i, j]
            lines.append(
                f"ATOM  {serial:5d} {_format_atom_name(name)} {resname:>3s} {chain}"
                f"{int(p.residue_index[i]):4d}    {x:8.3f}{y:8.3f}{z:8.3f}"
                f"{1.0:6.2f}{float(p.b_factor[i]):6.2f}          {rc.element_of(name):>2s}"
            )
            serial += 1
    if p.length:
        lines.append(f"TER   {serial:5d}")
    lines.append("END")
    return "\n".join(lines) + "\n"


def read_pdb_file(path, all_chains=False):
    path = Path(path)
    return parse_pdb(path.read_text(), all_chains=all_chains, name=path.stem)


def write_pdb_file(p, path, remark=None):
    path = Path(path)
    path.write_text(write_pdb(p, remark=remark))
    return path


def load_pdb_dir(directory):
    """Parse every ``*.pdb`` file in a directory, sorted by name."""
    return [read_pdb_file(f) for f in sorted(Path(directory).glob("*.pdb"))]


# ---------------------------------------------------------------------------
# ideal-geometry construction

HELIX_PHI = -57.0
HELIX_PSI = -47.0
STAGGERED = (-60.0, 60.0, 180.0)
PROLINE_PUCKERS = ((30.0, -35.0), (-30.0, 40.0))


def build_backbone(phi, psi, omega=None):
    """N, CA, C, O coordinates [L, 4, 3] from torsions in degrees."""
    phi = np.radians(np.asarray(phi, dtype=np.float64))
    psi = np.radians(np.asarray(psi, dtype=np.float64))
    L = phi.shape[0]
    omega = np.full(L, np.pi) if omega is None else np.radians(np.asarray(omega, float))
    n = np.zeros((L, 3))
    ca = np.zeros((L, 3))
    c = np.zeros((L, 3))
    n[0] = [0.0, 0.0, 0.0]
    ca[0] = [rc.BOND_N_CA, 0.0, 0.0]
    ang = np.radians(rc.ANGLE_N_CA_C)
    c[0] = ca[0] + rc.BOND_CA_C * np.array([-np.cos(ang), np.sin(ang), 0.0])
    for i in range(1, L):
        n[i] = place_atom(n[i - 1], ca[i - 1], c[i - 1], rc.BOND_C_N,
                          np.radians(rc.ANGLE_CA_C_N), psi[i - 1])
        ca[i] = place_atom(ca[i - 1], c[i - 1], n[i], rc.BOND_N_CA,
                           np.radians(rc.ANGLE_C_N_CA), omega[i - 1])
        c[i] = place_atom(c[i - 1], n[i], ca[i], rc.BOND_CA_C,
                          np.radians(rc.ANGLE_N_CA_C), phi[i])
    o = np.zeros((L, 3))
    for i in range(L):
        o[i] = place_atom(n[i], ca[i], c[i], rc.BOND_C_O, np.radians(rc.ANGLE_CA_C_O),
                          psi[i] + np.pi)
    return np.stack([n, ca, c, o], axis=1)


def place_sidechain(resname, n, ca, c, chis_deg):
    """Dict of side-chain atom coordinates (CB onwards) for given chi values."""
    atoms = {"N": n, "CA": ca, "C": c}
    if resname == "GLY":
        return {}
    atoms["CB"] = place_atom(c, n, ca, rc.BOND_CA_CB, np.radians(rc.ANGLE_N_CA_CB),
                             np.radians(rc.DIHEDRAL_C_N_CA_CB))
    for atom, refs, bond, angle, tors in rc.SIDECHAIN_BUILD[resname]:
        if isinstance(tors, tuple):
            _, k, offset = tors
            tors = chis_deg[k] + offset
        a, b, cc = (atoms[r] for r in refs)
        atoms[atom] = place_atom(a, b, cc, bond, np.radians(angle), np.radians(tors))
    return {k: v for k, v in atoms.items() if k not in ("N", "CA", "C")}


def _assemble(aatype, bb, chis_deg):
    atom37 = np.zeros((len(aatype), rc.NUM_ATOMS, 3))
    for i, a in enumerate(aatype):
        atom37[i] = _residue_row(rc.RESTYPES_3[a], bb[i], chis_deg[i])
    return atom37


def _residue_row(resname, bb_i, chis_deg):
    row = np.zeros((rc.NUM_ATOMS, 3))
    for k, name in enumerate(rc.BACKBONE):
        row[rc.ATOM_INDEX[name]] = bb_i[k]
    for name, xyz in place_sidechain(resname, bb_i[0], bb_i[1], bb_i[2], chis_deg).items():
        row[rc.ATOM_INDEX[name]] = xyz
    return row


def build_protein(aatype, chis_deg, phi=None, psi=None):
    """Assemble a full-atom structure from sequence, chi angles and backbone torsions.

    ``chis_deg`` is [L, 4] (unused entries ignored). Default backbone is an
    ideal alpha helix. The result is centered on its CA centroid.
    """
    aatype = np.asarray(aatype, dtype=np.int64)
    L = aatype.shape[0]
    phi = np.full(L, HELIX_PHI) if phi is None else phi
    psi = np.full(L, HELIX_PSI) if psi is None else psi
    bb = build_backbone(phi, psi)
    bb -= bb[:, 1].mean(axis=0)
    return from_coordinates(aatype, _assemble(aatype, bb, np.asarray(chis_deg, float)))


# Proline's ring carbons collide with the carbonyls of residues i-3 and i-4
# inside a helix, so toy sequences only allow it in the first turn.
PROLINE_MAX_POSITION = 2


def _rotamer_grid(resname):
    if resname == "PRO":
        return [np.array(p) for p in PROLINE_PUCKERS]
    n_chi = len(rc.CHI_ATOMS[resname])
    mesh = np.meshgrid(*([STAGGERED] * n_chi), indexing="ij")
    return [np.array(v) for v in np.stack([m.ravel() for m in mesh], -1)] if n_chi else []


def _with_noise(rng, base, chi_noise_deg):
    chis = np.zeros(rc.MAX_CHI)
    chis[:len(base)] = base + rng.normal(0.0, chi_noise_deg, len(base))
    return chis


def make_toy_protein(length, seed, chi_noise_deg=2.0, restypes=None, max_rounds=4):
    """Deterministic ideal alpha helix with a random sequence and staggered rotamers.

    Each chi starts at a random pick from {-60, 60, 180} degrees plus Gaussian
    noise (proline takes one of two ring puckers). Residues whose side chains
    still clash are then revisited: their rotamer combinations are tried in
    random order and the first clash-free one is kept, or the least clashing
    one when none is free.
    """
    from .sterics import Topology

    if not 4 <= length <= 64:
        raise LengthOutOfRange(f"length {length} not in [4, 64]")
    rng = np.random.default_rng(seed)
    pool = np.arange(rc.NUM_RESTYPES) if restypes is None else np.asarray(restypes, dtype=np.int64)
    pro = rc.THREE_TO_INDEX["PRO"]
    non_pro = pool[pool != pro]
    aatype = rng.choice(pool, size=length)
    for i in range(PROLINE_MAX_POSITION + 1, length):
        if aatype[i] == pro and len(non_pro):
            aatype[i] = rng.choice(non_pro)
    names = [rc.RESTYPES_3[a] for a in aatype]
    grids = [_rotamer_grid(r) for r in names]
    chis = np.stack([
        _with_noise(rng, g[rng.integers(len(g))], chi_noise_deg) if g else np.zeros(rc.MAX_CHI)
        for g in grids
    ])
    bb = build_backbone(np.full(length, HELIX_PHI), np.full(length, HELIX_PSI))
    bb -= bb[:, 1].mean(axis=0)
    atom37 = _assemble(aatype, bb, chis)
    top = Topology(from_coordinates(aatype, atom37))
    coords = top.coordinates(atom37)
    movable = np.array([n not in rc.BACKBONE and n != "CB" for n in top.names])

    def clashes_of(r):
        pairs = top.clash_pairs(coords)
        return int(np.sum((top.res_idx[pairs] == r).any(axis=1)))

    for _ in range(max_rounds):
        pairs = top.clash_pairs(coords)
        hit = pairs[movable[pairs].any(axis=1)]
        involved = sorted({int(top.res_idx[a]) for a in hit.ravel() if movable[a]})
        if not involved:
            break
        for r in involved:
            rows = top.res_idx == r
            best = (clashes_of(r), chis[r].copy())
            for k in rng.permutation(len(grids[r])):
                trial = _with_noise(rng, grids[r][k], chi_noise_deg)
                coords[rows] = _residue_row(names[r], bb[r], trial)[top.slots[rows]]
                n = clashes_of(r)
                if n < best[0]:
                    best = (n, trial)
                if n == 0:
                    break
            chis[r] = best[1]
            coords[rows] = _residue_row(names[r], bb[r], chis[r])[top.slots[rows]]
    return from_coordinates(aatype, _assemble(aatype, bb, chis), name=f"toy_{length}_{seed}")


def ca_ca_distances(p):
    return np.linalg.norm(np.diff(p.ca, axis=0), axis=-1)
