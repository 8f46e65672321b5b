"""Steric overlap detection on heavy atoms.

A pair clashes when its distance is below the sum of van der Waals radii
minus 0.4 A. Pairs are exempt when they are at most three bonds apart in the
covalent graph (which includes the peptide bond between sequential residues).
Gauche 1-4 carbon pairs sit near 2.95 A in ideal geometry, right at the
3.0 A C-C cutoff, so counting them would flag well-formed structures.
"""

from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from . import residues as rc

CLASH_OVERLAP = 0.4
_MAX_CUTOFF = 2 * max(rc.VDW_RADII.values()) - CLASH_OVERLAP


@lru_cache(maxsize=None)
def _residue_graph(resname):
    atoms = rc.RESIDUE_ATOMS[resname]
    adj = {a: set() for a in atoms}
    for a, b in rc.residue_bonds(resname):
        adj[a].add(b)
        adj[b].add(a)
    return adj


def _pair_codes(pairs, n):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


class Topology:
    """Flattened atom table and bonded-pair exclusions of one structure.

    Built once per (sequence, mask, numbering); coordinates can then be
    swapped freely, which is what the rotamer search in the toy builder does.
    """

    def __init__(self, p):
        res_idx, slots = np.nonzero(p.atom_mask)
        self.res_idx = res_idx.astype(np.int64)
        self.slots = slots.astype(np.int64)
        self.names = [rc.ATOM37[j] for j in self.slots]
        self.radii = np.array([rc.VDW_RADII[rc.element_of(n)] for n in self.names])
        self.n_atoms = len(self.names)
        adj = self._graph(p)
        self.excluded = np.unique(_pair_codes(self._near_pairs(adj), max(self.n_atoms, 1)))

    def _graph(self, p):
        key = {(int(r), n): k for k, (r, n) in enumerate(zip(self.res_idx, self.names))}
        adj = [set() for _ in self.names]

        def link(a, b):
            if a in key and b in key:
                adj[key[a]].add(key[b])
                adj[key[b]].add(key[a])

        for i in range(p.length):
            for a, nbrs in _residue_graph(rc.RESTYPES_3[p.aatype[i]]).items():
                for b in nbrs:
                    link((i, a), (i, b))
        for i in range(p.length - 1):
            if (p.chain_ids[i] == p.chain_ids[i + 1]
                    and p.residue_index[i + 1] - p.residue_index[i] == 1):
                link((i, "C"), (i + 1, "N"))
        return adj

    @staticmethod
    def _near_pairs(adj):
        out = []
        for a in range(len(adj)):
            seen = {a}
            frontier = {a}
            for _ in range(3):
                frontier = {c for b in frontier for c in adj[b]} - seen
                seen |= frontier
            out.extend((a, b) for b in seen if b > a)
        return out if out else np.zeros((0, 2), dtype=np.int64)

    def coordinates(self, atom37):
        return np.asarray(atom37, dtype=np.float64)[self.res_idx, self.slots]

    def clash_pairs(self, coords, overlap=CLASH_OVERLAP):
        """Index pairs [k, 2] into the flattened table that clash."""
        pairs = _raw_clashes(coords, self.radii, overlap)
        if len(pairs) and len(self.excluded):
            pairs = pairs[~np.isin(_pair_codes(pairs, self.n_atoms), self.excluded)]
        return pairs


def _raw_clashes(coords, radii, overlap):
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if len(coords) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(coords).query_pairs(r=_MAX_CUTOFF, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    d = np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=-1)
    return pairs[d < radii[pairs[:, 0]] + radii[pairs[:, 1]] - overlap].reshape(-1, 2)


def count_clashes(coords, elements, excluded=(), overlap=CLASH_OVERLAP):
    """Unordered atom pairs closer than r_a + r_b - overlap, minus ``excluded``.

    ``elements`` holds one element letter per atom; ``excluded`` is an
    iterable of index pairs to ignore. Returns index pairs [k, 2].
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    radii = np.array([rc.VDW_RADII[e] for e in elements], dtype=np.float64)
    pairs = _raw_clashes(coords, radii, overlap)
    excluded = list(excluded)
    if len(pairs) and excluded:
        pairs = pairs[~np.isin(_pair_codes(pairs, len(coords)), _pair_codes(excluded, len(coords)))]
    return pairs


def structure_clashes(p):
    """Clashing atom pairs as (residue_a, atom_a, residue_b, atom_b), plus the atom count."""
    top = Topology(p)
    pairs = top.clash_pairs(top.coordinates(p.atom37))
    return ([(int(top.res_idx[a]), top.names[a], int(top.res_idx[b]), top.names[b])
             for a, b in pairs], top.n_atoms)
