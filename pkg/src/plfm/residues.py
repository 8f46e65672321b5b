"""Residue chemistry tables: Atom37 layout, masks, chi definitions, tip atoms,
bond topology and ideal internal coordinates for side-chain placement.

Atom37 slot order is the conventional one (N, CA, C, CB, O, CG, ...) used by
most structure-prediction codebases. Only heavy atoms are represented; OXT
occupies the last slot but is never part of a canonical residue mask.
"""

import numpy as np

RESTYPES = "ARNDCQEGHILKMFPSTWYV"
RESTYPES_3 = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
]
NUM_RESTYPES = 20
ONE_TO_INDEX = {c: i for i, c in enumerate(RESTYPES)}
THREE_TO_INDEX = {c: i for i, c in enumerate(RESTYPES_3)}
THREE_TO_ONE = {t: o for t, o in zip(RESTYPES_3, RESTYPES)}
ONE_TO_THREE = {o: t for t, o in zip(RESTYPES_3, RESTYPES)}

ATOM37 = [
    "N", "CA", "C", "CB", "O", "CG", "CG1", "CG2", "OG", "OG1", "SG", "CD",
    "CD1", "CD2", "ND1", "ND2", "OD1", "OD2", "SD", "CE", "CE1", "CE2", "CE3",
    "NE", "NE1", "NE2", "OE1", "OE2", "CH2", "NH1", "NH2", "OH", "CZ", "CZ2",
    "CZ3", "NZ", "OXT",
]
ATOM_INDEX = {a: i for i, a in enumerate(ATOM37)}
NUM_ATOMS = 37
CA_INDEX = ATOM_INDEX["CA"]
BACKBONE = ("N", "CA", "C", "O")
# slots predicted by the decoder: everything but CA
NON_CA_INDICES = np.array([i for i in range(NUM_ATOMS) if i != CA_INDEX])

RESIDUE_ATOMS = {
    "ALA": ["N", "CA", "C", "O", "CB"],
    "ARG": ["N", "CA", "C", "O", "CB", "CG", "CD", "NE", "CZ", "NH1", "NH2"],
    "ASN": ["N", "CA", "C", "O", "CB", "CG", "OD1", "ND2"],
    "ASP": ["N", "CA", "C", "O", "CB", "CG", "OD1", "OD2"],
    "CYS": ["N", "CA", "C", "O", "CB", "SG"],
    "GLN": ["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "NE2"],
    "GLU": ["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "OE2"],
    "GLY": ["N", "CA", "C", "O"],
    "HIS": ["N", "CA", "C", "O", "CB", "CG", "ND1", "CD2", "CE1", "NE2"],
    "ILE": ["N", "CA", "C", "O", "CB", "CG1", "CG2", "CD1"],
    "LEU": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2"],
    "LYS": ["N", "CA", "C", "O", "CB", "CG", "CD", "CE", "NZ"],
    "MET": ["N", "CA", "C", "O", "CB", "CG", "SD", "CE"],
    "PHE": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"],
    "PRO": ["N", "CA", "C", "O", "CB", "CG", "CD"],
    "SER": ["N", "CA", "C", "O", "CB", "OG"],
    "THR": ["N", "CA", "C", "O", "CB", "OG1", "CG2"],
    "TRP": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "NE1", "CE2", "CE3",
            "CZ2", "CZ3", "CH2"],
    "TYR": ["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ", "OH"],
    "VAL": ["N", "CA", "C", "O", "CB", "CG1", "CG2"],
}

CHI_ATOMS = {
    "ALA": [],
    "ARG": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "NE"], ["CG", "CD", "NE", "CZ"]],
    "ASN": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "OD1"]],
    "ASP": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "OD1"]],
    "CYS": [["N", "CA", "CB", "SG"]],
    "GLN": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "OE1"]],
    "GLU": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "OE1"]],
    "GLY": [],
    "HIS": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "ND1"]],
    "ILE": [["N", "CA", "CB", "CG1"], ["CA", "CB", "CG1", "CD1"]],
    "LEU": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "LYS": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"],
            ["CB", "CG", "CD", "CE"], ["CG", "CD", "CE", "NZ"]],
    "MET": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "SD"],
            ["CB", "CG", "SD", "CE"]],
    "PHE": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "PRO": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD"]],
    "SER": [["N", "CA", "CB", "OG"]],
    "THR": [["N", "CA", "CB", "OG1"]],
    "TRP": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "TYR": [["N", "CA", "CB", "CG"], ["CA", "CB", "CG", "CD1"]],
    "VAL": [["N", "CA", "CB", "CG1"]],
}
MAX_CHI = 4

# atoms after the final rotatable bond, as used for tip-atom scaffolding
TIP_ATOMS = {
    "ALA": {"CA", "CB"},
    "ARG": {"CD", "CZ", "NE", "NH1", "NH2"},
    "ASP": {"CB", "CG", "OD1", "OD2"},
    "ASN": {"CB", "CG", "ND2", "OD1"},
    "CYS": {"CA", "CB", "SG"},
    "GLU": {"CG", "CD", "OE1", "OE2"},
    "GLN": {"CG", "CD", "NE2", "OE1"},
    "GLY": set(),
    "HIS": {"CB", "CG", "CD2", "CE1", "ND1", "NE2"},
    "ILE": {"CB", "CG1", "CG2", "CD1"},
    "LEU": {"CB", "CG", "CD1", "CD2"},
    "LYS": {"CE", "NZ"},
    "MET": {"CG", "CE", "SD"},
    "PHE": {"CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"},
    "PRO": {"CA", "CB", "CG", "CD", "N"},
    "SER": {"CA", "CB", "OG"},
    "THR": {"CA", "CB", "CG2", "OG1"},
    "TRP": {"CB", "CG", "CD1", "CD2", "CE2", "CE3", "CZ2", "CZ3", "CH2", "NE1"},
    "TYR": {"CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ", "OH"},
    "VAL": {"CB", "CG1", "CG2"},
}

_BACKBONE_BONDS = [("N", "CA"), ("CA", "C"), ("C", "O")]
_SIDECHAIN_BONDS = {
    "ALA": [],
    "ARG": [("CB", "CG"), ("CG", "CD"), ("CD", "NE"), ("NE", "CZ"), ("CZ", "NH1"),
            ("CZ", "NH2")],
    "ASN": [("CB", "CG"), ("CG", "OD1"), ("CG", "ND2")],
    "ASP": [("CB", "CG"), ("CG", "OD1"), ("CG", "OD2")],
    "CYS": [("CB", "SG")],
    "GLN": [("CB", "CG"), ("CG", "CD"), ("CD", "OE1"), ("CD", "NE2")],
    "GLU": [("CB", "CG"), ("CG", "CD"), ("CD", "OE1"), ("CD", "OE2")],
    "GLY": [],
    "HIS": [("CB", "CG"), ("CG", "ND1"), ("CG", "CD2"), ("ND1", "CE1"), ("CD2", "NE2"),
            ("CE1", "NE2")],
    "ILE": [("CB", "CG1"), ("CB", "CG2"), ("CG1", "CD1")],
    "LEU": [("CB", "CG"), ("CG", "CD1"), ("CG", "CD2")],
    "LYS": [("CB", "CG"), ("CG", "CD"), ("CD", "CE"), ("CE", "NZ")],
    "MET": [("CB", "CG"), ("CG", "SD"), ("SD", "CE")],
    "PHE": [("CB", "CG"), ("CG", "CD1"), ("CG", "CD2"), ("CD1", "CE1"), ("CD2", "CE2"),
            ("CE1", "CZ"), ("CE2", "CZ")],
    "PRO": [("CB", "CG"), ("CG", "CD"), ("CD", "N")],
    "SER": [("CB", "OG")],
    "THR": [("CB", "OG1"), ("CB", "CG2")],
    "TRP": [("CB", "CG"), ("CG", "CD1"), ("CG", "CD2"), ("CD1", "NE1"), ("NE1", "CE2"),
            ("CD2", "CE2"), ("CD2", "CE3"), ("CE2", "CZ2"), ("CE3", "CZ3"),
            ("CZ2", "CH2"), ("CZ3", "CH2")],
    "TYR": [("CB", "CG"), ("CG", "CD1"), ("CG", "CD2"), ("CD1", "CE1"), ("CD2", "CE2"),
            ("CE1", "CZ"), ("CE2", "CZ"), ("CZ", "OH")],
    "VAL": [("CB", "CG1"), ("CB", "CG2")],
}


def residue_bonds(resname):
    """Intra-residue covalent bonds as pairs of atom names."""
    bonds = list(_BACKBONE_BONDS)
    if resname != "GLY":
        bonds.append(("CA", "CB"))
    return bonds + _SIDECHAIN_BONDS[resname]


def rotatable_bonds(resname):
    """Bonds whose torsion varies: phi, psi and every chi axis."""
    rot = {frozenset(("N", "CA")), frozenset(("CA", "C"))}
    for quad in CHI_ATOMS[resname]:
        rot.add(frozenset(quad[1:3]))
    return rot


VDW_RADII = {"C": 1.70, "N": 1.55, "O": 1.52, "S": 1.80}


def element_of(atom_name):
    return atom_name[0]


# Ideal side-chain internal coordinates. Each entry places ``atom`` from three
# already-placed reference atoms (a, b, c): bond length c-atom, angle b-c-atom
# (degrees) and dihedral a-b-c-atom given either as a fixed value or as
# ("chi", k, offset) meaning chi_k + offset.
SIDECHAIN_BUILD = {
    "ALA": [],
    "GLY": [],
    "ARG": [
        ("CG", ("N", "CA", "CB"), 1.52, 113.8, ("chi", 0, 0.0)),
        ("CD", ("CA", "CB", "CG"), 1.52, 111.8, ("chi", 1, 0.0)),
        ("NE", ("CB", "CG", "CD"), 1.46, 111.7, ("chi", 2, 0.0)),
        ("CZ", ("CG", "CD", "NE"), 1.33, 124.8, ("chi", 3, 0.0)),
        ("NH1", ("CD", "NE", "CZ"), 1.33, 120.0, 0.0),
        ("NH2", ("CD", "NE", "CZ"), 1.33, 120.0, 180.0),
    ],
    "ASN": [
        ("CG", ("N", "CA", "CB"), 1.52, 112.6, ("chi", 0, 0.0)),
        ("OD1", ("CA", "CB", "CG"), 1.23, 120.8, ("chi", 1, 0.0)),
        ("ND2", ("CA", "CB", "CG"), 1.33, 116.4, ("chi", 1, 180.0)),
    ],
    "ASP": [
        ("CG", ("N", "CA", "CB"), 1.52, 112.6, ("chi", 0, 0.0)),
        ("OD1", ("CA", "CB", "CG"), 1.25, 118.4, ("chi", 1, 0.0)),
        ("OD2", ("CA", "CB", "CG"), 1.25, 118.4, ("chi", 1, 180.0)),
    ],
    "CYS": [
        ("SG", ("N", "CA", "CB"), 1.81, 114.0, ("chi", 0, 0.0)),
    ],
    "GLN": [
        ("CG", ("N", "CA", "CB"), 1.52, 113.8, ("chi", 0, 0.0)),
        ("CD", ("CA", "CB", "CG"), 1.52, 112.6, ("chi", 1, 0.0)),
        ("OE1", ("CB", "CG", "CD"), 1.23, 120.8, ("chi", 2, 0.0)),
        ("NE2", ("CB", "CG", "CD"), 1.33, 116.4, ("chi", 2, 180.0)),
    ],
    "GLU": [
        ("CG", ("N", "CA", "CB"), 1.52, 113.8, ("chi", 0, 0.0)),
        ("CD", ("CA", "CB", "CG"), 1.52, 112.6, ("chi", 1, 0.0)),
        ("OE1", ("CB", "CG", "CD"), 1.25, 118.4, ("chi", 2, 0.0)),
        ("OE2", ("CB", "CG", "CD"), 1.25, 118.4, ("chi", 2, 180.0)),
    ],
    "HIS": [
        ("CG", ("N", "CA", "CB"), 1.50, 113.7, ("chi", 0, 0.0)),
        ("ND1", ("CA", "CB", "CG"), 1.38, 122.7, ("chi", 1, 0.0)),
        ("CD2", ("CA", "CB", "CG"), 1.36, 131.0, ("chi", 1, 180.0)),
        ("CE1", ("CB", "CG", "ND1"), 1.32, 109.0, 180.0),
        ("NE2", ("CB", "CG", "CD2"), 1.37, 107.0, 180.0),
    ],
    "ILE": [
        ("CG1", ("N", "CA", "CB"), 1.53, 110.4, ("chi", 0, 0.0)),
        ("CG2", ("N", "CA", "CB"), 1.53, 110.5, ("chi", 0, -120.0)),
        ("CD1", ("CA", "CB", "CG1"), 1.52, 114.0, ("chi", 1, 0.0)),
    ],
    "LEU": [
        ("CG", ("N", "CA", "CB"), 1.53, 116.1, ("chi", 0, 0.0)),
        ("CD1", ("CA", "CB", "CG"), 1.52, 110.3, ("chi", 1, 0.0)),
        ("CD2", ("CA", "CB", "CG"), 1.52, 110.6, ("chi", 1, -120.0)),
    ],
    "LYS": [
        ("CG", ("N", "CA", "CB"), 1.52, 113.8, ("chi", 0, 0.0)),
        ("CD", ("CA", "CB", "CG"), 1.52, 111.8, ("chi", 1, 0.0)),
        ("CE", ("CB", "CG", "CD"), 1.52, 111.8, ("chi", 2, 0.0)),
        ("NZ", ("CG", "CD", "CE"), 1.49, 111.9, ("chi", 3, 0.0)),
    ],
    "MET": [
        ("CG", ("N", "CA", "CB"), 1.52, 113.7, ("chi", 0, 0.0)),
        ("SD", ("CA", "CB", "CG"), 1.81, 112.7, ("chi", 1, 0.0)),
        ("CE", ("CB", "CG", "SD"), 1.79, 100.8, ("chi", 2, 0.0)),
    ],
    "PHE": [
        ("CG", ("N", "CA", "CB"), 1.50, 113.8, ("chi", 0, 0.0)),
        ("CD1", ("CA", "CB", "CG"), 1.39, 120.7, ("chi", 1, 0.0)),
        ("CD2", ("CA", "CB", "CG"), 1.39, 120.7, ("chi", 1, 180.0)),
        ("CE1", ("CB", "CG", "CD1"), 1.39, 120.7, 180.0),
        ("CE2", ("CB", "CG", "CD2"), 1.39, 120.7, 180.0),
        ("CZ", ("CG", "CD1", "CE1"), 1.39, 120.0, 0.0),
    ],
    "PRO": [
        ("CG", ("N", "CA", "CB"), 1.50, 104.5, ("chi", 0, 0.0)),
        ("CD", ("CA", "CB", "CG"), 1.50, 105.5, ("chi", 1, 0.0)),
    ],
    "SER": [
        ("OG", ("N", "CA", "CB"), 1.42, 111.1, ("chi", 0, 0.0)),
    ],
    "THR": [
        ("OG1", ("N", "CA", "CB"), 1.43, 109.2, ("chi", 0, 0.0)),
        ("CG2", ("N", "CA", "CB"), 1.52, 111.1, ("chi", 0, -120.0)),
    ],
    "TRP": [
        ("CG", ("N", "CA", "CB"), 1.50, 114.0, ("chi", 0, 0.0)),
        ("CD1", ("CA", "CB", "CG"), 1.37, 127.0, ("chi", 1, 0.0)),
        ("CD2", ("CA", "CB", "CG"), 1.43, 126.6, ("chi", 1, 180.0)),
        ("NE1", ("CB", "CG", "CD1"), 1.38, 110.0, 180.0),
        ("CE2", ("CB", "CG", "CD2"), 1.41, 107.3, 180.0),
        ("CE3", ("CB", "CG", "CD2"), 1.40, 133.9, 0.0),
        ("CZ2", ("CG", "CD2", "CE2"), 1.40, 122.3, 180.0),
        ("CZ3", ("CG", "CD2", "CE3"), 1.39, 118.8, 180.0),
        ("CH2", ("CD2", "CE2", "CZ2"), 1.37, 117.5, 0.0),
    ],
    "TYR": [
        ("CG", ("N", "CA", "CB"), 1.51, 113.8, ("chi", 0, 0.0)),
        ("CD1", ("CA", "CB", "CG"), 1.39, 120.8, ("chi", 1, 0.0)),
        ("CD2", ("CA", "CB", "CG"), 1.39, 120.8, ("chi", 1, 180.0)),
        ("CE1", ("CB", "CG", "CD1"), 1.39, 121.2, 180.0),
        ("CE2", ("CB", "CG", "CD2"), 1.39, 121.2, 180.0),
        ("CZ", ("CG", "CD1", "CE1"), 1.38, 119.6, 0.0),
        ("OH", ("CD1", "CE1", "CZ"), 1.36, 119.9, 180.0),
    ],
    "VAL": [
        ("CG1", ("N", "CA", "CB"), 1.53, 110.7, ("chi", 0, 0.0)),
        ("CG2", ("N", "CA", "CB"), 1.53, 110.4, ("chi", 0, 120.0)),
    ],
}

# ideal backbone geometry (Engh & Huber style values)
BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
BOND_C_O = 1.231
BOND_CA_CB = 1.530
ANGLE_N_CA_C = 111.0
ANGLE_CA_C_N = 116.2
ANGLE_C_N_CA = 121.7
ANGLE_CA_C_O = 120.5
ANGLE_N_CA_CB = 110.5
# dihedral C-N-CA-CB for L-amino acids
DIHEDRAL_C_N_CA_CB = -122.6


def restype_index(code):
    """Integer index for a one- or three-letter residue code."""
    if len(code) == 1 and code in ONE_TO_INDEX:
        return ONE_TO_INDEX[code]
    if code in THREE_TO_INDEX:
        return THREE_TO_INDEX[code]
    raise KeyError(code)


def atom37_mask(restype):
    """Canonical boolean Atom37 mask for a residue (index, 1- or 3-letter code)."""
    resname = restype if isinstance(restype, str) and len(restype) == 3 else \
        RESTYPES_3[restype if isinstance(restype, (int, np.integer)) else restype_index(restype)]
    mask = np.zeros(NUM_ATOMS, dtype=bool)
    for name in RESIDUE_ATOMS[resname]:
        mask[ATOM_INDEX[name]] = True
    return mask


def tip_atom_set(restype):
    resname = restype if isinstance(restype, str) and len(restype) == 3 else \
        RESTYPES_3[restype if isinstance(restype, (int, np.integer)) else restype_index(restype)]
    return set(TIP_ATOMS[resname])


# [20, 37] canonical masks, indexed by restype
RESTYPE_ATOM37_MASK = np.stack([atom37_mask(r) for r in RESTYPES_3])
# [20, 37] tip-atom masks
RESTYPE_TIP_MASK = np.stack([
    np.array([a in TIP_ATOMS[r] for a in ATOM37]) for r in RESTYPES_3
])
# [20, 4, 4] chi atom slots (-1 where absent) and [20, 4] chi validity
CHI_ATOM_INDICES = np.full((NUM_RESTYPES, MAX_CHI, 4), -1, dtype=np.int64)
CHI_MASK = np.zeros((NUM_RESTYPES, MAX_CHI), dtype=bool)
for _r, _name in enumerate(RESTYPES_3):
    for _k, _quad in enumerate(CHI_ATOMS[_name]):
        CHI_ATOM_INDICES[_r, _k] = [ATOM_INDEX[a] for a in _quad]
        CHI_MASK[_r, _k] = True
