"""Dihedrals, inter-residue orientations, distances and rigid superposition."""

import numpy as np

from . import residues as rc
from .errors import DegenerateGeometry, MissingAtom, SizeMismatch, TooFewPoints

_EPS = 1e-12


def wrap_angle(x):
    """Wrap radians into (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    out = np.remainder(x + np.pi, 2 * np.pi) - np.pi
    return np.where(out <= -np.pi, out + 2 * np.pi, out)


def dihedral_array(p1, p2, p3, p4):
    """Vectorized signed torsion about p2-p3 over the trailing axis.

    Degenerate quadruples give NaN rather than raising.
    """
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b1 = p2 - p1
    b2 = p3 - p2
    b3 = p4 - p3
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    b2n = np.linalg.norm(b2, axis=-1)
    x = np.sum(n1 * n2, axis=-1)
    y = b2n * np.sum(b1 * n2, axis=-1)
    bad = (
        (np.linalg.norm(n1, axis=-1) < 1e-9)
        | (np.linalg.norm(n2, axis=-1) < 1e-9)
        | (b2n < _EPS)
    )
    ang = np.arctan2(y, x)
    ang = np.where(ang <= -np.pi, np.pi, ang)
    return np.where(bad, np.nan, ang)


def dihedral(p1, p2, p3, p4):
    """Signed torsion angle in (-pi, pi] about the p2-p3 axis."""
    out = dihedral_array(p1, p2, p3, p4)
    if np.isnan(out):
        raise DegenerateGeometry("collinear or coincident points in dihedral")
    return float(out)


def planar_angle(p1, p2, p3):
    """Angle at p2 in [0, pi]; vectorized over the trailing axis."""
    a = np.asarray(p1, dtype=np.float64) - p2
    b = np.asarray(p3, dtype=np.float64) - p2
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    cos = np.sum(a * b, axis=-1) / np.maximum(na * nb, _EPS)
    ang = np.arccos(np.clip(cos, -1.0, 1.0))
    return np.where((na < _EPS) | (nb < _EPS), np.nan, ang)


def _cross(u, v):
    return np.array([u[1] * v[2] - u[2] * v[1],
                     u[2] * v[0] - u[0] * v[2],
                     u[0] * v[1] - u[1] * v[0]])


def place_atom(a, b, c, bond, angle, torsion):
    """Place d so |cd| = bond, angle(b, c, d) = angle and dihedral(a, b, c, d) = torsion.

    Angles in radians. Natural extension reference frame construction.
    """
    bc = c - b
    bc = bc / np.sqrt(bc @ bc)
    n = _cross(b - a, bc)
    n = n / np.sqrt(n @ n)
    m = _cross(n, bc)
    sa = bond * np.sin(angle)
    return c - bond * np.cos(angle) * bc + sa * np.cos(torsion) * m + sa * np.sin(torsion) * n


def virtual_cb(n, ca, c):
    """Ideal-geometry CB from backbone N, CA, C (vectorized)."""
    b = ca - n
    cc = c - ca
    a = np.cross(b, cc)
    return -0.58273431 * a + 0.56802827 * b - 0.54067466 * cc + ca


def _require(p, i, names):
    for name in names:
        if not p.atom_mask[i, rc.ATOM_INDEX[name]]:
            raise MissingAtom(f"residue {i} lacks atom {name}")


def chi_angles(p, i):
    """List of chi dihedrals (radians) for residue ``i`` of a structure."""
    resname = rc.RESTYPES_3[p.aatype[i]]
    out = []
    for quad in rc.CHI_ATOMS[resname]:
        _require(p, i, quad)
        pts = [p.atom37[i, rc.ATOM_INDEX[a]] for a in quad]
        out.append(dihedral(*pts))
    return out


def chi_angle_array(p):
    """[L, 4] chi angles with NaN where undefined or atoms are missing."""
    idx = rc.CHI_ATOM_INDICES[p.aatype]  # [L, 4, 4]
    valid = rc.CHI_MASK[p.aatype].copy()
    safe = np.where(idx < 0, 0, idx)
    rows = np.arange(p.length)[:, None, None]
    pts = p.atom37[rows, safe]  # [L, 4, 4, 3]
    present = p.atom_mask[rows, safe].all(axis=-1)
    valid &= present
    ang = dihedral_array(pts[..., 0, :], pts[..., 1, :], pts[..., 2, :], pts[..., 3, :])
    return np.where(valid, ang, np.nan)


def backbone_torsions(p):
    """[L, 3] array of (phi, psi, omega); NaN marks undefined entries.

    phi_i = C_{i-1}-N_i-CA_i-C_i, psi_i = N_i-CA_i-C_i-N_{i+1},
    omega_i = CA_i-C_i-N_{i+1}-CA_{i+1}.
    """
    L = p.length
    out = np.full((L, 3), np.nan)
    if L == 0:
        return out
    for name in ("N", "CA", "C"):
        missing = ~p.atom_mask[:, rc.ATOM_INDEX[name]]
        if missing.any():
            raise MissingAtom(f"residue {int(np.argmax(missing))} lacks atom {name}")
    n = p.atom37[:, rc.ATOM_INDEX["N"]]
    ca = p.atom37[:, rc.ATOM_INDEX["CA"]]
    c = p.atom37[:, rc.ATOM_INDEX["C"]]
    if L > 1:
        out[1:, 0] = dihedral_array(c[:-1], n[1:], ca[1:], c[1:])
        out[:-1, 1] = dihedral_array(n[:-1], ca[:-1], c[:-1], n[1:])
        out[:-1, 2] = dihedral_array(ca[:-1], c[:-1], n[1:], ca[1:])
    return out


def kabsch(A, B):
    """Rotation R and translation t minimizing ||(A R^T + t) - B||.

    Returns (R, t) such that ``A @ R.T + t`` is the optimal proper-rotation
    superposition of A onto B.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    ca = A.mean(axis=0)
    cb = B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, S, Vt = np.linalg.svd(H)
    # reflect the smallest singular direction when the optimum is improper
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = cb - ca @ R.T
    return R, t


def kabsch_rmsd(A, B, superpose=True):
    """RMSD between point sets, optionally after optimal rigid superposition."""
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if A.shape != B.shape:
        raise SizeMismatch(f"{A.shape} vs {B.shape}")
    n = A.shape[0]
    if n < 1 or (superpose and n < 3):
        raise TooFewPoints(f"{n} points")
    if superpose:
        R, t = kabsch(A, B)
        A = A @ R.T + t
    return float(np.sqrt(np.mean(np.sum((A - B) ** 2, axis=-1))))


def pairwise_distances(x):
    """Euclidean distance matrix over the second-to-last axis."""
    x = np.asarray(x, dtype=np.float64)
    diff = x[..., :, None, :] - x[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def pairwise_ca_distances(p):
    return pairwise_distances(p.ca)


def cb_coordinates(p):
    """CB positions, virtual for residues without a CB atom."""
    n = p.atom37[:, rc.ATOM_INDEX["N"]]
    ca = p.atom37[:, rc.ATOM_INDEX["CA"]]
    c = p.atom37[:, rc.ATOM_INDEX["C"]]
    cb = p.atom37[:, rc.ATOM_INDEX["CB"]]
    has_cb = p.atom_mask[:, rc.ATOM_INDEX["CB"]]
    return np.where(has_cb[:, None], cb, virtual_cb(n, ca, c))


def orientation_matrices(p):
    """[L, L, 3] trRosetta-style (omega, theta, phi); NaN on the diagonal.

    omega_ij = dihedral(CA_i, CB_i, CB_j, CA_j)
    theta_ij = dihedral(N_i, CA_i, CB_i, CB_j)
    phi_ij   = angle(CA_i, CB_i, CB_j)
    """
    L = p.length
    n = p.atom37[:, rc.ATOM_INDEX["N"]]
    ca = p.atom37[:, rc.ATOM_INDEX["CA"]]
    cb = cb_coordinates(p)
    ca_i, ca_j = ca[:, None], ca[None, :]
    cb_i, cb_j = cb[:, None], cb[None, :]
    n_i = n[:, None]
    shape = (L, L, 3)
    omega = dihedral_array(*np.broadcast_arrays(ca_i, cb_i, cb_j, ca_j))
    theta = dihedral_array(*np.broadcast_arrays(n_i, ca_i, cb_i, cb_j))
    phi = planar_angle(*np.broadcast_arrays(ca_i, cb_i, cb_j))
    out = np.stack([omega, theta, phi], axis=-1).reshape(shape)
    out[np.arange(L), np.arange(L)] = np.nan
    return out


def relative_orientation(p, i, j):
    """(omega, theta, phi) for the ordered pair (i, j); NaNs when i == j."""
    if i == j:
        return (float("nan"),) * 3
    for k in (i, j):
        _require(p, k, ("N", "CA", "C"))
    n = p.atom37[:, rc.ATOM_INDEX["N"]]
    ca = p.atom37[:, rc.ATOM_INDEX["CA"]]
    cb = cb_coordinates(p)
    omega = dihedral(ca[i], cb[i], cb[j], ca[j])
    theta = dihedral(n[i], ca[i], cb[i], cb[j])
    phi = float(planar_angle(ca[i], cb[i], cb[j]))
    if np.isnan(phi):
        raise DegenerateGeometry("coincident CB atoms")
    return omega, theta, phi
