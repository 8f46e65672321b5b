import numpy as np
import pytest
import torch

from plfm.protein import make_toy_protein

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy16():
    return make_toy_protein(16, 7)


@pytest.fixture(scope="session")
def toy_corpus():
    """100 toy helices of length 16 (seeds 0..99)."""
    return [make_toy_protein(16, s) for s in range(100)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


# ---------------------------------------------------------------------------
# motif closed loop: an ideal scaffold and one counterexample per criterion

MOTIF_CONTIG = "4/A6-11/3/A15-18/5"
BACKBONE = ("N", "CA", "C", "O")


def motif_case(mode="indexed", detail="all_atom"):
    """(task, placement, ideal scaffold) with the reference motif embedded verbatim."""
    from plfm.motif import MotifTask, embed_motif, parse_contig, sample_placement

    reference = make_toy_protein(24, 11)
    task = MotifTask(parse_contig(MOTIF_CONTIG), reference, mode, detail, name="toy")
    placement = sample_placement(task.spec, task.bounds, np.random.default_rng(0))
    ideal = embed_motif(task, placement, make_toy_protein(placement.length, 5))
    return task, placement, ideal


def motif_positions(task, placement):
    return [placement.motif_indices[k] for k in task.kept]


def mutate_motif_residue(task, placement, p):
    """Swap the residue type of one motif position (to GLY, or ALA if it already is GLY)."""
    from plfm import residues as rc

    i = motif_positions(task, placement)[2]
    new = rc.restype_index("ALA" if p.aatype[i] == rc.restype_index("GLY") else "GLY")
    aatype, mask, atom37 = p.aatype.copy(), p.atom_mask.copy(), p.atom37.copy()
    aatype[i] = new
    mask[i] = rc.RESTYPE_ATOM37_MASK[new]
    atom37[i] = np.where(mask[i][:, None], atom37[i], 0.0)
    return p.replace(aatype=aatype, atom_mask=mask, atom37=atom37)


def shift_motif_half(task, placement, p, distance=3.0):
    """Translate every atom of the first half of the motif residues by ``distance``."""
    pos = motif_positions(task, placement)
    moved = p.atom37.copy()
    direction = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    for i in pos[: len(pos) // 2]:
        moved[i] = np.where(p.atom_mask[i][:, None], moved[i] + distance * direction, 0.0)
    return p.replace(atom37=moved)


def shift_motif_side_chains(task, placement, p, distance=5.0):
    """Move only side-chain atoms of the motif residues; backbone stays put."""
    from plfm import residues as rc

    side = np.ones(rc.NUM_ATOMS, dtype=bool)
    side[[rc.ATOM_INDEX[a] for a in BACKBONE]] = False
    moved = p.atom37.copy()
    for i in motif_positions(task, placement):
        sel = p.atom_mask[i] & side
        moved[i][sel] += distance * np.array([0.0, 0.0, 1.0])
    return p.replace(atom37=moved)


def displace_terminus(p, distance=8.0):
    """A refolded model whose C-terminal half drifted off by ``distance``."""
    moved = p.atom37.copy()
    half = p.length // 2
    moved[half:] = np.where(p.atom_mask[half:][..., None],
                            moved[half:] + distance * np.array([0.0, 1.0, 0.0]), 0.0)
    return p.replace(atom37=moved)
