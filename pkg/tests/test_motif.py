import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plfm import features as F
from plfm import residues as rc
from plfm.errors import EmptySpec, Infeasible, MissingReference, ParseError, SizeMismatch
from plfm.motif import (BENCHMARK, MOTIF_FEATURE_WIDTH, ContigSpec, Motif, MotifTask, ReplayGenerator,
                        Scaffold, count_motif_segments, embed_motif, evaluate_scaffold,
                        extend_pair_unindexed, greedy_match, motif_features, parse_contig,
                        random_motif_indices, render, sample_placement, training_condition)
from plfm.protein import build_protein, make_toy_protein

from conftest import (displace_terminus, motif_case, motif_positions, mutate_motif_residue,
                      shift_motif_half, shift_motif_side_chains)

ALL_CONTIGS = [c for row in BENCHMARK for c in row[3:]]


def test_benchmark_table_size():
    assert len(BENCHMARK) == 26 and len(ALL_CONTIGS) == 52


@pytest.mark.parametrize("text", ALL_CONTIGS)
def test_contig_round_trip(text):
    spec = parse_contig(text)
    assert render(spec) == text
    assert parse_contig(render(spec)) == spec


def test_contig_examples():
    assert parse_contig("5-20/A1-20/10-25/B1-20/5-20").segments == (
        Scaffold(5, 20), Motif("A", 1, 20), Scaffold(10, 25), Motif("B", 1, 20), Scaffold(5, 20))
    assert parse_contig("A1-7/20/A28-79").segments == (
        Motif("A", 1, 7), Scaffold(20, 20), Motif("A", 28, 79))
    with pytest.raises(ParseError) as err:
        parse_contig("5-/A1")
    assert err.value.position == 0
    with pytest.raises(ParseError) as err:
        parse_contig("5/A9-3")
    assert err.value.position == 1
    with pytest.raises(EmptySpec):
        parse_contig("  ")


def test_benchmark_rows_are_feasible():
    for name, lo, hi, aa, tip in BENCHMARK:
        for text in (aa, tip):
            spec = parse_contig(text)
            assert spec.min_length <= hi and spec.max_length >= lo, name


def test_segment_count():
    assert count_motif_segments(parse_contig("5-20/A1-20/10-25/B1-20/5-20")) == 2
    assert count_motif_segments(parse_contig("A1-7/20/A28-79")) == 2
    assert count_motif_segments(parse_contig("5/A1/A3/5")) == 1


def test_exact_lengths_give_one_placement():
    spec = parse_contig("A1-7/20/A28-79")
    a = sample_placement(spec, (79, 79), np.random.default_rng(0))
    b = sample_placement(spec, (79, 79), np.random.default_rng(1))
    assert a == b and a.length == 79
    assert a.motif_indices == tuple(range(7)) + tuple(range(27, 79))


def test_1prw_placement_bounds():
    spec = parse_contig(BENCHMARK[0][3])
    rng = np.random.default_rng(0)
    for _ in range(10 ** 4):
        pl = sample_placement(spec, (60, 105), rng)
        assert 60 <= pl.length <= 105
        assert len(pl.motif_indices) == 40


def test_infeasible_bounds():
    spec = parse_contig("5-10/A1-5/5-10")
    with pytest.raises(Infeasible):
        sample_placement(spec, (40, 50), np.random.default_rng(0))
    with pytest.raises(Infeasible):
        sample_placement(spec, (5, 10), np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=1, max_size=4),
       st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**31))
def test_placement_preserves_order_and_segments(scaffolds, motifs, seed):
    segments, start = [], 1
    for k in range(max(len(scaffolds), len(motifs))):
        if k < len(scaffolds):
            a, b = sorted(scaffolds[k])
            segments.append(Scaffold(a, b))
        if k < len(motifs):
            segments.append(Motif("A", start, start + motifs[k] - 1))
            start += motifs[k] + 3
    spec = ContigSpec(tuple(segments))
    pl = sample_placement(spec, (spec.min_length, spec.max_length), np.random.default_rng(seed))
    idx = np.array(pl.motif_indices)
    assert len(idx) == spec.motif_length
    assert np.all(np.diff(idx) > 0) and idx.max(initial=-1) < pl.length
    for s, n in zip(spec.segments, pl.segment_lengths):
        assert (s.min <= n <= s.max) if isinstance(s, Scaffold) else n == s.length


def test_task_resolution_errors():
    ref = make_toy_protein(10, 0)
    with pytest.raises(MissingReference):
        MotifTask(parse_contig("2/A8-12/2"), ref)
    with pytest.raises(ValueError):
        MotifTask(parse_contig("2/A3/2"), ref, mode="loose")


def test_indexed_single_residue_features():
    ref = make_toy_protein(10, 0)
    task = MotifTask(parse_contig("3/A4/3"), ref)
    pl = sample_placement(task.spec, task.bounds, np.random.default_rng(0))
    block = motif_features(task, pl)
    assert block.shape == (7, MOTIF_FEATURE_WIDTH)
    nonzero = np.flatnonzero(np.any(block != 0, axis=1))
    assert nonzero.tolist() == [3]


def test_tip_atom_glycine_motif_is_empty():
    gly = rc.restype_index("GLY")
    ref = build_protein([gly] * 5, np.zeros((5, 4)))
    task = MotifTask(parse_contig("2/A2-3/2"), ref, detail="tip_atom")
    assert task.kept == []
    pl = sample_placement(task.spec, task.bounds, np.random.default_rng(0))
    assert np.all(motif_features(task, pl) == 0)
    unindexed = MotifTask(parse_contig("2/A2-3/2"), ref, mode="unindexed", detail="tip_atom")
    assert motif_features(unindexed, pl).shape == (0, MOTIF_FEATURE_WIDTH)


def test_tip_atom_rows_keep_only_tip_coordinates():
    task, pl, _ = motif_case(detail="tip_atom")
    rows = motif_features(task, pl)[list(pl.motif_indices)]
    raw = rows[:, :111].reshape(-1, 37, 3)
    sub = task.motif_structure()
    tips = rc.RESTYPE_TIP_MASK[sub.aatype]
    assert np.all(raw[~tips] == 0)
    assert np.all(rows[:, 242:382] == 0)  # chi and torsion bins dropped


def test_unindexed_rows_and_pair_extension():
    task, pl, _ = motif_case(mode="unindexed")
    rows = motif_features(task, pl)
    assert rows.shape == (len(task.kept), MOTIF_FEATURE_WIDTH)
    _, pair = F.decoder_features(np.zeros((pl.length, 3)), np.zeros((pl.length, 8)))
    ext = extend_pair_unindexed(pair, len(rows))
    L, m = pl.length, len(rows)
    assert ext.shape[:2] == (L + m, L + m)
    assert np.array_equal(ext[:L, :L], pair)
    assert np.all(ext[L:, :, F.RELSEQ_SENTINEL] == 1) and np.all(ext[:L, L:, F.RELSEQ_SENTINEL] == 1)
    assert np.all(ext[L:].sum(-1) == 1)
    assert np.all(pair[..., F.RELSEQ_SENTINEL] == 0)


def test_training_condition_frames():
    p = make_toy_protein(12, 3)
    idx = np.array([2, 3, 4])
    rows, origin = training_condition(p, idx, "indexed", "all_atom")
    assert np.allclose(origin, p.ca[idx].mean(0))
    assert np.flatnonzero(rows.any(axis=1)).tolist() == [2, 3, 4]
    rows_u, _ = training_condition(p, idx, "unindexed", "all_atom")
    assert np.array_equal(rows_u, rows[idx])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_random_motif_indices(L, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, L + 1))
    idx = random_motif_indices(L, n, rng)
    assert len(set(idx.tolist())) == len(idx) == n and idx.min() >= 0 and idx.max() < L


def greedy_oracle(gt, gen):
    taken, out = set(), []
    for g in gt:
        best, best_d = None, math.inf
        for j, c in enumerate(gen):
            if j in taken:
                continue
            d = math.dist(g, c)
            if d < best_d:
                best, best_d = j, d
        taken.add(best)
        out.append(best)
    return out


def test_greedy_examples():
    gen = np.random.default_rng(0).normal(size=(12, 3)) * 10
    perm = [7, 2, 9]
    assert greedy_match(gen[perm], gen).tolist() == perm
    assert greedy_match(np.zeros((1, 3)), gen).tolist() == [int(np.argmin(np.linalg.norm(gen, axis=1)))]
    with pytest.raises(SizeMismatch):
        greedy_match(gen, gen[:3])


def test_greedy_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        gt, gen = rng.normal(size=(10, 3)) * 5, rng.normal(size=(50, 3)) * 5
        got = greedy_match(gt, gen)
        assert got.tolist() == greedy_oracle(gt, gen)
        assert len(set(got.tolist())) == 10


@pytest.mark.parametrize("mode", ["indexed", "unindexed"])
@pytest.mark.parametrize("detail", ["all_atom", "tip_atom"])
def test_closed_loop_and_counterexamples(mode, detail):
    task, pl, ideal = motif_case(mode, detail)
    rep = evaluate_scaffold(task, ideal, ideal, pl)
    assert rep.success
    assert max(rep.ca_rmsd, rep.motif_rmsd, rep.sc_rmsd) < 1e-9

    def flags(r):
        return (r.sequence_recovered, r.ca_ok, r.motif_ok, r.designable)

    mutated = mutate_motif_residue(task, pl, ideal)
    assert flags(evaluate_scaffold(task, mutated, mutated, pl)) == (False, True, True, True)
    shifted = shift_motif_half(task, pl, ideal)
    assert flags(evaluate_scaffold(task, shifted, shifted, pl)) == (True, False, True, True)
    side = shift_motif_side_chains(task, pl, ideal)
    assert flags(evaluate_scaffold(task, side, side, pl)) == (True, True, False, True)
    assert flags(evaluate_scaffold(task, ideal, displace_terminus(ideal), pl)) == (True, True, True, False)


def test_evaluation_is_placement_and_frame_invariant():
    task, pl, ideal = motif_case()
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    R = q * np.sign(np.linalg.det(q))
    moved = ideal.replace(atom37=np.where(ideal.atom_mask[..., None], ideal.atom37 @ R.T + 7.0, 0.0))
    rep = evaluate_scaffold(task, moved, moved, pl)
    assert rep.success and rep.ca_rmsd < 1e-9 and rep.motif_rmsd < 1e-9


def test_evaluation_errors():
    task, pl, ideal = motif_case()
    with pytest.raises(SizeMismatch):
        evaluate_scaffold(task, ideal.select(np.arange(10)), ideal.select(np.arange(10)), pl)
    with pytest.raises(ValueError):
        evaluate_scaffold(task, ideal, ideal, None)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_success_is_monotone_along_perturbation_ladder(seed):
    task, pl, ideal = motif_case()
    rng = np.random.default_rng(seed)
    pos = motif_positions(task, pl)
    direction = rng.normal(size=(len(pos), 37, 3))
    seen_failure = False
    for scale in np.linspace(0.0, 3.0, 13):
        atom37 = ideal.atom37.copy()
        for k, i in enumerate(pos):
            atom37[i] = np.where(ideal.atom_mask[i][:, None], atom37[i] + scale * direction[k], 0.0)
        p = ideal.replace(atom37=atom37)
        ok = evaluate_scaffold(task, p, p, pl).success
        assert not (seen_failure and ok)
        seen_failure |= not ok
    assert seen_failure


def test_two_residue_motif_uses_translation_only():
    ref = make_toy_protein(10, 0)
    task = MotifTask(parse_contig("3/A4-5/3"), ref)
    pl = sample_placement(task.spec, task.bounds, np.random.default_rng(0))
    ideal = embed_motif(task, pl, make_toy_protein(pl.length, 1))
    shifted = ideal.replace(atom37=np.where(ideal.atom_mask[..., None], ideal.atom37 + 5.0, 0.0))
    assert evaluate_scaffold(task, shifted, shifted, pl).ca_rmsd < 1e-9


def test_replay_generator():
    p = make_toy_protein(8, 0)
    gen = ReplayGenerator(p)
    assert gen(8, 0) is p
    with pytest.raises(SizeMismatch):
        gen(9, 0)
