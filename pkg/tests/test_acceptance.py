"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The trained-model checks share one toy VAE and one toy flow model, built once
per session (about half an hour on one CPU in total).
"""

import math
import time

import numpy as np
import pytest
import torch

from plfm import features as F
from plfm import metrics as MT
from plfm.flow import (Denoiser, FlowConfig, TimeSamplerConfig, cfm_loss_tensor, draw_noise,
                       sample_times, train_flow)
from plfm.geometry import chi_angle_array
from plfm.motif import BENCHMARK, Motif, Scaffold, evaluate_scaffold, parse_contig, render
from plfm.nn import NetConfig, backward, build_network, forward, record
from plfm.protein import make_toy_protein
from plfm.sampler import SamplerConfig, generate, integrate, schedule_grid, schedule_value, \
    score_from_velocity
from plfm.vae import NON_CA, VAE, VaeConfig, batch_loss, decode, encode, make_batch, \
    perturb_latent, train_vae

from conftest import (displace_terminus, motif_case, mutate_motif_residue, shift_motif_half,
                      shift_motif_side_chains)
from oracles import gaussian_marginal, gaussian_velocity, union_find_components, \
    worst_gradient_error

pytestmark = pytest.mark.acceptance

MODEL_NET = dict(c_seq=64, c_pair=32, n_layers=2, n_heads=4)
VAE_STEPS = 8000
FLOW_STEPS = 15000
STAGGERED = (-60.0, 60.0, 180.0)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


# ---------------------------------------------------------------------------
# shared toy models


@pytest.fixture(scope="session")
def toy_train():
    return [make_toy_protein(16, s) for s in range(500)]


@pytest.fixture(scope="session")
def toy_held_out():
    return [make_toy_protein(16, 10_000 + s) for s in range(50)]


@pytest.fixture(scope="session")
def toy_vae(toy_train):
    start = time.time()
    model = VAE.init(VaeConfig(net=NetConfig(**MODEL_NET)), 0)
    model, _ = train_vae(model, toy_train, VAE_STEPS, seed=0, batch_size=16, lr=1e-3, log_every=0)
    return model, time.time() - start


@pytest.fixture(scope="session")
def toy_flow(toy_vae, toy_train):
    vae, vae_seconds = toy_vae
    start = time.time()
    den = Denoiser.init(FlowConfig(net=NetConfig(**MODEL_NET, c_time=32, time_conditioned=True)), 0)
    den, _ = train_flow(den, vae, toy_train, FLOW_STEPS, seed=0, batch_size=16, lr=1e-3,
                        log_every=0)
    return den, vae_seconds + time.time() - start


# ---------------------------------------------------------------------------
# analytic criteria


def _jitter(params, rng, scale=0.3):
    with torch.no_grad():
        for v in params._t.values():
            v.add_(torch.as_tensor(rng.normal(size=tuple(v.shape)) * scale))


def test_gradient_fidelity(report):
    start = time.time()
    rng = np.random.default_rng(0)
    worst = {}

    # transformer block: pair-biased attention, adaptive layer norm, feed-forward
    cfg = NetConfig(c_seq=8, c_pair=4, n_layers=1, n_heads=2, c_time=4, time_conditioned=True)
    p = build_network(cfg, 1)
    _jitter(p, rng)
    seq = torch.as_tensor(rng.normal(size=(4, 8))).requires_grad_(True)
    pair = torch.as_tensor(rng.normal(size=(4, 4, 4))).requires_grad_(True)
    w = torch.as_tensor(rng.normal(size=(4, 8)))

    def block_loss():
        return (forward(p, cfg, seq, pair, np.array([0.3, 0.8])) * w).sum()

    grads, (gs, gp) = backward(p, record(block_loss(), inputs=[seq, pair]))
    roles = dict(attention=(".q.", ".k.", ".v.", ".o.", "pair_bias", "ln_pair"),
                 adaptive_norm=(".ada.", "ln_out"), feed_forward=(".ff1.", ".ff2."))
    for role, keys in roles.items():
        names = [n for n in p.names() if any(k in n for k in keys)]
        assert names, role
        worst[role], _ = worst_gradient_error({n: p[n] for n in names}, block_loss, grads)
    worst["inputs"], _ = worst_gradient_error(dict(seq=seq, pair=pair), block_loss,
                                              dict(seq=gs, pair=gp))

    # VAE heads through the full ELBO
    vae = VAE.init(VaeConfig(net=NetConfig(c_seq=8, c_pair=4, n_layers=1, n_heads=2)), 2)
    _jitter(vae.params, rng, 0.1)
    batch = make_batch([make_toy_protein(4, 1)])
    eps = rng.standard_normal((1, 4, 8))

    def elbo():
        return batch_loss(vae, batch, eps)[0]

    grads, _ = backward(vae.params, record(elbo()))
    heads = [n for n in vae.params.names() if ".head." in n or ".logits." in n or ".coords." in n]
    worst["vae_heads"], _ = worst_gradient_error({n: vae.params[n] for n in heads}, elbo, grads)

    # CFM loss through a time-conditioned denoiser
    fcfg = FlowConfig(net=cfg)
    den = Denoiser.init(fcfg, 3)
    _jitter(den.params, rng)
    x1, z1 = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 8))
    draw = draw_noise(fcfg, x1.shape, z1.shape, rng)

    def cfm():
        return cfm_loss_tensor(den, x1, z1, draw)

    grads, _ = backward(den.params, record(cfm()))
    names = [n for n in den.params.names() if "seq_in" not in n and "pair_in" not in n]
    worst["cfm"], _ = worst_gradient_error({n: den.params[n] for n in names}, cfm, grads)

    elapsed = time.time() - start
    top = max(worst.values())
    ok = top < 1e-4 and elapsed < 60
    report("gradient-fidelity", ok, f"worst relative error {top:.2e} over {sorted(worst)}, "
           f"{elapsed:.1f} s")
    assert top < 1e-4, worst
    assert elapsed < 60


def test_score_velocity_identity(report):
    m1, s1 = 1.7, 0.6
    grid = np.linspace(-4, 4, 100)
    worst = 0.0
    for t in np.round(np.arange(0.1, 1.0, 0.1), 1):
        mean, std = gaussian_marginal(0.0, 1.0, m1, s1, t)
        zeta = score_from_velocity(gaussian_velocity(0.0, 1.0, m1, s1, t, grid), grid, t)
        worst = max(worst, float(np.max(np.abs(zeta + (grid - mean) / std ** 2))))
    report("score-from-velocity", worst <= 1e-9, f"max error {worst:.1e} over 9 times x 100 points")
    assert worst <= 1e-9


def test_sampler_convergence_order(report):
    start = time.time()
    m1, s1, mz, sz = np.array([1.5, -0.7, 0.4]), 0.3, 0.5, 2.0

    def vfn(x, z, t_x, t_z):
        return gaussian_velocity(0, 1, m1, s1, t_x, x), gaussian_velocity(0, 1, mz, sz, t_z, z)

    x0 = np.random.default_rng(0).normal(size=(4, 3))
    z0 = np.random.default_rng(1).normal(size=(4, 8))

    def run(N):
        cfg = SamplerConfig(n_steps=N, eta_x=0.0, eta_z=0.0, langevin=False)
        return integrate(x0, z0, vfn, cfg, np.random.default_rng(0))

    Ns = [25, 50, 100, 200, 400]
    errs = []
    for N in Ns:
        a, b = run(N), run(10 * N)
        errs.append(math.sqrt(np.sum((a.x - b.x) ** 2) + np.sum((a.z - b.z) ** 2)))
    slope = -np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    elapsed = time.time() - start
    ok = abs(slope - 1.0) <= 0.15 and elapsed < 60
    report("sampler-convergence-order", ok, f"slope {slope:.3f}, {elapsed:.1f} s")
    assert abs(slope - 1.0) <= 0.15 and elapsed < 60


def test_schedule_exactness(report):
    ends = all(schedule_value(k, 0, 10) == 0.0 and schedule_value(k, 10, 10) == 1.0
               for k in ("exponential", "quadratic", "uniform"))
    mid = abs(schedule_value("exponential", 5, 10) - (1 - 10 ** -1) / (1 - 10 ** -2))
    fx, fz = schedule_grid("exponential", 10 ** 4), schedule_grid("quadratic", 10 ** 4)
    ahead = bool(np.all(fx >= fz))
    ok = ends and mid <= 1e-12 and ahead
    report("schedule-exactness", ok, f"endpoints exact {ends}, midpoint error {mid:.1e}, "
           f"x ahead of z {ahead}")
    assert ok


def test_time_sampler_moments(report):
    t_x, t_z = sample_times(TimeSamplerConfig(), np.random.default_rng(0), 10 ** 6)
    want_x, want_z = 0.02 * 0.5 + 0.98 * 1.9 / 2.9, 0.02 * 0.5 + 0.98 / 2.5
    dx, dz = abs(t_x.mean() - want_x), abs(t_z.mean() - want_z)
    order = float(np.mean(t_x > t_z))
    ok = dx <= 0.005 and dz <= 0.005 and order > 0.5
    report("time-sampler-moments", ok, f"mean t_x {t_x.mean():.4f} (want {want_x:.4f}), "
           f"mean t_z {t_z.mean():.4f} (want {want_z:.4f}), P(t_x > t_z) {order:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# trained toy models


def _masked_decoder_error(vae, p, z):
    out = decode(vae, p.ca, z)
    mask = p.atom_mask[:, NON_CA]
    sq = np.sum((out.mu_dec - p.atom37[:, NON_CA]) ** 2, axis=-1) * mask
    per_residue = np.sqrt(sq.sum(-1) / np.maximum(mask.sum(-1), 1))
    return out, sq[mask], per_residue


def test_vae_toy_reconstruction(report, toy_vae, toy_held_out):
    vae, seconds = toy_vae
    rng = np.random.default_rng(0)
    hits = total = 0
    sq = []
    for p in toy_held_out:
        out, err, _ = _masked_decoder_error(vae, p, encode(vae, p, rng).z)
        hits += int(np.sum(np.argmax(out.logits, -1) == p.aatype))
        total += p.length
        sq.append(err)
    recovery = hits / total
    rmsd = float(np.sqrt(np.concatenate(sq).mean()))
    ok = recovery >= 0.98 and rmsd <= 0.5 and seconds <= 30 * 60
    report("vae-toy-reconstruction", ok, f"held-out recovery {recovery:.4f}, masked RMSD "
           f"{rmsd:.3f} A, training {seconds / 60:.1f} min")
    assert recovery >= 0.98 and rmsd <= 0.5 and seconds <= 30 * 60


def test_latent_locality(report, toy_vae, toy_held_out):
    vae, _ = toy_vae
    rng = np.random.default_rng(1)
    own, elsewhere = [], []
    for p in toy_held_out:
        z = encode(vae, p, None, eps=np.zeros((p.length, 8))).z
        i = int(rng.integers(p.length))
        _, _, base = _masked_decoder_error(vae, p, z)
        _, _, moved = _masked_decoder_error(vae, p, perturb_latent(z, i, 1.0, rng))
        rise = moved - base
        own.append(rise[i])
        elsewhere.append(np.mean(np.delete(rise, i)))
    a, b = float(np.mean(own)), float(np.mean(elsewhere))
    ratio = a / b if b > 0 else math.inf
    ok = a >= 2 * b
    report("latent-locality", ok, f"mean rise at perturbed residue {a:.4f} A, elsewhere {b:.2e} A, "
           f"ratio {ratio:.1f} over {len(own)} trials")
    assert ok


def _chi1_mode_mass(structures):
    """Share of chi1 angles closest to each staggered value."""
    chi = np.concatenate([c[~np.isnan(c)] for c in (chi_angle_array(p)[:, 0] for p in structures)])
    deg = np.degrees(chi)
    dist = np.stack([np.abs((deg - m + 180.0) % 360.0 - 180.0) for m in STAGGERED])
    nearest = np.argmin(dist, axis=0)
    return np.bincount(nearest, minlength=3) / len(nearest)


def test_end_to_end_toy_generation(report, toy_flow, toy_vae, toy_train):
    den, train_seconds = toy_flow
    vae, _ = toy_vae
    start = time.time()
    cfg = SamplerConfig()
    samples = [generate(den, vae, 16, cfg, index=k) for k in range(50)]
    valid = 0
    for p in samples:
        try:
            p.check_invariants()
            valid += 1
        except ValueError:
            pass
    clash = np.array([MT.clash_score(p) for p in samples])
    low_clash = float(np.mean(clash <= 50))
    want, got = _chi1_mode_mass(toy_train), _chi1_mode_mass(samples)
    gap = float(np.max(np.abs(want - got)))
    minutes = (train_seconds + time.time() - start) / 60
    ok = valid == 50 and low_clash >= 0.8 and gap <= 0.15 and minutes <= 60
    report("end-to-end-toy-generation", ok,
           f"valid {valid}/50, clash <= 50 for {low_clash:.0%}, chi1 mode mass "
           f"{np.round(got, 3).tolist()} vs training {np.round(want, 3).tolist()} "
           f"(max gap {gap:.3f}), {minutes:.1f} min")
    assert valid == 50
    assert low_clash >= 0.8
    assert gap <= 0.15
    assert minutes <= 60


# ---------------------------------------------------------------------------
# motif and metric criteria


def test_contig_grammar(report):
    texts = [c for row in BENCHMARK for c in row[3:]]
    round_trip = sum(render(parse_contig(t)) == t and parse_contig(render(parse_contig(t))) ==
                     parse_contig(t) for t in texts)
    prw = parse_contig("5-20/A1-20/10-25/B1-20/5-20").segments == (
        Scaffold(5, 20), Motif("A", 1, 20), Scaffold(10, 25), Motif("B", 1, 20), Scaffold(5, 20))
    kl8 = parse_contig("A1-7/20/A28-79").segments == (
        Motif("A", 1, 7), Scaffold(20, 20), Motif("A", 28, 79))
    in_table = {"5-20/A1-20/10-25/B1-20/5-20", "A1-7/20/A28-79"} <= set(texts)
    ok = len(texts) == 52 and round_trip == 52 and prw and kl8 and in_table
    report("contig-grammar", ok, f"{round_trip}/{len(texts)} round trips, 1PRW {prw}, 2KL8 {kl8}")
    assert ok


def test_motif_closed_loop(report):
    outcomes = []
    for mode in ("indexed", "unindexed"):
        for detail in ("all_atom", "tip_atom"):
            task, pl, ideal = motif_case(mode, detail)
            rep = evaluate_scaffold(task, ideal, ideal, pl)
            clean = rep.success and max(rep.ca_rmsd, rep.motif_rmsd, rep.sc_rmsd) < 1e-9

            def flags(gen, fold):
                r = evaluate_scaffold(task, gen, fold, pl)
                return (r.sequence_recovered, r.ca_ok, r.motif_ok, r.designable), r.success

            mut, shift = mutate_motif_residue(task, pl, ideal), shift_motif_half(task, pl, ideal)
            side = shift_motif_side_chains(task, pl, ideal)
            cases = [(flags(mut, mut), (False, True, True, True)),
                     (flags(shift, shift), (True, False, True, True)),
                     (flags(side, side), (True, True, False, True)),
                     (flags(ideal, displace_terminus(ideal)), (True, True, True, False))]
            flips = all(got == want and not success for (got, success), want in cases)
            outcomes.append((f"{mode}/{detail}", clean, flips))
    ok = all(clean and flips for _, clean, flips in outcomes)
    report("motif-closed-loop", ok, ", ".join(f"{n} ideal={c} flips={f}" for n, c, f in outcomes))
    assert ok


def test_metric_oracles(report, monkeypatch):
    coords = np.array([[10.0 * i, 0.0, 0.0] for i in range(10)])
    coords[1] = [2.0, 0.0, 0.0]
    clash = MT.clash_score_coords(coords, ["C"] * 10)

    rng = np.random.default_rng(0)
    agree = 0
    for _ in range(100):
        sim = rng.uniform(size=(20, 20)) ** 4
        sim = (sim + sim.T) / 2
        th = rng.uniform(0.2, 0.9)
        edges = [(i, j) for i in range(20) for j in range(i + 1, 20) if sim[i, j] >= th]
        agree += MT.cluster_count(range(20), lambda a, b: sim[a, b], th) == \
            union_find_components(20, edges)

    p = make_toy_protein(8, 0)
    monkeypatch.setattr(MT, "all_atom_rmsd", lambda a, b: 2.0)
    at_cutoff = MT.codesignability(p, p)[0]
    monkeypatch.setattr(MT, "all_atom_rmsd", lambda a, b: np.nextafter(2.0, 0.0))
    below = MT.codesignability(p, p)[0]
    strict = (not at_cutoff) and below
    ok = clash == 100.0 and agree == 100 and strict
    report("metric-oracles", ok, f"hand-counted clash score {clash}, cluster_count agrees on "
           f"{agree}/100, strict 2.0 A cutoff {strict}")
    assert ok
