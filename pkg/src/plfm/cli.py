"""``plfm`` command line: ingestion, two-stage training, sampling, motif runs, metrics.

Every command resolves its configuration (defaults < YAML file < ``--set
key=value`` < flags), runs, and writes exactly one manifest next to its
outputs. ``plfm replay MANIFEST`` re-runs a command from the resolved
configuration stored in a manifest.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as MT
from . import motif as M
from . import plotting
from . import runs
from .errors import (EmptyDataset, InvalidConfig, MissingCheckpoint, MissingDataset,
                     MissingReference, PlfmError)
from .flow import Denoiser, FlowConfig, train_flow
from .protein import make_toy_protein, read_pdb_file, write_pdb_file, parse_pdb
from .sampler import SamplerConfig, generate
from .vae import VAE, VaeConfig, train_vae

log = logging.getLogger("plfm")

VAE_COLUMNS = ("step", "loss", "ce", "mse", "kl")
FLOW_COLUMNS = ("step", "loss")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    return path


# ---------------------------------------------------------------------------
# ingest / make-toy


def run_ingest(cfg):
    src = runs.resolve_path(cfg["dir"])
    files = sorted(src.glob("*.pdb")) if src.is_dir() else []
    if not files:
        raise EmptyDataset(f"no PDB files in {src}")
    out = Path(cfg["out"]) if cfg.get("out") else src / "index.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    entries, rejects = [], []
    lo, hi, min_b = cfg["min_length"], cfg["max_length"], cfg.get("min_b_factor")
    for f in files:
        rel = os.path.relpath(f, out.parent)
        try:
            p = parse_pdb(f.read_text(), name=f.stem)
        except PlfmError as exc:
            rejects.append(dict(path=rel, reason="parse", detail=str(exc)))
            continue
        if p.length == 0:
            rejects.append(dict(path=rel, reason="parse", detail="no residues"))
            continue
        mean_b = float(np.mean(p.b_factor))
        if not lo <= p.length <= hi:
            rejects.append(dict(path=rel, reason="length", detail=f"{p.length} residues"))
        elif min_b is not None and mean_b < min_b:
            rejects.append(dict(path=rel, reason="b_factor", detail=f"mean {mean_b:.2f}"))
        else:
            entries.append(dict(path=rel, sha256=runs.sha256_file(f), length=p.length,
                                mean_b_factor=mean_b, sequence=p.sequence))
    for r in rejects:
        log.warning("rejected %s: %s (%s)", r["path"], r["reason"], r["detail"])
    index = dict(source=str(src), filters=dict(min_length=lo, max_length=hi, min_b_factor=min_b),
                 entries=entries, rejects=rejects)
    _write_json(out, runs.validate_report(index, "dataset_index"))
    if not entries:
        raise EmptyDataset(f"all {len(files)} files in {src} were rejected")
    man = runs.Manifest("ingest", cfg)
    man.add_artifact(out)
    man.write(out.parent)
    log.info("indexed %d structures, rejected %d", len(entries), len(rejects))
    return out


def run_make_toy(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    man = runs.Manifest("make-toy", cfg, seeds={"master": cfg["seed"]})
    for k in range(cfg["count"]):
        p = make_toy_protein(cfg["length"], cfg["seed"] + k, chi_noise_deg=cfg["chi_noise"])
        path = write_pdb_file(p, out / f"toy_{k:04d}.pdb")
        man.add_artifact(path)
    man.write(out)
    return out


# ---------------------------------------------------------------------------
# training


def _train(cfg, kind):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.get("dataset"):
        raise MissingDataset("no dataset index given")
    dataset = runs.load_dataset(cfg["dataset"])
    seed, tr = int(cfg["seed"]), cfg["train"]
    ckpt = out / f"{kind}.npz"
    vae = None
    extra = {}
    if kind == "flow":
        if not cfg.get("vae"):
            raise MissingCheckpoint("train-flow needs a VAE checkpoint")
        vae, _, _ = runs.load_model(cfg["vae"], "vae")
        extra["vae_sha256"] = runs.sha256_file(runs.resolve_path(cfg["vae"]))
    if cfg.get("resume") and ckpt.is_file():
        model, state, meta = runs.load_model(ckpt, kind)
        wanted = (VaeConfig if kind == "vae" else FlowConfig).from_dict(cfg["model"]).to_dict()
        if meta["config"] != wanted or meta["seed"] != seed:
            raise InvalidConfig(f"{ckpt} was trained with a different model config or seed")
        log.info("resuming %s from step %d", kind, state.step)
    else:
        if kind == "vae":
            model = VAE.init(VaeConfig.from_dict(cfg["model"]), seed)
        else:
            model = Denoiser.init(FlowConfig.from_dict(cfg["model"]), seed)
        state = None
    total = int(tr["steps"])
    every = int(tr.get("checkpoint_every") or total) or total
    kw = dict(batch_size=tr["batch_size"], lr=tr["lr"], log_every=tr["log_every"],
              lr_floor=tr["lr_floor"])
    while True:
        start = 0 if state is None else state.step
        stop = min(total, (start // every + 1) * every)
        if kind == "vae":
            model, state = train_vae(model, dataset, total, seed, state=state, stop_at=stop, **kw)
        else:
            model, state = train_flow(model, vae, dataset, total, seed, state=state,
                                      stop_at=stop, **kw)
        runs.save_model(ckpt, kind, model, state, seed, extra)
        if state.step >= total:
            break
    columns = VAE_COLUMNS if kind == "vae" else FLOW_COLUMNS
    curve_csv = runs.write_curve_csv(out / f"{kind}_curve.csv", state.curve, columns)
    man = runs.Manifest(f"train-{kind}", cfg, seeds={"master": seed})
    man.add_checkpoint(ckpt, kind)
    man.add_artifact(curve_csv)
    if state.curve:
        rows = [dict(zip(columns, r)) for r in state.curve]
        fig = plotting.plot_loss_curve(rows, out / f"{kind}_curve.png", title=f"{kind} training")
        man.add_artifact(fig)
    man.add_input("dataset_index_sha256", runs.sha256_file(runs.resolve_path(cfg["dataset"])))
    if vae is not None:
        man.add_checkpoint(runs.resolve_path(cfg["vae"]), "vae")
    man.write(out)
    return ckpt


# ---------------------------------------------------------------------------
# sampling


def _sampler_config(cfg):
    s = dict(cfg["sampler"])
    s["seed"] = int(cfg["seed"])
    return SamplerConfig.from_dict(s)


_WORKER = {}


def _load_models(vae_path, flow_path):
    key = tuple((str(p), os.stat(p).st_mtime_ns, os.stat(p).st_size) for p in (vae_path, flow_path))
    if _WORKER.get("key") != key:
        vae, _, _ = runs.load_model(vae_path, "vae")
        den, _, _ = runs.load_model(flow_path, "flow")
        _WORKER.update(key=key, models=(vae, den))
    return _WORKER["models"]


def _sample_job(job):
    vae_path, flow_path, scfg, length, index, path = job
    vae, den = _load_models(vae_path, flow_path)
    p = generate(den, vae, length, scfg, index=index, name=Path(path).stem)
    write_pdb_file(p, path)
    return path


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def run_sample(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    vae_path = runs.resolve_path(cfg["vae"]) if cfg.get("vae") else None
    flow_path = runs.resolve_path(cfg["flow"]) if cfg.get("flow") else None
    for path, role in ((vae_path, "vae"), (flow_path, "flow")):
        if path is None or not path.is_file():
            raise MissingCheckpoint(f"{role} checkpoint {path} not found")
    scfg = _sampler_config(cfg)
    _, den = _load_models(vae_path, flow_path)
    if den.cfg.motif_mode:
        raise InvalidConfig("this flow checkpoint is motif conditioned; use the motif command")
    jobs = [(vae_path, flow_path, scfg, int(L), k, str(out / f"sample_L{int(L)}_{k:04d}.pdb"))
            for L in cfg["lengths"] for k in range(int(cfg["count"]))]
    paths = _map(_sample_job, jobs, int(cfg.get("workers") or 1))
    man = runs.Manifest("sample", cfg, seeds={"master": scfg.seed})
    man.add_checkpoint(vae_path, "vae")
    man.add_checkpoint(flow_path, "flow")
    for p in paths:
        man.add_artifact(p)
    man.write(out)
    return paths


# ---------------------------------------------------------------------------
# motif scaffolding


def _load_tasks(cfg):
    path = runs.resolve_path(cfg["tasks"])
    if not path.is_file():
        raise MissingReference(f"task file {path} not found")
    import yaml

    body = yaml.safe_load(path.read_text()) or {}
    tasks = []
    for t in body.get("tasks", []):
        ref_path = Path(t["reference"])
        ref_path = ref_path if ref_path.is_absolute() else path.parent / ref_path
        if not ref_path.is_file():
            raise MissingReference(f"reference structure {ref_path} not found")
        spec = M.parse_contig(t["contig"])
        bounds = tuple(t["length"]) if t.get("length") else None
        tasks.append(M.MotifTask(spec=spec, reference=read_pdb_file(ref_path, all_chains=True),
                                 mode=t.get("mode", "indexed"), detail=t.get("detail", "all_atom"),
                                 bounds=bounds, name=t.get("name", t["contig"])))
    if not tasks:
        raise MissingReference(f"{path} defines no tasks")
    return tasks


def _ca_similarity(p, q):
    return 1.0 / (1.0 + MT.ca_rmsd(p, q))


def run_motif(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    tasks = _load_tasks(cfg)
    oracle = MT.oracle_from_spec(cfg.get("oracle") or "identity")
    seed = int(cfg["seed"])
    man = runs.Manifest("motif", cfg, seeds={"master": seed})
    if cfg.get("replay"):
        replay = M.ReplayGenerator(read_pdb_file(runs.resolve_path(cfg["replay"])))
        models = None
        man.add_input("replay_sha256", runs.sha256_file(runs.resolve_path(cfg["replay"])))
    else:
        vae_path, flow_path = runs.resolve_path(cfg["vae"]), runs.resolve_path(cfg["flow"])
        models = _load_models(vae_path, flow_path)
        man.add_checkpoint(vae_path, "vae")
        man.add_checkpoint(flow_path, "flow")
        scfg = _sampler_config(cfg)
    report, summary = [], []
    for ti, task in enumerate(tasks):
        if models is not None and (models[1].cfg.motif_mode != task.mode
                                   or models[1].cfg.motif_detail != task.detail):
            raise InvalidConfig(f"task {task.name}: checkpoint conditioned for "
                                f"{models[1].cfg.motif_mode}/{models[1].cfg.motif_detail}")
        tdir = out / task.name
        tdir.mkdir(exist_ok=True)
        results, winners = [], []
        for k in range(int(cfg["samples"])):
            placement = M.sample_placement(task.spec, task.bounds, np.random.default_rng([seed, 4, ti, k]))
            if models is None:
                generated = replay(placement.length, seed)
            else:
                cond = M.motif_features(task, placement)
                generated = generate(models[1], models[0], placement.length, scfg, index=k,
                                     motif_cond=cond, name=f"{task.name}_{k:04d}")
            refolded = oracle.fold(generated) if oracle is not None else generated
            rep = M.evaluate_scaffold(task, generated, refolded, placement)
            pdb = write_pdb_file(generated, tdir / f"sample_{k:04d}.pdb")
            man.add_artifact(pdb)
            row = rep.to_dict()
            if not np.isfinite(row["motif_rmsd"]):
                row["motif_rmsd"] = "inf"
            row.update(sample=k, length=placement.length, pdb=str(pdb))
            results.append(row)
            if rep.success:
                winners.append(generated)
        unique = MT.cluster_count(winners, _ca_similarity, cfg["cluster_threshold"])
        n = len(results)
        entry = dict(name=task.name, contig=M.render(task.spec), mode=task.mode, detail=task.detail,
                     samples=n, successes=len(winners), unique=unique,
                     success_rate=len(winners) / n if n else 0.0, results=results)
        report.append(entry)
        summary.append({k: entry[k] for k in ("name", "contig", "mode", "detail", "samples",
                                              "successes", "unique", "success_rate")})
    body = runs.validate_report(dict(tasks=report), "motif_report")
    rpath = _write_json(out / "motif_report.json", body)
    cpath = out / "motif_summary.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    man.add_artifact(rpath)
    man.add_artifact(cpath)
    man.write(out)
    return rpath


# ---------------------------------------------------------------------------
# metrics


def run_metrics(cfg):
    sdir = runs.resolve_path(cfg["samples"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(sdir.glob("*.pdb"))
    structures = [read_pdb_file(f) for f in files]
    oracle = MT.oracle_from_spec(cfg.get("oracle"))
    rows = []
    for f, p in zip(files, structures):
        row = dict(file=f.name, length=p.length, clash_score=MT.clash_score(p),
                   designable=None, sc_rmsd=None)
        if oracle is not None:
            ok, rmsd = MT.codesignability(p, oracle)
            row.update(designable=bool(ok), sc_rmsd=rmsd)
        rows.append(row)
    man = runs.Manifest("metrics", cfg)
    densities = MT.reference_densities(structures) if structures else {}
    reference = None
    outliers = None
    if cfg.get("reference"):
        rdir = runs.resolve_path(cfg["reference"])
        ref_files = sorted(rdir.glob("*.pdb")) if rdir.is_dir() else []
        if not ref_files:
            raise MissingReference(f"no reference structures in {rdir}")
        reference = MT.reference_densities(read_pdb_file(f) for f in ref_files)
        outliers = MT.rotamer_outlier_fraction(structures, reference)
        man.add_artifact(MT.write_density_csv(out / "reference_densities.csv", reference))
    csv_path = out / "sample_metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["file", "length", "clash_score", "designable", "sc_rmsd"])
        w.writeheader()
        w.writerows(rows)
    man.add_artifact(csv_path)
    if densities:
        man.add_artifact(MT.write_density_csv(out / "chi_densities.csv", densities))
        man.add_artifact(plotting.plot_chi_densities(densities, out / "chi_densities.png", reference))
    if rows:
        man.add_artifact(plotting.plot_metric_histogram(
            [r["clash_score"] for r in rows], out / "clash_scores.png", "clash score", 50.0))
    producers = runs.find_manifests(sdir)
    producer = None
    if producers:
        producer = dict(path=str(producers[-1]), sha256=runs.sha256_file(producers[-1]))
        man.add_input("producer_manifest", producer)
    designable = [r["designable"] for r in rows if r["designable"] is not None]
    report = dict(
        n_samples=len(rows),
        mean_clash_score=float(np.mean([r["clash_score"] for r in rows])) if rows else None,
        codesignability=float(np.mean(designable)) if designable else None,
        rotamer_outlier_fraction=outliers, producer_manifest=producer, samples=rows)
    rpath = _write_json(out / "metrics_report.json", runs.validate_report(report, "metrics_report"))
    man.add_artifact(rpath)
    man.write(out)
    return rpath


# ---------------------------------------------------------------------------
# contig parsing


def run_contig_parse(cfg):
    spec = M.parse_contig(cfg["contig"])
    segs = []
    for s in spec.segments:
        if isinstance(s, M.Motif):
            segs.append(dict(kind="motif", chain=s.chain, start=s.start, end=s.end))
        else:
            segs.append(dict(kind="scaffold", min=s.min, max=s.max))
    body = dict(contig=M.render(spec), segments=segs, motif_length=spec.motif_length,
                min_length=spec.min_length, max_length=spec.max_length,
                motif_segments=M.count_motif_segments(spec))
    print(json.dumps(body, indent=2))
    return body


RUNNERS = {
    "ingest": run_ingest,
    "make-toy": run_make_toy,
    "train-vae": lambda cfg: _train(cfg, "vae"),
    "train-flow": lambda cfg: _train(cfg, "flow"),
    "sample": run_sample,
    "motif": run_motif,
    "metrics": run_metrics,
    "contig-parse": run_contig_parse,
}


def run_replay(cfg):
    body = json.loads(Path(cfg["manifest"]).read_text())
    command = body["command"]
    if command not in RUNNERS:
        raise InvalidConfig(f"cannot replay command {command!r}")
    return RUNNERS[command](body["config"])


RUNNERS["replay"] = run_replay


# ---------------------------------------------------------------------------
# argument parsing


SAMPLER_DEFAULTS = SamplerConfig().to_dict()
SAMPLER_DEFAULTS.pop("seed")


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="YAML file layered over the defaults")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config value (dotted key, YAML value)")
    p.add_argument("--seed", type=int)


def _add_sampler_flags(p):
    p.add_argument("--n-steps", type=int)
    p.add_argument("--schedule-x", choices=("exponential", "quadratic", "uniform"))
    p.add_argument("--schedule-z", choices=("exponential", "quadratic", "uniform"))
    p.add_argument("--langevin-x", choices=("inv_t", "tan"))
    p.add_argument("--langevin-z", choices=("inv_t", "tan"))
    p.add_argument("--eta-x", type=float)
    p.add_argument("--eta-z", type=float)
    p.add_argument("--no-langevin", action="store_true")
    p.add_argument("--workers", type=int, help="parallel worker processes (default: all cores)")


def _sampler_flags(a):
    flags = dict(n_steps=a.n_steps, schedule_x=a.schedule_x, schedule_z=a.schedule_z,
                 langevin_x=a.langevin_x, langevin_z=a.langevin_z, eta_x=a.eta_x, eta_z=a.eta_z)
    if a.no_langevin:
        flags["langevin"] = False
    return {k: v for k, v in flags.items() if v is not None}


def build_parser():
    ap = argparse.ArgumentParser(prog="plfm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="index a directory of PDB files")
    p.add_argument("dir")
    p.add_argument("--out")
    p.add_argument("--min-length", type=int, default=1)
    p.add_argument("--max-length", type=int, default=512)
    p.add_argument("--min-b-factor", type=float)

    p = sub.add_parser("make-toy", help="write a corpus of toy helical proteins")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chi-noise", type=float, default=2.0)

    for name in ("train-vae", "train-flow"):
        p = sub.add_parser(name, help=f"{name.split('-')[1]} training stage")
        _add_common(p)
        p.add_argument("--dataset")
        p.add_argument("--out")
        p.add_argument("--steps", type=int)
        p.add_argument("--resume", action="store_true")
        if name == "train-flow":
            p.add_argument("--vae")

    p = sub.add_parser("sample", help="generate structures from trained checkpoints")
    _add_common(p)
    p.add_argument("--vae")
    p.add_argument("--flow")
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--count", type=int)
    p.add_argument("--out")
    _add_sampler_flags(p)

    p = sub.add_parser("motif", help="run motif scaffolding tasks and score them")
    _add_common(p)
    p.add_argument("--tasks")
    p.add_argument("--vae")
    p.add_argument("--flow")
    p.add_argument("--replay", help="PDB returned for every sample instead of running a model")
    p.add_argument("--samples", type=int)
    p.add_argument("--oracle", help="'identity' or 'cmd:<command>'")
    p.add_argument("--out")
    _add_sampler_flags(p)

    p = sub.add_parser("metrics", help="score a directory of samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--oracle")
    p.add_argument("--reference", help="directory of reference PDB files for rotamer densities")
    p.add_argument("--out", required=True)

    p = sub.add_parser("contig-parse", help="parse and re-render a contig string")
    p.add_argument("contig")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return ap


def resolve_config(a):
    """Resolved configuration dict for parsed arguments."""
    cmd = a.command
    if cmd == "ingest":
        return dict(dir=a.dir, out=a.out, min_length=a.min_length, max_length=a.max_length,
                    min_b_factor=a.min_b_factor)
    if cmd == "make-toy":
        return dict(out=a.out, count=a.count, length=a.length, seed=a.seed, chi_noise=a.chi_noise)
    if cmd in ("train-vae", "train-flow"):
        defaults = runs.VAE_DEFAULTS if cmd == "train-vae" else runs.FLOW_DEFAULTS
        flags = dict(dataset=a.dataset, out=a.out, seed=a.seed, resume=a.resume or None,
                     vae=getattr(a, "vae", None))
        if a.steps is not None:
            flags["train"] = {"steps": a.steps}
        cfg = runs.layered_config(defaults, a.config, a.set, flags)
        cfg.setdefault("resume", False)
        return cfg
    if cmd in ("sample", "motif"):
        base = dict(seed=0, vae=None, flow=None, out=f"runs/{cmd}", sampler=SAMPLER_DEFAULTS,
                    workers=os.cpu_count() or 1)
        if cmd == "sample":
            base.update(lengths=[16], count=10)
            flags = dict(lengths=a.lengths, count=a.count)
        else:
            base.update(tasks=None, samples=10, oracle="identity", replay=None, cluster_threshold=0.5)
            flags = dict(tasks=a.tasks, samples=a.samples, oracle=a.oracle, replay=a.replay)
        flags.update(seed=a.seed, vae=a.vae, flow=a.flow, out=a.out, workers=a.workers,
                     sampler=_sampler_flags(a))
        return runs.layered_config(base, a.config, a.set, flags)
    if cmd == "metrics":
        return dict(samples=a.samples, oracle=a.oracle, reference=a.reference, out=a.out)
    if cmd == "contig-parse":
        return dict(contig=a.contig)
    return dict(manifest=a.manifest)


def main(argv=None):
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        RUNNERS[a.command](resolve_config(a))
    except PlfmError as exc:
        print(f"plfm {a.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
