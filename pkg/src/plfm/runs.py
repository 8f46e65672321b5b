"""Run plumbing shared by the command line: configs, checkpoints, datasets, manifests.

Seed splitting rule: a run has one master seed ``s``. Subsystems draw from
``numpy.random.default_rng`` streams keyed by a tuple that starts with ``s``:

    (s, 1)            VAE parameter init
    (s, 1, step)      VAE training step
    (s, 2)            denoiser parameter init
    (s, 2, step)      flow training step
    (s, 3, L, index)  generation of sample ``index`` at length ``L``
    (s, 4, task, k)   motif placement for sample ``k`` of task ``task``

so no two subsystems ever share a stream and results never depend on
iteration order or worker count.
"""

import copy
import csv
import hashlib
import json
import os
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .errors import EmptyDataset, InvalidConfig, MissingCheckpoint, MissingDataset
from .flow import Denoiser, FlowConfig, FlowTrainState
from .nn import AdamState, Parameters, load_checkpoint, save_checkpoint
from .protein import read_pdb_file
from .vae import VAE, TrainState, VaeConfig

DATA_ROOT_ENV = "PLFM_DATA_ROOT"


# ---------------------------------------------------------------------------
# paths and hashing


def data_root():
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


def resolve_path(path):
    """Relative paths are taken relative to the data root."""
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# layered configuration


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_assignment(text):
    """``a.b.c=value`` to a nested dict; the value is read as YAML."""
    if "=" not in text:
        raise InvalidConfig(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    node = yaml.safe_load(raw)
    for part in reversed(key.strip().split(".")):
        node = {part: node}
    return node


def layered_config(defaults, path=None, assignments=(), flags=None):
    """defaults < YAML file < ``key=value`` assignments < explicit flags."""
    cfg = copy.deepcopy(defaults)
    if path:
        p = Path(path)
        if not p.is_file():
            raise InvalidConfig(f"config file {p} not found")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise InvalidConfig(f"{p}: top level must be a mapping")
        cfg = deep_merge(cfg, loaded)
    for a in assignments:
        cfg = deep_merge(cfg, parse_assignment(a))
    return deep_merge(cfg, {k: v for k, v in (flags or {}).items() if v is not None})


VAE_DEFAULTS = {
    "dataset": None,
    "out": "runs/vae",
    "seed": 0,
    "model": {"beta": 1e-4, "fully_latent": False,
              "net": {"c_seq": 64, "c_pair": 32, "n_layers": 2, "n_heads": 4}},
    "train": {"steps": 5000, "batch_size": 16, "lr": 1e-3, "lr_floor": 0.05,
              "log_every": 100, "checkpoint_every": 1000},
}

FLOW_DEFAULTS = {
    "dataset": None,
    "vae": None,
    "out": "runs/flow",
    "seed": 0,
    "model": {"use_x": True, "motif_mode": None, "motif_detail": "all_atom",
              "net": {"c_seq": 64, "c_pair": 32, "n_layers": 2, "n_heads": 4}},
    "train": {"steps": 5000, "batch_size": 16, "lr": 1e-3, "lr_floor": 0.05,
              "log_every": 100, "checkpoint_every": 1000},
}


# ---------------------------------------------------------------------------
# datasets


def load_index(path):
    path = resolve_path(path)
    if not path.is_file():
        raise MissingDataset(f"dataset index {path} not found")
    return json.loads(path.read_text())


def load_dataset(index_path):
    index = load_index(index_path)
    base = resolve_path(index_path).parent
    entries = index.get("entries", [])
    if not entries:
        raise EmptyDataset(f"{index_path} lists no structures")
    out = []
    for e in entries:
        f = Path(e["path"])
        f = f if f.is_absolute() else base / f
        if not f.is_file():
            raise MissingDataset(f"indexed file {f} is missing")
        out.append(read_pdb_file(f))
    return out


# ---------------------------------------------------------------------------
# model checkpoints


def _params_to_arrays(params):
    return {f"param.{k}": v for k, v in params.numpy().items()}


def _params_from_arrays(arrays):
    p = Parameters()
    for k, v in arrays.items():
        if k.startswith("param."):
            p[k[len("param."):]] = v
    return p


def save_model(path, kind, model, state, seed, extra=None):
    arrays = _params_to_arrays(model.params)
    arrays.update(state.adam.to_arrays())
    arrays["curve"] = np.array(state.curve, dtype=np.float64)
    meta = dict(kind=kind, config=model.cfg.to_dict(), step=state.step, seed=seed,
                adam_step=state.adam.step, library_version=__version__, **(extra or {}))
    return save_checkpoint(path, arrays, meta)


def load_model(path, kind=None):
    """(model, train state, meta) from a checkpoint written by :func:`save_model`."""
    arrays, meta = load_checkpoint(resolve_path(path))
    if kind is not None and meta.get("kind") != kind:
        raise MissingCheckpoint(f"{path} holds a {meta.get('kind')!r} checkpoint, wanted {kind!r}")
    params = _params_from_arrays(arrays)
    if meta["kind"] == "vae":
        model = VAE(VaeConfig.from_dict(meta["config"]), params)
        state = TrainState(step=meta["step"])
    else:
        model = Denoiser(FlowConfig.from_dict(meta["config"]), params)
        state = FlowTrainState(step=meta["step"])
    state.adam = AdamState.from_arrays(arrays, meta["adam_step"])
    curve = arrays.get("curve")
    state.curve = [tuple(row) for row in curve.tolist()] if curve is not None and curve.size else []
    return model, state, meta


def write_curve_csv(path, curve, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in curve:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    return path


# ---------------------------------------------------------------------------
# schemas and manifests


def load_schema(name):
    text = resources.files("plfm").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_report(obj, name):
    jsonschema.validate(obj, load_schema(name))
    return obj


class Manifest:
    """Record of one command run; written once, never overwritten."""

    def __init__(self, command, config, seeds=None):
        self.command = command
        self.config = config
        self.seeds = seeds or {}
        self.checkpoints = {}
        self.artifacts = {}
        self.inputs = {}
        self.started = time.time()

    def add_artifact(self, path):
        self.artifacts[str(path)] = sha256_file(path)

    def add_checkpoint(self, path, role):
        self.checkpoints[role] = {"path": str(path), "sha256": sha256_file(path)}

    def add_input(self, role, value):
        self.inputs[role] = value

    def to_dict(self):
        return dict(command=self.command, config=self.config, seeds=self.seeds,
                    checkpoints=self.checkpoints, artifacts=self.artifacts, inputs=self.inputs,
                    wall_clock_seconds=round(time.time() - self.started, 3),
                    started_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(self.started)),
                    library_version=__version__)

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        body = validate_report(self.to_dict(), "manifest")
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(self.started))
        k = 0
        while True:
            path = out_dir / f"manifest_{self.command}_{stamp}_{k:03d}.json"
            try:
                with open(path, "x") as fh:  # exclusive create keeps manifests append-only
                    json.dump(body, fh, indent=2, sort_keys=True)
                return path
            except FileExistsError:
                k += 1


def find_manifests(directory, command=None):
    pattern = f"manifest_{command}_*.json" if command else "manifest_*.json"
    return sorted(Path(directory).glob(pattern))
