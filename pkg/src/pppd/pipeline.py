"""End-to-end orchestration: sample, embed, cluster, decompose, report.

Every stage persists its outputs in the run directory together with a
fingerprint (hash of its own settings, the upstream fingerprint and the
output file contents) so later stages can be re-run on their own.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .autoencoder import AutoencoderConfig, TrainedAutoencoder, encode, train_layerwise
from .clustering import Partition, density_cluster, jump_select, kmeans, participation_factors
from .core import InputError, LimitState, PairedDataset, _jsonable
from .decomposition import assemble_report
from .export import export_plots
from .manifold import DiffusionConfig, multiscale_embed
from .models import MODELS, make_model
from .sampling import HmcConfig, SmcConfig, direct_mc, smc_sample

STAGES = ("sample", "embed", "cluster", "decompose", "report")


class ConfigError(InputError):
    """Invalid or stale pipeline configuration."""


DEFAULTS = {
    "model": {"id": None, "params": {}},
    "limit_state": {"kind": "full"},
    "sampler": {"method": "direct", "n": 1000, "p0": 0.1, "n0": 1000, "seed": 0,
                "step_size": 0.1, "n_leapfrog": 5, "max_levels": 40, "packed": False},
    "embedding": {"method": "diffusion", "epsilon": None, "alpha": 1.0, "n_t": 4, "tau": 1,
                  "taus": [], "knn": None, "dt": 1.0, "layers": [100, 30, 3], "epochs": 1000,
                  "sparsity_weight": 0.0, "sparsity_target": 0.05, "fine_tune": True, "seed": 0},
    "clustering": {"method": "kmeans", "k": None, "kmax": 10, "seed": 0, "restarts": 10,
                   "dimension": "effective", "min_pts": None, "eps_radius": None,
                   "attach_noise": False},
    "decomposition": {"gmm": "feature"},
    "report": {"figures": True},
    "output": "run",
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    data: dict

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, obj))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def __getitem__(self, key):
        return self.data[key]

    def validate(self):
        mid = self.data["model"].get("id")
        if mid not in MODELS:
            raise ConfigError(f"unknown model id {mid!r}; choose from {sorted(MODELS)}")
        try:
            LimitState.from_spec(self.data["limit_state"])
        except (KeyError, InputError) as exc:
            raise ConfigError(f"invalid limit_state: {exc}") from None
        s = self.data["sampler"]
        if s["method"] not in ("direct", "smc"):
            raise ConfigError(f"sampler.method must be direct or smc, got {s['method']!r}")
        if s.get("seed") is None:
            raise ConfigError("sampler.seed is required")
        e = self.data["embedding"]
        if e["method"] not in ("diffusion", "autoencoder"):
            raise ConfigError(f"embedding.method must be diffusion or autoencoder")
        c = self.data["clustering"]
        if c["method"] not in ("kmeans", "dbscan"):
            raise ConfigError("clustering.method must be kmeans or dbscan")
        if self.data["decomposition"]["gmm"] not in ("off", "feature", "response-diag"):
            raise ConfigError("decomposition.gmm must be off, feature or response-diag")
        try:
            self.diffusion_config()
            if e["method"] == "autoencoder":
                self.autoencoder_config()
            if s["method"] == "smc":
                self.smc_config()
        except InputError as exc:
            raise ConfigError(str(exc)) from None

    def smc_config(self):
        s = self.data["sampler"]
        return SmcConfig(p0=s["p0"], n0=s["n0"], n_target=s["n"], seed=s["seed"],
                         hmc=HmcConfig(s["step_size"], s["n_leapfrog"]), max_levels=s["max_levels"])

    def diffusion_config(self):
        e = self.data["embedding"]
        return DiffusionConfig(epsilon=e["epsilon"], alpha=e["alpha"], n_t=e["n_t"], tau=e["tau"],
                               knn=e["knn"], dt=e["dt"])

    def autoencoder_config(self):
        e = self.data["embedding"]
        return AutoencoderConfig(layer_sizes=tuple(e["layers"]), sparsity_weight=e["sparsity_weight"],
                                 sparsity_target=e["sparsity_target"], max_epochs=e["epochs"],
                                 seed=e["seed"], fine_tune=e["fine_tune"])


@dataclass
class RunManifest:
    config: dict
    timings: dict = field(default_factory=dict)
    n_model_evals: int = 0
    artifacts: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    version: str = __version__
    stages: dict = field(default_factory=dict)

    def to_json(self):
        return {"config": self.config, "timings": self.timings, "n_model_evals": self.n_model_evals,
                "artifacts": sorted(set(self.artifacts)), "notes": self.notes,
                "version": self.version, "stages": self.stages}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["config"], obj.get("timings", {}), obj.get("n_model_evals", 0),
                   obj.get("artifacts", []), obj.get("notes", []), obj.get("version", ""),
                   obj.get("stages", {}))


# ---------------------------------------------------------------------------
# stage helpers shared with the CLI
# ---------------------------------------------------------------------------

def run_sampler(model, ls, sampler):
    if sampler["method"] == "direct":
        return direct_mc(model, ls, sampler["n"], seed=sampler["seed"])
    cfg = SmcConfig(p0=sampler["p0"], n0=sampler["n0"], n_target=sampler["n"], seed=sampler["seed"],
                    hmc=HmcConfig(sampler["step_size"], sampler["n_leapfrog"]),
                    max_levels=sampler.get("max_levels", 40))
    return smc_sample(model, ls, cfg).dataset


def write_levels(dataset, out):
    with open(os.path.join(out, "levels.json"), "w") as fh:
        json.dump(_jsonable({"p_estimate": dataset.meta.get("p_estimate"),
                             "levels": dataset.meta.get("levels", [])}), fh, indent=2)


def embed_dataset(y, emb):
    """Returns (coordinates, sidecar dict, extra coordinates by tau, autoencoder)."""
    if emb["method"] == "diffusion":
        cfg = DiffusionConfig(epsilon=emb["epsilon"], alpha=emb["alpha"], n_t=emb["n_t"],
                              tau=emb["tau"], knn=emb["knn"], dt=emb["dt"])
        taus = [cfg.tau] + [t for t in emb.get("taus", []) if t != cfg.tau]
        embs = multiscale_embed(y, cfg, taus)
        extra = {e.tau: e.coords for e in embs[1:]}
        return embs[0].coords, embs[0].spectrum_json(), extra, None
    cfg = AutoencoderConfig(layer_sizes=tuple(emb["layers"]), sparsity_weight=emb["sparsity_weight"],
                            sparsity_target=emb["sparsity_target"], max_epochs=emb["epochs"],
                            seed=emb["seed"], fine_tune=emb["fine_tune"])
    ae = train_layerwise(y, cfg)
    return encode(ae, y), {"method": "autoencoder", "config": cfg.to_json()}, {}, ae


def cluster_features(psi, cl):
    """Returns (partition, jump curve or None)."""
    if cl["method"] == "dbscan":
        return density_cluster(psi, cl["eps_radius"], cl["min_pts"],
                               cl.get("attach_noise", False)), None
    if cl["k"] is not None:
        return kmeans(psi, int(cl["k"]), seed=cl["seed"], restarts=cl["restarts"]), None
    jump = jump_select(psi, cl["kmax"], seed=cl["seed"], restarts=cl["restarts"],
                       dimension=cl["dimension"])
    part = jump.partitions[max(jump.k_star, 1) - 1]
    return part, jump


def partition_json(part, jump):
    obj = part.to_json()
    obj["participation_factors"] = participation_factors(part).tolist()
    obj["noise_fraction"] = part.noise_fraction
    obj["k_star"] = int(jump.k_star) if jump is not None else int(part.k)
    obj["jump"] = jump.to_json() if jump is not None else None
    return obj


def read_embedding(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_embedding(path, psi):
    cols = ",".join(f"psi{j + 1}" for j in range(psi.shape[1]))
    np.savetxt(path, psi, fmt="%.17g", delimiter=",", header=cols, comments="")


class _JumpView:
    """Minimal stand-in for a JumpCurve rebuilt from partition.json."""

    def __init__(self, obj):
        self._obj = obj
        self.flat = obj.get("flat", False)
        self.k_star = obj["k_star"]

    def to_json(self):
        return self._obj


def load_partition(path):
    with open(path) as fh:
        obj = json.load(fh)
    part = Partition.from_json(obj)
    jump = _JumpView(obj["jump"]) if obj.get("jump") else None
    return part, jump


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------

def _sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(block, upstream):
    blob = json.dumps({"block": block, "upstream": upstream}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


STAGE_BLOCKS = {"sample": ("model", "limit_state", "sampler"), "embed": ("embedding",),
                "cluster": ("clustering",), "decompose": ("decomposition",), "report": ("report",)}


def _stage_key(cfg, stage, upstream_outputs):
    block = {b: cfg[b] for b in STAGE_BLOCKS[stage]}
    return _key(block, upstream_outputs)


def _outputs_digest(out, files):
    return {f: _sha(os.path.join(out, f)) for f in sorted(files)}


def _check_cached(out, stage, key, stamps):
    st = stamps.get(stage)
    if st is None:
        raise ConfigError(f"--resume-from: no cached '{stage}' stage in {out}")
    if st["key"] != key:
        raise ConfigError(f"cached '{stage}' stage in {out} was produced with different settings; "
                          "rerun from an earlier stage")
    for f, digest in st["outputs"].items():
        p = os.path.join(out, f)
        if not os.path.exists(p) or _sha(p) != digest:
            raise ConfigError(f"cached artifact {p} is missing or modified; rerun from '{stage}'")
    return st


def _list_files(out, sub=""):
    base = os.path.join(out, sub)
    return sorted(os.path.join(sub, f) if sub else f for f in os.listdir(base)
                  if os.path.isfile(os.path.join(base, f)))


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

def run_pipeline(config, resume_from=None, out_dir=None):
    """Run all stages; ``resume_from`` reuses verified artifacts of earlier ones."""
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.from_json(config)
    cfg = config.data
    out = out_dir or cfg["output"]
    if resume_from is not None and resume_from not in STAGES:
        raise ConfigError(f"unknown stage {resume_from!r}; choose from {STAGES}")
    os.makedirs(out, exist_ok=True)
    man_path = os.path.join(out, "manifest.json")
    old = {}
    if resume_from is not None and os.path.exists(man_path):
        with open(man_path) as fh:
            old = json.load(fh).get("stages", {})
    start = STAGES.index(resume_from) if resume_from else 0
    manifest = RunManifest(_jsonable(cfg))
    model = make_model(cfg["model"]["id"], cfg["model"]["params"])
    ls = LimitState.from_spec(cfg["limit_state"])

    upstream = None
    data = {}
    for i, stage in enumerate(STAGES):
        key = _stage_key(cfg, stage, upstream)
        if i < start:
            st = _check_cached(out, stage, key, old)
            manifest.stages[stage] = st
            manifest.artifacts += list(st["outputs"])
            manifest.timings[stage] = 0.0
            upstream = st["outputs"]
            continue
        t0 = time.perf_counter()
        try:
            files = _STAGE_FUNCS[stage](cfg, out, model, ls, data, manifest)
        except Exception as exc:
            exc.args = (f"stage '{stage}' failed (artifacts in {out}): {exc}",) + exc.args[1:] \
                if exc.args else (f"stage '{stage}' failed",)
            raise
        manifest.timings[stage] = round(time.perf_counter() - t0, 3)
        digest = _outputs_digest(out, files)
        manifest.stages[stage] = {"key": key, "outputs": digest}
        manifest.artifacts += files
        upstream = digest
        with open(man_path, "w") as fh:
            json.dump(manifest.to_json(), fh, indent=2)
    manifest.artifacts.append("manifest.json")
    with open(man_path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=2)
    return manifest


def _load_dataset(out, data):
    if "dataset" not in data:
        data["dataset"] = PairedDataset.load(os.path.join(out, "dataset"))
    return data["dataset"]


def _stage_sample(cfg, out, model, ls, data, manifest):
    ds = run_sampler(model, ls, cfg["sampler"])
    path = os.path.join(out, "dataset")
    ds.save(path, packed=cfg["sampler"].get("packed", False))
    write_levels(ds, out)
    manifest.n_model_evals = int(ds.meta.get("n_model_evals", 0))
    data["dataset"] = ds
    return _list_files(out, "dataset") + ["levels.json"]


def _stage_embed(cfg, out, model, ls, data, manifest):
    ds = _load_dataset(out, data)
    psi, side, extra, ae = embed_dataset(ds.y, cfg["embedding"])
    files = ["embedding.csv"]
    write_embedding(os.path.join(out, "embedding.csv"), psi)
    if ae is not None:
        ae.save(os.path.join(out, "autoencoder.json"))
        files.append("autoencoder.json")
    with open(os.path.join(out, "spectrum.json"), "w") as fh:
        json.dump(_jsonable(side), fh, indent=2)
    files.append("spectrum.json")
    for tau, coords in sorted(extra.items()):
        name = f"embedding_tau{tau}.csv"
        write_embedding(os.path.join(out, name), coords)
        files.append(name)
    data["psi"], data["spectrum"] = psi, side
    return files


def _stage_cluster(cfg, out, model, ls, data, manifest):
    psi = data.get("psi")
    if psi is None:
        psi = data["psi"] = read_embedding(os.path.join(out, "embedding.csv"))
    part, jump = cluster_features(psi, cfg["clustering"])
    with open(os.path.join(out, "partition.json"), "w") as fh:
        json.dump(partition_json(part, jump), fh)
    data["partition"], data["jump"] = part, jump
    return ["partition.json"]


def _stage_decompose(cfg, out, model, ls, data, manifest):
    ds = _load_dataset(out, data)
    psi = data.get("psi")
    if psi is None:
        psi = data["psi"] = read_embedding(os.path.join(out, "embedding.csv"))
    if "partition" not in data:
        data["partition"], data["jump"] = load_partition(os.path.join(out, "partition.json"))
    if "spectrum" not in data:
        with open(os.path.join(out, "spectrum.json")) as fh:
            data["spectrum"] = json.load(fh)
    report = assemble_report(ds, psi, data["partition"],
                             {"gmm": cfg["decomposition"]["gmm"], "jump": data["jump"],
                              "input_spec": model.input_spec, "embedding_meta": data["spectrum"],
                              "seed": cfg["clustering"]["seed"]})
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(_jsonable(report.to_json()), fh, indent=2)
    data["report"] = report
    return ["report.json"]


def _stage_report(cfg, out, model, ls, data, manifest):
    if "report" not in data:
        _stage_decompose(cfg, out, model, ls, data, manifest)
    plots = os.path.join(out, "plots")
    res = export_plots(data["report"], plots, model=model, figures=cfg["report"]["figures"])
    manifest.notes += res["omitted"]
    return [os.path.join("plots", f) for f in res["files"] if f.endswith((".csv", ".json"))] + \
        [os.path.join("plots", f) for f in res["files"] if f.endswith(".png")]


_STAGE_FUNCS = {"sample": _stage_sample, "embed": _stage_embed, "cluster": _stage_cluster,
                "decompose": _stage_decompose, "report": _stage_report}
