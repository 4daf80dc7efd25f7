"""End-to-end experiment orchestration and report emission.

Stages: dataset -> zoo -> curves -> quantities -> fit -> evaluate -> margin
-> report. Every output JSON embeds the experiment config digest and the
tool version; no output carries a timestamp, so reruns with the same
config and seed are byte-identical. A stage failure stops the pipeline but
keeps everything already written, plus a failure manifest.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import AblationCurve, resolve_layer, sweep_network
from .datasets import LabeledDataset, SyntheticSpec, make_synthetic
from .errors import AblgError, ConfigError, DomainError
from .formats import load_dataset, save_dataset, save_network
from .gap_model import GapSample, LinearGapModel, evaluate_protocol, fit
from .margin import collect_margins, fit_margin_model, margin_protocol
from .sparsity import quantify_network
from .trainer import TrainConfig, ZooResult, build_zoo, corrupt_labels

WORKERS_ENV = "ABLG_WORKERS"

# normalize kappa by training accuracy once zoo members differ by more than this
NORMALIZE_THRESHOLD = 0.01


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map over a bounded worker pool (serial when workers=1)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: dict = field(default_factory=dict)      # {"kind": "synthetic", ...} | {"kind": "file", ...}
    zoo: dict = field(default_factory=dict)          # {"configs": [...]} | {"grid": {...}}
    ablation: dict = field(default_factory=dict)     # {"layer": ..., "classes": ..., "eval_on": ...}
    protocol: dict = field(default_factory=dict)     # {"train_fraction": ..., "repeats": ...}

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        known = set(ExperimentConfig.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown experiment config fields: {sorted(extra)}")
        cfg = ExperimentConfig(**d)
        cfg.validate()
        return cfg

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from None
        return ExperimentConfig.from_dict(raw)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        kind = self.dataset.get("kind", "synthetic")
        if kind not in ("synthetic", "file"):
            raise ConfigError(f"dataset kind must be 'synthetic' or 'file', got {kind!r}")
        if kind == "file":
            for key in ("train", "test"):
                if key not in self.dataset:
                    raise ConfigError(f"file dataset config needs a {key!r} path")
        self.train_configs()
        proto = self.protocol
        frac = proto.get("train_fraction", 0.9)
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"protocol train_fraction must be in (0, 1), got {frac}")
        if proto.get("repeats", 20) < 1:
            raise ConfigError("protocol repeats must be >= 1")
        eval_on = self.ablation.get("eval_on", "class")
        if eval_on not in ("class", "dataset"):
            raise ConfigError(f"ablation eval_on must be 'class' or 'dataset', got {eval_on!r}")
        return self

    def train_configs(self) -> list[TrainConfig]:
        """Materialize the zoo (grid product and/or explicit configs)."""
        out = []
        if "grid" in self.zoo:
            grid = dict(self.zoo["grid"])
            base = {k: v for k, v in grid.items()
                    if k not in ("corruption_fractions", "seeds", "strategies")}
            fractions = grid.get("corruption_fractions", [0.0])
            seeds = grid.get("seeds", [0])
            strategies = grid.get("strategies", [{}])
            for strategy in strategies:
                for frac in fractions:
                    for seed in seeds:
                        d = dict(base, **strategy,
                                 corruption_fraction=frac, seed=seed)
                        out.append(TrainConfig.from_dict(d))
        out.extend(TrainConfig.from_dict(d) for d in self.zoo.get("configs", []))
        if not out:
            raise ConfigError("zoo config needs a nonempty 'grid' or 'configs'")
        return out


def _json_dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _stamp(obj: dict, digest: str) -> dict:
    obj["config_digest"] = digest
    obj["version"] = __version__
    return obj


def _stamp_sidecar(path: Path, digest: str):
    """Merge experiment provenance into a binary artifact's JSON sidecar."""
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    meta["experiment_digest"] = digest
    meta["version"] = __version__
    _json_dump(meta, sidecar)


def write_curve(curve: AblationCurve, csv_path: Path, digest: str,
                baseline_extra: dict | None = None):
    """CSV with columns n, E, E_r plus a JSON sidecar header."""
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_digest={digest} version={__version__}", "n,E,E_r"]
    for n in range(curve.m + 1):
        lines.append(f"{n},{float(curve.e_desc[n])!r},{float(curve.e_asc[n])!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    header = {"class": curve.class_id, "layer": curve.layer_id, "M": curve.m,
              "baseline": curve.baseline}
    header.update(baseline_extra or {})
    _json_dump(_stamp(header, digest), csv_path.with_suffix(".json"))


def read_curve(csv_path) -> AblationCurve:
    csv_path = Path(csv_path)
    header = json.loads(csv_path.with_suffix(".json").read_text())
    e, e_r = [], []
    for line in csv_path.read_text().splitlines():
        if line.startswith("#") or line.startswith("n,") or not line.strip():
            continue
        _, ev, rv = line.split(",")
        e.append(float(ev))
        e_r.append(float(rv))
    return AblationCurve(int(header["class"]), int(header["layer"]),
                         len(e) - 1, np.array(e), np.array(e_r))


def corrupted_view(train_ds: LabeledDataset, config: TrainConfig) -> LabeledDataset:
    """The training data exactly as the given zoo member saw it."""
    return corrupt_labels(train_ds, config.corruption_fraction, seed=config.seed)


def normalization_for(entries) -> tuple[str, dict]:
    """Decide kappa normalization for a zoo: 'train_acc' once accuracies diverge."""
    accs = [e.train_accuracy for e in entries]
    if len(accs) >= 2 and max(accs) - min(accs) > NORMALIZE_THRESHOLD:
        return "train_acc", {e.network_id: e.train_accuracy for e in entries}
    return "none", {}


DESK_BASE = {"template": "cnn-m32", "epochs": 400, "batch_size": 64,
             "learning_rate": 0.02, "momentum": 0.9}


def desk_config(seed: int = 0) -> ExperimentConfig:
    """The bundled desk-scale experiment: a 16-network zoo on the synthetic
    10-class set, spanning gaps from ~0 to ~0.9 via label corruption, with
    ablation at the hidden dense layer (M=128).

    All members share one training strategy: at this scale every strategy
    knob (momentum, dropout, weight decay, batch size) shifts the sparsity
    quantities off the corruption-driven manifold, so the gap variation
    comes from corruption fractions and seeds alone.
    """
    extra = [dict(DESK_BASE, corruption_fraction=f, seed=s)
             for f in (0.25, 0.5, 0.75) for s in (2, 3)]
    return ExperimentConfig.from_dict({
        "seed": seed,
        "dataset": {"kind": "synthetic", "n_classes": 10, "shape": [1, 12, 12],
                    "train_per_class": 96, "test_per_class": 64, "noise": 1.0},
        "zoo": {
            "grid": dict(DESK_BASE,
                         corruption_fractions=[0.0, 0.25, 0.5, 0.75, 1.0],
                         seeds=[0, 1]),
            "configs": extra,
        },
        "ablation": {"layer": "hidden-dense", "classes": "all"},
        "protocol": {"train_fraction": 0.9, "repeats": 20},
    })


@dataclass
class ExperimentResult:
    out_dir: Path
    report: dict
    failure: dict | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def run_experiment(config: ExperimentConfig, out_dir, workers: int | None = None) -> ExperimentResult:
    """Run the full pipeline into `out_dir`; idempotent under config+seed."""
    config.validate()
    digest = config.digest()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count(workers)
    _json_dump(_stamp(asdict(config), digest), out / "config.json")

    report: dict = {"seed": config.seed, "skipped": {}}
    stage = "dataset"
    try:
        # --- datasets -------------------------------------------------------
        if config.dataset.get("kind", "synthetic") == "synthetic":
            keys = {k: v for k, v in config.dataset.items() if k != "kind"}
            if "shape" in keys:
                keys["shape"] = tuple(keys["shape"])
            spec = SyntheticSpec(seed=keys.pop("seed", config.seed), **keys)
            train_ds, test_ds = make_synthetic(spec)
            save_dataset(train_ds, out / "data" / "train.ds")
            save_dataset(test_ds, out / "data" / "test.ds")
            _stamp_sidecar(out / "data" / "train.ds", digest)
            _stamp_sidecar(out / "data" / "test.ds", digest)
        else:
            train_ds = load_dataset(config.dataset["train"])
            test_ds = load_dataset(config.dataset["test"])
        report["dataset"] = {"n_classes": train_ds.n_classes,
                             "sample_shape": list(train_ds.sample_shape),
                             "train_size": len(train_ds), "test_size": len(test_ds)}

        # --- zoo --------------------------------------------------------------
        stage = "zoo"
        configs = config.train_configs()
        zoo = build_zoo(configs, train_ds, test_ds,
                        map_fn=lambda f, it: parallel_map(f, it, workers))
        zoo_dir = out / "zoo"
        zoo_dir.mkdir(exist_ok=True)
        entry_of = {}
        for entry in zoo.entries:
            entry_of[entry.network_id] = entry
            save_network(zoo.networks[entry.network_id],
                         zoo_dir / f"{entry.network_id}.ablg")
            _stamp_sidecar(zoo_dir / f"{entry.network_id}.ablg", digest)
        data_files = {}
        for entry in zoo.entries:
            key = (entry.config.corruption_fraction, entry.config.seed)
            if key not in data_files:
                name = f"data-f{key[0]}-s{key[1]}.ds"
                save_dataset(corrupted_view(train_ds, entry.config), zoo_dir / name)
                _stamp_sidecar(zoo_dir / name, digest)
                data_files[key] = name
        manifest = zoo.manifest()
        for rec in manifest["entries"]:
            key = (rec["config"]["corruption_fraction"], rec["config"]["seed"])
            rec["weights"] = f"zoo/{rec['network_id']}.ablg"
            rec["train_data"] = f"zoo/{data_files[key]}"
        _json_dump(_stamp(manifest, digest), out / "zoo" / "manifest.json")
        report["zoo"] = {"trained": len(zoo.entries), "failed": len(zoo.failures),
                         "gap_spread": zoo.gap_spread}
        if zoo.failures:
            report["zoo"]["failures"] = zoo.failures
        if not zoo.entries:
            raise DomainError("every zoo member failed to train")

        # --- curves -----------------------------------------------------------
        stage = "curves"
        selector = config.ablation.get("layer", "last-conv")
        eval_on = config.ablation.get("eval_on", "class")
        classes = config.ablation.get("classes", "all")
        class_list = None if classes == "all" else [int(j) for j in classes]
        curves_of: dict[str, list[AblationCurve]] = {}
        skipped_of: dict[str, list[int]] = {}

        def _sweep(entry):
            net = zoo.networks[entry.network_id]
            ds = corrupted_view(train_ds, entry.config)
            layer_id = resolve_layer(net, selector)
            return sweep_network(net, ds, layer_id, classes=class_list,
                                 eval_on=eval_on)

        for entry, (curves, skipped) in zip(
                zoo.entries, parallel_map(_sweep, zoo.entries, workers)):
            curves_of[entry.network_id] = curves
            skipped_of[entry.network_id] = skipped
            for curve in curves:
                write_curve(curve, out / "curves" / entry.network_id /
                            f"class_{curve.class_id:02d}.csv", digest,
                            {"network_id": entry.network_id})
        report["curves"] = {"layer_selector": selector, "eval_on": eval_on}

        # --- quantities -------------------------------------------------------
        stage = "quantities"
        mode, norm_by = normalization_for(zoo.entries)
        acc_chance = config.ablation.get("acc_chance", 1.0 / train_ds.n_classes)
        quantities = {}
        for entry in zoo.entries:
            q = quantify_network(curves_of[entry.network_id], acc_chance,
                                 network_id=entry.network_id,
                                 normalize_by=norm_by.get(entry.network_id),
                                 skipped_classes=skipped_of[entry.network_id])
            quantities[entry.network_id] = q
            _json_dump(_stamp(q.to_dict(), digest),
                       out / "quantities" / f"{entry.network_id}.json")
        report["quantities"] = {"normalization": mode, "acc_chance": acc_chance}

        # --- fit + evaluate ---------------------------------------------------
        stage = "fit"
        samples = [GapSample(e.network_id, quantities[e.network_id].zeta,
                             quantities[e.network_id].kappa, e.gap)
                   for e in zoo.entries]
        scatter = [{"network_id": s.network_id, "zeta": s.zeta,
                    "kappa": s.kappa, "gap": s.gap} for s in samples]
        model = None
        if len(samples) >= 3:
            model = fit(samples)
            _json_dump(_stamp(model.to_dict(), digest), out / "model.json")
            report["model"] = model.to_dict()
        else:
            report["skipped"]["fit"] = f"needs >= 3 networks, zoo has {len(samples)}"

        stage = "evaluate"
        proto_cfg = config.protocol
        repeats = int(proto_cfg.get("repeats", 20))
        train_fraction = float(proto_cfg.get("train_fraction", 0.9))
        n_train = int(round(train_fraction * len(samples)))
        if model is not None and 3 <= n_train < len(samples):
            proto = evaluate_protocol(samples, train_fraction=train_fraction,
                                      repeats=repeats, seed=config.seed)
            eval_doc = {
                "train_fraction": train_fraction,
                "repeats": [{"train_idx": r.train_idx, "test_idx": r.test_idx,
                             "model": r.model.to_dict(), "test_ssr": r.test_ssr}
                            for r in proto.repeats],
                "summary": proto.summary(),
            }
            _json_dump(_stamp(eval_doc, digest), out / "eval.json")
            report["evaluation"] = proto.summary()
        else:
            report["skipped"]["evaluate"] = \
                f"degenerate split sizes for {len(samples)} networks"

        # --- margin baseline --------------------------------------------------
        stage = "margin"
        def _margins(entry):
            net = zoo.networks[entry.network_id]
            ds = corrupted_view(train_ds, entry.config)
            return collect_margins(net, ds, network_id=entry.network_id)

        margins = parallel_map(_margins, zoo.entries, workers)
        for dist in margins:
            _json_dump(_stamp(dist.to_dict(), digest),
                       out / "margins" / f"{dist.network_id}.json")
        gaps = [e.gap for e in zoo.entries]
        feats = [m.features for m in margins]
        if len(feats) >= 5:
            margin_model = fit_margin_model(feats, gaps)
            margin_doc = margin_model.to_dict()
            if model is not None and 5 <= n_train < len(samples):
                mp = margin_protocol(feats, gaps, train_fraction=train_fraction,
                                     repeats=repeats, seed=config.seed)
                margin_doc["protocol"] = mp
                margin_doc["comparison"] = {
                    "sparsity": {"pearson_train": model.pearson_r,
                                 "ssr_train": model.ssr},
                    "margin": {"pearson_train": margin_model.pearson_r,
                               "ssr_train": margin_model.ssr},
                }
            _json_dump(_stamp(margin_doc, digest), out / "margin_model.json")
            report["margin_model"] = {"pearson_train": margin_model.pearson_r,
                                      "ssr_train": margin_model.ssr}
        else:
            report["skipped"]["margin_model"] = \
                f"needs >= 5 networks, zoo has {len(feats)}"

        # --- report -----------------------------------------------------------
        stage = "report"
        report["scatter"] = scatter
        _json_dump(_stamp(report, digest), out / "report.json")
        return ExperimentResult(out, report)

    except AblgError as e:
        failure = {"stage": stage, "error": str(e), "kind": type(e).__name__}
        _json_dump(_stamp({"failure": failure, "partial_report": report}, digest),
                   out / "failures.json")
        return ExperimentResult(out, report, failure=failure)
