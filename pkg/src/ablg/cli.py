"""Command-line interface.

Subcommands: dataset, train, ablate, quantify, fit, predict, evaluate,
margin, run. Exit codes: 0 success, 2 config error, 3 compute error,
4 format error. ABLG_WORKERS (or --workers) bounds the worker pool.
"""

import argparse
import glob
import json
import sys
from pathlib import Path

from . import __version__
from .ablation import resolve_layer, sweep_network
from .errors import AblgError, ConfigError, FormatError
from .formats import load_dataset, load_network, save_dataset, save_network
from .gap_model import GapSample, LinearGapModel, evaluate_protocol, fit, predict
from .harness import (ExperimentConfig, parallel_map, read_curve, run_experiment,
                      worker_count, write_curve, _json_dump, _stamp)
from .margin import collect_margins
from .sparsity import quantify_network
from .trainer import build_zoo, corrupt_labels, train


def _expand(patterns) -> list[str]:
    paths = []
    for pattern in patterns:
        hits = sorted(glob.glob(pattern))
        paths.extend(hits if hits else [pattern])
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"no such file(s): {missing}")
    return paths


def _load_gaps(manifest_path) -> dict:
    doc = json.loads(Path(manifest_path).read_text())
    return {rec["network_id"]: rec["gap"] for rec in doc.get("entries", [])}


def _load_samples(quantity_paths, gaps: dict) -> list[GapSample]:
    samples = []
    for path in quantity_paths:
        doc = json.loads(Path(path).read_text())
        net_id = doc["network_id"]
        if net_id not in gaps:
            raise ConfigError(f"{path}: network {net_id!r} not in the gaps manifest")
        samples.append(GapSample(net_id, doc["fused"]["zeta"],
                                 doc["fused"]["kappa"], gaps[net_id]))
    return samples


def cmd_dataset(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if config.dataset.get("kind", "synthetic") != "synthetic":
        raise ConfigError("dataset command only generates synthetic datasets")
    from .datasets import SyntheticSpec, make_synthetic
    keys = {k: v for k, v in config.dataset.items() if k != "kind"}
    if "shape" in keys:
        keys["shape"] = tuple(keys["shape"])
    spec = SyntheticSpec(seed=keys.pop("seed", config.seed), **keys)
    train_ds, test_ds = make_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_ds, out / "train.ds")
    save_dataset(test_ds, out / "test.ds")
    print(f"wrote {out}/train.ds ({len(train_ds)} samples) and "
          f"{out}/test.ds ({len(test_ds)} samples)")
    return 0


def cmd_train(args) -> int:
    raw = Path(args.config).read_bytes()
    doc = json.loads(raw)
    import hashlib
    grid_digest = hashlib.sha256(raw).hexdigest()[:16]
    config = ExperimentConfig(zoo=doc if ("configs" in doc or "grid" in doc)
                              else {"configs": [doc]})
    configs = config.train_configs()
    train_ds = load_dataset(args.data)
    test_ds = load_dataset(args.test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count(args.workers)
    zoo = build_zoo(configs, train_ds, test_ds,
                    map_fn=lambda f, it: parallel_map(f, it, workers))
    data_files = {}
    manifest = zoo.manifest()
    for entry, rec in zip(zoo.entries, manifest["entries"]):
        save_network(zoo.networks[entry.network_id],
                     out / f"{entry.network_id}.ablg")
        key = (entry.config.corruption_fraction, entry.config.seed)
        if key not in data_files:
            name = f"data-f{key[0]}-s{key[1]}.ds"
            save_dataset(corrupt_labels(train_ds, key[0], seed=key[1]), out / name)
            data_files[key] = name
        rec["weights"] = f"{entry.network_id}.ablg"
        rec["train_data"] = data_files[key]
    _json_dump(_stamp(manifest, grid_digest), out / "manifest.json")
    print(f"trained {len(zoo.entries)} networks ({len(zoo.failures)} failures), "
          f"gap spread {zoo.gap_spread:.3f}")
    return 0 if not zoo.failures else 3


def cmd_ablate(args) -> int:
    net = load_network(args.model)
    dataset = load_dataset(args.data)
    layer_id = resolve_layer(net, int(args.layer) if args.layer.lstrip("-").isdigit()
                             else args.layer)
    classes = None if args.classes == "all" else \
        [int(c) for c in args.classes.split(",")]
    workers = worker_count(args.workers)
    curves, skipped = sweep_network(net, dataset, layer_id, classes=classes,
                                    eval_on=args.eval_on,
                                    map_fn=lambda f, it: parallel_map(f, it, workers))
    out = Path(args.out)
    digest = net.config_digest or "-"
    for curve in curves:
        write_curve(curve, out / f"class_{curve.class_id:02d}.csv", digest,
                    {"network_id": net.net_id, "n_classes": dataset.n_classes})
    print(f"wrote {len(curves)} curve files to {out}"
          + (f" (skipped empty classes {skipped})" if skipped else ""))
    return 0


def cmd_quantify(args) -> int:
    csv_paths = sorted(Path(args.curves).glob("class_*.csv"))
    if not csv_paths:
        raise ConfigError(f"no class_*.csv curve files under {args.curves}")
    curves = [read_curve(p) for p in csv_paths]
    first_header = json.loads(csv_paths[0].with_suffix(".json").read_text())
    if args.chance is not None:
        acc_chance = args.chance
    elif "n_classes" in first_header:
        acc_chance = 1.0 / first_header["n_classes"]
    else:
        raise ConfigError("curve headers lack n_classes; pass --chance explicitly")
    q = quantify_network(curves, acc_chance,
                         network_id=first_header.get("network_id", ""),
                         normalize_by=args.normalize_by)
    _json_dump(_stamp(q.to_dict(), first_header.get("config_digest", "-")),
               Path(args.out))
    print(f"fused zeta={q.zeta:.4f} kappa={q.kappa:.4f} -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    samples = _load_samples(_expand(args.quantities), _load_gaps(args.gaps))
    model = fit(samples)
    _json_dump(_stamp(model.to_dict(), "-"), Path(args.out))
    print(f"fit over {len(samples)} networks: a={model.a:.4f} b={model.b:.4f} "
          f"c={model.c:.4f} pearson={model.pearson_r:.4f} ssr={model.ssr:.4f}")
    return 0


def cmd_predict(args) -> int:
    model = LinearGapModel.from_dict(json.loads(Path(args.model).read_text()))
    doc = json.loads(Path(args.quantities).read_text())
    estimate = predict(model, doc["fused"]["zeta"], doc["fused"]["kappa"])
    print(f"{estimate!r}")
    if args.out:
        _json_dump({"network_id": doc.get("network_id", ""),
                    "estimated_gap": estimate}, Path(args.out))
    return 0


def cmd_evaluate(args) -> int:
    samples = _load_samples(_expand(args.quantities), _load_gaps(args.gaps))
    result = evaluate_protocol(samples, train_fraction=args.train_frac,
                               repeats=args.repeats, seed=args.seed)
    doc = {"train_fraction": args.train_frac,
           "repeats": [{"train_idx": r.train_idx, "test_idx": r.test_idx,
                        "model": r.model.to_dict(), "test_ssr": r.test_ssr}
                       for r in result.repeats],
           "summary": result.summary()}
    _json_dump(_stamp(doc, "-"), Path(args.out))
    s = result.summary()
    print(f"{args.repeats} repeats: median test SSR={s['test_ssr']['median']:.5f} "
          f"max={s['test_ssr']['max']:.5f}")
    return 0


def cmd_margin(args) -> int:
    net = load_network(args.model)
    dataset = load_dataset(args.data)
    dist = collect_margins(net, dataset, network_id=net.net_id)
    _json_dump(_stamp(dist.to_dict(include_distances=args.include_distances),
                      net.config_digest or "-"), Path(args.out))
    f = dist.features
    print(f"margins: median={f['median']:.4f} iqr={f['iqr']:.4f} "
          f"undefined={dist.undefined_count} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    result = run_experiment(config, args.out, workers=args.workers)
    if not result.ok:
        print(f"experiment failed in stage {result.failure['stage']}: "
              f"{result.failure['error']}", file=sys.stderr)
        return 4 if result.failure["kind"] == "FormatError" else 3
    summary = result.report.get("evaluation", {})
    print(f"experiment complete in {result.out_dir}; "
          f"zoo gap spread {result.report['zoo']['gap_spread']:.3f}"
          + (f", median test SSR {summary['test_ssr']['median']:.5f}"
             if summary else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ablg",
        description="Estimate generalization gaps from cumulative unit ablation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the synthetic dataset files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("train", help="train a zoo of networks")
    p.add_argument("--config", required=True, help="grid JSON")
    p.add_argument("--data", required=True, help="training dataset (.ds)")
    p.add_argument("--test", required=True, help="test dataset (.ds)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="sweep cumulative unit ablation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True,
                   help="the dataset the network was trained on")
    p.add_argument("--layer", default="last-conv",
                   help="last-conv | hidden-dense | layer index")
    p.add_argument("--classes", default="all")
    p.add_argument("--eval-on", choices=("class", "dataset"), default="class")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("quantify", help="turning points and fused zeta/kappa")
    p.add_argument("--curves", required=True, help="directory of curve CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--chance", type=float, default=None)
    p.add_argument("--normalize-by", type=float, default=None,
                   help="divide kappa by this training accuracy")
    p.set_defaults(fn=cmd_quantify)

    p = sub.add_parser("fit", help="fit the linear gap model")
    p.add_argument("--quantities", nargs="+", required=True)
    p.add_argument("--gaps", required=True, help="zoo manifest JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("predict", help="estimate a gap from quantities")
    p.add_argument("--model", required=True)
    p.add_argument("--quantities", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="repeated split-evaluation protocol")
    p.add_argument("--quantities", nargs="+", required=True)
    p.add_argument("--gaps", required=True)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--train-frac", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("margin", help="margin distribution of one network")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-distances", action="store_true")
    p.set_defaults(fn=cmd_margin)

    p = sub.add_parser("run", help="run a full experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    except AblgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
