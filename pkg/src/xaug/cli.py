"""Command-line front end.

Subcommands: gen-data, run, explain, prune. Global options (--seed, --seeds,
--jobs, --config, --out) resolve with precedence defaults < config file <
environment < flags; environment overrides use the XAUG_ prefix (XAUG_SEED,
XAUG_SEEDS, XAUG_JOBS, XAUG_OUT, XAUG_CONFIG). Every invocation writes one
manifest.json recording the resolved configuration and the SHA-256 of every
produced file, so reruns with identical arguments can be verified
byte-for-byte.

Exit codes: 0 success, 2 usage/configuration, 3 data or consistency error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, attribution, datasets, harness, pruning
from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    NumericError,
    ShapeError,
    UsageError,
)
from .network import evaluate, forward, load_network, save_network

ENV_PREFIX = "XAUG_"
ENV_KEYS = ("seed", "seeds", "jobs", "out", "config")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utcnow():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def write_manifest(out_dir, command, resolved, inputs, outputs, aux, started, wall_clock,
                   seeds=()):
    manifest = {
        "tool": "xaug",
        "version": __version__,
        "command": command,
        "resolved_config": resolved,
        "seeds": list(seeds),
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in outputs},
        "auxiliary": [os.path.relpath(p, out_dir) for p in aux],
        "started": started,
        "finished": _utcnow(),
        "wall_clock_seconds": wall_clock,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def resolve_options(args, defaults):
    """defaults < config file < environment < explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        file_doc = _load_config_file(config_path)
        unknown = set(file_doc) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        resolved.update(file_doc)
    env_types = {"seed": int, "seeds": int, "jobs": int, "out": str}
    for key in ENV_KEYS:
        if key == "config":
            continue
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None and key in defaults:
            resolved[key] = env_types.get(key, str)(raw)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _add_common(parser):
    parser.add_argument("--out", help="output directory (default: ./runs/<command>)")
    parser.add_argument("--config", help="JSON config file merged below flags")
    parser.add_argument("--seed", type=int, help="base seed (default 0)")


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    defaults = {"seed": 0, "out": os.path.join("runs", "gen-data"), "config": None,
                "counts": "300,50"}
    opts = resolve_options(args, defaults)
    out_dir = opts["out"]
    os.makedirs(out_dir, exist_ok=True)
    started, t0 = _utcnow(), time.monotonic()
    outputs = []
    if args.dataset == "imbalanced":
        counts = tuple(int(c) for c in str(opts["counts"]).split(","))
        data = datasets.gen_imbalanced(opts["seed"], counts)
        path = os.path.join(out_dir, "imbalanced.csv")
        datasets.dataset_to_csv(data, path)
        outputs.append(path)
        print(f"imbalanced: {data.n_samples} x {data.n_dims} (counts {counts})")
    else:
        train, test = datasets.GENERATORS[args.dataset](opts["seed"])
        for ds, tag in ((train, "train"), (test, "test")):
            path = os.path.join(out_dir, f"{args.dataset}_{tag}.csv")
            datasets.dataset_to_csv(ds, path)
            outputs.append(path)
            print(f"{args.dataset} {tag}: {ds.n_samples} x {ds.n_dims}")
    write_manifest(out_dir, ["gen-data", args.dataset], opts, [], outputs, [],
                   started, time.monotonic() - t0, seeds=[opts["seed"]])
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

FAMILY_ALIASES = {"attention": "attention_mask", "dropout": "xai_dropout"}


def _augment_spec_from(opts):
    family = opts["augment"]
    family = FAMILY_ALIASES.get(family, family)
    if family not in harness.FAMILIES:
        raise UsageError(
            f"unknown augment family {family!r}; valid: {', '.join(harness.FAMILIES)}"
        )
    kwargs = {"family": family}
    for key, attr in (
        ("layer", "layer"), ("rate", "rate"), ("lam", "weight"),
        ("alpha", "alpha"), ("beta", "beta"), ("policy", "policy"),
        ("orientation", "orientation"), ("penalty", "penalty"),
        ("penalty_target", "penalty_target"), ("prune_fraction", "prune_fraction"),
        ("fine_tune_iterations", "fine_tune_iterations"),
    ):
        if opts.get(key) is not None:
            kwargs[attr] = opts[key]
    if opts.get("mask") is not None:
        kwargs["mask"] = tuple(int(v) for v in str(opts["mask"]).split(","))
    if opts.get("class_factors") is not None:
        kwargs["class_factors"] = tuple(float(v) for v in str(opts["class_factors"]).split(","))
    return harness.AugmentationSpec(**kwargs)


def _run_one_seed(payload):
    config, seed = payload
    log, net = harness.run_single(config, seed)
    return log, net


def cmd_run(args):
    defaults = {
        "seed": 0, "seeds": None, "jobs": 1, "out": None, "config": None,
        "augment": "none", "layer": None, "rate": None, "lam": None,
        "alpha": None, "beta": None, "policy": None, "orientation": None,
        "penalty": None, "penalty_target": None, "prune_fraction": None,
        "fine_tune_iterations": None, "mask": None, "class_factors": None,
        "xai_method": None, "figures": True,
    }
    opts = resolve_options(args, defaults)
    preset = harness.PRESETS[args.experiment]
    spec = _augment_spec_from(opts)
    default_count = len(harness.EQUALITY_DEFAULT_SEEDS
                        if args.experiment == "equality" else harness.TOY_DEFAULT_SEEDS)
    n_seeds = opts["seeds"] if opts["seeds"] is not None else default_count
    if n_seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = tuple(opts["seed"] + i for i in range(n_seeds))
    config = preset(augmentation=spec, seeds=seeds)
    if opts["xai_method"] is not None:
        config = harness.replace(
            config,
            attribution_method=attribution.AttributionMethod(kind=opts["xai_method"]),
        )

    out_dir = opts["out"] or os.path.join("runs", f"{args.experiment}_{spec.family}")
    opts["out"] = out_dir
    os.makedirs(out_dir, exist_ok=True)
    started, t0 = _utcnow(), time.monotonic()

    jobs = max(1, int(opts["jobs"]))
    payloads = [(config, seed) for seed in seeds]
    if jobs == 1 or len(seeds) == 1:
        results = [_run_one_seed(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one_seed, payloads))
    logs = [log for log, _ in results]
    nets = [net for _, net in results]

    wall = time.monotonic() - t0
    outputs = harness.write_run_outputs(out_dir, config, logs, started, wall)
    aux = [os.path.join(out_dir, f"{config.experiment}_{spec.family}_metadata.json")]
    if opts["figures"]:
        from . import figures
        agg = harness.aggregate_seeds(logs)
        data = harness._make_data(config, harness._derive_seeds(seeds[0])[0])
        outputs += figures.render_run_figures(out_dir, config, logs, agg, nets, data)
    write_manifest(out_dir, ["run", args.experiment], _manifest_opts(opts), [],
                   outputs, aux, started, time.monotonic() - t0, seeds=seeds)
    final_acc = np.mean([log.test_acc[-1] for log in logs])
    print(f"{args.experiment}/{spec.family}: {len(seeds)} seeds, "
          f"mean final test accuracy {final_acc:.3f}, outputs in {out_dir}")
    return 0


def _manifest_opts(opts):
    return {k: v for k, v in opts.items() if v is not None}


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def cmd_explain(args):
    defaults = {
        "seed": 0, "out": None, "config": None, "model": None, "data": None,
        "method": "lrp", "target": "true_class", "layer": 0,
        "normalize": "none", "epsilon": attribution.DEFAULT_EPSILON,
    }
    opts = resolve_options(args, defaults)
    if not opts["model"] or not opts["data"]:
        raise UsageError("explain needs --model and --data")
    out_dir = opts["out"] or os.path.join("runs", "explain")
    os.makedirs(out_dir, exist_ok=True)
    started, t0 = _utcnow(), time.monotonic()

    net = load_network(opts["model"])
    data = datasets.dataset_from_csv(opts["data"])
    if data.n_dims != net.layers[0].in_units:
        raise ConsistencyError(
            f"dataset has {data.n_dims} features, model expects {net.layers[0].in_units}"
        )
    target = opts["target"]
    if isinstance(target, str) and target not in (attribution.TRUE_CLASS,
                                                  attribution.PREDICTED_CLASS):
        target = int(target)
    rules = None
    if opts["method"] == attribution.LRP:
        rules = {l: attribution.LrpRule("epsilon", float(opts["epsilon"]))
                 for l in range(net.layer_count)}
    method = attribution.AttributionMethod(kind=opts["method"], lrp_rules=rules,
                                           target=target)
    trace = forward(net, data.features)
    maps = attribution.explain(net, trace, data.labels, method)
    layer = int(opts["layer"])
    if opts["normalize"] == "signed":
        maps.layers[layer] = attribution.normalize_signed(maps.layers[layer])
    elif opts["normalize"] == "abs":
        maps.layers[layer] = attribution.normalize_abs(maps.layers[layer])
    path = os.path.join(out_dir, "relevance.csv")
    attribution.relevance_to_csv(maps, layer, path)
    write_manifest(out_dir, ["explain"], _manifest_opts(opts),
                   [opts["model"], opts["data"]], [path], [],
                   started, time.monotonic() - t0, seeds=[opts["seed"]])
    print(f"wrote {path}: {maps.layers[layer].shape[0]} rows, layer {layer}")
    return 0


# ---------------------------------------------------------------------------
# prune
# ---------------------------------------------------------------------------

def cmd_prune(args):
    defaults = {
        "seed": 0, "out": None, "config": None, "model": None, "data": None,
        "count": 0, "fine_tune_iterations": 0, "learning_rate": 0.01,
    }
    opts = resolve_options(args, defaults)
    if not opts["model"] or not opts["data"]:
        raise UsageError("prune needs --model and --data")
    out_dir = opts["out"] or os.path.join("runs", "prune")
    os.makedirs(out_dir, exist_ok=True)
    started, t0 = _utcnow(), time.monotonic()

    net = load_network(opts["model"])
    data = datasets.dataset_from_csv(opts["data"])
    acc_before = evaluate(net, data.features, data.labels)
    importance = pruning.neuron_importance(net, data.features, data.labels)
    counts = [int(opts["count"])] * (net.layer_count - 1)
    pruned = pruning.prune_neurons(net, importance, counts)

    fine_tuned = int(opts["fine_tune_iterations"])
    if fine_tuned > 0:
        from .network import backward, sgd_momentum_step
        rng = np.random.default_rng(opts["seed"])
        state = None
        for _ in range(fine_tuned):
            idx = rng.choice(data.n_samples, size=min(32, data.n_samples), replace=False)
            trace = forward(pruned, data.features[idx])
            grads = backward(pruned, trace, data.labels[idx])
            pruned, state = sgd_momentum_step(pruned, grads, state,
                                              float(opts["learning_rate"]), 0.9)
    acc_after = evaluate(pruned, data.features, data.labels)

    model_path = os.path.join(out_dir, "pruned_model.json")
    save_network(pruned, model_path)
    report = {
        "counts_per_hidden_layer": counts,
        "layers": pruning.pruned_unit_report(importance, counts),
        "reference_accuracy_before": acc_before,
        "reference_accuracy_after": acc_after,
        "accuracy_delta": acc_after - acc_before,
        "fine_tune_iterations": fine_tuned,
    }
    report_path = os.path.join(out_dir, "prune_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_manifest(out_dir, ["prune"], _manifest_opts(opts),
                   [opts["model"], opts["data"]], [model_path, report_path], [],
                   started, time.monotonic() - t0, seeds=[opts["seed"]])
    print(f"pruned {sum(counts)} units; reference accuracy "
          f"{acc_before:.3f} -> {acc_after:.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="xaug",
        description="Train small dense networks with explanation-guided augmentation.",
    )
    parser.add_argument("--version", action="version", version=f"xaug {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset as CSV")
    p.add_argument("dataset", choices=["toy1", "toy2", "toy3", "imbalanced"])
    p.add_argument("--counts", help="per-class counts for 'imbalanced', e.g. 300,50")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run an experiment preset")
    p.add_argument("experiment", choices=sorted(harness.PRESETS))
    p.add_argument("--augment", help="augmentation family (default none)")
    p.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--jobs", type=int, help="parallel seed runs (default 1)")
    p.add_argument("--layer", type=int, help="augmented layer index")
    p.add_argument("--rate", type=float, help="dropout rate")
    p.add_argument("--lam", type=float, help="regularizer / gradient-mask weight")
    p.add_argument("--alpha", type=float, help="dual objective weight (plain loss)")
    p.add_argument("--beta", type=float, help="dual objective weight (masked loss)")
    p.add_argument("--mask", help="ground-truth relevance mask, e.g. 1,0")
    p.add_argument("--class-factors", dest="class_factors",
                   help="loss scaling factors, e.g. 2.0,1.0")
    p.add_argument("--policy", choices=list(harness.redistribution.METRIC_KINDS),
                   help="redistribution metric")
    p.add_argument("--orientation",
                   choices=[harness.redistribution.HIGHER_MORE,
                            harness.redistribution.HIGHER_FEWER],
                   help="metric orientation for class proportions")
    p.add_argument("--penalty", choices=["l1", "target_distance"])
    p.add_argument("--penalty-target", dest="penalty_target", type=float)
    p.add_argument("--prune-fraction", dest="prune_fraction", type=float)
    p.add_argument("--fine-tune-iterations", dest="fine_tune_iterations", type=int)
    p.add_argument("--xai-method", dest="xai_method",
                   choices=list(attribution.METHODS), help="attribution method")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=None,
                   help="skip PNG rendering")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explain", help="write per-sample relevance for a saved model")
    p.add_argument("--model", help="network JSON file")
    p.add_argument("--data", help="dataset CSV file")
    p.add_argument("--method", choices=list(attribution.METHODS))
    p.add_argument("--target", help="true_class, predicted_class, or a class index")
    p.add_argument("--layer", type=int, help="which layer's input to export (default 0)")
    p.add_argument("--normalize", choices=["none", "signed", "abs"])
    p.add_argument("--epsilon", type=float, help="LRP epsilon")
    _add_common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("prune", help="prune a saved model using reference samples")
    p.add_argument("--model", help="network JSON file")
    p.add_argument("--data", help="reference dataset CSV")
    p.add_argument("--count", type=int, help="units to prune per hidden layer")
    p.add_argument("--fine-tune-iterations", dest="fine_tune_iterations", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_prune)
    return parser


EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, ConsistencyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
