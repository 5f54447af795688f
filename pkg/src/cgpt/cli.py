"""Command-line front end: generate data, train models, tabulate results.

Subcommands::

    cgpt gen-data --dataset additive --seed 0 --out data/additive.csv
    cgpt train    --dataset additive --model leaky --context 96 --horizon 1 \
                  --revin no --seeds 0,1,2,3,4 --out runs/
    cgpt eval     --checkpoint runs/.../model_96to1.ckpt --dataset additive
    cgpt report   --results runs/ --experiment 2 --out table2.csv

``train`` also accepts ``--config FILE`` pointing at a flat ``key=value``
text file; explicit flags override file values.  Exit codes: 0 success,
1 usage error, 2 runtime failure.  The ``CGPT_DATA_DIR`` environment
variable names the directory holding real-world CSV files.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import DLinearModel, MlpBaseline
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (SplitPolicy, SyntheticConfig, generate_additive,
                       generate_interactive, load_csv, prepare_dataset)
from .layers import EncoderConfig
from .model import CausalGraph, CgptConfig, CgptModel, Variant, select_contexts
from .preprocessing import PatchConfig, iter_window_batches
from .training import (TrainConfig, evaluate, parse_record, result_record,
                       run_seeds, train)

MODEL_IDS = ("leaky", "strict", "pure", "dlinear", "mlp")
SYNTHETIC_IDS = ("additive", "interactive")


class UsageError(Exception):
    """Bad invocation (flags, config file, ids); maps to exit code 1."""


@dataclass
class ExperimentSpec:
    """One resolved experiment: what to train, on what, where to put it."""

    dataset: str
    model: str
    l_ctx: int = 96
    h_pred: int = 96
    revin: bool = False
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "out"
    overwrite: bool = False
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------- config file

# Keys a config file may set.  The first group mirrors the CLI flags and
# is overridden by them; the second tunes data loading and model/training
# hyperparameters that have no dedicated flag.
_SPEC_CONVERTERS = {
    "dataset": str,
    "model": str,
    "context": int,
    "horizon": int,
    "revin": None,  # handled by _parse_yes_no
    "seeds": None,  # handled by _parse_seeds
    "out": str,
}
_OPTION_CONVERTERS = {
    "data_seed": int,
    "length": int,
    "target": str,
    "d_model": int,
    "d_ff": int,
    "n_heads": int,
    "e_layers": int,
    "patch_len": int,
    "stride": int,
    "n_p_max": int,
    "kernel": int,
    "hidden": int,
    "lr": float,
    "batch": int,
    "max_epochs": int,
    "patience": int,
}


def _parse_seeds(text):
    try:
        seeds = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"cannot parse seed list {text!r}; "
                         "expected comma-separated integers like 0,1,2") from None
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


def _parse_yes_no(text):
    if text not in ("yes", "no"):
        raise UsageError(f"expected yes or no, got {text!r}")
    return text == "yes"


def read_config(path):
    """Flat key=value file -> dict of raw strings; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values = {}
    valid = set(_SPEC_CONVERTERS) | set(_OPTION_CONVERTERS)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in valid:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; "
                             f"valid keys: {', '.join(sorted(valid))}")
        values[key] = value
    return values


def build_spec(args):
    """Merge config file and flags (flags win) into an ExperimentSpec."""
    raw = read_config(args.config) if args.config else {}

    def pick(key, flag_value, convert, default):
        if flag_value is not None:
            return flag_value
        if key in raw:
            try:
                return convert(raw[key])
            except (ValueError, TypeError):
                raise UsageError(
                    f"config key {key}: cannot parse {raw[key]!r}") from None
        return default

    dataset = pick("dataset", args.dataset, str, None)
    if dataset is None:
        raise UsageError("no dataset given; pass --dataset or set it in the config file")
    model = pick("model", args.model, str, None)
    if model is None:
        raise UsageError("no model given; pass --model or set it in the config file")
    if model not in MODEL_IDS:
        raise UsageError(f"unknown model id {model!r}; valid ids: {', '.join(MODEL_IDS)}")

    options = {}
    for key, convert in _OPTION_CONVERTERS.items():
        if key in raw:
            try:
                options[key] = convert(raw[key])
            except (ValueError, TypeError):
                raise UsageError(
                    f"config key {key}: cannot parse {raw[key]!r}") from None

    return ExperimentSpec(
        dataset=dataset,
        model=model,
        l_ctx=pick("context", args.context, int, 96),
        h_pred=pick("horizon", args.horizon, int, 96),
        revin=pick("revin", _parse_yes_no(args.revin) if args.revin else None,
                   _parse_yes_no, False),
        seeds=pick("seeds", _parse_seeds(args.seeds) if args.seeds else None,
                   _parse_seeds, (0, 1, 2, 3, 4)),
        out=pick("out", args.out, str, "out"),
        overwrite=getattr(args, "overwrite", False),
        options=options,
    )


# ------------------------------------------------------------------ datasets

def _data_dir():
    return Path(os.environ.get("CGPT_DATA_DIR", "."))


def _sniff_header(path):
    with open(path, newline="") as fh:
        try:
            return next(csv.reader(fh))
        except StopIteration:
            raise ValueError(f"{path}: empty dataset (no header row)") from None


def _first_column(path, predicate, description):
    for col in _sniff_header(path):
        if predicate(col):
            return col
    raise ValueError(f"{path}: no column {description}")


def _load_graph_sidecar(csv_path, channel_names):
    """Optional '<stem>.graph.txt' next to a CSV: one 'NAME->NAME' edge per line."""
    sidecar = csv_path.with_name(csv_path.stem + ".graph.txt")
    if not sidecar.exists():
        return None
    index = {name: i for i, name in enumerate(channel_names)}
    edges = []
    for lineno, line in enumerate(sidecar.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if "->" not in stripped:
            raise ValueError(f"{sidecar}:{lineno}: expected CAUSE->EFFECT, got {stripped!r}")
        cause, _, effect = stripped.partition("->")
        cause, effect = cause.strip(), effect.strip()
        for name in (cause, effect):
            if name not in index:
                raise ValueError(f"{sidecar}:{lineno}: unknown channel {name!r}")
        edges.append((index[cause], index[effect]))
    return CausalGraph.from_edges(edges)


def resolve_dataset(dataset_id, options=None):
    """Map a dataset id (or .csv path) to a loaded dataset and split policy.

    Registry ids: additive, interactive (generated), etth1, factory, amino
    (CSV files under CGPT_DATA_DIR).  Anything ending in .csv is loaded
    directly; its target column comes from the ``target`` config key and a
    ``<stem>.graph.txt`` sidecar is honoured when present.
    """
    options = dict(options or {})
    ratio = SplitPolicy.RATIO_70_20_10

    if dataset_id in SYNTHETIC_IDS:
        cfg = SyntheticConfig(length=options.get("length", 6144),
                              seed=options.get("data_seed", 0))
        generate = generate_additive if dataset_id == "additive" else generate_interactive
        return generate(cfg), ratio

    if dataset_id == "etth1":
        path = _data_dir() / "ETTh1.csv"
        return load_csv(path, target="OT", name="etth1"), SplitPolicy.ETTH1_STANDARD

    if dataset_id == "factory":
        path = _data_dir() / "continuous_factory_process.csv"
        target = options.get("target")
        if target is None and path.exists():
            target = _first_column(path, lambda c: "Stage1.Output.Measurement0.U" in c,
                                   "containing 'Stage1.Output.Measurement0.U'")
        return load_csv(path, target=target, name="factory"), ratio

    if dataset_id == "amino":
        path = _data_dir() / "amino_emissions.csv"
        target = options.get("target")
        if target is None and path.exists():
            target = _first_column(path, lambda c: c.startswith("2-Amino"),
                                   "starting with '2-Amino'")
        return load_csv(path, target=target, name="amino"), ratio

    if dataset_id.endswith(".csv"):
        path = Path(dataset_id)
        if not path.exists():
            path = _data_dir() / dataset_id
        target = options.get("target")
        if target is None:
            raise UsageError(f"dataset {dataset_id}: a CSV dataset needs a "
                             "'target=COLUMN' entry in the config file")
        dataset = load_csv(path, target=target, name=path.stem)
        graph = _load_graph_sidecar(path, dataset.channel_names)
        if graph is not None:
            dataset = replace(dataset, graph=graph)
        return dataset, ratio

    known = ", ".join(SYNTHETIC_IDS + ("etth1", "factory", "amino"))
    raise UsageError(f"unknown dataset id {dataset_id!r}; "
                     f"valid ids: {known}, or a path to a .csv file")


# -------------------------------------------------------------------- models

def build_model(spec, n_vars, seed):
    opts = spec.options
    if spec.model in ("leaky", "strict", "pure"):
        encoder = EncoderConfig(
            d_model=opts.get("d_model", 64),
            d_ff=opts.get("d_ff", 128),
            n_heads=opts.get("n_heads", 1),
            e_layers=opts.get("e_layers", 1),
            patch=PatchConfig(patch_len=opts.get("patch_len", 32),
                              stride=opts.get("stride", 32)),
            n_p_max=opts.get("n_p_max", 64),
        )
        cfg = CgptConfig(encoder, spec.l_ctx, spec.h_pred, Variant.from_id(spec.model))
        return CgptModel(cfg, seed=seed)
    if spec.model == "dlinear":
        return DLinearModel(spec.l_ctx, spec.h_pred,
                            kernel=opts.get("kernel", 25), seed=seed)
    if spec.model == "mlp":
        return MlpBaseline(spec.l_ctx, spec.h_pred, n_vars,
                           hidden=opts.get("hidden", 512), seed=seed)
    raise UsageError(f"unknown model id {spec.model!r}; "
                     f"valid ids: {', '.join(MODEL_IDS)}")


def model_from_checkpoint(header, arrays):
    """Rebuild a model from a checkpoint's config header and load its weights."""
    kind = header.get("kind")
    if kind == "cgpt":
        encoder = EncoderConfig(
            d_model=int(header["d_model"]),
            d_ff=int(header["d_ff"]),
            n_heads=int(header["n_heads"]),
            e_layers=int(header["e_layers"]),
            patch=PatchConfig(patch_len=int(header["patch_len"]),
                              stride=int(header["stride"])),
            n_p_max=int(header["n_p_max"]),
        )
        model = CgptModel(CgptConfig(encoder, int(header["l_ctx"]),
                                     int(header["h_pred"]),
                                     Variant.from_id(header["variant"])))
    elif kind == "dlinear":
        model = DLinearModel(int(header["l_ctx"]), int(header["h_pred"]),
                             kernel=int(header["kernel"]))
    elif kind == "mlp":
        model = MlpBaseline(int(header["l_ctx"]), int(header["h_pred"]),
                            int(header["n_vars"]), hidden=int(header["hidden"]))
    else:
        raise ValueError(f"checkpoint names unknown model kind {kind!r}")
    model.load_arrays(arrays)
    return model


# --------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    cfg = SyntheticConfig(length=args.length, seed=args.seed)
    generate = generate_additive if args.dataset == "additive" else generate_interactive
    dataset = generate(cfg)

    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.channel_names)
        for row in dataset.values:
            writer.writerow([repr(float(v)) for v in row])

    sidecar = out.with_name(out.stem + ".graph.txt")
    names = dataset.channel_names
    edges = sorted(dataset.graph.edges)
    sidecar.write_text("".join(f"{names[c]}->{names[e]}\n" for c, e in edges))

    print(f"wrote {out} ({dataset.length} rows, {dataset.n_channels} channels)")
    print(f"wrote {sidecar} ({len(edges)} edges)")
    return 0


def cmd_train(args):
    spec = build_spec(args)
    dataset, policy = resolve_dataset(spec.dataset, spec.options)
    prepared, _ = prepare_dataset(dataset, policy, spec.l_ctx, spec.h_pred)

    task = f"{spec.l_ctx}to{spec.h_pred}"
    revin_dir = "revin_yes" if spec.revin else "revin_no"
    out_root = Path(spec.out) / dataset.name / spec.model / revin_dir
    seed_dirs = {seed: out_root / f"seed_{seed}" for seed in spec.seeds}

    blockers = [p
                for d in seed_dirs.values()
                for p in (d / f"result_{task}.txt", d / f"model_{task}.ckpt")
                if p.exists()]
    if blockers and not spec.overwrite:
        raise RuntimeError(
            f"output already exists: {blockers[0]}"
            + (f" (and {len(blockers) - 1} more)" if len(blockers) > 1 else "")
            + "; pass --overwrite to replace it")

    train_cfg_base = dict(
        lr=spec.options.get("lr", 1e-3),
        batch_size=spec.options.get("batch", 256),
        max_epochs=spec.options.get("max_epochs", 100),
        patience=spec.options.get("patience", 10),
        revin=spec.revin,
    )
    meta = {
        "dataset": dataset.name,
        "model": spec.model,
        "revin": "yes" if spec.revin else "no",
        "l_ctx": spec.l_ctx,
        "h_pred": spec.h_pred,
    }

    def run_one(seed):
        model = build_model(spec, prepared.n_channels, seed)
        result = train(model, prepared, TrainConfig(seed=seed, **train_cfg_base))
        seed_dir = seed_dirs[seed]
        seed_dir.mkdir(parents=True, exist_ok=True)
        (seed_dir / f"result_{task}.txt").write_text(result_record(result, meta))
        header = dict(model.config_header())
        header.update(dataset=dataset.name, revin=meta["revin"], seed=seed)
        save_checkpoint(seed_dir / f"model_{task}.ckpt", header,
                        dict(model.parameters()))
        print(f"seed {seed}: test_mae={result.test_mae:.6f} "
              f"test_mse={result.test_mse:.6f} "
              f"(best epoch {result.best_epoch}/{result.epochs_run})")
        return result

    summary = run_seeds(run_one, spec.seeds)
    print(f"{dataset.name}/{spec.model}/{revin_dir} {task}: "
          f"mae {summary['mae_mean']:.4f} ± {summary['mae_std']:.4f}, "
          f"mse {summary['mse_mean']:.4f} ± {summary['mse_std']:.4f} "
          f"over {summary['n_seeds']} seed(s)")
    return 0


def cmd_eval(args):
    header, arrays = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(header, arrays)

    options = read_config(args.config) if args.config else {}
    for key in ("data_seed", "length"):
        if key in options:
            options[key] = int(options[key])
    dataset, policy = resolve_dataset(args.dataset, options)
    prepared, _ = prepare_dataset(dataset, policy, model.l_ctx, model.h_pred)

    if args.revin is not None:
        revin = _parse_yes_no(args.revin)
    else:
        revin = header.get("revin", "no") == "yes"

    contexts = select_contexts(prepared.graph, prepared.target,
                               range(prepared.n_channels))
    batches = iter_window_batches(prepared.values, prepared.borders[2],
                                  model.l_ctx, model.h_pred, prepared.target,
                                  contexts, batch_size=256,
                                  allow_context_overlap=True)
    mae, mse = evaluate(model, batches, revin=revin)
    print(f"test_mae={mae!r}")
    print(f"test_mse={mse!r}")
    return 0


# --------------------------------------------------------------------- report

_EXPERIMENT_TASKS = {1: ((96, 96),), 2: ((96, 1),), 3: ((96, 96), (96, 1))}


def _collect_records(results_dir):
    root = Path(results_dir)
    files = sorted(root.rglob("result_*.txt"))
    records = [parse_record(f.read_text()) for f in files]
    if not records:
        raise RuntimeError(f"no result_*.txt records found under {root}")
    return records


def _mean_std(values):
    arr = np.array(values, dtype=np.float64)
    std = 0.0 if arr.size < 2 else float(arr.std(ddof=1))
    return float(arr.mean()), std


def report_rows(records, experiment):
    """Aggregate parsed records into the rows of one experiment table.

    Rows cover the full grid (task x dataset x model x revin) spanned by
    the matching records; cells without runs read "missing".  Experiment 3
    is restricted to the pairwise variants and gains a trailing column
    with the PureInfluence/LeakyPairwise MSE ratio.
    """
    tasks = _EXPERIMENT_TASKS[experiment]
    models = ("leaky", "strict", "pure") if experiment == 3 else MODEL_IDS

    groups = {}
    for rec in records:
        task = (int(rec["l_ctx"]), int(rec["h_pred"]))
        if task not in tasks or rec["model"] not in models:
            continue
        key = (task, rec["dataset"], rec["model"], rec["revin"])
        groups.setdefault(key, []).append(
            (float(rec["test_mae"]), float(rec["test_mse"])))
    if not groups:
        raise RuntimeError(f"no records match experiment {experiment} "
                           f"(tasks {tasks}, models {models})")

    datasets = sorted({key[1] for key in groups})
    revins = [r for r in ("no", "yes") if any(key[3] == r for key in groups)]

    stats = {}
    for key, pairs in groups.items():
        mae_mean, mae_std = _mean_std([p[0] for p in pairs])
        mse_mean, mse_std = _mean_std([p[1] for p in pairs])
        stats[key] = (mae_mean, mae_std, mse_mean, mse_std)

    rows = []
    for task in tasks:
        for dataset in datasets:
            for model in models:
                for revin in revins:
                    row = [dataset, model, revin, str(task[0]), str(task[1])]
                    cell = stats.get((task, dataset, model, revin))
                    if cell is None:
                        row += ["missing"] * 4
                    else:
                        row += [f"{v:.4f}" for v in cell]
                    if experiment == 3:
                        row.append(_pure_to_leaky(stats, task, dataset, revin)
                                   if model == "pure" else "")
                    rows.append(row)
    return rows


def _pure_to_leaky(stats, task, dataset, revin):
    pure = stats.get((task, dataset, "pure", revin))
    leaky = stats.get((task, dataset, "leaky", revin))
    if pure is None or leaky is None or leaky[2] == 0.0:
        return "missing"
    return f"{pure[2] / leaky[2]:.2f}"


def cmd_report(args):
    records = _collect_records(args.results)
    rows = report_rows(records, args.experiment)

    header = ["dataset", "model", "revin", "context", "horizon",
              "mae_mean", "mae_std", "mse_mean", "mse_std"]
    if args.experiment == 3:
        header.append("pure_to_leaky_mse")

    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as exceptions, not sys.exit(2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="cgpt",
                     description="Forecasting experiments with causally "
                                 "guided pairwise channel mixing.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    gen.add_argument("--dataset", required=True, choices=SYNTHETIC_IDS)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--length", type=int, default=6144)
    gen.add_argument("--out", required=True, help="CSV output path")
    gen.set_defaults(run=cmd_gen_data)

    tr = sub.add_parser("train", help="train one model over several seeds")
    tr.add_argument("--config", help="flat key=value experiment file")
    tr.add_argument("--dataset", help="dataset id or .csv path")
    tr.add_argument("--model", choices=MODEL_IDS)
    tr.add_argument("--context", type=int, help="history length (default 96)")
    tr.add_argument("--horizon", type=int, help="forecast length (default 96)")
    tr.add_argument("--revin", choices=("yes", "no"))
    tr.add_argument("--seeds", help="comma-separated list, default 0,1,2,3,4")
    tr.add_argument("--out", help="results root directory (default out)")
    tr.add_argument("--overwrite", action="store_true",
                    help="replace existing results/checkpoints")
    tr.set_defaults(run=cmd_train)

    ev = sub.add_parser("eval", help="score a saved checkpoint on a test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True, help="dataset id or .csv path")
    ev.add_argument("--revin", choices=("yes", "no"),
                    help="override the setting stored in the checkpoint")
    ev.add_argument("--config", help="key=value file for dataset options")
    ev.set_defaults(run=cmd_eval)

    rep = sub.add_parser("report", help="aggregate result records into a CSV table")
    rep.add_argument("--results", required=True, help="directory to scan")
    rep.add_argument("--experiment", type=int, required=True, choices=(1, 2, 3))
    rep.add_argument("--out", required=True, help="CSV table path")
    rep.set_defaults(run=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.run(args)
    except UsageError as err:
        print(f"cgpt: error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 -- CLI boundary maps failures to exit 2
        print(f"cgpt: error: {err}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
