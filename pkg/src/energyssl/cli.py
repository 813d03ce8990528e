"""Command-line surface: data generation, training, evaluation, audits, sweeps.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric fault.
"""

from __future__ import annotations

import json
import os
import shutil
import sys

import click
import numpy as np

from . import report as report_mod
from .config import TrainConfig
from .data import (
    DatasetSplit,
    LongTailSpec,
    load_dataset,
    load_hidden_labels,
    longtail_counts,
    make_splits,
    save_dataset,
    save_hidden_labels,
    synth_generate,
    synth_test_pool,
    UnlabeledSample,
)
from .energy import SelectionConfig
from .errors import ConfigError, DataError, NumericError
from .trainer import audit_pass, evaluate, fit, init_state, load_checkpoint, load_eval_model, load_live_model, pseudo_label_pool
from .energy import audit as audit_records


@click.group()
def cli():
    """Semi-supervised long-tailed image classification toolkit."""


@cli.command("gen-data")
@click.option("--num-classes", type=int, default=5, show_default=True)
@click.option("--head-count", type=int, default=100, show_default=True,
              help="Samples in the largest class (long-tail mode).")
@click.option("--imbalance-ratio", type=float, default=10.0, show_default=True)
@click.option("--balanced-per-class", type=int, default=None,
              help="Generate a balanced pool with this many samples per class instead.")
@click.option("--image-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--role", type=click.Choice(["train", "test"]), default="train",
              show_default=True, help="Test pools use an independent sample stream.")
@click.option("--out", type=click.Path(), required=True)
def gen_data(num_classes, head_count, imbalance_ratio, balanced_per_class,
             image_size, seed, role, out):
    """Generate a fully labeled synthetic pool file."""
    if balanced_per_class is not None:
        counts = [balanced_per_class] * num_classes
    else:
        counts = longtail_counts(
            LongTailSpec(head_count, imbalance_ratio, num_classes)
        )
    if role == "test":
        per_class = balanced_per_class if balanced_per_class is not None else counts[0]
        pool = synth_test_pool(num_classes, per_class, image_size, seed)
    else:
        pool = synth_generate(num_classes, counts, image_size, seed)
    save_dataset(out, pool, num_classes, image_size)
    click.echo(f"wrote {len(pool)} samples ({num_classes} classes) to {out}")


@cli.command("build-longtail")
@click.option("--pool", type=click.Path(exists=True), required=True)
@click.option("--test-pool", type=click.Path(exists=True), required=True)
@click.option("--label-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
def build_longtail(pool, test_pool, label_fraction, seed, out_dir):
    """Split a labeled pool into labeled/unlabeled/test dataset files."""
    samples, k, size = load_dataset(pool)
    if any(s.label is None for s in samples):
        raise DataError("input pool must be fully labeled")
    test_samples, k2, size2 = load_dataset(test_pool)
    if (k2, size2) != (k, size):
        raise DataError("test pool geometry does not match training pool")
    split = make_splits(samples, label_fraction, seed, test_pool=test_samples, num_classes=k)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(os.path.join(out_dir, "labeled.bin"), split.labeled, k, size)
    save_dataset(os.path.join(out_dir, "unlabeled.bin"), split.unlabeled, k, size)
    shutil.copyfile(test_pool, os.path.join(out_dir, "test.bin"))
    save_hidden_labels(os.path.join(out_dir, "hidden_labels.json"), split.hidden_labels)
    click.echo(
        f"{len(split.labeled)} labeled / {len(split.unlabeled)} unlabeled / "
        f"{len(split.test)} test -> {out_dir}"
    )


def load_split(data_dir) -> tuple[DatasetSplit, int, int]:
    labeled, k, size = load_dataset(os.path.join(data_dir, "labeled.bin"))
    if any(s.label is None for s in labeled):
        raise DataError("labeled.bin contains hidden labels")
    unl_raw, _, _ = load_dataset(os.path.join(data_dir, "unlabeled.bin"))
    unlabeled = [UnlabeledSample(id=s.id, pixels=s.pixels) for s in unl_raw]
    test, _, _ = load_dataset(os.path.join(data_dir, "test.bin"))
    hidden_path = os.path.join(data_dir, "hidden_labels.json")
    hidden = load_hidden_labels(hidden_path) if os.path.exists(hidden_path) else {}
    split = DatasetSplit(labeled=labeled, unlabeled=unlabeled, test=test,
                         hidden_labels=hidden, num_classes=k)
    return split, k, size


_OVERRIDE_OPTS = [
    ("--total-iters", "total_iters", int),
    ("--lr", "lr", float),
    ("--tau-e", "tau_e", float),
    ("--temperature", "temperature", float),
    ("--baseline-mode", "baseline_mode", str),
    ("--tau-c", "tau_c", float),
    ("--lambda-margin", "lambda_margin", float),
    ("--lambda-u", "lambda_u", float),
    ("--lambda-ahtl", "lambda_ahtl", float),
    ("--triplet-margin", "triplet_margin", float),
    ("--eval-interval", "eval_interval", int),
    ("--seed", "seed", int),
]


def _with_overrides(f):
    for flag, name, typ in reversed(_OVERRIDE_OPTS):
        f = click.option(flag, name, type=typ, default=None)(f)
    return f


def _build_config(config_path, data_k, data_size, overrides):
    if config_path:
        cfg = TrainConfig.from_json_file(config_path)
    else:
        cfg = TrainConfig()
    updates = {k: v for k, v in overrides.items() if v is not None}
    updates.setdefault("num_classes", data_k)
    updates.setdefault("image_size", data_size)
    return cfg.replace(**updates)


@cli.command("train")
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--resume", is_flag=True, default=False)
@_with_overrides
def train(data_dir, out_dir, config_path, resume, **overrides):
    """Train on a built dataset directory."""
    split, k, size = load_split(data_dir)
    cfg = _build_config(config_path, k, size, overrides)
    fit(cfg, split, out_dir, resume=resume, log_fn=click.echo)
    click.echo(f"done; outputs in {out_dir}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--json-out", type=click.Path(), default=None)
def eval_cmd(checkpoint, data_dir, json_out):
    """Evaluate a checkpoint's EMA model on the test split."""
    split, k, size = load_split(data_dir)
    with np.load(checkpoint, allow_pickle=False) as z:
        cfg = TrainConfig.from_dict(json.loads(str(z["config_json"])))
    model = load_eval_model(checkpoint, cfg)
    res = evaluate(model, split.test, k)
    matrix = report_mod.confusion(res["predictions"], res["labels"], k)
    rep = report_mod.summarize(matrix, config=cfg)
    click.echo(report_mod.report_table(rep))
    if json_out:
        with open(json_out, "w") as f:
            f.write(report_mod.report_json(rep))


@cli.command("audit-pseudo")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--tau-e", type=float, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--baseline-mode", type=click.Choice(["off", "confidence"]), default=None)
@click.option("--tau-c", type=float, default=None)
@click.option("--json-out", type=click.Path(), default=None)
def audit_pseudo(checkpoint, data_dir, tau_e, temperature, baseline_mode, tau_c, json_out):
    """Report pseudo-label precision/recall against the hidden audit labels."""
    split, k, size = load_split(data_dir)
    if not split.hidden_labels:
        raise DataError(f"{data_dir}/hidden_labels.json missing; audit unavailable")
    with np.load(checkpoint, allow_pickle=False) as z:
        cfg = TrainConfig.from_dict(json.loads(str(z["config_json"])))
    updates = {
        k2: v
        for k2, v in dict(tau_e=tau_e, temperature=temperature,
                          baseline_mode=baseline_mode, tau_c=tau_c).items()
        if v is not None
    }
    cfg = cfg.replace(**updates)
    model = load_live_model(checkpoint, cfg)
    sel_cfg = SelectionConfig(cfg.tau_e, cfg.temperature, cfg.baseline_mode, cfg.tau_c)
    records = pseudo_label_pool(model, split.unlabeled, cfg, sel_cfg, iteration=0)
    counts = np.zeros(k, dtype=np.int64)
    for c in split.hidden_labels.values():
        counts[c] += 1
    rows = audit_records(records, split.hidden_labels, k, counts)
    header = f"{'class':>5} {'selected':>8} {'correct':>8} {'precision':>10} {'recall':>10}"
    click.echo(header)
    for r in rows:
        prec = "-" if r["precision"] is None else f"{r['precision']:.4f}"
        rec = "-" if r["recall"] is None else f"{r['recall']:.4f}"
        click.echo(f"{r['class']:>5} {r['selected']:>8} {r['correct']:>8} {prec:>10} {rec:>10}")
    if json_out:
        with open(json_out, "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)


@cli.command("sweep")
@click.option("--data-dir", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--param", "params", multiple=True,
              help="name=v1,v2,... ; repeat for a grid. Defaults to the built-in "
                   "grid for the named parameter when values are omitted.")
@_with_overrides
def sweep_cmd(data_dir, out_dir, config_path, params, **overrides):
    """Run fit() over a hyperparameter grid and emit sweep.csv."""
    split, k, size = load_split(data_dir)
    cfg = _build_config(config_path, k, size, overrides)
    grid = {}
    for spec in params:
        if "=" in spec:
            name, vals = spec.split("=", 1)
            grid[name] = [float(v) for v in vals.split(",")]
        else:
            if spec not in report_mod.DEFAULT_GRIDS:
                raise ConfigError(f"no default grid for parameter {spec!r}")
            grid[spec] = report_mod.DEFAULT_GRIDS[spec]
    if not grid:
        raise ConfigError("at least one --param is required")
    rows = report_mod.sweep(cfg, split, grid, out_dir, log_fn=None)
    ok = sum(1 for r in rows if r["status"] == "ok")
    click.echo(f"{ok}/{len(rows)} points succeeded; table at {out_dir}/sweep.csv")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except (ConfigError, DataError, NumericError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
