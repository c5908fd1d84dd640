"""Command-line front end: synth, connectome, train, analyze, generate, manifold.

Every subcommand takes ``--config FILE`` (JSON object whose keys are the
subcommand's option names with underscores); explicit flags override the
file, which overrides built-in defaults. The resolved configuration is
written to ``<out>/config.json`` and echoed on stderr.

Exit codes: 0 success, 2 validation error, 3 numeric failure. Errors are
reported as one ``error: code=<n> kind=<kind> message=<text>`` line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, connectome, generator, synth, vae
from .atlas import N_REGIONS, REGIONS
from .dataset import design_matrix, labels_of, load_cohort, write_manifest
from .exceptions import NumericalError, ValidationError

log = logging.getLogger("latentconn")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "synth": {
        "out": None, "n_subjects": 600, "asd_fraction": 0.5, "group_shift": 1.0,
        "factor_sd": 1.0, "loading": -0.08, "noise_sd": 0.05, "iq_coupling": -4.0,
        "iq_missing_fraction": 0.1, "seed": 0, "write_matrices": False,
    },
    "connectome": {"timeseries": None, "out": None, "n_regions": N_REGIONS},
    "train": {
        "manifest": None, "edges": None, "out": None, "epochs": 50, "batch_size": 64,
        "validation_fraction": 0.1, "seed": 0, "likelihood": "bernoulli", "rho": 0.95,
        "eps": 1e-6, "learning_rate": 1.0, "hidden": [128, 128], "noise_draws": 1,
    },
    "analyze": {
        "checkpoint": None, "manifest": None, "edges": None, "out": None,
        "alpha": 0.05, "welch": False,
    },
    "generate": {
        "checkpoint": None, "out": None, "feature": 1, "direction": 1.0,
        "age": None, "threshold": generator.DEFAULT_FCS_THRESHOLD,
    },
    "manifold": {"checkpoint": None, "out": None, "steps": 5, "range": [-2.0, 2.0], "age": None},
}

REQUIRED = {
    "synth": ("out",),
    "connectome": ("timeseries", "out"),
    "train": ("manifest", "edges", "out"),
    "analyze": ("checkpoint", "manifest", "edges", "out"),
    "generate": ("checkpoint", "out"),
    "manifold": ("checkpoint", "out"),
}


def _build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="latentconn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=S)
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--out", help="output directory")
        return p

    p = add("synth", "write a synthetic cohort with a planted group factor")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--asd-fraction", type=float)
    p.add_argument("--group-shift", type=float)
    p.add_argument("--factor-sd", type=float)
    p.add_argument("--loading", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--iq-coupling", type=float)
    p.add_argument("--iq-missing-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--write-matrices", action="store_true")

    p = add("connectome", "ROI time-series CSVs -> connectivity matrices and edge vectors")
    p.add_argument("--timeseries", help="directory of <subject_id>.csv (T x regions)")
    p.add_argument("--n-regions", type=int)

    p = add("train", "train the VAE on a manifest and edge files")
    p.add_argument("--manifest")
    p.add_argument("--edges", help="directory of <subject_id>.csv edge vectors or matrices")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--likelihood", choices=vae.LIKELIHOODS)
    p.add_argument("--rho", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--noise-draws", type=int)

    p = add("analyze", "extract features and compare groups")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--edges")
    p.add_argument("--alpha", type=float)
    p.add_argument("--welch", action="store_true", help="unequal-variance t-test")

    p = add("generate", "feature delta matrix, heatmap and FCS change")
    p.add_argument("--checkpoint")
    p.add_argument("--feature", type=int, help="1-based latent feature")
    p.add_argument("--direction", type=float, help="shift in cohort SD units")
    p.add_argument("--age", type=float, help="years (default: cohort mean age)")
    p.add_argument("--threshold", type=float, help="|delta FCS| annotation cutoff")

    p = add("manifold", "latent lattice of delta matrices")
    p.add_argument("--checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--age", type=float)
    return parser


def resolve_config(command, given):
    """Defaults < config file < explicit flags; unknown config keys are rejected."""
    resolved = dict(DEFAULTS[command])
    config_path = given.pop("config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(resolved))
        if unknown:
            raise ValidationError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        resolved.update(doc)
    resolved.update(given)
    missing = [k for k in REQUIRED[command] if resolved.get(k) in (None, "")]
    if missing:
        raise ValidationError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")
    return resolved


def _echo_config(command, cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **cfg}
    (out / "config.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print("config: " + json.dumps(doc, sort_keys=True), file=sys.stderr)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _g(x):
    return f"{x:.17g}"


# -- subcommands ------------------------------------------------------------

def cmd_synth(cfg):
    spec = synth.SyntheticSpec(
        n_subjects=cfg["n_subjects"], asd_fraction=cfg["asd_fraction"],
        group_shift=cfg["group_shift"], factor_sd=cfg["factor_sd"], loading=cfg["loading"],
        noise_sd=cfg["noise_sd"], iq_coupling=cfg["iq_coupling"],
        iq_missing_fraction=cfg["iq_missing_fraction"], seed=cfg["seed"],
    )
    cohort = synth.generate(spec)
    out = Path(cfg["out"])
    edges_dir = out / "edges"
    edges_dir.mkdir(parents=True, exist_ok=True)
    if cfg["write_matrices"]:
        (out / "matrices").mkdir(exist_ok=True)
    for r in cohort.records:
        connectome.write_edges_csv(edges_dir / f"{r.subject_id}.csv", r.edges)
        if cfg["write_matrices"]:
            connectome.write_matrix_csv(out / "matrices" / f"{r.subject_id}.csv", connectome.devectorize(r.edges))
    write_manifest(out / "manifest.csv", cohort.records)
    truth = {"spec": spec.to_dict(), "factor": cohort.factor.tolist()}
    (out / "synth_truth.json").write_text(json.dumps(truth, sort_keys=True) + "\n")
    log.info("wrote %d synthetic subjects to %s", len(cohort.records), out)


def cmd_connectome(cfg):
    src = Path(cfg["timeseries"])
    if not src.is_dir():
        raise ValidationError(f"time-series directory not found: {src}")
    out = Path(cfg["out"])
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    (out / "edges").mkdir(exist_ok=True)
    rejects = []
    accepted = 0
    for path in sorted(src.glob("*.csv")):
        sid = path.stem
        try:
            ts = connectome.read_timeseries_csv(path)
            if ts.shape[1] != cfg["n_regions"]:
                raise ValidationError(f"{ts.shape[1]} columns, expected {cfg['n_regions']}")
            m = connectome.build_connectivity(ts)
        except ValidationError as exc:
            rejects.append((sid, str(exc).replace("\n", " ")))
            continue
        connectome.write_matrix_csv(out / "matrices" / f"{sid}.csv", m)
        connectome.write_edges_csv(out / "edges" / f"{sid}.csv", connectome.vectorize_upper(m))
        accepted += 1
    with (out / "rejects.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "reason"])
        w.writerows(rejects)
    for sid, reason in rejects:
        print(f"rejected: subject={sid} reason={reason}", file=sys.stderr)
    if accepted == 0:
        raise ValidationError(f"no valid time series in {src}")


def cmd_train(cfg):
    records = load_cohort(cfg["manifest"], cfg["edges"])
    config = vae.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        validation_fraction=cfg["validation_fraction"], seed=cfg["seed"],
        hidden=tuple(cfg["hidden"]), likelihood=cfg["likelihood"], rho=cfg["rho"],
        eps=cfg["eps"], learning_rate=cfg["learning_rate"], noise_draws=cfg["noise_draws"],
    )
    X = design_matrix(records)

    def progress(rec):
        log.info("epoch %d train %.4f val %.4f", rec.epoch, rec.train_total, rec.val_total)

    model, history = vae.train(X, config, labels=labels_of(records), callback=progress)
    out = Path(cfg["out"])
    vae.save_checkpoint(model, out / "checkpoint.json")
    fields = ["epoch", "train_total", "train_recon", "train_kl", "val_total", "val_recon", "val_kl"]
    with (out / "loss_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for rec in history:
            d = rec.to_dict()
            w.writerow([d["epoch"]] + [_g(d[k]) for k in fields[1:]])


def _load_model(path):
    return vae.load_checkpoint(path)


def cmd_analyze(cfg):
    model = _load_model(cfg["checkpoint"])
    records = load_cohort(cfg["manifest"], cfg["edges"])
    X = design_matrix(records)
    if X.shape[1] != model.n_edges + 1:
        raise ValidationError(f"edge files have {X.shape[1] - 1} edges, model expects {model.n_edges}")
    features = vae.extract_features(model, X)
    out = Path(cfg["out"])
    with (out / "features.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id"] + [f"f{k + 1}" for k in range(features.shape[1])])
        for r, row in zip(records, features):
            w.writerow([r.subject_id] + [_g(v) for v in row])
    fiq = [r.fiq for r in records]
    report = analysis.build_report(
        features, labels_of(records),
        fiq=fiq if any(v is not None for v in fiq) else None,
        alpha=cfg["alpha"], equal_var=not cfg["welch"],
        checkpoint_sha256=_sha256(cfg["checkpoint"]),
    )
    (out / "stats.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out / "stats.txt").write_text(report.to_text())


def _feature_index(model, feature):
    k = int(feature) - 1
    if not 0 <= k < model.n_latent:
        raise ValidationError(f"--feature must be in 1..{model.n_latent}, got {feature}")
    return k


def cmd_generate(cfg):
    model = _load_model(cfg["checkpoint"])
    k = _feature_index(model, cfg["feature"])
    out = Path(cfg["out"])
    delta = generator.feature_delta(model, k, cfg["direction"], cfg["age"])
    fd = generator.fcs_delta(model, k, cfg["direction"], cfg["age"], cfg["threshold"])
    connectome.write_matrix_csv(out / "delta.csv", delta.values)
    connectome.write_matrix_csv(out / "reference.csv", delta.reference)
    connectome.write_matrix_csv(out / "shifted.csv", delta.shifted)
    generator.write_heatmap(out / "delta.ppm", delta.values, "diverging")
    generator.write_heatmap(out / "reference.ppm", delta.reference, "sequential")
    labels = REGIONS if fd.delta.size == N_REGIONS else None
    generator.write_fcs_delta_csv(out / "fcs_delta.csv", fd, labels)


def cell_name(z1, z2):
    return f"cell_z1_{z1:+.4f}_z2_{z2:+.4f}.csv"


def cmd_manifold(cfg):
    model = _load_model(cfg["checkpoint"])
    lo, hi = cfg["range"]
    grid = generator.manifold_grid(model, lo, hi, cfg["steps"], cfg["age"])
    out = Path(cfg["out"])
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    for a, z1 in enumerate(grid.coords):
        for b, z2 in enumerate(grid.coords):
            connectome.write_matrix_csv(cells_dir / cell_name(z1, z2), grid.cells[a, b])
    generator.write_contact_sheet(out / "contact_sheet.ppm", grid)
    meta = {"coords": grid.coords.tolist(), "age": grid.age,
            "cells": [[cell_name(z1, z2) for z2 in grid.coords] for z1 in grid.coords]}
    (out / "grid.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


COMMANDS = {
    "synth": cmd_synth,
    "connectome": cmd_connectome,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "generate": cmd_generate,
    "manifold": cmd_manifold,
}


def _error(code, kind, exc):
    msg = str(exc).replace("\n", " ")
    print(f"error: code={code} kind={kind} message={msg}", file=sys.stderr)
    return code


def _thread_limit():
    value = os.environ.get("LATENTCONN_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(args.command, given)
        _echo_config(args.command, cfg)
        with _thread_limit():
            COMMANDS[args.command](cfg)
    except NumericalError as exc:
        return _error(EXIT_NUMERIC, "numeric", exc)
    except ValidationError as exc:
        return _error(EXIT_VALIDATION, "validation", exc)
    except (OSError, TypeError, ValueError) as exc:
        return _error(EXIT_VALIDATION, "validation", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
