"""Command-line interface.

Exit codes: 0 ok, 2 configuration error (including unknown flags), 3 data
error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff.params import atomic_write_text
from .batching import GraphBatch
from .chem.io import XYZFrame, read_dataset, read_sdf, write_xyz, write_xyz_frames
from .config import VARIANTS, TrainConfig
from .exceptions import ConfigError, DataError, NoConformations, NonFinite, NumericError
from . import geoloss, pipeline, training
from .persistence import (attach_conformations, load_engine, load_fingerprint_model, save_engine,
                          save_fingerprint_model)

log = logging.getLogger("hamforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
KRMSD_HEADER = "Kabsch-RMSD (Å)"
DIST_HEADER = "Distance Loss (10⁻² Å)"
SWEEP_PARAMS = {"T": "T_steps", "df": "d_f", "eta": "eta"}


# --- shared helpers ------------------------------------------------------------

def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {}
    env_seed = os.environ.get("HAMFORGE_SEED")
    if env_seed is not None:
        try:
            changes["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"HAMFORGE_SEED must be an integer, got {env_seed!r}") from None
    for flag, field in (("seed", "seed"), ("workers", "workers"), ("epochs", "epochs"),
                        ("metric", "metric"), ("conf_mode", "conf_mode")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[field] = value
    if changes:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **changes})
    return cfg


def _conformation_molecules(args) -> list:
    """Molecules with reference conformations from --data/--conf."""
    if not args.conf:
        raise NoConformations("--conf is required: an SDF file or a directory of XYZ files")
    if not Path(args.conf).exists():
        raise NoConformations(f"conformation source {args.conf} not found")
    if args.data:
        return attach_conformations(_read_data(args.data), args.conf).molecules
    if Path(args.conf).is_dir():
        raise NoConformations("an XYZ directory needs --data for the molecular graphs")
    return read_sdf(args.conf)


def _read_data(path):
    if not Path(path).exists():
        raise DataError(f"data file {path} not found")
    return read_dataset(path)


def _history_path(args) -> Path:
    return Path(args.history) if getattr(args, "history", None) else Path(str(args.out) + ".history.csv")


def _print_table(rows: list[tuple[str, float, float]], out=None) -> None:
    out = out or sys.stdout
    width = max(len(r[0]) for r in rows)
    print(f"{'Model':<{width}}  {KRMSD_HEADER}  {DIST_HEADER}", file=out)
    for name, kr, dl in rows:
        print(f"{name:<{width}}  {kr:>{len(KRMSD_HEADER)}.3f}  {dl * 100:>{len(DIST_HEADER)}.3f}", file=out)


def _train_engine(args, cfg: TrainConfig, label: str) -> training.EngineFit:
    mols = _conformation_molecules(args)
    res = training.train_engine(mols, cfg)
    save_engine(args.out, res.params, cfg, best_epoch=res.best_epoch, split_seed=res.split.seed)
    atomic_write_text(_history_path(args), res.history.to_csv())
    _print_table([(label, res.test["k_rmsd"], res.test["dist_loss"])])
    return res


# --- commands --------------------------------------------------------------------

def cmd_train_engine(args) -> int:
    _train_engine(args, _load_config(args).replace(stage="engine"), "Ham. Eng.")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args).replace(stage="engine").with_variant(args.variant)
    _train_engine(args, cfg, f"Ham. Eng. ({args.variant})")
    return EXIT_OK


def cmd_train_fp(args) -> int:
    cfg = _load_config(args).replace(stage="fingerprint")
    ds = _read_data(args.data)
    if args.conf:
        ds = attach_conformations(ds, args.conf)
    engine = load_engine(args.engine) if args.engine else None
    if cfg.conf_mode == "engine" and engine is None:
        from .exceptions import CheckpointMissing

        raise CheckpointMissing("conf_mode 'engine' needs --engine <checkpoint> (or use conf_mode 'none')")
    res = training.train_fingerprint(ds, cfg, engine)
    save_fingerprint_model(args.out, res.model, best_epoch=res.best_epoch, split_seed=res.split.seed)
    atomic_write_text(_history_path(args), res.history.to_csv())
    if args.export_fingerprints:
        _, fps = res.model.predict_raw(ds.molecules)
        _write_fingerprints(args.export_fingerprints, ds, fps)
    print(json.dumps({"split": "test", **res.test.to_dict()}, indent=1, sort_keys=True))
    return EXIT_OK


def _write_fingerprints(path, ds, fps: np.ndarray) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", *[f"fp{k}" for k in range(fps.shape[1])]])
    rows = ds.rows or list(range(len(ds)))
    for r, v in zip(rows, fps):
        w.writerow([r, *[repr(float(x)) for x in v]])
    atomic_write_text(path, buf.getvalue())


def _checkpoint_kind(path) -> str:
    from .autodiff import load_checkpoint

    return load_checkpoint(path)[1].get("kind", "")


def cmd_eval(args) -> int:
    kind = _checkpoint_kind(args.model)
    if kind == "engine":
        params, cfg = load_engine(args.model)
        mols = _conformation_molecules(args)
        idx = _eval_indices(args, len(mols), cfg.seed)
        out = training.conformation_losses(params, mols, idx, cfg)
        print(json.dumps({"split": args.split, **out}, indent=1, sort_keys=True))
        return EXIT_OK
    model = load_fingerprint_model(args.model)
    ds = _read_data(args.data)
    if args.conf:
        ds = attach_conformations(ds, args.conf)
    idx = _eval_indices(args, len(ds), model.config.seed)
    preds, _ = model.predict_raw([ds.molecules[i] for i in idx])
    metrics = training.compute_metrics(ds.targets[idx], preds, model.task_names,
                                       model.config.task_type == "classification")
    print(json.dumps({"split": args.split, **metrics.to_dict()}, indent=1, sort_keys=True))
    return EXIT_OK


def _eval_indices(args, n: int, seed: int) -> np.ndarray:
    if args.split == "all":
        return np.arange(n)
    return getattr(training.split(n, seed), args.split)


def _engine_inputs(args):
    params, cfg = load_engine(args.model)
    if args.conf:
        mols = _conformation_molecules(args)
    elif args.data:
        mols = _read_data(args.data).molecules
    else:
        raise DataError("give --data and/or --conf")
    return params, cfg, mols


def cmd_predict_conf(args) -> int:
    params, cfg, mols = _engine_inputs(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    leaves = dict(params.items())
    k = 0
    for start in range(0, len(mols), 128):
        chunk = mols[start:start + 128]
        batch = GraphBatch(chunk)
        q_hat, _ = pipeline.predict_coordinates(leaves, batch, cfg)
        for mol, xyz in zip(chunk, batch.split_padded(q_hat.data)):
            comment = "predicted"
            if mol.reference_conformation is not None:
                xyz = geoloss.kabsch_align(xyz, mol.reference_conformation, mol.masses,
                                           weighted=cfg.weighted_kabsch).data
                comment = "predicted, aligned to reference"
            write_xyz(out_dir / f"{k:06d}.xyz", mol.elements, xyz, f"{mol.name or k} {comment}")
            k += 1
    print(f"wrote {k} files to {out_dir}")
    return EXIT_OK


def cmd_export_traj(args) -> int:
    params, cfg, mols = _engine_inputs(args)
    if not 0 <= args.index < len(mols):
        raise DataError(f"--index {args.index} out of range for {len(mols)} molecules")
    mol = mols[args.index]
    leaves = dict(params.items())
    traj = pipeline.rollout_batch(leaves, GraphBatch([mol]), cfg, record_energies=True)
    w = params["eng.W_trans"]
    frames = []
    for t, (state, en) in enumerate(zip(traj.states, traj.energies)):
        xyz = state.Q.data[0] @ w
        frames.append(XYZFrame(mol.elements, xyz, f"step={t} H={float(en['hamiltonian'][0]):.6g}"))
    write_xyz_frames(args.out, frames)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import oracle

    worst_fail = 0
    for group, name, err, tol in oracle.run_all(args.seed if args.seed is not None else 0):
        status = "ok" if err < tol else "FAIL"
        worst_fail += status == "FAIL"
        print(f"{group:<9} {name:<24} {err:.3e}  (tol {tol:.0e})  {status}")
    return EXIT_NUMERIC if worst_fail else EXIT_OK


def _parse_values(text: str, param: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--values is empty")
    if param in ("T", "df"):
        if any(v != int(v) for v in vals):
            raise ConfigError(f"--param {param} takes integers")
        vals = [int(v) for v in vals]
    return vals


def cmd_sweep(args) -> int:
    base = _load_config(args).replace(stage="engine", patience=0)
    values = _parse_values(args.values, args.param)
    mols = _conformation_molecules(args)
    rows = []
    for v in values:
        cfg = base.replace(**{SWEEP_PARAMS[args.param]: v})
        cfg.validate()
        t0 = time.perf_counter()
        try:
            res = training.train_engine(mols, cfg)
            dl, diverged, note = res.test["dist_loss"], False, ""
        except NonFinite as exc:
            dl, diverged, note = float("nan"), True, str(exc)
        secs = time.perf_counter() - t0
        rows.append([args.param, v, dl * 100, secs, int(diverged), note])
        print(f"{args.param}={v}: {DIST_HEADER}={dl * 100:.4g} seconds={secs:.2f}"
              + (" DIVERGED" if diverged else ""), flush=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "test_distance_loss_1e-2", "seconds", "diverged", "note"])
    w.writerows(rows)
    atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, data=True, conf=True, config=True):
    if data:
        p.add_argument("--data", help="CSV with a 'smiles' column followed by target columns")
    if conf:
        p.add_argument("--conf", help="SDF file or directory of XYZ files with reference conformations")
    if config:
        p.add_argument("--config", help="JSON document with TrainConfig fields")
        p.add_argument("--epochs", type=int, help="override the configured epoch count")
        p.add_argument("--workers", type=int, default=None,
                       help="threads per minibatch (default: available cores; 1 for bit-reproducible runs)")
    p.add_argument("--seed", type=int, help="random seed (overrides HAMFORGE_SEED and the config)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hamforge", description="Hamiltonian conformation engine and molecular fingerprints.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-engine", help="train encoder + engine on reference conformations")
    _common(p)
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.set_defaults(func=cmd_train_engine)

    p = sub.add_parser("ablate", help="train an engine ablation variant")
    _common(p)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("train-fp", help="train the fingerprint generator and property head")
    _common(p)
    p.add_argument("--engine", help="engine checkpoint (needed for conf_mode 'engine')")
    p.add_argument("--conf-mode", dest="conf_mode", choices=("engine", "none", "real"))
    p.add_argument("--metric", choices=("rmse", "mae", "roc_auc"))
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--export-fingerprints", help="write a CSV of fingerprints for every molecule")
    p.set_defaults(func=cmd_train_fp)

    p = sub.add_parser("eval", help="print metrics of a checkpoint as JSON")
    _common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict-conf", help="write predicted conformations as XYZ files")
    _common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_predict_conf)

    p = sub.add_parser("export-traj", help="write the engine trajectory of one molecule as multi-frame XYZ")
    _common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, default=0, help="molecule index in the input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_traj)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train once per hyperparameter value and record loss and runtime")
    _common(p)
    p.add_argument("--param", required=True, choices=tuple(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", "absent") is None:
        args.workers = os.cpu_count() or 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
