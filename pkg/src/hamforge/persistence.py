"""Checkpoint documents for trained models and conformation attachment."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import ParamSet, load_checkpoint, save_checkpoint
from .chem.io import Dataset, read_sdf, read_xyz
from .config import TrainConfig
from .exceptions import CheckpointMissing, ConfigError, CountMismatch, NoConformations
from .training import FingerprintModel, Normalizer


def save_engine(path, params: ParamSet, cfg: TrainConfig, **extra) -> None:
    save_checkpoint(path, params, {"kind": "engine", "config": cfg.to_dict(), **extra})


def load_engine(path) -> tuple[ParamSet, TrainConfig]:
    params, hyper = load_checkpoint(path)
    kind = hyper.get("kind")
    if kind == "fingerprint":
        eng = hyper.get("engine_config")
        if eng is None:
            raise CheckpointMissing(f"{path} holds a fingerprint model without an engine")
        return params.select("enc.").merged(params.select("eng.")), TrainConfig.from_dict(eng)
    if kind != "engine":
        raise ConfigError(f"{path} is not an engine checkpoint (kind={kind!r})")
    return params, TrainConfig.from_dict(hyper["config"])


def save_fingerprint_model(path, model: FingerprintModel, **extra) -> None:
    hyper = {
        "kind": "fingerprint",
        "config": model.config.to_dict(),
        "task_names": list(model.task_names),
        "normalization": model.normalizer.to_dict() if model.normalizer is not None else None,
        "engine_config": model.engine_config.to_dict() if model.engine_config is not None else None,
        **extra,
    }
    save_checkpoint(path, model.all_params(), hyper)


def load_fingerprint_model(path) -> FingerprintModel:
    params, hyper = load_checkpoint(path)
    if hyper.get("kind") != "fingerprint":
        raise ConfigError(f"{path} is not a fingerprint checkpoint (kind={hyper.get('kind')!r})")
    cfg = TrainConfig.from_dict(hyper["config"])
    norm = hyper.get("normalization")
    eng_cfg = hyper.get("engine_config")
    engine_params = None
    if eng_cfg is not None:
        engine_params = params.select("enc.").merged(params.select("eng."))
        for k in engine_params.names():
            engine_params.set_trainable(k, False)
    return FingerprintModel(params.select("fp."), cfg, list(hyper["task_names"]),
                            Normalizer.from_dict(norm) if norm else None, engine_params,
                            TrainConfig.from_dict(eng_cfg) if eng_cfg else None)


def load_conformations(path) -> list:
    """Heavy-atom coordinate arrays from an SDF file or a directory of XYZ files.

    XYZ files are taken in sorted name order; hydrogens are dropped.
    Returns ``(elements, coords)`` pairs.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.xyz"))
        if not files:
            raise NoConformations(f"{path}: no .xyz files")
        out = []
        for f in files:
            fr = read_xyz(f)
            keep = [i for i, e in enumerate(fr.elements) if e != "H"]
            out.append(([fr.elements[i] for i in keep], np.asarray(fr.coordinates)[keep]))
        return out
    if not p.exists():
        raise NoConformations(f"conformation file {path} not found")
    return [(m.elements, m.reference_conformation) for m in read_sdf(p)]


def attach_conformations(dataset: Dataset, path) -> Dataset:
    """Copy of ``dataset`` whose molecules carry the conformations from ``path``.

    Conformations are matched to CSV rows by position; element sequences
    must agree atom by atom.
    """
    confs = load_conformations(path)
    rows = dataset.rows or list(range(len(dataset)))
    n_rows = max(rows) + 1 if rows else 0
    if len(confs) < n_rows:
        raise CountMismatch(f"{path}: {len(confs)} conformations for {n_rows} data rows")
    mols = []
    for mol, r in zip(dataset.molecules, rows):
        elems, xyz = confs[r]
        if list(elems) != list(mol.elements):
            raise CountMismatch(f"row {r}: conformation atoms {''.join(elems)} do not match "
                                f"SMILES atoms {''.join(mol.elements)}")
        mols.append(mol.with_conformation(xyz))
    return Dataset(mols, dataset.targets, dataset.task_names, dataset.skipped, list(dataset.rows))
