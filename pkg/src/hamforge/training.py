"""Splitting, normalization, optimization and metrics for both stages."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import ParamSet, backward
from .batching import GraphBatch
from .config import TrainConfig
from .exceptions import NonFinite, TooSmall, UndefinedAUC, ZeroVariance

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.8, 0.1, 0.1)


# --- data splits --------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


def split(n_or_dataset, seed: int = 0) -> SplitSpec:
    """Seeded shuffle then floor(0.8n) / floor(0.1n) / remainder."""
    n = n_or_dataset if isinstance(n_or_dataset, (int, np.integer)) else len(n_or_dataset)
    if n < 10:
        raise TooSmall(f"need at least 10 molecules to split 8:1:1, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(0.8 * n))
    n_valid = int(np.floor(0.1 * n))
    return SplitSpec(perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:], seed)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize_targets(y_train) -> Normalizer:
    """Per-task mean and std of the training targets (NaN = missing)."""
    y = np.asarray(y_train, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    mean = np.nanmean(y, axis=0)
    std = np.nanstd(y, axis=0)
    bad = ~(std > 0)
    if np.any(bad):
        raise ZeroVariance(f"targets {np.flatnonzero(bad).tolist()} have zero variance on the training split")
    return Normalizer(mean, std)


# --- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, params: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in params.trainable_names()}
        self.v = {k: np.zeros_like(params[k]) for k in params.trainable_names()}

    def step(self, params: ParamSet, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params.update(k, params[k] - update)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


# --- metrics -----------------------------------------------------------------

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney statistic with midranks for ties."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("ROC-AUC needs at least one positive and one negative")
    r = _midranks(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class Metrics:
    mae: float
    rmse: float
    roc_auc: Optional[float] = None
    per_task: dict = field(default_factory=dict)
    skipped_tasks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "roc_auc": self.roc_auc,
                "per_task": self.per_task, "skipped_tasks": self.skipped_tasks}


def compute_metrics(y_true, y_pred, task_names: Sequence[str] | None = None, classification: bool = False) -> Metrics:
    """MAE/RMSE (and ROC-AUC for classification), averaged over tasks.

    Missing targets (NaN) are ignored; tasks with a single class are skipped
    for ROC-AUC.
    """
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.ndim == 1:
        y, p = y[:, None], p[:, None]
    names = list(task_names) if task_names is not None else [f"task{k}" for k in range(y.shape[1])]
    maes, rmses, aucs, per, skipped = [], [], [], {}, []
    for k, name in enumerate(names):
        ok = ~np.isnan(y[:, k])
        if not ok.any():
            skipped.append(name)
            continue
        err = p[ok, k] - y[ok, k]
        entry = {"mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err**2)))}
        maes.append(entry["mae"])
        rmses.append(entry["rmse"])
        if classification:
            try:
                entry["roc_auc"] = roc_auc(y[ok, k], p[ok, k])
                aucs.append(entry["roc_auc"])
            except UndefinedAUC:
                skipped.append(name)
        per[name] = entry
    auc = float(np.mean(aucs)) if aucs else None
    return Metrics(float(np.mean(maes)) if maes else float("nan"),
                   float(np.mean(rmses)) if rmses else float("nan"), auc, per, skipped)


# --- generic minibatch loop ----------------------------------------------------

@dataclass
class History:
    columns: list
    rows: list = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append([row.get(c, "") for c in self.columns])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return buf.getvalue()

    def column(self, name) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def chunk_indices(idx: np.ndarray, workers: int) -> list[np.ndarray]:
    workers = max(1, min(workers, len(idx)))
    return [c for c in np.array_split(idx, workers) if len(c)]


def batch_gradient(loss_fn: Callable, params: ParamSet, idx: np.ndarray, workers: int = 1):
    """Summed loss and gradients over ``idx``, reduced in fixed chunk order.

    ``loss_fn(leaves, idx)`` returns a per-item loss tensor.  Each chunk uses
    its own leaves so threads share no mutable state.
    """
    names = params.trainable_names()

    def run(chunk):
        leaves = params.leaves()
        per_item = loss_fn(leaves, chunk)
        total = per_item.sum()
        grads = backward(total, {k: leaves[k] for k in names})
        return float(total.data), per_item.data.copy(), grads

    chunks = chunk_indices(idx, workers)
    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))
    loss = 0.0
    grads = {k: np.zeros_like(params[k]) for k in names}
    per_item = np.concatenate([r[1] for r in results])
    for total, _, g in results:
        loss += total
        for k in names:
            grads[k] += g[k]
    return loss, per_item, grads


def check_finite(per_item: np.ndarray, grads: dict, ids: np.ndarray) -> None:
    bad = ~np.isfinite(per_item)
    if np.any(bad):
        i = int(ids[np.flatnonzero(bad)[0]])
        raise NonFinite(f"non-finite loss on molecule {i}", item=i)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient for {k!r} in batch starting with molecule {int(ids[0])}",
                            item=int(ids[0]))


@dataclass
class FitResult:
    params: ParamSet
    history: History
    best_epoch: int
    best_val: float


def fit(params: ParamSet, loss_fn: Callable, train_idx: np.ndarray, valid_idx: np.ndarray,
        cfg: TrainConfig, evaluate: Callable[[ParamSet, np.ndarray], dict],
        extra_columns: Sequence[str] = ()) -> FitResult:
    """Adam with global-norm clipping and early stopping on validation loss.

    ``evaluate(params, idx)`` returns a dict with at least ``loss``; its
    other entries are logged under ``val_<key>`` when listed in
    ``extra_columns``.  The best validation parameters are returned.
    """
    params = params.copy()
    opt = Adam(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = History(["epoch", "train_loss", "val_loss", *[f"val_{c}" for c in extra_columns], "grad_norm"])
    best = (np.inf, -1, params.copy())
    stale = 0
    train_idx = np.asarray(train_idx)
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        losses, norms = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            total, per_item, grads = batch_gradient(loss_fn, params, idx, cfg.workers)
            check_finite(per_item, grads, idx)
            grads = {k: g / len(idx) for k, g in grads.items()}
            grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
            opt.step(params, grads)
            losses.append(total)
            norms.append(norm)
        train_loss = float(np.sum(losses) / len(order))
        val = evaluate(params, valid_idx) if len(valid_idx) else {"loss": train_loss}
        history.append(epoch=epoch, train_loss=train_loss, val_loss=float(val["loss"]),
                       grad_norm=float(np.mean(norms)), **{f"val_{c}": float(val[c]) for c in extra_columns})
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val["loss"])
        if val["loss"] < best[0]:
            best = (float(val["loss"]), epoch, params.copy())
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    return FitResult(best[2], history, best[1], best[0])


# --- stage 1: conformation engine ---------------------------------------------

@dataclass
class EngineFit:
    params: ParamSet
    config: TrainConfig
    split: SplitSpec
    history: History
    best_epoch: int
    test: dict


def _require_conformations(molecules) -> None:
    from .exceptions import NoConformations

    missing = [i for i, m in enumerate(molecules) if m.reference_conformation is None]
    if missing:
        raise NoConformations(f"{len(missing)} molecules lack reference conformations (first: {missing[0]})")


def conformation_losses(params: ParamSet, molecules, idx, cfg: TrainConfig, batch_size: int = 256) -> dict:
    """Mean k_rmsd, dist_loss, adj and objective over ``molecules[idx]`` (no gradients)."""
    from . import pipeline

    sums = {"k_rmsd": 0.0, "dist_loss": 0.0, "adj": 0.0, "loss": 0.0}
    idx = np.asarray(idx)
    if not len(idx):
        return {k: float("nan") for k in sums}
    leaves = {k: v for k, v in params.items()}
    for start in range(0, len(idx), batch_size):
        batch = GraphBatch([molecules[i] for i in idx[start:start + batch_size]])
        q_hat, _ = pipeline.predict_coordinates(leaves, batch, cfg)
        for k, v in pipeline.batch_losses(q_hat, batch, cfg).items():
            sums[k] += float(v.data.sum())
    return {k: v / len(idx) for k, v in sums.items()}


def train_engine(molecules, cfg: TrainConfig, params: ParamSet | None = None,
                 split_spec: SplitSpec | None = None) -> EngineFit:
    """Fit encoder and engine so projected final positions match the references."""
    from . import pipeline

    molecules = list(molecules)
    _require_conformations(molecules)
    sp = split_spec or split(len(molecules), cfg.seed)
    params = params if params is not None else pipeline.init_conformation_params(cfg)

    def loss_fn(leaves, idx):
        batch = GraphBatch([molecules[i] for i in idx])
        try:
            q_hat, _ = pipeline.predict_coordinates(leaves, batch, cfg)
        except NonFinite as exc:
            item = int(idx[exc.item]) if exc.item is not None else None
            raise NonFinite(f"{exc} (molecule {item})", step=exc.step, item=item) from None
        return pipeline.batch_losses(q_hat, batch, cfg)["loss"]

    def evaluate(p, idx):
        return conformation_losses(p, molecules, idx, cfg)

    res = fit(params, loss_fn, sp.train, sp.valid, cfg, evaluate, extra_columns=("k_rmsd", "dist_loss"))
    test = conformation_losses(res.params, molecules, sp.test, cfg)
    return EngineFit(res.params, cfg, sp, res.history, res.best_epoch, test)


# --- stage 2: fingerprint and property head ----------------------------------

def _abs(x):
    from .autodiff import tensor as T

    return T.where(x.data >= 0, x, -x)


def task_loss(out, z, kind: str):
    """Per-molecule loss over present targets; ``out`` are raw head outputs."""
    from .autodiff import tensor as T

    present = ~np.isnan(z)
    zt = np.where(present, z, 0.0)
    if kind == "mse":
        per = T.square(out - zt)
    elif kind == "mae":
        per = _abs(out - zt)
    elif kind == "bce":
        per = T.relu(out) - out * zt + T.log(1.0 + T.exp(-_abs(out)))
    else:
        raise ValueError(f"unknown loss {kind!r}")
    per = T.where(present, per, 0.0)
    return per.sum(axis=-1) / np.maximum(present.sum(axis=-1), 1)


def engine_geometry(engine_params: ParamSet, engine_cfg: TrainConfig, molecules, batch_size: int = 256) -> list:
    """Final-step ``q ⊕ p`` per molecule from a (frozen) engine, ``n x 2 d_f`` each."""
    from . import pipeline

    leaves = {k: v for k, v in engine_params.items()}
    out = []
    for start in range(0, len(molecules), batch_size):
        batch = GraphBatch(molecules[start:start + batch_size])
        traj = pipeline.rollout_batch(leaves, batch, engine_cfg)
        x = np.concatenate([traj.final.Q.data, traj.final.P.data], axis=-1)
        out.extend(batch.split_padded(x))
    return out


@dataclass
class FingerprintModel:
    """Trained fingerprint generator plus everything needed to apply it."""

    params: ParamSet
    config: TrainConfig
    task_names: list
    normalizer: Optional[Normalizer]
    engine_params: Optional[ParamSet] = None
    engine_config: Optional[TrainConfig] = None

    def _geometry(self, leaves, molecules, batch: GraphBatch, cache=None, idx=None):
        from .autodiff import tensor as T
        from . import pipeline

        if self.config.conf_mode != "engine":
            return None
        if cache is not None and not self.config.finetune_engine:
            return T.Tensor(np.concatenate([cache[i] for i in idx], axis=0))
        eng = {k: leaves[k] for k in self.engine_params.names()}
        traj = pipeline.rollout_batch(eng, batch, self.engine_config)
        x = T.concat([traj.final.Q, traj.final.P], axis=-1)
        return x.reshape(batch.B * batch.N, -1)[batch.flat_index]

    def forward(self, leaves, molecules, idx, cache=None):
        """Raw head outputs ``(len(idx), n_tasks)`` and fingerprints."""
        from . import fingerprint

        batch = GraphBatch([molecules[i] for i in idx])
        x = self._geometry(leaves, molecules, batch, cache, idx)
        fp = fingerprint.fingerprint_tensor(leaves, batch, self.config, x)
        return fingerprint.head_logits(leaves, fp), fp

    def all_params(self) -> ParamSet:
        if self.engine_params is None:
            return self.params
        return self.params.merged(self.engine_params)

    def predict_raw(self, molecules, batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
        """(de-normalized predictions or probabilities, fingerprints)."""
        leaves = {k: v for k, v in self.all_params().items()}
        preds, fps = [], []
        idx = np.arange(len(molecules))
        for start in range(0, len(idx), batch_size):
            out, fp = self.forward(leaves, molecules, idx[start:start + batch_size])
            y = out.data
            if self.config.task_type == "classification":
                y = _sigmoid(y)
            elif self.normalizer is not None:
                y = self.normalizer.inverse(y)
            preds.append(y)
            fps.append(fp.data)
        return np.concatenate(preds), np.concatenate(fps)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class FingerprintFit:
    model: FingerprintModel
    split: SplitSpec
    history: History
    best_epoch: int
    test: Metrics


def train_fingerprint(dataset, cfg: TrainConfig, engine: tuple | None = None,
                      split_spec: SplitSpec | None = None, params: ParamSet | None = None) -> FingerprintFit:
    """Train the fingerprint generator and head on ``dataset`` targets.

    ``engine`` is ``(engine_params, engine_config)``; it is required when
    ``cfg.conf_mode == "engine"``.  The engine stays frozen unless
    ``cfg.finetune_engine`` is set.
    """
    from .autodiff import init_params
    from .exceptions import CheckpointMissing
    from . import fingerprint

    molecules = list(dataset.molecules)
    y = np.asarray(dataset.targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    sp = split_spec or split(len(molecules), cfg.seed)
    engine_params = engine_cfg = None
    if cfg.conf_mode == "engine":
        if engine is None:
            raise CheckpointMissing("conf_mode 'engine' needs a trained engine checkpoint")
        engine_params, engine_cfg = engine
        engine_params = engine_params.copy()
        for k in engine_params.names():
            if not cfg.finetune_engine:
                engine_params.set_trainable(k, False)
        if engine_cfg.d_f != cfg.d_f:
            cfg = cfg.replace(d_f=engine_cfg.d_f)
    if cfg.conf_mode == "real":
        from .exceptions import NoConformations

        if any(m.reference_conformation is None for m in molecules):
            raise NoConformations("conf_mode 'real' needs a conformation for every molecule")

    classification = cfg.task_type == "classification"
    normalizer = None if classification else normalize_targets(y[sp.train])
    z = y if classification else normalizer.transform(y)
    n_tasks = y.shape[1]
    if params is None:
        params = init_params(fingerprint.fingerprint_shapes(cfg, n_tasks), cfg.seed)
    model = FingerprintModel(params, cfg, list(dataset.task_names), normalizer, engine_params, engine_cfg)
    cache = None
    if cfg.conf_mode == "engine" and not cfg.finetune_engine:
        cache = engine_geometry(engine_params, engine_cfg, molecules)
    joint = model.all_params()

    def loss_fn(leaves, idx):
        out, _ = model.forward(leaves, molecules, idx, cache)
        return task_loss(out, z[idx], cfg.loss)

    def evaluate(p, idx):
        leaves = {k: v for k, v in p.items()}
        total = 0.0
        for start in range(0, len(idx), 256):
            chunk = idx[start:start + 256]
            out, _ = model.forward(leaves, molecules, chunk, cache)
            total += float(task_loss(out, z[chunk], cfg.loss).data.sum())
        return {"loss": total / len(idx)}

    res = fit(joint, loss_fn, sp.train, sp.valid, cfg, evaluate)
    model.params = res.params.select("fp.")
    if engine_params is not None:
        eng = res.params.select("eng.").merged(res.params.select("enc."))
        model.engine_params = eng
    preds, _ = model.predict_raw([molecules[i] for i in sp.test])
    test = compute_metrics(y[sp.test], preds, model.task_names, classification)
    return FingerprintFit(model, sp, res.history, res.best_epoch, test)
