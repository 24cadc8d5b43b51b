"""scikit-learn style wrappers around the two training stages."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .batching import GraphBatch
from .chem.graph import MoleculeGraph
from .chem.io import Dataset
from .chem.smiles import parse_smiles
from .config import TrainConfig
from . import geoloss, pipeline, training


def check_molecules(X, require_conformations: bool = False) -> list[MoleculeGraph]:
    """Accept molecule graphs or SMILES strings; returns a list of graphs."""
    if isinstance(X, (str, MoleculeGraph)):
        raise ValueError("expected a sequence of molecules, got a single item")
    mols = []
    for k, item in enumerate(X):
        if isinstance(item, MoleculeGraph):
            mols.append(item)
        elif isinstance(item, str):
            mols.append(parse_smiles(item, name=f"mol{k}"))
        else:
            raise TypeError(f"item {k}: expected MoleculeGraph or SMILES string, got {type(item).__name__}")
    if not mols:
        raise ValueError("empty input")
    if require_conformations:
        from .exceptions import NoConformations

        missing = [k for k, m in enumerate(mols) if m.reference_conformation is None]
        if missing:
            raise NoConformations(f"{len(missing)} molecules lack conformations (first: {missing[0]})")
    return mols


def check_targets(y, n: int) -> np.ndarray:
    y = check_array(y, ensure_2d=False, ensure_all_finite="allow-nan", dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows for {n} molecules")
    return y


class _ConfigMixin:
    """Maps estimator parameters onto :class:`TrainConfig`."""

    _stage = "engine"

    def _config(self, **overrides) -> TrainConfig:
        fields = TrainConfig.__dataclass_fields__
        values = {k: v for k, v in self.get_params().items() if k in fields}
        values.update(overrides, stage=self._stage)
        return TrainConfig(**values)

    def _check_fitted(self, attr: str):
        if not hasattr(self, attr):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")


class HamiltonianEngine(_ConfigMixin, BaseEstimator):
    """Conformation predictor: ``fit`` on molecules with reference coordinates."""

    _stage = "engine"

    def __init__(self, epochs=100, batch_size=32, learning_rate=None, lam=1.0, adj_k=3, eta=0.04,
                 T_steps=20, d_f=32, eps_r=1e-6, gcn_widths=(64, 64, 64), bond_hidden=64,
                 use_lstm=True, use_dissipation=True, weighted_kabsch=True, patience=20,
                 clip_norm=10.0, seed=0, workers=1):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lam = lam
        self.adj_k = adj_k
        self.eta = eta
        self.T_steps = T_steps
        self.d_f = d_f
        self.eps_r = eps_r
        self.gcn_widths = gcn_widths
        self.bond_hidden = bond_hidden
        self.use_lstm = use_lstm
        self.use_dissipation = use_dissipation
        self.weighted_kabsch = weighted_kabsch
        self.patience = patience
        self.clip_norm = clip_norm
        self.seed = seed
        self.workers = workers

    def fit(self, X, y=None):
        mols = check_molecules(X, require_conformations=True)
        cfg = self._config()
        res = training.train_engine(mols, cfg)
        self.params_ = res.params
        self.config_ = cfg
        self.history_ = res.history
        self.split_ = res.split
        self.test_losses_ = res.test
        return self

    def _coords(self, mols) -> list[np.ndarray]:
        leaves = dict(self.params_.items())
        out = []
        for start in range(0, len(mols), 256):
            batch = GraphBatch(mols[start:start + 256])
            q_hat, _ = pipeline.predict_coordinates(leaves, batch, self.config_)
            out.extend(batch.split_padded(q_hat.data))
        return out

    def predict(self, X) -> list[np.ndarray]:
        """Predicted heavy-atom coordinates, one ``n x 3`` array per molecule."""
        self._check_fitted("params_")
        return self._coords(check_molecules(X))

    def transform(self, X) -> list[np.ndarray]:
        """Final implicit ``q ⊕ p`` per molecule (``n x 2 d_f``)."""
        self._check_fitted("params_")
        return training.engine_geometry(self.params_, self.config_, check_molecules(X))

    def score(self, X, y=None) -> float:
        """Negative mean K-RMSD against the molecules' reference conformations."""
        mols = check_molecules(X, require_conformations=True)
        vals = [float(geoloss.k_rmsd(q, m.reference_conformation, m.masses).data)
                for q, m in zip(self.predict(mols), mols)]
        return -float(np.mean(vals))


class _FingerprintBase(_ConfigMixin, TransformerMixin, BaseEstimator):
    _stage = "fingerprint"
    _metric = "rmse"

    def __init__(self, epochs=100, batch_size=32, learning_rate=None, hidden=200, L=2, M=2,
                 conf_mode="none", leaky_attention=False, finetune_engine=False, d_f=32,
                 patience=20, clip_norm=10.0, seed=0, workers=1, engine=None, metric=None):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.hidden = hidden
        self.L = L
        self.M = M
        self.conf_mode = conf_mode
        self.leaky_attention = leaky_attention
        self.finetune_engine = finetune_engine
        self.d_f = d_f
        self.patience = patience
        self.clip_norm = clip_norm
        self.seed = seed
        self.workers = workers
        self.engine = engine
        self.metric = metric

    def _config(self) -> TrainConfig:
        return super()._config(metric=self.metric or self._metric)

    def _engine_pair(self):
        eng = self.engine
        if eng is None:
            return None
        if isinstance(eng, HamiltonianEngine):
            eng._check_fitted("params_")
            return eng.params_, eng.config_
        return eng

    def fit(self, X, y):
        mols = check_molecules(X, require_conformations=self.conf_mode == "real")
        y = check_targets(y, len(mols))
        names = [f"task{k}" for k in range(y.shape[1])]
        res = training.train_fingerprint(Dataset(mols, y, names), self._config(), self._engine_pair())
        self.model_ = res.model
        self.history_ = res.history
        self.split_ = res.split
        self.test_metrics_ = res.test
        self.n_tasks_ = y.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Fingerprints, ``(n_molecules, hidden)``."""
        self._check_fitted("model_")
        return self.model_.predict_raw(check_molecules(X))[1]

    def _raw(self, X) -> np.ndarray:
        self._check_fitted("model_")
        out = self.model_.predict_raw(check_molecules(X))[0]
        return out[:, 0] if self.n_tasks_ == 1 else out


class HamNetRegressor(RegressorMixin, _FingerprintBase):
    _metric = "rmse"

    def predict(self, X) -> np.ndarray:
        return self._raw(X)


class HamNetClassifier(ClassifierMixin, _FingerprintBase):
    _metric = "roc_auc"

    def fit(self, X, y):
        super().fit(X, y)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        p = self._raw(X)
        if p.ndim == 1:
            return np.stack([1 - p, p], axis=1)
        return p

    def predict(self, X) -> np.ndarray:
        p = self._raw(X)
        return (p >= 0.5).astype(int)


__all__ = ["HamiltonianEngine", "HamNetRegressor", "HamNetClassifier", "check_molecules", "check_targets"]
