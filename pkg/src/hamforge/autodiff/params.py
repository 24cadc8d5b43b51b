"""Named parameter collections, initialization and JSON checkpoints."""
from __future__ import annotations

import base64
import json
import os
import tempfile
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from ..exceptions import CheckpointMissing, ConfigError
from .tensor import Tensor

FORMAT_VERSION = 1


class ParamSet:
    """Ordered ``name -> array`` map with a per-name trainable flag.

    Shapes are fixed at construction; :meth:`update` replaces values in place
    but refuses a shape change.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None, trainable: Mapping[str, bool] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr, True if trainable is None else trainable.get(name, True))

    def add(self, name: str, array, trainable: bool = True) -> None:
        if name in self._arrays:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.array(array, dtype=np.float64)
        self._trainable[name] = bool(trainable)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    def trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = bool(flag)

    def trainable_names(self) -> list[str]:
        return [k for k, v in self._trainable.items() if v]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def update(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._arrays[name].shape:
            raise ValueError(f"shape of {name!r} is fixed at {self._arrays[name].shape}, got {value.shape}")
        self._arrays[name] = value.copy()

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._arrays.items()}, dict(self._trainable))

    def merged(self, other: "ParamSet") -> "ParamSet":
        out = self.copy()
        for k, v in other.items():
            out.add(k, v, other.trainable(k))
        return out

    def select(self, prefix: str) -> "ParamSet":
        return ParamSet(
            {k: v for k, v in self._arrays.items() if k.startswith(prefix)},
            {k: t for k, t in self._trainable.items() if k.startswith(prefix)},
        )

    def leaves(self, names=None) -> dict[str, Tensor]:
        """Fresh tensors for one forward pass; trainable ones record gradients."""
        names = self._arrays if names is None else names
        return {k: Tensor(self._arrays[k], requires_grad=self._trainable[k], name=k) for k in names}

    def equal(self, other: "ParamSet") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self.names()
        )


def glorot_bound(shape) -> float:
    fan_in, fan_out = shape[-2], shape[-1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: Mapping[str, tuple[int, ...]], seed: int) -> ParamSet:
    """Glorot-uniform matrices and zero vectors, deterministic in ``seed``.

    Draws happen in ``spec`` order from a single generator, so adding a name
    at the end leaves earlier tensors unchanged.
    """
    rng = np.random.default_rng(seed)
    out = ParamSet()
    for name, shape in spec.items():
        shape = tuple(int(s) for s in shape)
        if len(shape) >= 2:
            b = glorot_bound(shape)
            out.add(name, rng.uniform(-b, b, size=shape))
        else:
            out.add(name, np.zeros(shape))
    return out


# --- checkpoint files --------------------------------------------------------

def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(text), dtype="<f8")
    return flat.reshape(shape).astype(np.float64)


def checkpoint_document(params: ParamSet, hyperparameters: Mapping | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "hyperparameters": dict(hyperparameters or {}),
        "tensors": {
            name: {"shape": list(arr.shape), "data_b64": _encode(arr), "trainable": params.trainable(name)}
            for name, arr in params.items()
        },
    }


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, params: ParamSet, hyperparameters: Mapping | None = None) -> None:
    """Write params as one JSON document (temp file, then rename)."""
    doc = checkpoint_document(params, hyperparameters)
    atomic_write_text(path, json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointMissing(f"checkpoint {path} does not exist")
    doc = json.loads(path.read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    params = ParamSet()
    for name, entry in doc["tensors"].items():
        params.add(name, _decode(entry["data_b64"], entry["shape"]), entry.get("trainable", True))
    return params, doc.get("hyperparameters", {})
