"""Central finite-difference oracle for reverse-mode gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..exceptions import NonFiniteGradient
from .params import ParamSet
from .tensor import Tensor, backward


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def numeric_gradient(f: Callable[[dict], Tensor], theta: ParamSet, eps: float, names=None, rng=None,
                     max_per_tensor=None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Central differences ``(f(x+eps) - f(x-eps)) / (2 eps)``.

    Returns ``name -> (flat element indices, derivative values)``; when
    ``max_per_tensor`` is set, a random subset of elements is probed.
    """
    names = theta.trainable_names() if names is None else names
    out = {}
    for name in names:
        base = theta[name]
        idx = np.arange(base.size)
        if max_per_tensor is not None and base.size > max_per_tensor:
            idx = np.sort((rng or np.random.default_rng(0)).choice(base.size, max_per_tensor, replace=False))
        vals = np.empty(len(idx))
        for k, flat in enumerate(idx):
            orig = base.flat[flat]
            work = base.copy()
            work.flat[flat] = orig + eps
            theta.update(name, work)
            fp = float(f(theta.leaves()).data)
            work.flat[flat] = orig - eps
            theta.update(name, work)
            fm = float(f(theta.leaves()).data)
            vals[k] = (fp - fm) / (2 * eps)
        theta.update(name, base)
        out[name] = (idx, vals)
    return out


def grad_check(f: Callable[[dict], Tensor], theta: ParamSet, eps: float = 1e-6, *,
               max_per_tensor: int | None = None, seed: int = 0, report: dict | None = None) -> float:
    """Max element-wise relative error between reverse-mode and central-difference gradients.

    ``f`` maps the leaf tensors of ``theta`` (``ParamSet.leaves()``) to a
    scalar tensor.  The error per element is ``|a-b| / max(1e-8, |a|+|b|)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    leaves = theta.leaves()
    out = f(leaves)
    analytic = backward(out, {k: leaves[k] for k in theta.trainable_names()})
    for name, g in analytic.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"reverse-mode gradient of {name!r} is not finite")
    numeric = numeric_gradient(f, theta, eps, rng=np.random.default_rng(seed), max_per_tensor=max_per_tensor)
    worst = 0.0
    for name, (idx, vals) in numeric.items():
        if not np.all(np.isfinite(vals)):
            raise NonFiniteGradient(f"finite-difference gradient of {name!r} is not finite")
        err = relative_error(analytic[name].ravel()[idx], vals)
        e = float(err.max()) if err.size else 0.0
        if report is not None:
            report[name] = e
        worst = max(worst, e)
    return worst


def grad_check_fn(f: Callable[..., Tensor], inputs: dict[str, np.ndarray], eps: float = 1e-6, **kw) -> float:
    """:func:`grad_check` over plain named arrays (all treated as trainable)."""
    return grad_check(lambda leaves: f(**leaves), ParamSet(inputs), eps, **kw)
