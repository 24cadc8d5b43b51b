"""Differentiable 3x3 singular value decomposition."""
from __future__ import annotations

import numpy as np

from ..exceptions import NoConvergence
from .tensor import Tensor, _make, astensor

# Below this singular-value gap the derivative of U and V is unbounded; the
# backward pass then treats both as constants.
SVD_GAP_TOL = 1e-6

# Counts backward passes that fell back to constant U, V.
degenerate_backward_count = 0


def _svd_np(m: np.ndarray):
    try:
        u, s, vh = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"SVD did not converge: {exc}") from None
    return u, s, np.swapaxes(vh, -1, -2)


def svd3(m) -> tuple[Tensor, Tensor, Tensor]:
    """``M = U diag(S) V^T`` for a 3x3 matrix or a stack of them.

    S is returned in descending order and non-negative.  Gradients flow to
    M through all three outputs; when two singular values are closer than
    ``SVD_GAP_TOL`` only the singular-value path is differentiated.
    """
    m = astensor(m)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"svd3 expects (...,3,3), got {m.shape}")
    if not np.all(np.isfinite(m.data)):
        raise NoConvergence("SVD input has non-finite entries")
    u, s, v = _svd_np(m.data)
    ut = np.swapaxes(u, -1, -2)
    vt = np.swapaxes(v, -1, -2)

    s2 = s**2
    diff = s2[..., None, :] - s2[..., :, None]  # s_j^2 - s_i^2
    gap = np.abs(s[..., :, None] - s[..., None, :])
    eye = np.eye(3, dtype=bool)
    degenerate = np.any(np.where(eye, np.inf, gap) < SVD_GAP_TOL, axis=(-1, -2))
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(eye, 0.0, 1.0 / np.where(eye, 1.0, diff))
    f = np.where(degenerate[..., None, None], 0.0, f)
    smat = s[..., :, None] * np.eye(3)

    def back_s(g):
        return (u @ (g[..., :, None] * np.eye(3)) @ vt,)

    def back_u(g):
        global degenerate_backward_count
        degenerate_backward_count += int(np.sum(degenerate))
        j = ut @ g
        inner = (f * (j - np.swapaxes(j, -1, -2))) @ smat
        return (u @ inner @ vt,)

    def back_v(g):
        k = vt @ g
        inner = smat @ (f * (k - np.swapaxes(k, -1, -2)))
        return (u @ inner @ vt,)

    return _make(u, (m,), back_u), _make(s, (m,), back_s), _make(v, (m,), back_v)
