"""Type-II discrete cosine transforms and the gradient pullback through them.

Two normalization modes are supported, because the choice decides whether the
frequency view of a gradient can ever disagree with the spatial view:

* ``DctMode.ORTHO`` is the orthonormal DCT-II. Its inverse equals its
  transpose, so mapping a gradient through IDCT/DCT is exactly the identity
  and the spatial/frequency consistency mask is provably all-ones.
* ``DctMode.SCALED`` keeps the raw cosine sums and applies one uniform
  scale factor (2N)^(-1/4) per axis, i.e. 1/sqrt(2N) in total for a square
  image. The basis is invertible but not orthonormal, so the pullback is a
  genuine reweighting and the two views can disagree. This is the default
  mode for the consistency attack.

All transforms are separable matrix products with precomputed plans, cached
per (length, mode). Inverses are built in closed form (no linear solves), so
results are bit-reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .tensor_ops import as_f64

__all__ = ["DctMode", "DctPlan", "get_plan", "dct2", "idct2", "frequency_pullback"]


class DctMode(str, Enum):
    """Normalization convention for the 1-D cosine basis."""

    ORTHO = "ortho"
    SCALED = "scaled"


@dataclass(frozen=True)
class DctPlan:
    """Precomputed 1-D cosine basis for one axis length and mode.

    Attributes:
        length: transform size N.
        mode: normalization convention.
        forward: [N, N] analysis matrix M, coefficients = M @ x.
        inverse: [N, N] exact inverse A = M^-1, built in closed form.
        inverse_transpose: A^T, cached for adjoint applications.
        gram: A @ A^T, the matrix the pullback sandwiches gradients with.
            Equals the identity exactly when the basis is orthonormal.
    """

    length: int
    mode: DctMode
    forward: np.ndarray
    inverse: np.ndarray
    inverse_transpose: np.ndarray
    gram: np.ndarray


def _cosine_table(n: int) -> np.ndarray:
    """Unnormalized DCT-II table T[u, k] = cos(pi * (2k + 1) * u / (2N))."""
    k = np.arange(n, dtype=np.float64)
    u = np.arange(n, dtype=np.float64)
    return np.cos(np.pi * np.outer(u, 2.0 * k + 1.0) / (2.0 * n))


@lru_cache(maxsize=None)
def get_plan(length: int, mode: DctMode) -> DctPlan:
    """Build (or fetch from cache) the plan for one axis length and mode."""
    if length < 1:
        raise ValueError(f"transform length must be >= 1, got {length}")
    mode = DctMode(mode)
    n = length
    table = _cosine_table(n)

    # Orthonormal row scales s(u): rows of s[:, None] * table are orthonormal.
    s = np.full(n, np.sqrt(2.0 / n))
    s[0] = np.sqrt(1.0 / n)

    if mode is DctMode.ORTHO:
        row_scale = s
    else:
        row_scale = np.full(n, (2.0 * n) ** -0.25)

    forward = row_scale[:, None] * table
    # M = diag(row_scale / s) @ O with O orthonormal, so M^-1 = O^T @ diag(s / row_scale).
    ortho = s[:, None] * table
    inverse = ortho.T * (s / row_scale)[None, :]
    gram = inverse @ inverse.T
    if mode is DctMode.ORTHO:
        gram = np.eye(n)

    for a in (forward, inverse, gram):
        a.setflags(write=False)
    inverse_transpose = inverse.T
    return DctPlan(n, mode, forward, inverse, inverse_transpose, gram)


def _check_spatial(t: np.ndarray, op: str) -> np.ndarray:
    t = as_f64(t)
    if t.ndim < 2:
        raise ValueError(f"{op} expects at least 2 dimensions [..., H, W], got shape {t.shape}")
    return t


def dct2(x, mode: DctMode = DctMode.SCALED) -> np.ndarray:
    """Separable 2-D DCT over the trailing two axes, per channel.

    Accepts [H, W], [C, H, W], or [B, C, H, W]; leading axes are mapped
    independently. Coefficients are M_H @ X @ M_W^T with the mode's plans.
    """
    x = _check_spatial(x, "dct2")
    ph = get_plan(x.shape[-2], mode)
    pw = get_plan(x.shape[-1], mode)
    return ph.forward @ x @ pw.forward.T


def idct2(coeffs, mode: DctMode = DctMode.SCALED) -> np.ndarray:
    """Exact inverse of :func:`dct2` for the same mode (lossless round trip)."""
    coeffs = _check_spatial(coeffs, "idct2")
    ph = get_plan(coeffs.shape[-2], mode)
    pw = get_plan(coeffs.shape[-1], mode)
    return ph.inverse @ coeffs @ pw.inverse_transpose


def frequency_pullback(g, mode: DctMode = DctMode.SCALED) -> np.ndarray:
    """Map a spatial loss gradient through the frequency parameterization.

    If the loss is evaluated at idct2(z) with z = dct2(x), the chain rule
    gives d loss / d z = A^T g A per channel (A being the inverse plan), and
    applying idct2 to that gradient yields A (A^T g A) A^T = (A A^T) g (A A^T).

    In ORTHO mode A A^T is the identity, so the input is returned unchanged
    (analytically exact; no numerical noise is introduced on zero entries).
    In SCALED mode the gram matrices reweight the gradient across space and
    its sign pattern can genuinely change.
    """
    g = _check_spatial(g, "frequency_pullback")
    mode = DctMode(mode)
    if mode is DctMode.ORTHO:
        return np.array(g, dtype=np.float64, copy=True)
    ph = get_plan(g.shape[-2], mode)
    pw = get_plan(g.shape[-1], mode)
    return ph.gram @ g @ pw.gram.T
