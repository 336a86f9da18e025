"""Loewner order, the M/m functionals and Thompson's part metric.

Matrices are plain ``numpy`` arrays. :func:`as_symmetric` and :func:`as_spd`
are the validating constructors used at every public entry point; they
return fresh float arrays and never mutate their argument.

The functionals are evaluated through the symmetric similarity
``y^{-1/2} x y^{-1/2}`` so that every eigenproblem is a symmetric one::

    M(x/y) = inf{t : x <= t y} = lambda_max(y^{-1/2} x y^{-1/2})
    m(x/y) = sup{t : x >= t y} = lambda_min(y^{-1/2} x y^{-1/2})
    d_T(x, y) = log max(M(x/y), M(y/x))
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NotPositiveDefiniteError, NotSymmetricError

SYMMETRY_RTOL = 1e-8
PSD_RTOL = 1e-9


def as_symmetric(x, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return ``(x + x')/2`` after checking that ``x`` is nearly symmetric.

    Parameters
    ----------
    x : array_like
        Square matrix (a scalar is promoted to ``1x1``).
    rtol : float
        Largest accepted entrywise asymmetry, relative to ``max(1, max|x|)``.
    """
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T)))
    if asym > rtol * scale:
        raise NotSymmetricError(f"asymmetry {asym:.3e} exceeds {rtol:g} relative")
    return 0.5 * (a + a.T)


def as_spd(x, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Symmetrize ``x`` and check that it is positive definite."""
    a = as_symmetric(x, rtol)
    lo = min_eig(a)
    if not lo > 0.0:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {lo:.3e} is not positive")
    return a


def symmetrize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def min_eig(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(x)[0])


def max_eig(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(x)[-1])


def is_spd(x: np.ndarray) -> bool:
    """Cholesky-based positive definiteness test (no symmetry check)."""
    try:
        np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return False
    return True


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


# -- spectral calculus ------------------------------------------------------

def sym_function(x, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply ``f`` to the eigenvalues of the symmetric matrix ``x``."""
    w, v = np.linalg.eigh(x)
    return symmetrize((v * f(w)) @ v.T)


def spd_sqrt(p) -> np.ndarray:
    p = as_spd(p)
    return sym_function(p, np.sqrt)


def spd_inv_sqrt(p) -> np.ndarray:
    p = as_spd(p)
    return sym_function(p, lambda w: 1.0 / np.sqrt(w))


def spd_inv(p) -> np.ndarray:
    p = as_spd(p)
    return sym_function(p, lambda w: 1.0 / w)


def spd_log(p) -> np.ndarray:
    p = as_spd(p)
    return sym_function(p, np.log)


def sym_exp(x) -> np.ndarray:
    x = as_symmetric(x)
    return sym_function(x, np.exp)


def psd_sqrt(x) -> np.ndarray:
    """Square root of a positive semidefinite matrix (tiny negative eigenvalues clipped)."""
    x = as_symmetric(x)
    return sym_function(x, lambda w: np.sqrt(np.clip(w, 0.0, None)))


def relative_eigenvalues(x, y) -> np.ndarray:
    """Eigenvalues of ``y^{-1/2} x y^{-1/2}`` in ascending order."""
    x = as_symmetric(x)
    y = as_spd(y)
    _check_same_dim(x, y)
    s = sym_function(y, lambda w: 1.0 / np.sqrt(w))
    return np.linalg.eigvalsh(symmetrize(s @ x @ s))


# -- cone functionals -------------------------------------------------------

def M_over(x, y) -> float:
    """``M(x/y) = inf{t : x <= t y}`` for symmetric ``x`` and positive definite ``y``."""
    return float(relative_eigenvalues(x, y)[-1])


def m_over(x, y) -> float:
    """``m(x/y) = sup{t : x >= t y}``; negative when ``x`` leaves the cone."""
    return float(relative_eigenvalues(x, y)[0])


def thompson_distance(a, b) -> float:
    """Thompson's part metric between two positive definite matrices.

    Computed literally as ``log max(M(a/b), M(b/a))`` so that swapping the
    arguments gives a bit-identical result.

    >>> import numpy as np
    >>> round(thompson_distance(np.diag([1.0, 2.0]), np.diag([2.0, 1.0])), 12)
    0.69314718056
    """
    a = as_spd(a)
    b = as_spd(b)
    _check_same_dim(a, b)
    if np.array_equal(a, b):
        return 0.0
    top = max(M_over(a, b), M_over(b, a))
    return max(0.0, float(np.log(top)))


def loewner_leq(a, b, tol: Optional[float] = None) -> bool:
    """True iff ``b - a`` is positive semidefinite up to ``tol``.

    With ``tol=None`` the tolerance is ``1e-9`` times the largest eigenvalue
    magnitude of ``a`` and ``b`` (at least ``1e-9``). A roundoff floor of
    ``10 n eps (||a|| + ||b||)`` is always added, so ``tol=0`` accepts
    ``a <= a + vv'`` despite rounding in the subtraction.
    """
    a = as_symmetric(a)
    b = as_symmetric(b)
    _check_same_dim(a, b)
    if tol is None:
        scale = max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(a)))),
                    float(np.max(np.abs(np.linalg.eigvalsh(b)))))
        tol = PSD_RTOL * scale
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    floor = 10 * a.shape[0] * np.finfo(float).eps * (np.linalg.norm(a, 2) + np.linalg.norm(b, 2))
    return min_eig(b - a) >= -(tol + floor)


@dataclass(frozen=True, eq=False)
class OrderInterval:
    """Order interval ``[lo, hi]`` (``lo=None`` stands for the zero matrix).

    ``open_lo`` / ``open_hi`` switch the corresponding end to the strict
    order ``<<``.
    """

    hi: np.ndarray
    lo: Optional[np.ndarray] = None
    open_lo: bool = True
    open_hi: bool = False

    def __post_init__(self):
        hi = as_spd(self.hi)
        object.__setattr__(self, "hi", hi)
        if self.lo is not None:
            lo = as_spd(self.lo)
            _check_same_dim(lo, hi)
            if not loewner_leq(lo, hi, 0.0):
                raise ValueError("interval lower end is not below the upper end")
            object.__setattr__(self, "lo", lo)

    @property
    def dim(self) -> int:
        return self.hi.shape[0]

    def lower(self) -> np.ndarray:
        return np.zeros_like(self.hi) if self.lo is None else self.lo

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = as_symmetric(p)
        lo_gap = min_eig(p - self.lower())
        hi_gap = min_eig(self.hi - p)
        lo_ok = lo_gap > 0 if self.open_lo else lo_gap >= -tol
        hi_ok = hi_gap > 0 if self.open_hi else hi_gap >= -tol
        return lo_ok and hi_ok

    def describe(self) -> str:
        left = "(" if self.open_lo else "["
        right = ")" if self.open_hi else "]"
        lo = "0" if self.lo is None else "lo"
        return f"{left}{lo}, hi{right}"


# -- random draws used by samplers and tests --------------------------------

def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_spd(rng: np.random.Generator, n: int, low: float = 0.1, high: float = 10.0) -> np.ndarray:
    """SPD matrix with eigenvalues log-uniform in ``[low, high]``."""
    w = np.exp(rng.uniform(np.log(low), np.log(high), size=n))
    v = random_orthogonal(rng, n)
    return symmetrize((v * w) @ v.T)
