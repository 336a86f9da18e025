"""Standard and generalized Riccati vector fields with exact derivatives.

The generalized (stochastic) Riccati field is::

    phi(P) = PA + A'P + C'PC + Q - G(P)' (R + D'PD)^{-1} G(P),
    G(P)   = B'P + D'PC + L,

defined wherever ``R + D'PD`` is positive definite. The gain
``N(P) = (R + D'PD)^{-1} G(P)`` appears in the derivative and in the defect
``Dphi(P)P - phi(P) = -Q + N'L + L'N - N'RN``.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .cone import as_symmetric, is_spd, min_eig, symmetrize
from .errors import DimensionError, HypothesisError, InfeasibleError
from .io import matrix_from_json, matrix_to_json, sym_from_json


def _mat(x, shape, name):
    a = np.atleast_2d(np.array(x, dtype=float))
    if a.shape != shape:
        raise DimensionError(f"{name} has shape {a.shape}, expected {shape}")
    return a


@dataclass(frozen=True, eq=False)
class GrdeParams:
    """Constant coefficients ``(A, B, C, D, L, Q, R)`` of the generalized field.

    Shapes: ``A, C`` are ``n x n``; ``B, D`` are ``n x k``; ``L`` is
    ``k x n``; ``Q`` (``n x n``) and ``R`` (``k x k``) are symmetric.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    L: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        n = A.shape[0]
        B = np.atleast_2d(np.array(self.B, dtype=float))
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        k = B.shape[1]
        values = {
            "A": _mat(A, (n, n), "A"),
            "B": B,
            "C": _mat(self.C, (n, n), "C"),
            "D": _mat(self.D, (n, k), "D"),
            "L": _mat(self.L, (k, n), "L"),
            "Q": as_symmetric(_mat(self.Q, (n, n), "Q")),
            "R": as_symmetric(_mat(self.R, (k, k), "R")),
        }
        for name, value in values.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    def block(self) -> np.ndarray:
        """The cost matrix ``[[Q, L'], [L, R]]``."""
        return np.block([[self.Q, self.L.T], [self.L, self.R]])

    def well_posed(self, tol: float = 1e-10) -> bool:
        """Block cost PSD and ``ker R`` meets ``ker D`` only at zero."""
        blk = self.block()
        scale = max(1.0, float(np.max(np.abs(blk))))
        if min_eig(symmetrize(blk)) < -tol * scale:
            return False
        stacked = np.vstack([self.R, self.D])
        return np.linalg.matrix_rank(stacked) == self.k

    def strict(self) -> bool:
        """Block cost ``[[Q, L'], [L, R]]`` positive definite."""
        return is_spd(symmetrize(self.block()))

    def reduced_cost(self) -> np.ndarray:
        """``Q - L' R^{-1} L`` (the Schur complement of ``R`` in the block cost)."""
        return symmetrize(self.Q - self.L.T @ np.linalg.solve(self.R, self.L))

    def to_json(self) -> dict:
        return {name: matrix_to_json(getattr(self, name)) for name in "ABCDLQR"}

    @classmethod
    def from_json(cls, obj) -> "GrdeParams":
        return cls(**{name: (sym_from_json(obj[name]) if name in "QR" else matrix_from_json(obj[name]))
                      for name in "ABCDLQR"})

    @classmethod
    def lyapunov(cls, A, Q, k: int = 1, R=None) -> "GrdeParams":
        """Instance with ``B = C = D = L = 0`` so that ``phi(P) = A'P + PA + Q``."""
        A = np.atleast_2d(np.array(A, dtype=float))
        n = A.shape[0]
        R = np.eye(k) if R is None else R
        return cls(A, np.zeros((n, k)), np.zeros((n, n)), np.zeros((n, k)),
                   np.zeros((k, n)), Q, R)


@dataclass(frozen=True, eq=False)
class StdRiccatiParams:
    """Coefficients of ``phi(P) = A'P + PA + Dmat - P Sigma P``."""

    A: np.ndarray
    Sigma: np.ndarray
    Dmat: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        n = A.shape[0]
        values = {
            "A": _mat(A, (n, n), "A"),
            "Sigma": as_symmetric(_mat(self.Sigma, (n, n), "Sigma")),
            "Dmat": as_symmetric(_mat(self.Dmat, (n, n), "Dmat")),
        }
        for name, value in values.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def to_json(self) -> dict:
        return {"A": matrix_to_json(self.A), "Sigma": matrix_to_json(self.Sigma),
                "Dmat": matrix_to_json(self.Dmat)}

    @classmethod
    def from_json(cls, obj) -> "StdRiccatiParams":
        return cls(matrix_from_json(obj["A"]), sym_from_json(obj["Sigma"]), sym_from_json(obj["Dmat"]))


# -- generalized field --------------------------------------------------------

def _check_p(p: GrdeParams, P) -> np.ndarray:
    P = as_symmetric(P)
    if P.shape != (p.n, p.n):
        raise DimensionError(f"P has shape {P.shape}, expected {(p.n, p.n)}")
    return P


def _gain_parts(p: GrdeParams, P: np.ndarray):
    K = symmetrize(p.R + p.D.T @ P @ p.D)
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise InfeasibleError("R + D'PD is not positive definite") from None
    G = p.B.T @ P + p.D.T @ P @ p.C + p.L
    return K, G, np.linalg.solve(K, G)


def _phi(p: GrdeParams, P: np.ndarray) -> np.ndarray:
    _, G, N = _gain_parts(p, P)
    out = P @ p.A + p.A.T @ P + p.C.T @ P @ p.C + p.Q - G.T @ N
    return symmetrize(out)


def _dphi(p: GrdeParams, P: np.ndarray, Z: np.ndarray, N: Optional[np.ndarray] = None) -> np.ndarray:
    if N is None:
        N = _gain_parts(p, P)[2]
    E = p.B.T @ Z + p.D.T @ Z @ p.C
    DN = p.D @ N
    out = Z @ p.A + p.A.T @ Z + p.C.T @ Z @ p.C - E.T @ N - N.T @ E + DN.T @ Z @ DN
    return symmetrize(out)


def grde_feasible(p: GrdeParams, P) -> bool:
    """True iff ``R + D'PD`` is positive definite."""
    P = _check_p(p, P)
    return bool(min_eig(symmetrize(p.R + p.D.T @ P @ p.D)) > 0.0)


def grde_phi(p: GrdeParams, P) -> np.ndarray:
    """Generalized Riccati vector field at ``P`` (raises :class:`InfeasibleError`)."""
    return _phi(p, _check_p(p, P))


def grde_gain(p: GrdeParams, P) -> np.ndarray:
    """``N(P) = (R + D'PD)^{-1}(B'P + D'PC + L)``, a ``k x n`` matrix."""
    return _gain_parts(p, _check_p(p, P))[2]


def grde_dphi(p: GrdeParams, P, Z) -> np.ndarray:
    """Frechet derivative ``Dphi(P)Z`` in closed form."""
    P = _check_p(p, P)
    Z = as_symmetric(Z)
    if Z.shape != P.shape:
        raise DimensionError("Z and P differ in shape")
    return _dphi(p, P, Z)


def grde_defect(p: GrdeParams, P) -> np.ndarray:
    """``Dphi(P)P - phi(P)`` through the factored form ``-Q + N'L + L'N - N'RN``."""
    P = _check_p(p, P)
    N = _gain_parts(p, P)[2]
    return symmetrize(-p.Q + N.T @ p.L + p.L.T @ N - N.T @ p.R @ N)


# -- standard field -------------------------------------------------------------

def std_phi(p: StdRiccatiParams, P) -> np.ndarray:
    P = as_symmetric(P)
    if P.shape != (p.n, p.n):
        raise DimensionError("P does not match the coefficient dimension")
    return symmetrize(p.A.T @ P + P @ p.A + p.Dmat - P @ p.Sigma @ P)


def std_dphi(p: StdRiccatiParams, P, Z) -> np.ndarray:
    P = as_symmetric(P)
    Z = as_symmetric(Z)
    return symmetrize(p.A.T @ Z + Z @ p.A - Z @ p.Sigma @ P - P @ p.Sigma @ Z)


# -- vector field objects ---------------------------------------------------------

class VectorField:
    """Time-dependent field on symmetric matrices with its derivative in ``P``.

    Subclasses implement :meth:`phi` and :meth:`dphi`; :meth:`feasible`
    defaults to positive definiteness of ``P``.
    """

    dim: int
    autonomous: bool = True

    def phi(self, t: float, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dphi(self, t: float, P: np.ndarray, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def feasible(self, t: float, P: np.ndarray) -> bool:
        return is_spd(P)

    def defect(self, t: float, P: np.ndarray) -> np.ndarray:
        return symmetrize(self.dphi(t, P, P) - self.phi(t, P))


class GrdeField(VectorField):
    def __init__(self, params: GrdeParams):
        self.params = params
        self.dim = params.n

    def phi(self, t, P):
        return _phi(self.params, P)

    def dphi(self, t, P, Z):
        return _dphi(self.params, P, Z)

    def feasible(self, t, P):
        if not is_spd(P):
            return False
        p = self.params
        return is_spd(symmetrize(p.R + p.D.T @ P @ p.D))

    def defect(self, t, P):
        return grde_defect(self.params, P)


class StdRiccatiField(VectorField):
    def __init__(self, params: StdRiccatiParams):
        self.params = params
        self.dim = params.n

    def phi(self, t, P):
        p = self.params
        return symmetrize(p.A.T @ P + P @ p.A + p.Dmat - P @ p.Sigma @ P)

    def dphi(self, t, P, Z):
        p = self.params
        return symmetrize(p.A.T @ Z + Z @ p.A - Z @ p.Sigma @ P - P @ p.Sigma @ Z)


class FunctionField(VectorField):
    """Field given by callables; the derivative defaults to central differences.

    ``phi(t, P)`` and ``dphi(t, P, Z)`` must return symmetric arrays.
    """

    def __init__(self, dim: int, phi: Callable, dphi: Optional[Callable] = None,
                 feasible: Optional[Callable] = None, autonomous: bool = True, fd_step: float = 1e-6):
        self.dim = dim
        self._phi = phi
        self._dphi = dphi
        self._feasible = feasible
        self.autonomous = autonomous
        self.fd_step = fd_step

    def phi(self, t, P):
        return symmetrize(np.asarray(self._phi(t, P), dtype=float))

    def dphi(self, t, P, Z):
        if self._dphi is not None:
            return symmetrize(np.asarray(self._dphi(t, P, Z), dtype=float))
        h = self.fd_step
        return symmetrize((self.phi(t, P + h * Z) - self.phi(t, P - h * Z)) / (2 * h))

    def feasible(self, t, P):
        if self._feasible is not None:
            return bool(self._feasible(t, P))
        return is_spd(P)


def zero_field(dim: int) -> FunctionField:
    return FunctionField(dim, lambda t, P: np.zeros((dim, dim)), lambda t, P, Z: np.zeros((dim, dim)))


def linear_decay_field(dim: int) -> FunctionField:
    """``phi(P) = -P``; its flow ``P e^{-t}`` is a Thompson isometry."""
    return FunctionField(dim, lambda t, P: -P, lambda t, P, Z: -Z)


class PiecewiseConstantField(VectorField):
    """Time-varying field switching between constant-coefficient fields.

    ``fields[i]`` is active on ``[breakpoints[i], breakpoints[i+1])``; the
    last one stays active afterwards and the first one before
    ``breakpoints[0]``.
    """

    autonomous = False

    def __init__(self, breakpoints: Sequence[float], fields: Sequence[VectorField]):
        if len(breakpoints) != len(fields) or not fields:
            raise ValueError("need one breakpoint per field")
        if any(b >= c for b, c in zip(breakpoints, breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise DimensionError("all fields must share a dimension")
        self.breakpoints = list(breakpoints)
        self.fields = list(fields)
        self.dim = dims.pop()

    def active(self, t: float) -> VectorField:
        i = max(0, bisect.bisect_right(self.breakpoints, t) - 1)
        return self.fields[i]

    def phi(self, t, P):
        return self.active(t).phi(t, P)

    def dphi(self, t, P, Z):
        return self.active(t).dphi(t, P, Z)

    def feasible(self, t, P):
        return self.active(t).feasible(t, P)


def monotonicity_witness(field: VectorField, t: float, P, v, q, tol: float = 1e-10) -> float:
    """``<q, Dphi(P) v>`` for PSD ``v, q`` with ``<q, v> = 0``.

    Nonnegative values at every such pair are the infinitesimal form of
    order preservation of the flow.
    """
    v = as_symmetric(v)
    q = as_symmetric(q)
    pairing = float(np.trace(q @ v))
    if pairing > tol:
        raise HypothesisError(f"<q, v> = {pairing:.3e} is not zero", failed=["orthogonality"])
    return float(np.trace(q @ field.dphi(t, np.asarray(P, dtype=float), v)))
