"""Discrete generalized Riccati operator and its Thompson Lipschitz constant.

::

    F(P) = A'PA + C'PC + Q - G' (R + B'PB + D'PD)^{-1} G,   G = B'PA + D'PC

with ``Q, R >> 0``. ``F`` is order preserving and non-expansive on the open
cone. It is a strict contraction exactly when ``[A; C]`` lies in the range
of the full-column-rank factor ``[Bbar; Dbar]`` of ``[B; D]``, and then its
Lipschitz constant is at most ``nu / (1 + sqrt(1 + nu))^2`` with
``nu = M(S' Rbar S / Q)``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cone import (M_over, as_spd, as_symmetric, min_eig, random_spd, sym_exp, sym_function,
                   symmetrize, thompson_distance)
from .errors import ConvergenceError, DimensionError
from .io import matrix_from_json, matrix_to_json, sym_from_json

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscreteParams:
    """Coefficients ``A, C`` (``n x n``), ``B, D`` (``n x m``), ``Q >> 0``, ``R >> 0``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        n = A.shape[0]
        B = np.atleast_2d(np.array(self.B, dtype=float))
        if A.shape != (n, n) or B.shape[0] != n:
            raise DimensionError("A must be square and B must have as many rows as A")
        m = B.shape[1]
        C = np.atleast_2d(np.array(self.C, dtype=float))
        D = np.atleast_2d(np.array(self.D, dtype=float))
        if C.shape != (n, n) or D.shape != (n, m):
            raise DimensionError(f"C must be {n}x{n} and D must be {n}x{m}")
        Q = as_spd(self.Q)
        R = as_spd(self.R)
        if Q.shape != (n, n) or R.shape != (m, m):
            raise DimensionError(f"Q must be {n}x{n} and R must be {m}x{m}")
        for name, value in zip("ABCDQR", (A, B, C, D, Q, R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def to_json(self) -> dict:
        return {name: matrix_to_json(getattr(self, name)) for name in "ABCDQR"}

    @classmethod
    def from_json(cls, obj) -> "DiscreteParams":
        return cls(**{name: (sym_from_json(obj[name]) if name in "QR" else matrix_from_json(obj[name]))
                      for name in "ABCDQR"})

    @classmethod
    def standard(cls, A, B, Q, R) -> "DiscreteParams":
        """Instance with ``C = D = 0``, for which ``F`` is the usual discrete Riccati map."""
        A = np.atleast_2d(np.array(A, dtype=float))
        B = np.atleast_2d(np.array(B, dtype=float))
        return cls(A, B, np.zeros_like(A), np.zeros_like(B), Q, R)


def _gain(p: DiscreteParams, P: np.ndarray):
    K = symmetrize(p.R + p.B.T @ P @ p.B + p.D.T @ P @ p.D)
    G = p.B.T @ P @ p.A + p.D.T @ P @ p.C
    return G, np.linalg.solve(K, G)


def _check(p: DiscreteParams, P) -> np.ndarray:
    P = as_symmetric(P)
    if P.shape != (p.n, p.n):
        raise DimensionError(f"P has shape {P.shape}, expected {(p.n, p.n)}")
    return P


def apply_F(p: DiscreteParams, P) -> np.ndarray:
    P = _check(p, P)
    G, N = _gain(p, P)
    return symmetrize(p.A.T @ P @ p.A + p.C.T @ P @ p.C + p.Q - G.T @ N)


def apply_T(A, B, Q, R, P) -> np.ndarray:
    """``A'PA + Q - A'PB (R + B'PB)^{-1} B'PA``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = as_symmetric(Q)
    R = as_symmetric(R)
    P = as_symmetric(P)
    G = B.T @ P @ A
    return symmetrize(A.T @ P @ A + Q - G.T @ np.linalg.solve(symmetrize(R + B.T @ P @ B), G))


def dF(p: DiscreteParams, P, Z) -> np.ndarray:
    """``(A - BN)'Z(A - BN) + (C - DN)'Z(C - DN)`` with ``N`` the gain at ``P``."""
    P = _check(p, P)
    Z = as_symmetric(Z)
    if Z.shape != P.shape:
        raise DimensionError("Z and P differ in shape")
    _, N = _gain(p, P)
    Ac = p.A - p.B @ N
    Cc = p.C - p.D @ N
    return symmetrize(Ac.T @ Z @ Ac + Cc.T @ Z @ Cc)


def rank_factorization(M, rank_tol: float = DEFAULT_RANK_TOL):
    """``M = left @ W`` with ``left`` of full column rank and ``W`` of full row rank.

    Singular values below ``rank_tol * sigma_max`` are dropped.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("cannot factor a zero matrix")
    r = int(np.sum(s > rank_tol * s[0]))
    return U[:, :r] * s[:r], Vt[:r]


def woodbury_rbar(W, R) -> np.ndarray:
    """``(W R^{-1} W')^{-1}`` for ``W`` of full row rank."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    R = as_spd(R)
    if W.shape[1] != R.shape[0]:
        raise DimensionError("W and R are incompatible")
    inner = symmetrize(W @ np.linalg.solve(R, W.T))
    if np.linalg.matrix_rank(inner) < W.shape[0]:
        raise ValueError("W is not of full row rank")
    return symmetrize(np.linalg.inv(inner))


def lgty_gap(R, X, delta: float) -> float:
    """``lambda_min(R / (4(delta - 1)) - [X - X (R+X)^{-1} (delta R + X) (R+X)^{-1} X])``."""
    if delta < 2:
        raise ValueError("delta must be at least 2")
    R = as_spd(R)
    X = as_symmetric(X)
    Y = np.linalg.solve(R + X, X)  # (R+X)^{-1} X
    lhs = X - Y.T @ (delta * R + X) @ Y
    return min_eig(symmetrize(R / (4.0 * (delta - 1.0)) - lhs))


@dataclass
class LipschitzReport:
    """Strictness decision and closed-form Lipschitz bound.

    ``bound == 1`` when no ``S`` exists: the operator is then only known to
    be non-expansive.
    """

    strict: bool
    residual: float
    bound: float
    rank_tol: float
    S: Optional[np.ndarray] = None
    nu: Optional[float] = None
    rank: int = 0

    def to_json(self) -> dict:
        out = {"strict": self.strict, "residual": self.residual, "bound": self.bound,
               "rankTol": self.rank_tol, "rank": self.rank, "nonExpansive": True}
        if self.strict:
            out["S"] = matrix_to_json(self.S) if self.S.size else {"rows": []}
            out["nu"] = self.nu
        return out


def lipschitz_bound(nu: float) -> float:
    """``nu / (1 + sqrt(1 + nu))^2``."""
    return nu / (1.0 + math.sqrt(1.0 + nu)) ** 2


def lipschitz_report(p: DiscreteParams, rank_tol: float = DEFAULT_RANK_TOL) -> LipschitzReport:
    """Decide strict contraction and compute the closed-form bound.

    Examples
    --------
    >>> import numpy as np
    >>> rep = lipschitz_report(DiscreteParams.standard(np.eye(1), np.eye(1), np.eye(1), np.eye(1)))
    >>> rep.strict, round(rep.bound, 12)
    (True, 0.171572875254)
    """
    BD = np.vstack([p.B, p.D])
    AC = np.vstack([p.A, p.C])
    scale = np.linalg.norm(p.A) + np.linalg.norm(p.C)
    if not np.any(BD):
        left = np.zeros((2 * p.n, 0))
        Rbar = np.zeros((0, 0))
        S = np.zeros((0, p.n))
    else:
        left, W = rank_factorization(BD, rank_tol)
        Rbar = woodbury_rbar(W, p.R)
        S = np.linalg.lstsq(left, AC, rcond=None)[0]
    residual = float(np.linalg.norm(left @ S - AC))
    strict = residual <= rank_tol * scale
    if not strict:
        return LipschitzReport(False, residual, 1.0, rank_tol, rank=left.shape[1])
    nu = max(0.0, M_over(symmetrize(S.T @ Rbar @ S), p.Q)) if S.size else 0.0
    return LipschitzReport(True, residual, lipschitz_bound(nu), rank_tol, S, nu, left.shape[1])


# -- sampling -------------------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CONE_CONTRACTION_THREADS", "1")))
    except ValueError:
        return 1


_CHUNKS = 8


def _ratio(p: DiscreteParams, P1, P2) -> float:
    d = thompson_distance(P1, P2)
    if d == 0.0:
        return 0.0
    return thompson_distance(apply_F(p, P1), apply_F(p, P2)) / d


def _chunk(p: DiscreteParams, count: int, seq: np.random.SeedSequence, directed: bool) -> float:
    rng = np.random.default_rng(seq)
    n = p.n
    best = 0.0
    for i in range(count):
        P1 = random_spd(rng, n, 1e-2, 1e2)
        kind = i % 3 if directed else i % 2
        if kind == 0:
            P2 = random_spd(rng, n, 1e-2, 1e2)
        elif kind == 1:
            # nearby pair: P2 = P1^{1/2} exp(delta H) P1^{1/2}
            H = rng.standard_normal((n, n))
            H = symmetrize(H) / max(1e-12, np.linalg.norm(H))
            delta = 10.0 ** rng.uniform(-3, 0)
            S = sym_function(P1, np.sqrt)
            P2 = symmetrize(S @ sym_exp(delta * H) @ S)
        else:
            # pairs (tP, t e^delta P) with t large
            t = 10.0 ** rng.uniform(2, 8)
            delta = 10.0 ** rng.uniform(-3, -1)
            P1 = t * P1
            P2 = math.exp(delta) * P1
        best = max(best, _ratio(p, P1, P2))
    return best


def empirical_lipschitz(p: DiscreteParams, count: int, seed: int = 0, directed: bool = True) -> float:
    """Largest sampled ``d_T(F(P1), F(P2)) / d_T(P1, P2)``.

    Samples mix independent random pairs, nearby pairs and, with
    ``directed=True``, pairs ``(tP, t e^delta P)`` with ``t`` large, which
    is where the ratio approaches 1 when no ``S`` exists. Work is split in a
    fixed number of chunks with seeds spawned from ``seed``, so the result
    does not depend on the thread count (``CONE_CONTRACTION_THREADS``).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    seqs = np.random.SeedSequence(seed).spawn(_CHUNKS)
    sizes = [count // _CHUNKS + (1 if i < count % _CHUNKS else 0) for i in range(_CHUNKS)]
    jobs = [(c, s) for c, s in zip(sizes, seqs) if c > 0]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _chunk(p, job[0], job[1], directed), jobs))
    else:
        parts = [_chunk(p, c, s, directed) for c, s in jobs]
    return max(parts)


def iterate_to_fixed_point(p: DiscreteParams, P0, tol: float = 1e-10, max_iter: Optional[int] = None,
                           rank_tol: float = DEFAULT_RANK_TOL, full_output: bool = False):
    """Iterate ``P <- F(P)`` until ``d_T(F(P), P) < tol``.

    For a strict instance the budget is the Banach estimate plus a margin.
    Otherwise the loop is best effort (flagged in the info dict) with
    ``max_iter`` defaulting to 10000 and divergence detection.

    Returns
    -------
    P : ndarray
    info : dict
        Only with ``full_output=True``: ``iterations``, ``strict``,
        ``bound``, ``distance`` and ``budget``.
    """
    P = as_spd(P0)
    if P.shape != (p.n, p.n):
        raise DimensionError("P0 does not match the coefficient dimension")
    rep = lipschitz_report(p, rank_tol)
    FP = apply_F(p, P)
    d = thompson_distance(FP, P)
    if max_iter is None:
        if rep.strict and rep.bound < 1.0:
            if rep.bound == 0.0 or d < tol:
                max_iter = 2
            else:
                est = math.log(d / (tol * (1.0 - rep.bound))) / math.log(1.0 / rep.bound)
                max_iter = int(math.ceil(max(est, 0.0))) + 10
        else:
            max_iter = 10_000
    it = 0
    while d >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"d_T(F(P), P) = {d:.3e} after {it} iterations")
        P = FP
        it += 1
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > 1e12:
            raise ConvergenceError(f"iteration diverged after {it} steps")
        FP = apply_F(p, P)
        d = thompson_distance(FP, P)
    if full_output:
        return P, {"iterations": it, "strict": rep.strict, "bound": rep.bound,
                   "distance": d, "budget": max_iter, "bestEffort": not rep.strict}
    return P
