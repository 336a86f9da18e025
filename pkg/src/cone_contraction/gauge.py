"""Symmetric gauge functions, invariant Finsler metrics and the counterexample audit.

A symmetric gauge function ``nu`` on ``R^n`` induces the congruence-invariant
metric ``d_nu(P, Q) = nu(eig(log(P^{-1/2} Q P^{-1/2})))`` on the cone. Only
``p``-norms are shipped; ``p = inf`` gives Thompson's metric.

The audit evaluates the first-order necessary condition for a flow to be
non-expansive in ``d_nu`` on a concrete family of generalized Riccati
fields whose linearization at the identity is known in closed form.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .cone import as_spd, as_symmetric, sym_function, symmetrize
from .errors import DimensionError
from .riccati import GrdeParams, grde_dphi, grde_phi


@dataclass(frozen=True)
class GaugeFunction:
    """``p``-norm gauge, ``1 <= p <= inf``. ``GaugeFunction.sup()`` is ``p = inf``."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        if not p >= 1.0:
            raise ValueError(f"p must be in [1, inf], got {self.p}")
        object.__setattr__(self, "p", p)

    @classmethod
    def pnorm(cls, p: float) -> "GaugeFunction":
        return cls(p)

    @classmethod
    def sup(cls) -> "GaugeFunction":
        return cls(math.inf)

    @property
    def is_sup(self) -> bool:
        return math.isinf(self.p)

    @property
    def name(self) -> str:
        if self.is_sup:
            return "sup"
        return f"p={self.p:g}"

    def __call__(self, lam) -> float:
        return gauge_eval(self, lam)

    def to_json(self) -> dict:
        return {"kind": "supNorm"} if self.is_sup else {"kind": "pNorm", "p": self.p}

    @classmethod
    def parse(cls, text: str) -> "GaugeFunction":
        """Parse ``"sup"``, ``"inf"`` or a number such as ``"2"``."""
        t = text.strip().lower()
        if t in ("sup", "inf", "infinity", "max"):
            return cls.sup()
        return cls(float(t))


def _vec(lam) -> np.ndarray:
    v = np.atleast_1d(np.asarray(lam, dtype=float))
    if v.ndim != 1 or v.size < 1:
        raise DimensionError("expected a non-empty vector")
    return v


def gauge_eval(nu: GaugeFunction, lam) -> float:
    v = np.abs(_vec(lam))
    if nu.is_sup:
        return float(v.max())
    return float(np.linalg.norm(v, ord=nu.p))


def gauge_subgradient(nu: GaugeFunction, lam) -> np.ndarray:
    """One element ``mu`` of the subdifferential of ``nu`` at ``lam != 0``.

    Ties (``p = inf``) and zeros (``p = 1``) are resolved deterministically:
    the lowest index among the maximal ``|lam_i|`` gets the mass, and zero
    coordinates get ``0``.

    Examples
    --------
    >>> gauge_subgradient(GaugeFunction(2), [3.0, 4.0])
    array([0.6, 0.8])
    """
    v = _vec(lam)
    if not np.any(v):
        raise ValueError("the subgradient is only selected at a nonzero vector")
    sgn = np.sign(v)
    if nu.is_sup:
        mu = np.zeros_like(v)
        i = int(np.argmax(np.abs(v)))
        mu[i] = sgn[i]
        return mu
    if nu.p == 1.0:
        return sgn
    r = gauge_eval(nu, v)
    return sgn * (np.abs(v) / r) ** (nu.p - 1.0)


def spectral_gauge(nu: GaugeFunction, P) -> float:
    """``nu`` of the eigenvalue vector of a symmetric matrix."""
    return gauge_eval(nu, np.linalg.eigvalsh(as_symmetric(P)))


def finsler_distance(nu: GaugeFunction, P, Q) -> float:
    """``d_nu(P, Q) = nu(eig(log(P^{-1/2} Q P^{-1/2})))``."""
    P = as_spd(P)
    Q = as_spd(Q)
    if P.shape != Q.shape:
        raise DimensionError(f"dimension mismatch: {P.shape} vs {Q.shape}")
    s = sym_function(P, lambda w: 1.0 / np.sqrt(w))
    w = np.linalg.eigvalsh(symmetrize(s @ Q @ s))
    return gauge_eval(nu, np.log(w))


# -- necessary condition and the counterexample family -------------------------

def necessary_condition_value(linearization: Callable[[np.ndarray], np.ndarray], phi_at_I,
                              lam, mu) -> float:
    """``<diag(mu), Dphi(I) diag(lam) - diag(lam) phi(I)>`` in the trace pairing.

    The matrix ``diag(lam) phi(I)`` is generally not symmetric; it is paired
    as is. A positive value means the flow cannot be non-expansive for any
    gauge having ``mu`` as a subgradient at ``lam``.
    """
    lam = _vec(lam)
    mu = _vec(mu)
    phi_at_I = np.asarray(phi_at_I, dtype=float)
    n = lam.size
    if mu.size != n or phi_at_I.shape != (n, n):
        raise DimensionError("lam, mu and phi(I) must share the dimension")
    Z = np.diag(lam)
    expr = np.asarray(linearization(Z), dtype=float) - Z @ phi_at_I
    return float(np.trace(np.diag(mu) @ expr))


def build_counterexample(n: int, eps: float, e=None) -> GrdeParams:
    """Generalized Riccati instance with ``R + D'D = I`` and ``B' + D'C = I``.

    ``A = I``, ``D = sqrt(1 - eps) I``, ``L = 0``, ``R = Q = eps I``, ``k = n``
    and, with ``s = sqrt(1 - eps)``::

        B = [[(eps - s) I, 0  ],      C = [[(1 + s) I, e],
             [-s e',       eps]]           [0,         s]]

    Parameters
    ----------
    n : int
        Dimension, at least 2.
    eps : float
        In ``(0, 1)``.
    e : array_like, optional
        Vector of length ``n - 1``; all ones by default.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    n = int(n)
    e = np.ones(n - 1) if e is None else _vec(e)
    if e.size != n - 1:
        raise DimensionError(f"e must have length {n - 1}")
    s = math.sqrt(1.0 - eps)
    I = np.eye(n)
    B = np.zeros((n, n))
    B[: n - 1, : n - 1] = (eps - s) * np.eye(n - 1)
    B[n - 1, : n - 1] = -s * e
    B[n - 1, n - 1] = eps
    C = np.zeros((n, n))
    C[: n - 1, : n - 1] = (1.0 + s) * np.eye(n - 1)
    C[: n - 1, n - 1] = e
    C[n - 1, n - 1] = s
    return GrdeParams(A=I, B=B, C=C, D=s * I, L=np.zeros((n, n)), Q=eps * I, R=eps * I)


def counterexample_closed_form(eps: float, e, lam, mu) -> float:
    """``-2 eps <mu, lam> + mu_n (-lam_n |e|^2 + sum_{i<n} lam_i e_i^2)``."""
    e = _vec(e)
    lam = _vec(lam)
    mu = _vec(mu)
    return float(-2.0 * eps * mu @ lam
                 + mu[-1] * (-lam[-1] * e @ e + lam[:-1] @ (e * e)))


@dataclass(frozen=True)
class SamplingPlan:
    """Grid of ``(eps, e, lam)`` points for :func:`audit_nonexpansiveness`.

    ``lam`` takes the form ``(lead, ..., lead, lam_n)``; ``e_vectors=None``
    means the all-ones vector only.
    """

    epsilons: Sequence[float] = (0.01, 0.05, 0.1, 0.2, 0.5)
    last_lambdas: Sequence[float] = (-1.0, -0.5, -0.1, 0.1, 0.5, 1.0)
    lead_lambdas: Sequence[float] = (1.0,)
    e_vectors: Optional[Sequence[Sequence[float]]] = None
    threshold: float = 1e-9

    def points(self, n: int):
        es = [np.ones(n - 1)] if self.e_vectors is None else [_vec(e) for e in self.e_vectors]
        for eps in self.epsilons:
            for e in es:
                for lead in self.lead_lambdas:
                    for last in self.last_lambdas:
                        lam = np.full(n, float(lead))
                        lam[-1] = last
                        yield float(eps), e, lam


@dataclass
class Witness:
    epsilon: float
    e: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    value: float
    closed_form: float

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "e": [float(x) for x in self.e],
                "lambda": [float(x) for x in self.lam], "mu": [float(x) for x in self.mu],
                "value": self.value, "closedForm": self.closed_form}


@dataclass
class ViolationReport:
    """Outcome of a grid audit.

    ``witnesses`` holds the grid points whose value exceeds the plan
    threshold, largest first; ``evaluated`` holds every grid point.
    """

    gauge: GaugeFunction
    n: int
    witnesses: List[Witness]
    evaluated: List[Witness] = field(repr=False, default_factory=list)

    @property
    def max_value(self) -> float:
        return max((w.value for w in self.evaluated), default=-math.inf)

    @property
    def best(self) -> Optional[Witness]:
        if not self.evaluated:
            return None
        return max(self.evaluated, key=lambda w: w.value)

    @property
    def violated(self) -> bool:
        return bool(self.witnesses)

    def to_json(self) -> dict:
        return {"gauge": self.gauge.to_json(), "n": self.n,
                "witnesses": [w.to_json() for w in self.witnesses],
                "maxValue": self.max_value,
                "maxWitness": None if self.best is None else self.best.to_json()}


def _evaluate_point(nu: GaugeFunction, n: int, eps: float, e: np.ndarray, lam: np.ndarray) -> Witness:
    params = build_counterexample(n, eps, e)
    I = np.eye(n)
    phi_I = grde_phi(params, I)
    mu = gauge_subgradient(nu, lam)
    value = necessary_condition_value(lambda Z: grde_dphi(params, I, Z), phi_I, lam, mu)
    return Witness(eps, e.copy(), lam.copy(), mu, value, counterexample_closed_form(eps, e, lam, mu))


def audit_nonexpansiveness(nu: GaugeFunction, n: int, plan: Optional[SamplingPlan] = None,
                           workers: int = 1) -> ViolationReport:
    """Search the counterexample family for violations of the necessary condition.

    The derivative is taken from the exact generalized Riccati linearization
    at ``I``; the closed-form value is carried along for cross-checking.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    plan = plan or SamplingPlan()
    pts = list(plan.points(n))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evaluated = list(pool.map(lambda q: _evaluate_point(nu, n, *q), pts))
    else:
        evaluated = [_evaluate_point(nu, n, *q) for q in pts]
    witnesses = sorted((w for w in evaluated if w.value > plan.threshold),
                       key=lambda w: -w.value)
    return ViolationReport(nu, n, witnesses, evaluated)
