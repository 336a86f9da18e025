"""Contraction rates of cone flows in Thompson's metric.

Two kinds of numbers come out of this module and they must not be confused:

* ``closedForm`` rates are lower bounds on the contraction rate that follow
  from a proven inequality once its hypotheses are checked;
* ``sampledEstimate`` rates come from evaluating an infimum on finitely many
  points. Sampling can miss the worst point, so such a number is an *upper*
  estimate of the best rate and never a guarantee.

For a flow ``P' = phi(t, P)`` on a domain ``U`` with ``cU`` contained in
``U`` for ``c`` in ``(0, 1]``, the best rate is
``-sup M((Dphi(P)P - phi(P)) / P)`` over ``U``.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .cone import (M_over, OrderInterval, as_spd, as_symmetric, m_over, max_eig, min_eig,
                   psd_sqrt, random_orthogonal, sym_function, symmetrize)
from .errors import DimensionError, HypothesisError, InfeasibleError
from .riccati import GrdeParams, StdRiccatiParams, VectorField


class Method(str, enum.Enum):
    GENERAL_SUP = "generalSupFormula"
    STD_GLOBAL = "stdGlobalClosedForm"
    GRDE_LOCAL = "grdeLocalClosedForm"
    INDEFINITE_SIGMA = "indefiniteSigmaBox"
    DEGENERATE_SIGMA = "degenerateSigma"
    ORTHANT = "orthantInfimum"
    FIXED_POINT = "fixedPointFormula"


class Rigor(str, enum.Enum):
    CLOSED_FORM = "closedForm"
    SAMPLED = "sampledEstimate"


_SAMPLED_NOTE = ("sampled estimate: the infimum is taken over finitely many points, so the "
                 "value is an upper estimate of the best rate, not a guarantee")


@dataclass
class RateCertificate:
    """A contraction rate together with where and how it was obtained.

    ``witnesses`` are ``(point, value)`` pairs: for sampled estimates, the
    extremal samples; for closed forms, optional illustrative points.
    """

    rate: float
    domain: str
    method: Method
    rigor: Rigor
    witnesses: List[tuple] = field(default_factory=list)
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.rigor is Rigor.SAMPLED and not self.witnesses:
            raise ValueError("a sampled estimate needs at least one witness")

    @property
    def is_guarantee(self) -> bool:
        return self.rigor is Rigor.CLOSED_FORM

    def to_json(self) -> dict:
        from .io import to_jsonable
        return {
            "rate": self.rate,
            "domain": self.domain,
            "method": self.method.value,
            "rigor": self.rigor.value,
            "witnesses": [{"point": to_jsonable(pt), "value": float(v)} for pt, v in self.witnesses],
            "seed": self.seed,
            "inputs": to_jsonable(self.inputs),
            "notes": list(self.notes),
        }


# -- samplers ---------------------------------------------------------------------

class DomainSampler:
    """Finite set of points standing in for a domain of the cone."""

    seed: Optional[int] = None

    def samples(self) -> List[np.ndarray]:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class OrderIntervalSampler(DomainSampler):
    """Random points of the order interval ``(lo, hi]`` (``lo=None`` is zero).

    Each draw is ``lo + S V diag(w) V' S`` with ``S = (hi - lo)^{1/2}``, a
    random orthogonal ``V`` and weights ``w`` uniform in ``(0, 1]``, so
    ``lo < P <= hi`` by construction. The corner ``hi`` and, when the lower
    end is zero, its multiples ``c hi`` for ``c`` in ``scales`` are always
    included.
    """

    def __init__(self, hi, lo=None, count: int = 200, seed: int = 0,
                 scales: Sequence[float] = (0.5, 0.1)):
        self.interval = OrderInterval(hi=hi, lo=lo)
        if count < 0:
            raise ValueError("count must be nonnegative")
        self.count = int(count)
        self.seed = seed
        self.scales = tuple(scales)

    def samples(self) -> List[np.ndarray]:
        hi = self.interval.hi
        lo = self.interval.lower()
        gap = symmetrize(hi - lo)
        S = psd_sqrt(gap)
        n = hi.shape[0]
        rng = np.random.default_rng(self.seed)
        out = [hi.copy()]
        if self.interval.lo is None:
            out += [c * hi for c in self.scales]
        for _ in range(self.count):
            V = random_orthogonal(rng, n)
            w = 1.0 - rng.uniform(0.0, 1.0, size=n)  # in (0, 1]
            out.append(symmetrize(lo + S @ ((V * w) @ V.T) @ S))
        return out

    def describe(self) -> str:
        return "order interval " + self.interval.describe()


class RaySampler(DomainSampler):
    """``c P`` for every base point ``P`` and every ``c`` in ``scales``."""

    def __init__(self, base_points: Sequence, scales: Sequence[float]):
        self.base = [as_spd(p) for p in base_points]
        if any(c <= 0 for c in scales):
            raise ValueError("scales must be positive")
        self.scales = [float(c) for c in scales]

    def samples(self) -> List[np.ndarray]:
        return [c * p for p in self.base for c in self.scales]

    def describe(self) -> str:
        return f"rays through {len(self.base)} base points, {len(self.scales)} scales"


class ListSampler(DomainSampler):
    def __init__(self, points: Sequence):
        self.points = [as_spd(p) for p in points]

    def samples(self) -> List[np.ndarray]:
        return [p.copy() for p in self.points]

    def describe(self) -> str:
        return f"user list of {len(self.points)} points"


def _parallel_map(fn, items, workers: Optional[int]):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _extremes(points, values, k: int, largest: bool):
    order = np.argsort(values, kind="stable")
    if largest:
        order = order[::-1]
    return [(points[i], float(values[i])) for i in order[:k]]


# -- general formula ---------------------------------------------------------------

def defect_ratio(field: VectorField, t: float, P) -> float:
    """``M((Dphi(P)P - phi(P)) / P)`` at one point."""
    return M_over(field.defect(t, P), P)


def general_rate_estimate(field: VectorField, sampler: DomainSampler,
                          times: Sequence[float] = (0.0,), n_witnesses: int = 5,
                          workers: Optional[int] = None) -> RateCertificate:
    """Sampled version of ``-sup M((Dphi(P)P - phi(P)) / P)``.

    Parameters
    ----------
    field : VectorField
    sampler : DomainSampler
        Every sample must be feasible for ``field`` at every time.
    times : sequence of float
        Times at which a non-autonomous field is probed.

    Returns
    -------
    RateCertificate
        ``rigor = sampledEstimate``; the witnesses are the points with the
        largest defect ratio.
    """
    pts = sampler.samples()
    if not pts or not len(times):
        raise ValueError("the sampler produced no points")
    grid = [(float(t), P) for t in times for P in pts]
    for t, P in grid:
        if not field.feasible(t, P):
            raise InfeasibleError(f"sample at t={t} is outside the feasible domain")
    values = np.array(_parallel_map(lambda tp: defect_ratio(field, *tp), grid, workers))
    worst = float(values.max())
    return RateCertificate(
        rate=-worst, domain=sampler.describe(), method=Method.GENERAL_SUP, rigor=Rigor.SAMPLED,
        witnesses=_extremes([P for _, P in grid], values, n_witnesses, largest=True),
        seed=getattr(sampler, "seed", None),
        inputs={"samples": len(grid), "times": [float(t) for t in times]},
        notes=[_SAMPLED_NOTE, "the domain is assumed closed under scaling by (0, 1]"])


# -- standard Riccati ------------------------------------------------------------------

def _require_psd(x, name: str, rtol: float = 1e-12) -> np.ndarray:
    x = as_symmetric(x)
    w = np.linalg.eigvalsh(x)
    if w[0] < -rtol * max(1.0, float(np.abs(w).max())):
        raise HypothesisError(f"{name} is not positive semidefinite (min eig {w[0]:.3e})",
                              failed=[f"{name} >= 0"])
    return x


def std_global_rate(Sigma, Dmat) -> RateCertificate:
    """``2 sqrt(m(Sigma^{1/2} Dmat Sigma^{1/2} / I))`` on the whole cone.

    Both coefficients must be positive semidefinite; the rate is zero when
    either is singular.

    >>> import numpy as np
    >>> std_global_rate(4 * np.eye(2), np.eye(2)).rate
    4.0
    """
    Sigma = _require_psd(Sigma, "Sigma")
    Dmat = _require_psd(Dmat, "Dmat")
    if Sigma.shape != Dmat.shape:
        raise DimensionError("Sigma and Dmat differ in shape")
    S = psd_sqrt(Sigma)
    X = symmetrize(S @ Dmat @ S)
    m = min_eig(X)
    scale = max(1.0, max_eig(X))
    if m <= 1e-13 * scale:
        m = 0.0
    return RateCertificate(
        rate=2.0 * math.sqrt(m), domain="whole cone", method=Method.STD_GLOBAL,
        rigor=Rigor.CLOSED_FORM, inputs={"Sigma": Sigma, "Dmat": Dmat})


def std_beta_rate(Sigma, Dmat, sampler: DomainSampler, n_witnesses: int = 5) -> RateCertificate:
    """Sampled ``min_P m((P Sigma P + Dmat) / P)``."""
    Sigma = as_symmetric(Sigma)
    Dmat = as_symmetric(Dmat)
    if Sigma.shape != Dmat.shape:
        raise DimensionError("Sigma and Dmat differ in shape")
    pts = sampler.samples()
    if not pts:
        raise ValueError("the sampler produced no points")
    values = np.array([m_over(symmetrize(P @ Sigma @ P + Dmat), P) for P in pts])
    notes = [_SAMPLED_NOTE]
    if values.min() < 0:
        notes.append("negative estimate: no uniform contraction rate on this domain")
    return RateCertificate(
        rate=float(values.min()), domain=sampler.describe(), method=Method.GENERAL_SUP,
        rigor=Rigor.SAMPLED, witnesses=_extremes(pts, values, n_witnesses, largest=False),
        seed=getattr(sampler, "seed", None), inputs={"Sigma": Sigma, "Dmat": Dmat}, notes=notes)


def std_constants(p: StdRiccatiParams) -> dict:
    """Constants ``c_A, m_D, c_D, c_Sigma`` with ``A + A' <= -2 c_A I``,
    ``m_D I <= Dmat <= c_D I`` and ``Sigma >= -c_Sigma I``.
    """
    wd = np.linalg.eigvalsh(p.Dmat)
    return {
        "cA": -0.5 * max_eig(symmetrize(p.A + p.A.T)),
        "mD": float(wd[0]),
        "cD": float(wd[-1]),
        "cSigma": max(0.0, -min_eig(p.Sigma)),
    }


@dataclass(frozen=True)
class IndefiniteSigmaResult:
    """Hypothesis check for the indefinite-``Sigma`` local rate.

    On success ``interval = (lo, hi)`` is the half-open range ``[lo, hi)``
    of admissible ``lambda``; the flow contracts on ``(0, lambda I]`` at
    rate at least ``rate(lambda)``.
    """

    cA: float
    cD: float
    mD: float
    cSigma: float
    ok: bool
    interval: Optional[tuple]
    failed: tuple = ()
    diagnostic: str = ""

    def rate(self, lam: float) -> float:
        return (self.mD - self.cSigma * lam * lam) / lam

    def contains(self, lam: float) -> bool:
        return self.ok and self.interval[0] <= lam < self.interval[1]

    def certificate(self, lam: Optional[float] = None) -> RateCertificate:
        """Closed-form certificate at ``lam`` (the lower end by default, where the bound is largest)."""
        if not self.ok:
            raise HypothesisError(self.diagnostic, failed=list(self.failed))
        lam = self.interval[0] if lam is None else float(lam)
        if not self.contains(lam):
            raise ValueError(f"lambda={lam} is outside [{self.interval[0]}, {self.interval[1]})")
        return RateCertificate(
            rate=self.rate(lam), domain=f"order interval (0, {lam:.12g} I]",
            method=Method.INDEFINITE_SIGMA, rigor=Rigor.CLOSED_FORM,
            inputs={"cA": self.cA, "cD": self.cD, "mD": self.mD, "cSigma": self.cSigma, "lambda": lam})

    def to_json(self) -> dict:
        return {"cA": self.cA, "cD": self.cD, "mD": self.mD, "cSigma": self.cSigma, "ok": self.ok,
                "interval": None if self.interval is None else list(self.interval),
                "failed": list(self.failed), "diagnostic": self.diagnostic}


def indefinite_sigma_analysis(cA: float, cD: float, mD: float, cSigma: float) -> IndefiniteSigmaResult:
    """Check ``cA^2 >= cD cSigma`` and ``cSigma mD > (cA - sqrt(cA^2 - cD cSigma))^2``.

    Returns
    -------
    IndefiniteSigmaResult
        With the admissible ``lambda`` range on success, or the names of the
        violated inequalities otherwise.
    """
    for name, v in (("cA", cA), ("cD", cD), ("mD", mD), ("cSigma", cSigma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    disc = cA * cA - cD * cSigma
    if disc < 0:
        return IndefiniteSigmaResult(cA, cD, mD, cSigma, False, None, ("cA^2 >= cD*cSigma",),
                                     f"cA^2 - cD*cSigma = {disc:.6g} < 0")
    root = cA - math.sqrt(disc)
    if not cSigma * mD > root * root:
        return IndefiniteSigmaResult(
            cA, cD, mD, cSigma, False, None, ("cSigma*mD > (cA - sqrt(cA^2 - cD*cSigma))^2",),
            f"cSigma*mD = {cSigma * mD:.6g} <= {root * root:.6g}")
    return IndefiniteSigmaResult(cA, cD, mD, cSigma, True, (root / cSigma, math.sqrt(mD / cSigma)))


def degenerate_sigma_rate(cA: float, cD: float, mD: float, P) -> float:
    """``min(m(I/P), cA/cD) mD`` for the case ``Sigma >= 0``."""
    if not cA > 0 or not mD > 0:
        raise ValueError("cA and mD must be positive")
    if not cD > 0:
        raise ValueError("cD must be positive")
    P = as_spd(P)
    return min(m_over(np.eye(P.shape[0]), P), cA / cD) * mD


def degenerate_sigma_certificate(cA: float, cD: float, mD: float, P) -> RateCertificate:
    rate = degenerate_sigma_rate(cA, cD, mD, P)
    return RateCertificate(
        rate=rate, domain="trajectory from P", method=Method.DEGENERATE_SIGMA,
        rigor=Rigor.CLOSED_FORM, inputs={"cA": cA, "cD": cD, "mD": mD, "P": as_spd(P)})


# -- generalized Riccati ------------------------------------------------------------------

def grde_local_rate(p: GrdeParams, P0) -> RateCertificate:
    """``m((Q - L'R^{-1}L) / P0)``, valid on ``(0, P0]`` and its scaled subsets.

    Requires the block cost ``[[Q, L'], [L, R]]`` to be positive definite.
    """
    if not p.strict():
        raise HypothesisError("the block cost [[Q, L'], [L, R]] is not positive definite",
                              failed=["[[Q, L'], [L, R]] >> 0"])
    P0 = as_spd(P0)
    if P0.shape != (p.n, p.n):
        raise DimensionError("P0 does not match the coefficient dimension")
    rate = m_over(p.reduced_cost(), P0)
    return RateCertificate(
        rate=rate, domain="order interval (0, P0]", method=Method.GRDE_LOCAL,
        rigor=Rigor.CLOSED_FORM, inputs={"P0": P0, "reducedCost": p.reduced_cost()})


# -- orthant ------------------------------------------------------------------------------

class OrthantField:
    """Vector field on the open orthant with a Jacobian.

    ``jacobian=None`` switches to central differences with step ``fd_step``
    (relative to each coordinate).
    """

    def __init__(self, dim: int, phi: Callable, jacobian: Optional[Callable] = None,
                 fd_step: float = 1e-6):
        self.dim = int(dim)
        self._phi = phi
        self._jac = jacobian
        self.fd_step = fd_step

    def phi(self, t: float, x) -> np.ndarray:
        return np.asarray(self._phi(t, np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(t, x), dtype=float)
        J = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            h = self.fd_step * max(1.0, abs(x[j]))
            e = np.zeros(self.dim)
            e[j] = h
            J[:, j] = (self.phi(t, x + e) - self.phi(t, x - e)) / (2 * h)
        return J

    @classmethod
    def quadratic(cls, c, A, quad) -> "OrthantField":
        """``phi(x) = c + A x - quad * x**2`` (entrywise square), with its exact Jacobian."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        quad = np.atleast_1d(np.asarray(quad, dtype=float))
        n = c.size
        if A.shape != (n, n) or quad.size != n:
            raise DimensionError("c, A and quad must share the dimension")
        return cls(n, lambda t, x: c + A @ x - quad * x * x,
                   lambda t, x: A - np.diag(2.0 * quad * x))


def orthant_g(field: OrthantField, t: float, x) -> np.ndarray:
    """``g_i = -x_i^{-1} [sum_j d_j phi_i(x) x_j - phi_i(x)]``."""
    x = np.asarray(x, dtype=float)
    return -(field.jacobian(t, x) @ x - field.phi(t, x)) / x


def orthant_rate(field: OrthantField, samples: Sequence, times: Sequence[float] = (0.0,),
                 n_witnesses: int = 5, seed: Optional[int] = None) -> RateCertificate:
    """Sampled ``inf g_i(t, x)`` over positive vectors ``x``, times and coordinates.

    Examples
    --------
    >>> f = OrthantField.quadratic([1.0], [[0.0]], [1.0])
    >>> round(orthant_rate(f, [[0.5], [1.0], [2.0]]).rate, 12)
    2.0
    """
    pts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in samples]
    if not pts or not len(times):
        raise ValueError("no samples")
    for x in pts:
        if x.shape != (field.dim,):
            raise DimensionError("sample dimension does not match the field")
        if not np.all(x > 0):
            raise ValueError("orthant samples must be strictly positive")
    rows = [(x, float(orthant_g(field, t, x).min())) for t in times for x in pts]
    values = np.array([v for _, v in rows])
    return RateCertificate(
        rate=float(values.min()), domain="positive orthant samples", method=Method.ORTHANT,
        rigor=Rigor.SAMPLED, witnesses=_extremes([x for x, _ in rows], values, n_witnesses, largest=False),
        seed=seed, inputs={"samples": len(rows)}, notes=[_SAMPLED_NOTE])


def orthant_box_samples(hi, count: int, seed: int = 0, lo=None) -> List[np.ndarray]:
    """Random points of the box ``lo < x <= hi`` plus the corner ``hi``."""
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    lo = np.zeros_like(hi) if lo is None else np.atleast_1d(np.asarray(lo, dtype=float))
    rng = np.random.default_rng(seed)
    w = 1.0 - rng.uniform(0.0, 1.0, size=(count, hi.size))
    return [hi.copy()] + [lo + (hi - lo) * row for row in w]


# -- rate at a fixed point -----------------------------------------------------------------

def default_lambda_grid(mu: float, count: int = 40) -> np.ndarray:
    """Geometric grid strictly inside ``(1/mu, mu)`` that skips 1."""
    if not mu > 1:
        raise ValueError("mu must exceed 1")
    r = np.log(mu) * np.linspace(-1.0, 1.0, count + 2)[1:-1]
    r = r[np.abs(r) > 1e-12]
    return np.exp(r)


def fixed_point_rate(field: VectorField, xbar, mu: float, lam_grid: Optional[Sequence[float]] = None,
                     tol: float = 1e-8, t: float = 0.0) -> RateCertificate:
    """``min_lambda m(-(lambda ln lambda)^{-1} phi(lambda xbar) / xbar)``.

    The grid is augmented with the ``lambda -> 1`` limit
    ``m(-Dphi(xbar) xbar / xbar)``, which is computed from the derivative
    rather than by refining the grid.

    Parameters
    ----------
    field : VectorField
        Time-independent field.
    xbar : array_like
        Zero of the field (``||phi(xbar)||_F <= tol``).
    mu : float
        Radius: the estimate covers starts with ``d_T(x, xbar) <= log mu``.
    lam_grid : sequence of float, optional
        Points of ``(1/mu, mu)`` other than 1.
    """
    xbar = as_spd(xbar)
    if not mu > 1:
        raise ValueError("mu must exceed 1")
    res = float(np.linalg.norm(field.phi(t, xbar)))
    if res > tol:
        raise HypothesisError(f"||phi(xbar)|| = {res:.3e} exceeds {tol:g}", failed=["phi(xbar) = 0"])
    grid = default_lambda_grid(mu) if lam_grid is None else np.asarray(lam_grid, dtype=float)
    for lam in grid:
        if not (1.0 / mu < lam < mu) or lam == 1.0:
            raise ValueError(f"lambda={lam} must lie in (1/mu, mu) and differ from 1")
    pts, values = [], []
    for lam in grid:
        P = lam * xbar
        if not field.feasible(t, P):
            raise InfeasibleError(f"lambda*xbar is infeasible at lambda={lam}")
        values.append(m_over(-field.phi(t, P) / (lam * math.log(lam)), xbar))
        pts.append(float(lam))
    values.append(m_over(-field.dphi(t, xbar, xbar), xbar))
    pts.append(1.0)
    values = np.array(values)
    return RateCertificate(
        rate=float(values.min()), domain=f"Thompson ball of radius log({mu:.6g}) around xbar",
        method=Method.FIXED_POINT, rigor=Rigor.SAMPLED,
        witnesses=_extremes(pts, values, 5, largest=False),
        inputs={"mu": float(mu), "gridSize": len(grid), "residual": res},
        notes=[_SAMPLED_NOTE, "lambda=1 entry is the analytic limit through the derivative"])
