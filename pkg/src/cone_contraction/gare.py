"""Algebraic Riccati equations solved by following the contractive flow.

Given ``P0`` with ``phi(P0) <= 0`` and a positive definite block cost, the
order interval ``(0, P0]`` is invariant under the generalized Riccati flow
and the flow contracts there at rate ``m((Q - L'R^{-1}L) / P0)``. The
solver integrates from ``P0`` until the residual is small, then finishes
with a few Newton steps on the linearization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cone import as_spd, is_spd, loewner_leq, m_over, max_eig, min_eig, symmetrize, thompson_distance
from .errors import (ConvergenceError, DimensionError, HypothesisError, InfeasibleError,
                     IntegrationError)
from .flow import IntegrationConfig, integrate
from .rates import RateCertificate, grde_local_rate, std_global_rate
from .riccati import (GrdeField, GrdeParams, StdRiccatiField, StdRiccatiParams, VectorField,
                      grde_phi)

PHI_NONPOS_TOL = 1e-8
DIVERGENCE_NORM = 1e6
HEURISTIC_HORIZON = 1e3


@dataclass
class GareSolution:
    Pbar: np.ndarray
    residual_norm: float
    feasibility_margin: float
    certificate: Optional[RateCertificate] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.certificate is not None

    def to_json(self) -> dict:
        from .io import matrix_to_json, to_jsonable
        return {
            "Pbar": matrix_to_json(self.Pbar),
            "residualNorm": self.residual_norm,
            "feasibilityMargin": self.feasibility_margin,
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "diagnostics": to_jsonable(self.diagnostics),
        }


def verify_gare(p: GrdeParams, P):
    """``(||phi(P)||_F, lambda_min(R + D'PD))``.

    An infeasible ``P`` gives a nonpositive margin and an infinite residual
    instead of an exception.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    if P.shape != (p.n, p.n):
        raise DimensionError("P does not match the coefficient dimension")
    margin = min_eig(symmetrize(p.R + p.D.T @ P @ p.D))
    if margin <= 0:
        return math.inf, margin
    return float(np.linalg.norm(grde_phi(p, P))), margin


def gare_convergence_bound(p: GrdeParams, Pbar, P, residual_tol: float = 1e-8) -> float:
    """``(1 - e^{-d}) / d * m((Q - L'R^{-1}L) / Pbar)`` with ``d = d_T(P, Pbar)``.

    Lower bound on the exponential rate at which the flow started at ``P``
    approaches the solution ``Pbar``.
    """
    if not p.strict():
        raise HypothesisError("the block cost [[Q, L'], [L, R]] is not positive definite",
                              failed=["[[Q, L'], [L, R]] >> 0"])
    res, margin = verify_gare(p, Pbar)
    if not (res <= residual_tol and margin > 0):
        raise HypothesisError(f"Pbar is not a solution (residual {res:.3e})", failed=["phi(Pbar) = 0"])
    d = thompson_distance(P, Pbar)
    if d == 0.0:
        raise ValueError("P coincides with Pbar")
    return -math.expm1(-d) / d * m_over(p.reduced_cost(), Pbar)


# -- generic flow solver --------------------------------------------------------------

def _sym_basis(n: int):
    out = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            out.append(E)
    return out


def newton_step(field: VectorField, P: np.ndarray, t: float = 0.0) -> Optional[np.ndarray]:
    """Solve ``Dphi(P) Delta = -phi(P)`` by least squares on symmetric coordinates.

    Returns ``None`` when the linearization is numerically singular.
    """
    n = P.shape[0]
    basis = _sym_basis(n)
    J = np.column_stack([field.dphi(t, P, E).ravel() for E in basis])
    rhs = -field.phi(t, P).ravel()
    coef, _, rank, sv = np.linalg.lstsq(J, rhs, rcond=None)
    if rank < len(basis) or sv[-1] <= 1e-12 * sv[0]:
        return None
    return sum(c * E for c, E in zip(coef, basis))


def _flow_solve(field: VectorField, P0: np.ndarray, tol: float, horizon: float,
                invariant_hi: Optional[np.ndarray], cfg: IntegrationConfig,
                segment: float, max_newton: int = 20) -> tuple:
    P = P0.copy()
    tcur = 0.0
    diag = {"integrationTime": 0.0, "segments": 0, "newtonSteps": 0, "maxInvarianceViolation": 0.0}

    def residual(X):
        return float(np.linalg.norm(field.phi(0.0, X)))

    res = residual(P)
    polish_at = math.sqrt(tol)
    while res >= tol:
        if res < polish_at:
            # Newton polish; any failure hands control back to the flow.
            X, r = P, res
            for _ in range(max_newton):
                step = newton_step(field, X)
                if step is None:
                    break
                Y = symmetrize(X + step)
                try:
                    if not field.feasible(0.0, Y):
                        break
                    rY = residual(Y)
                except InfeasibleError:
                    break
                if not rY < r:
                    break
                X, r = Y, rY
                diag["newtonSteps"] += 1
                if r < tol:
                    break
            if r < res:
                P, res = X, r
            if res < tol:
                break
            polish_at = res / 10.0
        if tcur >= horizon:
            raise ConvergenceError(f"residual {res:.3e} still above {tol:g} after time {tcur:g}")
        t_end = min(horizon, tcur + segment)
        traj = integrate(field, P, tcur, t_end, cfg)
        diag["segments"] += 1
        if invariant_hi is not None:
            for X in traj.states:
                gap = -min_eig(invariant_hi - X)
                diag["maxInvarianceViolation"] = max(diag["maxInvarianceViolation"], gap)
        if not traj.completed:
            raise IntegrationError(
                f"flow stopped at t={traj.exit_time} ({traj.exit_reason.value})", trajectory=traj)
        P, tcur = traj.final, t_end
        diag["integrationTime"] = tcur
        if np.linalg.norm(P) > DIVERGENCE_NORM:
            raise ConvergenceError(f"flow diverged (||P|| > {DIVERGENCE_NORM:g}) by t={tcur:g}")
        res = residual(P)
    diag["integrationTime"] = tcur
    return P, res, diag


def _search_p0(phi: Callable, feasible: Callable, n: int, max_power: int = 40):
    """First ``2^j I`` (``j = 0, 1, ...``) with ``phi <= 0``; heuristic."""
    for j in range(max_power + 1):
        P = (2.0 ** j) * np.eye(n)
        try:
            if feasible(P) and max_eig(phi(P)) <= PHI_NONPOS_TOL:
                return P
        except InfeasibleError:
            continue
    return None


def solve_gare(p: GrdeParams, P0=None, tol: float = 1e-10, mode: str = "auto",
               cfg: Optional[IntegrationConfig] = None) -> GareSolution:
    """Solve ``phi(P) = 0`` with ``R + D'PD >> 0`` by flow iteration.

    Parameters
    ----------
    p : GrdeParams
    P0 : array_like, optional
        Starting point. Without one, ``2^j I`` is tried for ``j = 0..40``
        until ``phi(2^j I) <= 0``; this search is a heuristic.
    tol : float
        Target Frobenius norm of ``phi(Pbar)``.
    mode : {"auto", "certified", "heuristic"}
        ``certified`` demands a strict block cost and ``phi(P0) <= 0`` and
        raises :class:`HypothesisError` otherwise; ``auto`` falls back to the
        heuristic branch (no certificate) when they fail.

    Returns
    -------
    GareSolution
    """
    if mode not in ("auto", "certified", "heuristic"):
        raise ValueError(f"unknown mode {mode!r}")
    field_ = GrdeField(p)
    cfg = cfg or IntegrationConfig()
    phi = lambda X: grde_phi(p, X)
    feasible = lambda X: field_.feasible(0.0, X)
    diag = {}
    if P0 is None:
        P0 = _search_p0(phi, feasible, p.n)
        diag["startSearch"] = "heuristic 2^j I search"
        if P0 is None:
            if mode == "certified":
                raise HypothesisError("no 2^j I with phi <= 0 found", failed=["phi(P0) <= 0"])
            P0 = np.eye(p.n)
            diag["startSearch"] = "heuristic search failed; starting at I"
    P0 = as_spd(P0)
    if P0.shape != (p.n, p.n):
        raise DimensionError("P0 does not match the coefficient dimension")
    if not feasible(P0):
        raise InfeasibleError("R + D'P0D is not positive definite")

    failed = []
    if not p.strict():
        failed.append("[[Q, L'], [L, R]] >> 0")
    if max_eig(phi(P0)) > PHI_NONPOS_TOL:
        failed.append("phi(P0) <= 0")
    certified = mode != "heuristic" and not failed
    if mode == "certified" and failed:
        raise HypothesisError("certified branch preconditions fail: " + ", ".join(failed), failed=failed)

    if certified:
        cert = grde_local_rate(p, P0)
        alpha = cert.rate
        horizon = 50.0 / alpha
        segment = 1.0 / alpha
        P, res, d = _flow_solve(field_, P0, tol, horizon, P0, cfg, segment)
    else:
        cert = None
        P, res, d = _flow_solve(field_, P0, tol, HEURISTIC_HORIZON, None, cfg, 10.0)
        diag["failedHypotheses"] = failed
    diag.update(d)
    diag["branch"] = "certified" if certified else "heuristic"
    diag["P0"] = P0
    _, margin = verify_gare(p, P)
    return GareSolution(P, res, margin, cert, diag)


def solve_std_are(p: StdRiccatiParams, P0=None, tol: float = 1e-10, mode: str = "auto",
                  cfg: Optional[IntegrationConfig] = None) -> GareSolution:
    """Solve ``A'P + PA + Dmat - P Sigma P = 0`` by following the standard flow.

    With ``phi(P0) <= 0`` the interval ``(0, P0]`` is invariant and every
    recorded state is checked against it. A closed-form rate certificate is
    attached when ``Sigma`` and ``Dmat`` are positive semidefinite and the
    rate is positive.
    """
    if mode not in ("auto", "certified", "heuristic"):
        raise ValueError(f"unknown mode {mode!r}")
    field_ = StdRiccatiField(p)
    cfg = cfg or IntegrationConfig()
    phi = lambda X: field_.phi(0.0, X)
    diag = {}
    if P0 is None:
        P0 = _search_p0(phi, is_spd, p.n)
        diag["startSearch"] = "heuristic 2^j I search"
        if P0 is None:
            if mode == "certified":
                raise HypothesisError("no 2^j I with phi <= 0 found", failed=["phi(P0) <= 0"])
            P0 = np.eye(p.n)
            diag["startSearch"] = "heuristic search failed; starting at I"
    P0 = as_spd(P0)
    if P0.shape != (p.n, p.n):
        raise DimensionError("P0 does not match the coefficient dimension")

    cert = None
    try:
        c = std_global_rate(p.Sigma, p.Dmat)
        if c.rate > 0:
            cert = c
    except HypothesisError:
        pass
    invariant = max_eig(phi(P0)) <= PHI_NONPOS_TOL
    failed = [] if invariant else ["phi(P0) <= 0"]
    if mode == "certified" and (failed or cert is None):
        raise HypothesisError("certified branch needs phi(P0) <= 0 and PSD Sigma, Dmat with positive rate",
                              failed=failed or ["Sigma, Dmat >= 0 with m(Sigma^1/2 Dmat Sigma^1/2) > 0"])
    if mode == "heuristic":
        cert = None
    alpha = cert.rate if cert is not None else None
    horizon = 50.0 / alpha if alpha else HEURISTIC_HORIZON
    segment = 1.0 / alpha if alpha else 10.0
    P, res, d = _flow_solve(field_, P0, tol, horizon, P0 if invariant else None, cfg, segment)
    diag.update(d)
    diag["branch"] = "certified" if cert is not None else "heuristic"
    diag["invariantInterval"] = bool(invariant)
    diag["P0"] = P0
    return GareSolution(P, res, min_eig(P), cert, diag)
