"""Adaptive integration of matrix flows ``P' = phi(t, P)`` on the open cone.

The integrator is the Dormand-Prince 5(4) embedded pair with a PI step-size
controller. The state is symmetrized after every accepted step and checked
for feasibility (positive definiteness plus whatever the field adds); the
first infeasible accepted step ends the trajectory.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .cone import as_spd, loewner_leq, min_eig, symmetrize, thompson_distance
from .errors import InfeasibleError, IntegrationError
from .riccati import VectorField

# Dormand-Prince tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = _A[6] + (0.0,)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_BETA1 = 0.7 / 5
_BETA2 = 0.4 / 5


class ExitReason(str, enum.Enum):
    HORIZON_REACHED = "horizonReached"
    LEFT_FEASIBLE_DOMAIN = "leftFeasibleDomain"
    STEP_FAILURE = "stepFailure"


@dataclass(frozen=True)
class IntegrationConfig:
    """Step-control settings.

    ``record_every=None`` keeps every accepted step; a positive value thins
    the record to samples at least that far apart (the final state is always
    kept). ``refine_exit`` bisects the last step when the state leaves the
    feasible domain so that ``exit_time`` is accurate to ``1e-9``.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    min_step: float = 1e-12
    record_every: Optional[float] = None
    refine_exit: bool = False
    max_steps: int = 200_000
    first_step: Optional[float] = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if self.record_every is not None and self.record_every <= 0:
            raise ValueError("record_every must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: List[np.ndarray]
    exit_time: Optional[float] = None
    exit_reason: ExitReason = ExitReason.HORIZON_REACHED
    stats: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.states[0].shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def completed(self) -> bool:
        return self.exit_reason is ExitReason.HORIZON_REACHED

    def at(self, t: float, atol: float = 1e-12) -> np.ndarray:
        """State recorded at time ``t`` (must be one of the recorded times)."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol * max(1.0, abs(t)):
            raise KeyError(f"time {t} was not recorded")
        return self.states[i]


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


class _Stepper:
    def __init__(self, field: VectorField, cfg: IntegrationConfig):
        self.field = field
        self.cfg = cfg
        self.n_evals = 0

    def f(self, t, y):
        self.n_evals += 1
        return self.field.phi(t, y)

    def step(self, t, y, k1, h):
        """One Dormand-Prince step; returns (y_new, k_last, err_norm)."""
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(self.f(t + _C[i] * h, symmetrize(yi)))
        y_new = symmetrize(y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0))
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = self.cfg.abs_tol + self.cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        return y_new, ks[6], _rms(err / scale)

    def initial_step(self, t, y, k1, span):
        cfg = self.cfg
        if cfg.first_step is not None:
            return min(cfg.first_step, span)
        scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
        d0, d1 = _rms(y / scale), _rms(k1 / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, span, cfg.max_step)
        try:
            k2 = self.f(t + h0, symmetrize(y + h0 * k1))
        except InfeasibleError:
            return max(cfg.min_step, h0 * 1e-3)
        d2 = _rms((k2 - k1) / scale) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return max(cfg.min_step, min(100 * h0, h1, span, cfg.max_step))


def integrate(field: VectorField, P0, s: float, t: float,
              cfg: Optional[IntegrationConfig] = None,
              t_eval: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate ``P' = phi(t, P)`` from ``P(s) = P0`` up to time ``t``.

    Parameters
    ----------
    field : VectorField
    P0 : array_like
        Positive definite start, feasible for ``field`` at time ``s``.
    s, t : float
        Start and end times, ``s <= t``.
    cfg : IntegrationConfig, optional
    t_eval : sequence of float, optional
        Checkpoints in ``[s, t]``. Steps are shortened to land on them
        exactly and only ``s``, the checkpoints and the last state are
        recorded.

    Returns
    -------
    Trajectory
        Stops early, with ``exit_reason`` set, when an accepted state is
        infeasible (``exit_time`` is then the last feasible time) or the
        step size underflows.
    """
    cfg = cfg or IntegrationConfig()
    if t < s:
        raise ValueError("integration runs forward: need s <= t")
    y = as_spd(P0)
    if y.shape != (field.dim, field.dim):
        raise ValueError(f"P0 has shape {y.shape}, field has dim {field.dim}")
    if not field.feasible(s, y):
        raise InfeasibleError("initial point is outside the feasible domain")

    checkpoints: List[float] = []
    if t_eval is not None:
        checkpoints = sorted(float(c) for c in t_eval)
        if checkpoints and (checkpoints[0] < s - 1e-14 or checkpoints[-1] > t + 1e-14):
            raise ValueError("t_eval must lie inside [s, t]")
        checkpoints = [c for c in checkpoints if c > s]
    record_all = t_eval is None and cfg.record_every is None

    stepper = _Stepper(field, cfg)
    times = [float(s)]
    states = [y.copy()]
    last_recorded = float(s)
    n_acc = n_rej = 0
    reason = ExitReason.HORIZON_REACHED
    exit_time = None

    tc = float(s)
    if t == s:
        return Trajectory(np.array(times), states, None, reason, {"accepted": 0, "rejected": 0, "evals": 0})
    k1 = stepper.f(tc, y)
    h = stepper.initial_step(tc, y, k1, t - s)
    err_prev = 1e-4
    ci = 0
    rejected_last = False

    while tc < t:
        if n_acc + n_rej >= cfg.max_steps:
            reason, exit_time = ExitReason.STEP_FAILURE, tc
            break
        target = checkpoints[ci] if ci < len(checkpoints) else t
        h = min(h, cfg.max_step)
        remaining = target - tc
        hit = h >= remaining * (1 - 1e-12)
        h_step = remaining if hit else h
        try:
            y_new, k_last, err = stepper.step(tc, y, k1, h_step)
        except InfeasibleError:
            n_rej += 1
            h = h_step * 0.25
            rejected_last = True
            if h < cfg.min_step:
                reason, exit_time = ExitReason.LEFT_FEASIBLE_DOMAIN, tc
                break
            continue
        if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
            n_rej += 1
            h = h_step * 0.25
            rejected_last = True
            if h < cfg.min_step:
                reason, exit_time = ExitReason.STEP_FAILURE, tc
                break
            continue

        if err <= 1.0:
            t_new = target if hit else tc + h_step
            if not field.feasible(t_new, y_new):
                reason, exit_time = ExitReason.LEFT_FEASIBLE_DOMAIN, tc
                if cfg.refine_exit:
                    tb, yb = _refine_exit(stepper, tc, y, k1, h_step)
                    if tb > tc:
                        times.append(tb)
                        states.append(yb)
                        exit_time = tb
                break
            n_acc += 1
            fac = _SAFETY * max(err, 1e-10) ** (-_BETA1) * err_prev ** _BETA2
            fac = min(_FAC_MAX, max(_FAC_MIN, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            err_prev = max(err, 1e-4)
            h_next = h_step * fac
            # Keep the controller's proposal when a checkpoint shortened the step.
            if hit and h_step < h:
                h_next = max(h_next, h)
            h = h_next
            tc, y, k1 = t_new, y_new, k_last
            rejected_last = False
            if hit and ci < len(checkpoints):
                ci += 1
            keep = (record_all or (hit and t_eval is not None) or tc >= t
                    or (cfg.record_every is not None and tc - last_recorded >= cfg.record_every))
            if keep:
                times.append(tc)
                states.append(y.copy())
                last_recorded = tc
        else:
            n_rej += 1
            h = h_step * max(_FAC_MIN, _SAFETY * err ** (-1 / 5))
            rejected_last = True
            if h < cfg.min_step:
                reason, exit_time = ExitReason.STEP_FAILURE, tc
                break

    if reason is not ExitReason.HORIZON_REACHED and times[-1] < tc:
        times.append(tc)
        states.append(y.copy())
    stats = {"accepted": n_acc, "rejected": n_rej, "evals": stepper.n_evals}
    return Trajectory(np.array(times), states, exit_time, reason, stats)


def _refine_exit(stepper: _Stepper, tc, y, k1, h, tol: float = 1e-9):
    lo, hi = 0.0, h
    y_lo = y
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        try:
            y_mid = stepper.step(tc, y, k1, mid)[0]
            ok = stepper.field.feasible(tc + mid, y_mid)
        except InfeasibleError:
            ok = False
        if ok:
            lo, y_lo = mid, y_mid
        else:
            hi = mid
    return tc + lo, y_lo


def flow_map(field: VectorField, s: float, t: float, P0,
             cfg: Optional[IntegrationConfig] = None) -> np.ndarray:
    """``M_s^t(P0)``; raises :class:`IntegrationError` if the flow stops before ``t``."""
    traj = integrate(field, P0, s, t, cfg, t_eval=[t] if t > s else None)
    if not traj.completed:
        raise IntegrationError(
            f"flow stopped at t={traj.exit_time} ({traj.exit_reason.value}) before reaching {t}",
            trajectory=traj)
    return traj.final


def observed_contraction(field: VectorField, P1, P2, time_grid: Sequence[float],
                         metric: Callable = thompson_distance,
                         cfg: Optional[IntegrationConfig] = None) -> List[Tuple[float, float]]:
    """Distances between the two trajectories at each grid time.

    The grid starts at its first entry; the list is cut at the earlier exit
    of the two trajectories.
    """
    grid = sorted(float(g) for g in time_grid)
    s, t = grid[0], grid[-1]
    tr1 = integrate(field, P1, s, t, cfg, t_eval=grid)
    tr2 = integrate(field, P2, s, t, cfg, t_eval=grid)
    out = []
    for g in grid:
        try:
            a, b = tr1.at(g), tr2.at(g)
        except KeyError:
            break
        out.append((g, float(metric(a, b))))
    return out


def order_preservation_probe(field: VectorField, P_upper, P_lower, time_grid: Sequence[float],
                             cfg: Optional[IntegrationConfig] = None) -> float:
    """Minimum over the grid of ``lambda_min(M(P_upper) - M(P_lower))``."""
    if not loewner_leq(P_lower, P_upper, 0.0):
        raise ValueError("need P_lower <= P_upper")
    grid = sorted(float(g) for g in time_grid)
    s, t = grid[0], grid[-1]
    tr1 = integrate(field, P_upper, s, t, cfg, t_eval=grid)
    tr2 = integrate(field, P_lower, s, t, cfg, t_eval=grid)
    worst = math.inf
    for g in grid:
        try:
            worst = min(worst, min_eig(tr1.at(g) - tr2.at(g)))
        except KeyError:
            break
    return worst


def worst_decay_exponent(series: Sequence[Tuple[float, float]]) -> float:
    """``min_t -log(d(t)/d(t0)) / (t - t0)`` over a distance series.

    This is the largest ``alpha`` with ``d(t) <= exp(-alpha (t - t0)) d(t0)``
    at every sampled time.
    """
    t0, d0 = series[0]
    rates = [-math.log(d / d0) / (t - t0) for t, d in series[1:] if t > t0 and d > 0]
    return min(rates) if rates else math.inf


def fitted_decay_rate(series: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of ``-log d(t)`` against ``t``."""
    ts = np.array([t for t, d in series if d > 0])
    ls = np.log([d for t, d in series if d > 0])
    if ts.size < 2:
        return math.inf
    slope = np.polyfit(ts, ls, 1)[0]
    return float(-slope)
