"""Closed-loop simulation, deviation coordinates and gain sweeps.

Per sample the loop reads the error output, lets the controller emit the
input computed from its pre-update state, then advances the plant:

    u_k = K eta_k,  e_k = h(x_k, u_k, w_k),  eta update,  x_{k+1} = f(x_k, u_k, w_k)

The record stores one row per step; vi_residual is the measured natural
residual |eta_k - Proj_Gamma^P(eta_k - alpha e_k)|_P, computable from the
logged eta and e columns alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .controller import ClassicalIntegralController, DPIController
from .metric import Metric
from .plants import NumericalError, PlantModel
from .sets import MEMBERSHIP_TOL, normal_cone_residual
from .vi import FBParams, VIProblem, solve_vi

__all__ = [
    "SimulationError",
    "ConstraintViolationError",
    "Scenario",
    "SegmentSummary",
    "SimRecord",
    "simulate",
    "change_of_coordinates",
    "SweepPoint",
    "StabilityReport",
    "gain_sweep",
]

CONVERGENCE_TOL = 1e-6
CONVERGENCE_WINDOW = 0.1  # trailing fraction of the horizon that must be quiet


class SimulationError(RuntimeError):
    """Simulation aborted; the message names the failing step."""


class ConstraintViolationError(SimulationError):
    """Emitted input left the constraint set (must not happen under projection)."""


@dataclass
class Scenario:
    """Plant, controller and a piecewise-constant disturbance schedule.

    schedule is a list of (start_step, w) pairs with strictly increasing
    start steps, the first at step 0.
    """

    plant: PlantModel
    controller: DPIController | ClassicalIntegralController
    schedule: Sequence[tuple[int, np.ndarray]]
    horizon: int
    x0: np.ndarray
    seed: int = 0
    normal_cone_samples: int = 2000

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.schedule:
            raise ValueError("schedule must not be empty")
        starts = [int(k) for k, _ in self.schedule]
        if starts[0] != 0:
            raise ValueError("first schedule entry must start at step 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule start steps must be strictly increasing")
        if starts[-1] >= self.horizon:
            raise ValueError("schedule entry starts beyond the horizon")
        self.schedule = [(int(k), np.asarray(w, dtype=float)) for k, w in self.schedule]
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.plant.n,):
            raise ValueError("x0 does not match the plant state dimension")

    def w_at(self, k: int) -> np.ndarray:
        w = self.schedule[0][1]
        for start, value in self.schedule:
            if start > k:
                break
            w = value
        return w

    def segment_bounds(self) -> list[tuple[int, int]]:
        """Half-open [start, end) step ranges, one per schedule entry."""
        starts = [k for k, _ in self.schedule] + [self.horizon]
        return list(zip(starts[:-1], starts[1:]))


@dataclass
class SegmentSummary:
    start: int
    end: int  # exclusive
    w: np.ndarray
    tracking_error: float
    vi_residual: float
    normal_cone_residual: float


@dataclass
class SimRecord:
    """One closed-loop run; arrays hold one row per step."""

    T_s: float
    k: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e: np.ndarray
    eta: np.ndarray
    constraint_margin: np.ndarray
    vi_residual: np.ndarray
    segments: list[SegmentSummary] = field(default_factory=list)

    @property
    def t(self) -> np.ndarray:
        return self.k * self.T_s


def _measured_vi_residual(ctrl: DPIController, eta: np.ndarray, e: np.ndarray) -> float:
    forward = eta - ctrl.alpha * e
    if ctrl.gamma.contains(forward, MEMBERSHIP_TOL):
        return ctrl.metric.norm(eta - forward)
    projected = ctrl.gamma.project(ctrl.metric, forward).point
    return ctrl.metric.norm(eta - projected)


def simulate(scenario: Scenario) -> SimRecord:
    """Run the loop over the full horizon; deterministic for a fixed scenario."""
    plant = scenario.plant
    ctrl = scenario.controller.clone()
    projected = isinstance(ctrl, DPIController)
    H = scenario.horizon
    xs = np.empty((H, plant.n))
    us = np.empty((H, ctrl.gain.shape[0]))
    es = np.empty((H, ctrl.gain.shape[1]))
    etas = np.empty((H, ctrl.gain.shape[1]))
    margins = np.full(H, np.nan)
    residuals = np.full(H, np.nan)
    x = scenario.x0.copy()
    for k in range(H):
        w = scenario.w_at(k)
        try:
            eta_k = ctrl.eta.copy()
            u = ctrl.gain @ eta_k
            e = plant.output(x, u, w)
            if not (np.all(np.isfinite(e)) and np.all(np.isfinite(x))):
                raise NumericalError("state or error is not finite")
            if projected:
                if not ctrl.constraint.contains(u, MEMBERSHIP_TOL):
                    raise ConstraintViolationError(
                        f"step {k}: projected controller emitted u outside C")
                margins[k] = ctrl.constraint.margin(u)
            emitted = ctrl.step(e)
            if not np.array_equal(emitted, u):
                raise SimulationError(f"step {k}: controller input is inconsistent")
            if projected:
                # eta_{k+1} - eta_k = damping * (backward point - eta_k), so the
                # natural residual |eta_k - Proj(eta_k - alpha e_k)|_P is the
                # state increment over damping; avoids a second projection.
                residuals[k] = ctrl.metric.norm(ctrl.eta - eta_k) / ctrl.damping
            xs[k], us[k], es[k], etas[k] = x, u, e, eta_k
            x = plant.step(x, u, w)
        except SimulationError:
            raise
        except (NumericalError, RuntimeError, ValueError) as exc:
            raise SimulationError(f"step {k}: {exc}") from exc
    record = SimRecord(plant.T_s, np.arange(H), xs, us, es, etas, margins, residuals)
    for index, (start, end) in enumerate(scenario.segment_bounds()):
        last = end - 1
        if projected:
            nc = normal_cone_residual(
                ctrl.gamma, ctrl.metric, etas[last], -es[last],
                samples=scenario.normal_cone_samples,
                seed=scenario.seed + index)
        else:
            nc = np.nan
        record.segments.append(SegmentSummary(
            start, end, scenario.w_at(start),
            tracking_error=float(np.linalg.norm(es[last])),
            vi_residual=float(residuals[last]),
            normal_cone_residual=float(nc)))
    return record


def change_of_coordinates(record: SimRecord, plant: PlantModel,
                          scenario: Scenario) -> np.ndarray:
    """Deviation xi_k = x_k - pi_x(u_k, w_k) of the state from the manifold
    of equilibria indexed by the current input and disturbance."""
    H = record.x.shape[0]
    xi = np.empty_like(record.x)
    for k in range(H):
        xi[k] = record.x[k] - plant.pi_x(record.u[k], scenario.w_at(k))
    return xi


def _composite_deviation(record: SimRecord, xi: np.ndarray, metric: Metric,
                         eta_bar: np.ndarray) -> np.ndarray:
    return np.array([metric.norm(record.eta[k] - eta_bar) + np.linalg.norm(xi[k])
                     for k in range(record.x.shape[0])])


def classify_convergence(record: SimRecord, xi: np.ndarray, metric: Metric,
                         tol: float = CONVERGENCE_TOL) -> bool:
    """Quiet-tail test: largest |eta_{k+1} - eta_k|_P + |xi_k| over the
    trailing window must fall below tol."""
    H = record.x.shape[0]
    start = max(0, H - max(2, int(np.ceil(CONVERGENCE_WINDOW * H))))
    worst = 0.0
    for k in range(start, H):
        value = float(np.linalg.norm(xi[k]))
        if k + 1 < H:
            value += metric.norm(record.eta[k + 1] - record.eta[k])
        worst = max(worst, value)
    return worst < tol


def fit_decay_rate(deviation: np.ndarray, start: int, burn_in: int = 5,
                   floor: float = 1e-13, min_points: int = 8) -> float:
    """Least-squares geometric rate of a decaying nonnegative sequence.

    Fits a line to log(deviation) from start + burn_in onward, ignoring
    values at the numerical floor.  Returns 0.0 when the sequence is
    already flat at the floor (immediate convergence).
    """
    k0 = min(len(deviation), start + burn_in)
    tail = deviation[k0:]
    mask = tail > floor
    if np.count_nonzero(mask) < min_points:
        return 0.0
    ks = np.arange(len(tail))[mask]
    slope = np.polyfit(ks, np.log(tail[mask]), 1)[0]
    return float(np.exp(slope))


@dataclass
class SweepPoint:
    T_i: float
    damping: float
    converged: bool
    decay_rate: float  # NaN unless converged
    final_vi_residual: float
    error: str | None = None


@dataclass
class StabilityReport:
    """Gain sweep outcome plus the low-gain threshold T_i_star = T_s L^2 / (2 mu).

    Grid points below the threshold carry no guarantee either way; the
    sweep only reports what the trajectories did.
    """

    points: list[SweepPoint]
    T_i_star: float
    mu: float
    L: float
    eta_bar: np.ndarray

    def empirical_damping_star(self, T_i: float) -> float | None:
        """Largest tested damping at T_i below which every tested damping
        converged; None when even the smallest tested damping failed."""
        tested = sorted((p for p in self.points if p.T_i == T_i),
                        key=lambda p: p.damping)
        best = None
        for p in tested:
            if not p.converged:
                break
            best = p.damping
        return best


def gain_sweep(scenario: Scenario, T_i_values: Sequence[float],
               damping_values: Sequence[float], mu: float, L: float,
               solve_tol: float = 1e-12) -> StabilityReport:
    """Rerun the scenario over a (T_i, damping) grid and classify each run.

    mu and L certify the steady-state operator on the region the sweep
    explores; they fix the reported threshold and the offline solve for the
    ground-truth equilibrium eta_bar of the final segment.
    """
    base = scenario.controller
    if not isinstance(base, DPIController):
        raise ValueError("gain sweeps need a projected integral controller")
    if not (mu > 0.0 and L >= mu):
        raise ValueError("sweep certificates must satisfy 0 < mu <= L")
    plant = scenario.plant
    w_final = scenario.schedule[-1][1]
    problem = VIProblem(lambda eta: plant.pi(base.gain @ eta, w_final),
                        base.gamma, base.metric)
    offline = solve_vi(problem, FBParams.certified(mu, L), base.eta,
                       tol=solve_tol)
    if not offline.converged:
        raise RuntimeError("offline equilibrium solve did not converge")
    eta_bar = offline.eta
    last_start = scenario.schedule[-1][0]
    points = []
    for T_i in T_i_values:
        for damping in damping_values:
            run = replace(scenario, controller=base.with_gains(T_i, damping))
            try:
                record = simulate(run)
                xi = change_of_coordinates(record, plant, run)
            except SimulationError as exc:
                points.append(SweepPoint(float(T_i), float(damping), False,
                                         np.nan, np.nan, str(exc)))
                continue
            converged = classify_convergence(record, xi, base.metric)
            rate = np.nan
            if converged:
                deviation = _composite_deviation(record, xi, base.metric, eta_bar)
                rate = fit_decay_rate(deviation, last_start)
            points.append(SweepPoint(float(T_i), float(damping), converged,
                                     rate, float(record.vi_residual[-1])))
    T_i_star = plant.T_s * L ** 2 / (2.0 * mu)
    return StabilityReport(points, T_i_star, float(mu), float(L), eta_bar)
