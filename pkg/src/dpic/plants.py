"""Discrete-time plant models and their steady-state maps.

A plant advances x <- f(x, u, w) once per sample and exposes the error
output e = h(x, u, w) together with the equilibrium maps

    pi_x(u, w)  steady state reached under constant (u, w)
    pi(u, w)    steady-state error h(pi_x(u, w), u, w)

pi is the operator the integral controller drives to a constrained zero.
"""

from __future__ import annotations

import abc
import warnings

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .metric import Metric

__all__ = [
    "NumericalError",
    "PlantModel",
    "LTIPlant",
    "FourTankPlant",
    "davison_check",
]


class NumericalError(RuntimeError):
    """State update produced a non-finite value."""


class PlantModel(abc.ABC):
    """Sampled plant with state dim n, input dim m, error dim p, disturbance dim n_w."""

    n: int
    m: int
    p: int
    n_w: int
    T_s: float

    @abc.abstractmethod
    def step(self, x, u, w) -> np.ndarray:
        """One sampling period of the dynamics."""

    @abc.abstractmethod
    def output(self, x, u, w) -> np.ndarray:
        """Error output at the current state."""

    @abc.abstractmethod
    def pi_x(self, u, w) -> np.ndarray:
        """Equilibrium state under constant input and disturbance."""

    def pi(self, u, w) -> np.ndarray:
        """Steady-state error under constant input and disturbance."""
        return self.output(self.pi_x(u, w), u, w)

    def _vec(self, x, dim: int, name: str) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (dim,):
            raise ValueError(f"{name} must have shape ({dim},), got {x.shape}")
        return x


class LTIPlant(PlantModel):
    """x <- A x + B u + B_w w,  e = C x + D u + D_w w, with A Schur stable."""

    def __init__(self, A, B, C, D=None, B_w=None, D_w=None, T_s: float = 1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError("B or C does not match the state dimension")
        m = B.shape[1]
        p = C.shape[0]
        D = np.zeros((p, m)) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
        if D.shape != (p, m):
            raise ValueError("D must have shape (p, m)")
        if (B_w is None) != (D_w is None):
            raise ValueError("supply both B_w and D_w, or neither")
        if B_w is None:
            n_w = 0
            B_w = np.zeros((n, 0))
            D_w = np.zeros((p, 0))
        else:
            B_w = np.atleast_2d(np.asarray(B_w, dtype=float))
            D_w = np.atleast_2d(np.asarray(D_w, dtype=float))
            n_w = B_w.shape[1]
            if B_w.shape != (n, n_w) or D_w.shape != (p, n_w):
                raise ValueError("B_w or D_w shape mismatch")
        rho = float(np.max(np.abs(np.linalg.eigvals(A))))
        if rho >= 1.0:
            raise ValueError(f"A is not Schur stable (spectral radius {rho:.6g} >= 1)")
        if T_s <= 0.0:
            raise ValueError("sampling period must be positive")
        self.A, self.B, self.C, self.D = A, B, C, D
        self.B_w, self.D_w = B_w, D_w
        self.n, self.m, self.p, self.n_w = n, m, p, n_w
        self.T_s = float(T_s)

    def _w(self, w) -> np.ndarray:
        if self.n_w == 0:
            return np.zeros(0)
        return self._vec(w, self.n_w, "w")

    def step(self, x, u, w=None) -> np.ndarray:
        x = self._vec(x, self.n, "x")
        u = self._vec(u, self.m, "u")
        out = self.A @ x + self.B @ u + self.B_w @ self._w(w)
        if not np.all(np.isfinite(out)):
            raise NumericalError("LTI state update is not finite")
        return out

    def output(self, x, u, w=None) -> np.ndarray:
        x = self._vec(x, self.n, "x")
        u = self._vec(u, self.m, "u")
        return self.C @ x + self.D @ u + self.D_w @ self._w(w)

    def pi_x(self, u, w=None) -> np.ndarray:
        u = self._vec(u, self.m, "u")
        return np.linalg.solve(np.eye(self.n) - self.A,
                               self.B @ u + self.B_w @ self._w(w))

    def dc_gain(self) -> np.ndarray:
        """Static input-to-error gain C (I - A)^{-1} B + D."""
        return self.C @ np.linalg.solve(np.eye(self.n) - self.A, self.B) + self.D

    def disturbance_dc_gain(self) -> np.ndarray:
        return self.C @ np.linalg.solve(np.eye(self.n) - self.A, self.B_w) + self.D_w


def davison_check(plant: LTIPlant, K) -> tuple[bool, np.ndarray | None]:
    """Static loop gain test with a quadratic monotonicity certificate.

    The loop gain M = dc_gain @ K passes when every eigenvalue has a
    positive real part (i.e. -M is Hurwitz); exactly then M^T P + P M = I
    has a symmetric positive definite solution P, which makes the affine
    steady-state operator strongly monotone in the P-metric.  The
    eigenvalue gate runs first: a rank-deficient M leaves the equation
    singular, and a perturbed "solution" of it would be meaningless.
    Returns (ok, P) with P = None when the test fails.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    M = plant.dc_gain() @ K
    if M.shape[0] != M.shape[1]:
        raise ValueError("dc_gain @ K must be square")
    if not np.all(np.linalg.eigvals(M).real > 0.0):
        return False, None
    try:
        with warnings.catch_warnings():
            # spectra arbitrarily close to the imaginary axis pass the gate
            # and draw a near-singularity warning from the solver (category
            # varies across scipy releases); the residual and definiteness
            # checks below vet the result instead
            warnings.simplefilter("ignore", RuntimeWarning)
            P = solve_continuous_lyapunov(M.T, np.eye(M.shape[0]))
    except (np.linalg.LinAlgError, ValueError):
        return False, None
    if not np.all(np.isfinite(P)):
        return False, None
    residual = np.linalg.norm(M.T @ P + P @ M - np.eye(M.shape[0]))
    if residual > 1e-6 * (1.0 + np.linalg.norm(P) * np.linalg.norm(M)):
        return False, None
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return False, None
    return True, P


class FourTankPlant(PlantModel):
    """Quadruple tank process sampled with classical Runge-Kutta substeps.

    Levels h (cm) of four tanks; pumps u feed tanks 1/2 directly with split
    ratios gamma and tanks 3/4 (which drain into 1/2) with the complements:

        A1 h1' = -a1 sqrt(2 g h1) + a3 sqrt(2 g h3) + gamma1 u1
        A2 h2' = -a2 sqrt(2 g h2) + a4 sqrt(2 g h4) + gamma2 u2
        A3 h3' = -a3 sqrt(2 g h3) + (1 - gamma2) u2
        A4 h4' = -a4 sqrt(2 g h4) + (1 - gamma1) u1

    The error output is (h1 - w1, h2 - w2) where w is the level reference
    for the two lower tanks.  Outlet areas default to the values that make
    (nominal_levels, nominal_input) an exact equilibrium.
    """

    def __init__(self, T_s: float = 10.0, substeps: int = 10,
                 tank_areas=(28.0, 28.0, 28.0, 28.0), split_ratios=(0.7, 0.7),
                 g: float = 981.0,
                 nominal_levels=(10.0, 10.0, 5.38, 5.38),
                 nominal_input=(32.64, 32.64),
                 outlet_areas=None):
        areas = np.asarray(tank_areas, dtype=float)
        gammas = np.asarray(split_ratios, dtype=float)
        h_nom = np.asarray(nominal_levels, dtype=float)
        u_nom = np.asarray(nominal_input, dtype=float)
        if areas.shape != (4,) or np.any(areas <= 0.0):
            raise ValueError("tank_areas must be four positive values")
        if gammas.shape != (2,) or np.any(gammas <= 0.0) or np.any(gammas >= 1.0):
            raise ValueError("split_ratios must be two values in (0, 1)")
        if abs(gammas.sum() - 1.0) < 1e-9:
            raise ValueError("split ratios summing to 1 make the static map singular")
        if g <= 0.0 or T_s <= 0.0 or substeps < 1:
            raise ValueError("g and T_s must be positive, substeps at least 1")
        g1, g2 = gammas
        if outlet_areas is None:
            if h_nom.shape != (4,) or np.any(h_nom <= 0.0):
                raise ValueError("nominal_levels must be four positive values")
            if u_nom.shape != (2,) or np.any(u_nom <= 0.0):
                raise ValueError("nominal_input must be two positive values")
            # outlet areas that balance each tank at the nominal point
            v = np.sqrt(2.0 * g * h_nom)
            outlet = np.array([
                (g1 * u_nom[0] + (1.0 - g2) * u_nom[1]) / v[0],
                ((1.0 - g1) * u_nom[0] + g2 * u_nom[1]) / v[1],
                (1.0 - g2) * u_nom[1] / v[2],
                (1.0 - g1) * u_nom[0] / v[3],
            ])
            self.h_nominal = h_nom.copy()
            self.u_nominal = u_nom.copy()
        else:
            outlet = np.asarray(outlet_areas, dtype=float)
            if outlet.shape != (4,) or np.any(outlet <= 0.0):
                raise ValueError("outlet_areas must be four positive values")
            self.h_nominal = None
            self.u_nominal = None
        self.tank_areas = areas
        self.split_ratios = gammas
        self.outlet_areas = outlet
        self.g = float(g)
        self.T_s = float(T_s)
        self.substeps = int(substeps)
        a = outlet
        self._outflow = np.array([
            [-a[0] / areas[0], 0.0, a[2] / areas[0], 0.0],
            [0.0, -a[1] / areas[1], 0.0, a[3] / areas[1]],
            [0.0, 0.0, -a[2] / areas[2], 0.0],
            [0.0, 0.0, 0.0, -a[3] / areas[3]],
        ])
        self._inflow = np.array([
            [g1 / areas[0], 0.0],
            [0.0, g2 / areas[1]],
            [0.0, (1.0 - g2) / areas[2]],
            [(1.0 - g1) / areas[3], 0.0],
        ])
        if self.h_nominal is not None:
            drift = self._rate(self.h_nominal, self.u_nominal)
            if np.max(np.abs(drift)) > 1e-6:
                raise ValueError("calibrated nominal point is not an equilibrium")
        self.n, self.m, self.p, self.n_w = 4, 2, 2, 2

    @property
    def flow_gain(self) -> np.ndarray:
        """Matrix mapping pump commands to equilibrium outlet velocities sqrt(2 g h)."""
        a = self.outlet_areas
        g1, g2 = self.split_ratios
        return np.array([[g1 / a[0], (1.0 - g2) / a[0]],
                         [(1.0 - g1) / a[1], g2 / a[1]]])

    def _rate(self, h, u) -> np.ndarray:
        # sqrt argument clamped at zero so transient undershoot cannot produce NaN
        v = np.sqrt(2.0 * self.g * np.maximum(h, 0.0))
        return self._outflow @ v + self._inflow @ u

    def step(self, x, u, w=None) -> np.ndarray:
        h = self._vec(x, 4, "x")
        u = self._vec(u, 2, "u")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(u))):
            raise NumericalError("tank step received non-finite values")
        dt = self.T_s / self.substeps
        for _ in range(self.substeps):
            k1 = self._rate(h, u)
            k2 = self._rate(h + 0.5 * dt * k1, u)
            k3 = self._rate(h + 0.5 * dt * k2, u)
            k4 = self._rate(h + dt * k3, u)
            h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            h = np.maximum(h, 0.0)  # levels cannot go negative
        if not np.all(np.isfinite(h)):
            raise NumericalError("tank step diverged to a non-finite state")
        return h

    def output(self, x, u, w) -> np.ndarray:
        h = self._vec(x, 4, "x")
        r = self._vec(w, 2, "w")
        return h[:2] - r

    def pi_x(self, u, w=None) -> np.ndarray:
        u = self._vec(u, 2, "u")
        flows = self.flow_gain @ u
        if np.any(u < -1e-9) or np.any(flows < -1e-9):
            raise ValueError("equilibrium map needs nonnegative pump flows")
        a = self.outlet_areas
        g1, g2 = self.split_ratios
        two_g = 2.0 * self.g
        return np.array([
            flows[0] ** 2 / two_g,
            flows[1] ** 2 / two_g,
            ((1.0 - g2) * u[1] / a[2]) ** 2 / two_g,
            ((1.0 - g1) * u[0] / a[3]) ** 2 / two_g,
        ])

    # pi(u, w) = output(pi_x(u, w), u, w) from the base class:
    # componentwise (flow_gain @ u)^2 / (2 g) - w for the two lower tanks.
