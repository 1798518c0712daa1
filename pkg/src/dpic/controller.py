"""Integral controllers: damped projected and classical.

The damped projected integral update keeps the integrator state eta inside
Gamma = {eta : K eta in C}, so the emitted input u = K eta satisfies the
input constraints at every step and the integrator cannot wind up:

    u_k      = K eta_k
    eta_{k+1} = (1 - damping) * eta_k
                + damping * Proj_Gamma^P(eta_k - (T_s / T_i) * e_k)

The projection is evaluated lazily: when the forward step already lies in
Gamma the update reduces to the classical integral law with per-step gain
damping * T_s / T_i.
"""

from __future__ import annotations

import numpy as np

from .metric import Metric
from .sets import MEMBERSHIP_TOL, ConvexSet, LinearPreimage

__all__ = ["DPIController", "ClassicalIntegralController"]


def _gain_matrix(gain) -> np.ndarray:
    K = np.atleast_2d(np.asarray(gain, dtype=float))
    if K.ndim != 2 or not np.all(np.isfinite(K)):
        raise ValueError("gain must be a finite matrix")
    return K


def _validate_timing(T_s: float, T_i: float) -> None:
    if not (T_s > 0.0 and np.isfinite(T_s)):
        raise ValueError("sampling period T_s must be positive")
    if not (T_i > 0.0 and np.isfinite(T_i)):
        raise ValueError("integral time T_i must be positive")


class DPIController:
    """Damped projected integral controller.

    constraint is the input set C; the integrator set Gamma is its preimage
    under the square invertible gain K.  The initial state comes from eta0,
    or from u0 via K^{-1} (projected into Gamma if needed), or defaults to
    the projection of the origin.
    """

    def __init__(self, gain, constraint: ConvexSet, metric: Metric,
                 T_s: float, T_i: float, damping: float,
                 eta0=None, u0=None, allow_undamped: bool = False):
        K = _gain_matrix(gain)
        if K.shape[0] != constraint.dim:
            raise ValueError("gain output dimension does not match the constraint set")
        _validate_timing(T_s, T_i)
        if allow_undamped:
            if not 0.0 < damping <= 1.0:
                raise ValueError("damping must lie in (0, 1]")
        elif not 0.0 < damping < 1.0:
            raise ValueError("damping must lie strictly in (0, 1); "
                             "pass allow_undamped=True to experiment with damping = 1")
        self.gain = K
        self.constraint = constraint
        self.metric = metric
        self.gamma = LinearPreimage(K, constraint)
        if metric.dim != self.gamma.dim:
            raise ValueError("metric dimension does not match the integrator state")
        self.T_s = float(T_s)
        self.T_i = float(T_i)
        self.damping = float(damping)
        self.allow_undamped = bool(allow_undamped)
        if eta0 is not None and u0 is not None:
            raise ValueError("give eta0 or u0, not both")
        if eta0 is not None:
            eta = np.asarray(eta0, dtype=float)
            if not self.gamma.contains(eta, MEMBERSHIP_TOL):
                raise ValueError("eta0 is not a member of Gamma")
        else:
            seed = np.zeros(self.gamma.dim) if u0 is None else \
                np.linalg.solve(K, np.asarray(u0, dtype=float))
            eta = seed if self.gamma.contains(seed, MEMBERSHIP_TOL) else \
                self.gamma.project(metric, seed).point
        self.eta = eta.copy()
        self._eta0 = eta.copy()

    @property
    def alpha(self) -> float:
        """Integral step size T_s / T_i."""
        return self.T_s / self.T_i

    @property
    def u(self) -> np.ndarray:
        """Input the controller will emit at the current state."""
        return self.gain @ self.eta

    def step(self, e) -> np.ndarray:
        """Advance the integrator on error e; returns the input computed
        from the state before the update."""
        e = np.asarray(e, dtype=float)
        if e.shape != (self.eta.size,):
            raise ValueError(f"error must have shape ({self.eta.size},)")
        u = self.gain @ self.eta
        forward = self.eta - self.alpha * e
        if self.gamma.contains(forward, MEMBERSHIP_TOL):
            target = forward  # projection skipped: forward step already admissible
        else:
            target = self.gamma.project(self.metric, forward).point
        self.eta = (1.0 - self.damping) * self.eta + self.damping * target
        return u

    def clone(self) -> "DPIController":
        """Independent copy starting from this controller's current state."""
        return DPIController(self.gain, self.constraint, self.metric,
                             self.T_s, self.T_i, self.damping,
                             eta0=self.eta, allow_undamped=self.allow_undamped)

    def with_gains(self, T_i: float | None = None,
                   damping: float | None = None) -> "DPIController":
        """Copy at the configured initial state with new integral gains."""
        return DPIController(self.gain, self.constraint, self.metric,
                             self.T_s,
                             self.T_i if T_i is None else T_i,
                             self.damping if damping is None else damping,
                             eta0=self._eta0, allow_undamped=self.allow_undamped)


class ClassicalIntegralController:
    """Unconstrained discrete integral law eta <- eta - (T_s / T_i) e."""

    def __init__(self, gain, T_s: float, T_i: float, eta0):
        self.gain = _gain_matrix(gain)
        _validate_timing(T_s, T_i)
        self.T_s = float(T_s)
        self.T_i = float(T_i)
        eta = np.asarray(eta0, dtype=float)
        if eta.shape != (self.gain.shape[1],):
            raise ValueError("eta0 does not match the gain input dimension")
        self.eta = eta.copy()
        self._eta0 = eta.copy()

    @property
    def alpha(self) -> float:
        return self.T_s / self.T_i

    @property
    def u(self) -> np.ndarray:
        return self.gain @ self.eta

    def step(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        u = self.gain @ self.eta
        self.eta = self.eta - self.alpha * e
        return u

    def clone(self) -> "ClassicalIntegralController":
        return ClassicalIntegralController(self.gain, self.T_s, self.T_i, self.eta)
