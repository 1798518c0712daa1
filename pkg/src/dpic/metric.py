"""Weighted inner-product geometry induced by a positive definite matrix."""

from __future__ import annotations

import numpy as np

__all__ = ["Metric"]


class Metric:
    """Positive definite weight matrix with the inner product and norm it induces.

    The input is symmetrized on construction; meaningfully asymmetric or
    indefinite matrices are rejected.  A Cholesky factor is cached so that
    norms can be evaluated as Euclidean norms of whitened coordinates.
    """

    def __init__(self, weights) -> None:
        P = np.asarray(weights, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("metric weight matrix must be square")
        if not np.all(np.isfinite(P)):
            raise ValueError("metric weight matrix must be finite")
        if np.linalg.norm(P - P.T) > 1e-9 * max(1.0, np.linalg.norm(P)):
            raise ValueError("metric weight matrix is not symmetric")
        P = 0.5 * (P + P.T)
        try:
            chol = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise ValueError("metric weight matrix is not positive definite") from exc
        self.P = P
        self.dim = int(P.shape[0])
        self._chol = chol  # lower triangular, P = chol @ chol.T
        self.is_diagonal = bool(np.all(P == np.diag(np.diag(P))))
        self.is_identity = self.is_diagonal and bool(np.all(np.diag(P) == 1.0))

    @classmethod
    def identity(cls, dim: int) -> "Metric":
        return cls(np.eye(int(dim)))

    @property
    def isotropic_scale(self) -> float | None:
        """Scale c when P == c*I, otherwise None."""
        if not self.is_diagonal:
            return None
        d = np.diag(self.P)
        return float(d[0]) if np.all(d == d[0]) else None

    def _vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of dimension {self.dim}, got shape {x.shape}")
        return x

    def inner(self, x, y) -> float:
        return float(self._vec(x) @ self.P @ self._vec(y))

    def norm(self, x) -> float:
        w = self._chol.T @ self._vec(x)
        return float(np.sqrt(w @ w))

    def whiten(self, x) -> np.ndarray:
        """Coordinates in which the weighted norm is the Euclidean norm."""
        return self._chol.T @ np.asarray(x, dtype=float)

    def solve(self, b) -> np.ndarray:
        """P^{-1} b for a vector or a matrix of columns."""
        return np.linalg.solve(self.P, np.asarray(b, dtype=float))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Metric(dim={self.dim}, diagonal={self.is_diagonal})"
