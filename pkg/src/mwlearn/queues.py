"""Actual queues Q, inequality virtual queues U and equality virtual queues Z."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QueueError(ValueError):
    pass


@dataclass
class QueueState:
    """Theta(t) = [Q; U; Z] at slot ``t`` (negative during initialization)."""

    Q: np.ndarray
    U: np.ndarray
    Z: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, L: int, N: int, n_aux: int, t: int = 0) -> "QueueState":
        return cls(np.zeros(L), np.zeros(N), np.zeros(n_aux), t)

    def copy(self) -> "QueueState":
        return QueueState(self.Q.copy(), self.U.copy(), self.Z.copy(), self.t)

    def vector(self) -> np.ndarray:
        """Concatenation [U, Z, Q], the layout used by the weight tables."""
        return np.concatenate([self.U, self.Z, self.Q])

    def total_backlog(self) -> float:
        return float(self.Q.sum() + self.U.sum() + np.abs(self.Z).sum())

    def scaled(self, c: float) -> "QueueState":
        return QueueState(self.Q * c, self.U * c, self.Z * c, self.t)


def advance_actual(Q, mu, A):
    """Q(t+1) = max[Q(t) - mu(t), 0] + A(t)."""
    mu = np.asarray(mu, dtype=float)
    A = np.asarray(A, dtype=float)
    if (mu < 0).any() or (A < 0).any():
        raise QueueError("service and arrivals must be non-negative")
    out = np.maximum(np.asarray(Q, dtype=float) - mu, 0.0) + A
    return float(out) if out.ndim == 0 else out


def advance_inequality(U, h_of_x, b):
    """U(t+1) = max[U(t) + h(x(t)) - b, 0]; negative arrivals are allowed."""
    out = np.maximum(np.asarray(U, dtype=float) + h_of_x - b, 0.0)
    return float(out) if out.ndim == 0 else out


def advance_equality(Z, gamma, x, lo=None, hi=None):
    """Z(t+1) = Z(t) - gamma(t) + x(t).

    ``lo``/``hi`` are the auxiliary box edges x_min - sigma and x_max + sigma;
    when given, a gamma outside the box is rejected.
    """
    gamma = np.asarray(gamma, dtype=float)
    if lo is not None and (gamma < np.asarray(lo) - 1e-12).any():
        raise QueueError("auxiliary variable below x_min - sigma")
    if hi is not None and (gamma > np.asarray(hi) + 1e-12).any():
        raise QueueError("auxiliary variable above x_max + sigma")
    out = np.asarray(Z, dtype=float) - gamma + x
    return float(out) if out.ndim == 0 else out


def lyapunov(state: QueueState) -> float:
    """L(Theta) = (|Q|^2 + |U|^2 + |Z|^2) / 2."""
    return 0.5 * float(state.Q @ state.Q + state.U @ state.U + state.Z @ state.Z)


def z_step_bound(x_min, x_max, sigma):
    """Largest possible |Z(t+1) - Z(t)| per coordinate (loose by one sigma)."""
    return np.asarray(x_max, dtype=float) - np.asarray(x_min, dtype=float) + 2.0 * sigma
