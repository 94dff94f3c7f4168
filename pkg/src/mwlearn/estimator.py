"""Exploration-event sample buffers and the two estimates of e_k(t).

Only exploration slots (and the round-robin initialization slots) are ever
recorded.  Sampling on greedy slots would bias the stored outcomes towards
the ones that made the controller avoid an option.
"""
from __future__ import annotations

import numpy as np

from .weights import WeightTables


class BufferError(RuntimeError):
    pass


class SampleBuffer:
    """Per-option ring buffers of exploration samples.

    Each ring is written twice (at ``i`` and ``i + capacity``) so the ``W``
    most recent entries are always one contiguous slice.
    """

    def __init__(self, K: int, capacity: int, state_width: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be at least 1")
        self.K, self.capacity, self.state_width = K, int(capacity), state_width
        size = 2 * self.capacity
        self.omega_index = np.zeros((K, size), dtype=np.int64)
        self.cost = np.zeros((K, size))
        self.V = np.zeros((K, size))
        self.slot = np.zeros((K, size), dtype=np.int64)
        self.state = np.zeros((K, size, state_width))
        self.count = np.zeros(K, dtype=np.int64)

    def record(self, k, w, state_vec, cost, V, slot):
        n = self.count[k]
        if n and slot <= self.slot[k, self._head(k)]:
            raise BufferError("samples must be recorded in slot order")
        i = n % self.capacity
        for j in (i, i + self.capacity):
            self.omega_index[k, j] = w
            self.cost[k, j] = cost
            self.V[k, j] = V
            self.slot[k, j] = slot
            self.state[k, j] = state_vec
        self.count[k] = n + 1

    def _head(self, k) -> int:
        return int((self.count[k] - 1) % self.capacity + self.capacity)

    def available(self, k) -> int:
        return int(min(self.count[k], self.capacity))

    def recent(self, k, W) -> slice:
        """Slice selecting the min(W, available) most recent type-k entries."""
        n = min(int(W), self.available(k))
        head = self._head(k) if self.count[k] else self.capacity - 1
        return slice(head - n + 1, head + 1)

    def wth_latest_slot(self, k, W) -> int:
        """Slot of the W-th most recent type-k sample."""
        if self.available(k) < W:
            raise BufferError(f"option {k} has fewer than {W} stored samples")
        return int(self.slot[k, self._head(k) - W + 1])

    def entries(self, k):
        sl = self.recent(k, self.capacity)
        return list(zip(self.slot[k, sl].tolist(), self.omega_index[k, sl].tolist(),
                        self.cost[k, sl].tolist(), self.V[k, sl].tolist()))

    def dump(self):
        """Rows ``(slot, k, omega_index, cost)`` for every stored sample, in slot order."""
        rows = [(s, k, w, c) for k in range(self.K) for s, w, c, _ in self.entries(k)]
        return sorted(rows)


def record_exploration(buffers: SampleBuffer, k, w, state_vec, cost, V, slot):
    buffers.record(k, w, state_vec, cost, V, slot)


def window(t, W_hat, buffers: SampleBuffer) -> int:
    """W(t) = min[W_hat(t), W_rand(t)] with W_rand the scarcest option's count."""
    if t < 0:
        raise BufferError("window requested during initialization")
    w_rand = int(buffers.count.min())
    if w_rand < 1:
        raise BufferError("window requested before every option has a sample")
    return min(int(W_hat), w_rand)


def estimate_approach1(k, s_now, W, buffers: SampleBuffer, tables: WeightTables,
                       mins=None) -> float:
    """Average of min_I Y_k over stored outcomes, re-evaluated at the current
    state vector ``s_now = [V, U, Z, Q]``.  ``mins`` may carry precomputed
    ``tables.min_values(k, s_now)``."""
    sl = buffers.recent(k, W)
    idx = buffers.omega_index[k, sl]
    if idx.size == 0:
        return 0.0
    if mins is None:
        mins = tables.min_values(k, s_now)
    return float(mins[idx].mean())


def estimate_approach2(k, W, buffers: SampleBuffer) -> float:
    """Average of the stored realised min costs."""
    sl = buffers.recent(k, W)
    costs = buffers.cost[k, sl]
    if costs.size == 0:
        return 0.0
    return float(costs.mean())


def estimate_approach2_normalized(k, W, V_now, buffers: SampleBuffer) -> float:
    """Diagnostic: stored costs rescaled by V_now / V(tau)."""
    sl = buffers.recent(k, W)
    costs, vs = buffers.cost[k, sl], buffers.V[k, sl]
    if costs.size == 0:
        return 0.0
    scale = np.where(vs > 0, V_now / np.where(vs > 0, vs, 1.0), 1.0)
    return float((costs * scale).mean())
