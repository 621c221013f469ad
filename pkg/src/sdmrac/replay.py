"""Replay buffer with kernel-novelty admission and max-spread eviction.

Stored targets are self-generated: at admission time the label is the
current fast-weight estimate W^T phi(x), frozen to that instant.  A point
enters only if its Gaussian-kernel novelty score against everything
already stored clears the tolerance, which keeps the buffer locally
exciting.
"""

from dataclasses import dataclass

import numpy as np

from . import dynamics


@dataclass
class BufferRecord:
    x: np.ndarray               # (n,)
    y: np.ndarray               # (m,) = W^T phi at admission, never recomputed
    phi_at_storage: np.ndarray  # (k,)
    sigma_at_storage: int
    t: float


class ReplayBuffer:
    """Bounded store of (x, y) pairs gated by a kernel independence score."""

    def __init__(self, capacity=250, eps_tol=0.1, kernel_width=0.1,
                 score_space="state"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if kernel_width <= 0:
            raise ValueError("kernel_width must be positive")
        if score_space not in ("state", "feature"):
            raise ValueError("score_space must be 'state' or 'feature'")
        self.capacity = int(capacity)
        self.eps_tol = float(eps_tol)
        self.kernel_width = float(kernel_width)
        self.score_space = score_space
        self.records = []

    def __len__(self):
        return len(self.records)

    def _score_points(self):
        if self.score_space == "state":
            return np.array([r.x for r in self.records])
        return np.array([r.phi_at_storage for r in self.records])

    def independence_score(self, point):
        """gamma = 1 - max_j exp(-||p - p_j||^2 / (2 w^2)); empty buffer -> 1."""
        if not self.records:
            return 1.0
        point = np.asarray(point, dtype=float)
        stored = self._score_points()
        d2 = np.sum((stored - point) ** 2, axis=1)
        return float(1.0 - np.exp(-d2.min() / (2.0 * self.kernel_width ** 2)))

    def try_admit(self, x, fast_weights, version, rng, n_draws=10, t=0.0,
                  phi=None):
        """Admit x if novel enough; returns True when stored.

        phi, when given, must be the feature mean already computed for
        this state under `version`; otherwise it is drawn here.
        """
        x = np.asarray(x, dtype=float)
        if phi is None:
            phi = version.feature_mean(x, n_draws, rng)
        probe = x if self.score_space == "state" else phi
        if self.independence_score(probe) < self.eps_tol:
            return False
        y = fast_weights.W.T @ phi
        record = BufferRecord(x=x.copy(), y=np.atleast_1d(y).copy(),
                              phi_at_storage=np.asarray(phi, dtype=float).copy(),
                              sigma_at_storage=version.sigma, t=float(t))
        self.records.append(record)
        if len(self.records) > self.capacity:
            self._evict_max_spread()
        return True

    def _evict_max_spread(self):
        """Drop the record whose removal maximizes the remainder's minimum
        pairwise distance (newest-admitted point competes like any other)."""
        pts = self._score_points()
        p = len(pts)
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diff ** 2, axis=2))
        dist[np.arange(p), np.arange(p)] = np.inf
        best_j, best_spread = 0, -np.inf
        for j in range(p):
            keep = np.delete(np.arange(p), j)
            spread = dist[np.ix_(keep, keep)].min()
            if spread > best_spread:
                best_spread = spread
                best_j = j
        del self.records[best_j]

    def snapshot(self):
        """Immutable (X, Y) arrays decoupled from later admissions."""
        if not self.records:
            X = np.empty((0, 0))
            Y = np.empty((0, 0))
        else:
            X = np.array([r.x for r in self.records])
            Y = np.array([r.y for r in self.records])
        X.setflags(write=False)
        Y.setflags(write=False)
        return X, Y

    def to_csv(self, path):
        if not self.records:
            n = m = 1
        else:
            n = self.records[0].x.shape[0]
            m = self.records[0].y.shape[0]
        header = ([f"x{i+1}" for i in range(n)]
                  + [f"y{j+1}" for j in range(m)] + ["sigma", "t"])
        rows = [np.concatenate([r.x, r.y, [r.sigma_at_storage], [r.t]])
                for r in self.records]
        data = np.array(rows) if rows else np.empty((0, n + m + 2))
        dynamics.write_csv(path, header, data)


def load_buffer_csv(path):
    """Read a buffer dump back as (X, Y) training arrays."""
    header, data = dynamics.read_csv(path)
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("y"))
    if data.size == 0:
        return np.empty((0, n)), np.empty((0, m))
    return data[:, :n], data[:, n:n + m]
