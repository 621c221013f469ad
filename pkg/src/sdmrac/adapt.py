"""Real-time control law: Lyapunov setup, baseline gains, fast weights.

The output-layer weights of the uncertainty network are adapted every
control step by the Lyapunov rule W' = -Gamma * phi_mean * e^T P B and
kept inside a Frobenius ball by rescaling projection.  The error passed
to the update law is oriented reference-minus-plant; tests of weight
convergence pin that convention down.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np


def solve_lyapunov(A_m, Q):
    """Unique SPD P with A_m^T P + P A_m = -Q, via the Kronecker system.

    Sized for the small state dimensions of a flight-control loop; the
    n^2 x n^2 dense solve is exact and keeps the dependency surface flat.
    """
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A_m.shape[0]
    if A_m.shape != (n, n) or Q.shape != (n, n):
        raise ValueError("A_m and Q must be square and same size")
    eigs = np.linalg.eigvals(A_m)
    worst = eigs[np.argmax(eigs.real)]
    if worst.real >= 0:
        raise ValueError(f"A_m is not Hurwitz: eigenvalue {worst}")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ValueError("Q must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) <= 0:
        raise ValueError("Q must be positive definite")
    eye = np.eye(n)
    # vec(A_m^T P + P A_m) = (I (x) A_m^T + A_m^T (x) I) vec(P)
    K = np.kron(eye, A_m.T) + np.kron(A_m.T, eye)
    p = np.linalg.solve(K, -Q.reshape(-1))
    P = p.reshape(n, n)
    return 0.5 * (P + P.T)


@dataclass
class ControllerGains:
    """Baseline gains plus the Lyapunov pieces the adaptive law needs."""

    k_x: np.ndarray   # (m, n)
    k_r: np.ndarray   # (m, r)
    Gamma: Union[float, np.ndarray]
    Q: np.ndarray     # (n, n)
    P: np.ndarray     # (n, n)
    B: np.ndarray     # (n, m)

    def __post_init__(self):
        self.k_x = np.atleast_2d(np.asarray(self.k_x, dtype=float))
        self.k_r = np.atleast_2d(np.asarray(self.k_r, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)

    @property
    def PB(self):
        return self.P @ self.B


def design_gains(A, B, A_m, B_m, Gamma=10.0, Q=None):
    """Solve the matching conditions A - B k_x = A_m, B k_r = B_m.

    Raises if no exact match exists (residual above 1e-12) or if the
    Lyapunov residual for the resulting P exceeds tolerance.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    B_m = np.asarray(B_m, dtype=float)
    if B_m.ndim == 1:
        B_m = B_m.reshape(-1, 1)
    n = A.shape[0]
    if Q is None:
        Q = np.eye(n)
    k_x, *_ = np.linalg.lstsq(B, A - A_m, rcond=None)
    k_r, *_ = np.linalg.lstsq(B, B_m, rcond=None)
    res_x = np.linalg.norm(A - B @ k_x - A_m)
    res_r = np.linalg.norm(B @ k_r - B_m)
    if res_x > 1e-12 or res_r > 1e-12:
        raise ValueError(
            f"matching conditions unsolvable: residuals {res_x:.2e}, {res_r:.2e}")
    P = solve_lyapunov(A_m, Q)
    res_p = np.linalg.norm(A_m.T @ P + P @ A_m + Q)
    if res_p > 1e-10:
        raise ValueError(f"Lyapunov residual {res_p:.2e} above tolerance")
    return ControllerGains(k_x=k_x, k_r=k_r, Gamma=Gamma, Q=Q, P=P, B=B)


@dataclass
class FastWeights:
    """Output-layer weights, projection-bounded in Frobenius norm."""

    W: np.ndarray      # (k, m)
    bound: float = 10.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim == 1:
            self.W = self.W.reshape(-1, 1)
        if self.bound <= 0:
            raise ValueError("projection bound must be positive")

    @classmethod
    def zeros(cls, k, m=1, bound=10.0):
        return cls(np.zeros((k, m)), bound)

    def norm(self):
        return float(np.linalg.norm(self.W))


def baseline_control(gains, x, r):
    """Feedback plus feedforward: -k_x x + k_r r."""
    x = np.asarray(x, dtype=float)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return -gains.k_x @ x + gains.k_r @ r


def adaptive_element(weights, phi):
    """Uncertainty estimate W^T phi from a sampled feature vector."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != weights.W.shape[0]:
        raise ValueError(
            f"feature dim {phi.shape[0]} != weight rows {weights.W.shape[0]}")
    return weights.W.T @ phi


def fast_weight_rate(weights, phi_mean, e, gains):
    """Pre-projection rate -Gamma * phi_mean * e^T P B."""
    phi_mean = np.asarray(phi_mean, dtype=float)
    e = np.asarray(e, dtype=float)
    ePB = e @ gains.PB  # (m,)
    rate = -np.outer(phi_mean, ePB)
    Gamma = gains.Gamma
    if np.isscalar(Gamma) or np.ndim(Gamma) == 0:
        return float(Gamma) * rate
    return np.asarray(Gamma) @ rate


def project_frobenius(W, bound):
    """Rescale onto the Frobenius ball if outside it."""
    norm = np.linalg.norm(W)
    if norm > bound:
        return W * (bound / norm)
    return W


def update_fast_weights(weights, phi_mean, e, gains, dt):
    """One Euler step of the adaptive law, then projection.

    Returns a new FastWeights; never mutates the input.
    """
    phi_mean = np.asarray(phi_mean, dtype=float)
    e = np.asarray(e, dtype=float)
    if not (np.all(np.isfinite(phi_mean)) and np.all(np.isfinite(e))):
        raise ValueError("non-finite feature mean or tracking error")
    W = weights.W + dt * fast_weight_rate(weights, phi_mean, e, gains)
    return FastWeights(project_frobenius(W, weights.bound), weights.bound)


def total_control(gains, weights, phi_sample, x, r):
    """Total command: baseline minus the adaptive element."""
    return baseline_control(gains, x, r) - adaptive_element(weights, phi_sample)
