"""Plant and reference-model dynamics with fixed-step integration.

State-space plants with a matched uncertainty channel, the wing-rock
benchmark model, and a closed-loop stepping routine that logs everything
the diagnostics need.
"""

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEG = np.pi / 180.0


class SimulationDiverged(RuntimeError):
    """Raised when the simulated state leaves the finite domain.

    Carries the last step index at which the state was still finite and
    the partial log accumulated up to that point.
    """

    def __init__(self, message, last_finite_step, log=None):
        super().__init__(message)
        self.last_finite_step = last_finite_step
        self.log = log


@dataclass
class WingRockParams:
    """Coefficients of the wing-rock roll uncertainty polynomial."""

    w0: float = 1.0
    w1: float = 0.2314
    w2: float = 0.6918
    w3: float = -0.6245
    w4: float = 0.1
    w5: float = 0.214

    def as_array(self):
        return np.array([self.w0, self.w1, self.w2, self.w3, self.w4, self.w5])


def wing_rock_uncertainty(params: WingRockParams, x) -> float:
    """Matched uncertainty of the wing-rock model at state x = [roll, roll rate]."""
    # numpy scalars so a blown-up state overflows to inf (caught by the
    # integrator's divergence check) instead of raising OverflowError
    phi, p = np.float64(x[0]), np.float64(x[1])
    return float(params.w0 + params.w1 * phi + params.w2 * p
                 + params.w3 * abs(phi) * p + params.w4 * abs(p) * p
                 + params.w5 * phi ** 3)


@dataclass
class LinearPlant:
    """Linear dynamics A, B with a matched uncertainty entering through B."""

    A: np.ndarray
    B: np.ndarray
    uncertainty: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.A.shape[0] == 0:
            raise ValueError("zero-dimensional plant rejected")
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError(
                f"B has {self.B.shape[0]} rows, expected {self.A.shape[0]}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


def wing_rock_plant(params: Optional[WingRockParams] = None) -> LinearPlant:
    """Double-integrator roll dynamics with the wing-rock uncertainty."""
    params = params or WingRockParams()
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return LinearPlant(A, B, lambda x: np.atleast_1d(wing_rock_uncertainty(params, x)))


@dataclass
class ReferenceModel:
    """Hurwitz reference dynamics defining the desired closed-loop behaviour."""

    A_m: np.ndarray
    B_m: np.ndarray

    def __post_init__(self):
        self.A_m = np.atleast_2d(np.asarray(self.A_m, dtype=float))
        self.B_m = np.asarray(self.B_m, dtype=float)
        if self.B_m.ndim == 1:
            self.B_m = self.B_m.reshape(-1, 1)
        if self.A_m.shape[0] != self.A_m.shape[1]:
            raise ValueError(f"A_m must be square, got {self.A_m.shape}")
        if self.B_m.shape[0] != self.A_m.shape[0]:
            raise ValueError("B_m row count must match A_m")
        eigs = np.linalg.eigvals(self.A_m)
        worst = eigs[np.argmax(eigs.real)]
        if worst.real >= 0:
            raise ValueError(f"A_m is not Hurwitz: eigenvalue {worst} has "
                             "non-negative real part")

    @property
    def n(self):
        return self.A_m.shape[0]


def wing_rock_reference() -> ReferenceModel:
    """Second-order reference: natural frequency 2 rad/s, damping 0.5."""
    return ReferenceModel(np.array([[0.0, 1.0], [-4.0, -2.0]]),
                          np.array([[0.0], [4.0]]))


@dataclass
class IntegratorConfig:
    dt: float = 0.001
    method: str = "rk4"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown method {self.method!r}")


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(f, x, dt):
    return x + dt * f(x)


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def plant_derivative(plant: LinearPlant, x, u):
    """Open-loop derivative A x + B (u + Delta(x))."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[0] != plant.n:
        raise ValueError(f"state has dim {x.shape[0]}, plant expects {plant.n}")
    if u.shape[0] != plant.m:
        raise ValueError(f"input has dim {u.shape[0]}, plant expects {plant.m}")
    delta = np.atleast_1d(np.asarray(plant.uncertainty(x), dtype=float))
    return plant.A @ x + plant.B @ (u + delta)


def reference_step(model: ReferenceModel, x_m, r, dt, method="rk4"):
    """Advance the reference state one fixed step under command r (held)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x_m = np.asarray(x_m, dtype=float)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    f = lambda xm: model.A_m @ xm + (model.B_m @ r)
    return _STEPPERS[method](f, x_m, dt)


class TrajectoryLog:
    """Append-only per-step record of the closed loop.

    Core channels follow the canonical CSV layout; extra named channels
    (features, fast weights, ...) ride along for the diagnostics.
    """

    CORE = ("t", "x", "x_m", "u", "u_ad", "delta", "e")

    def __init__(self, n, m, capacity, extra_channels=None):
        self.n = n
        self.m = m
        self._size = 0
        self._cap = capacity
        self.t = np.empty(capacity)
        self.x = np.empty((capacity, n))
        self.x_m = np.empty((capacity, n))
        self.u = np.empty((capacity, m))
        self.u_ad = np.empty((capacity, m))
        self.delta = np.empty((capacity, m))
        self.e = np.empty((capacity, n))
        self.extra = {}
        for name, width in (extra_channels or {}).items():
            self.extra[name] = np.empty((capacity, width))

    def __len__(self):
        return self._size

    def append(self, t, x, x_m, u, u_ad, delta, e, **extras):
        i = self._size
        if i >= self._cap:
            raise IndexError("trajectory log capacity exceeded")
        self.t[i] = t
        self.x[i] = x
        self.x_m[i] = x_m
        self.u[i] = u
        self.u_ad[i] = u_ad
        self.delta[i] = delta
        self.e[i] = e
        for name, value in extras.items():
            self.extra[name][i] = value
        self._size += 1

    def trim(self):
        """Drop unused capacity (after early termination)."""
        s = self._size
        self.t = self.t[:s]
        for name in ("x", "x_m", "u", "u_ad", "delta", "e"):
            setattr(self, name, getattr(self, name)[:s])
        self.extra = {k: v[:s] for k, v in self.extra.items()}
        self._cap = s
        return self

    def snapshot(self):
        """Deep copy safe to hand to another thread."""
        out = TrajectoryLog(self.n, self.m, self._size,
                            {k: v.shape[1] for k, v in self.extra.items()})
        out.t[:] = self.t[:self._size]
        out.x[:] = self.x[:self._size]
        out.x_m[:] = self.x_m[:self._size]
        out.u[:] = self.u[:self._size]
        out.u_ad[:] = self.u_ad[:self._size]
        out.delta[:] = self.delta[:self._size]
        out.e[:] = self.e[:self._size]
        for k in self.extra:
            out.extra[k][:] = self.extra[k][:self._size]
        out._size = self._size
        return out

    def header(self):
        n, m = self.n, self.m
        cols = ["t"]
        cols += [f"x{i+1}" for i in range(n)]
        cols += [f"xm{i+1}" for i in range(n)]
        cols += ["u"] if m == 1 else [f"u{j+1}" for j in range(m)]
        cols += ["u_ad"] if m == 1 else [f"u_ad{j+1}" for j in range(m)]
        cols += ["delta_true"] if m == 1 else [f"delta_true{j+1}" for j in range(m)]
        cols += [f"e{i+1}" for i in range(n)]
        return cols

    def to_csv(self, path):
        s = self._size
        data = np.hstack([self.t[:s, None], self.x[:s], self.x_m[:s],
                          self.u[:s], self.u_ad[:s], self.delta[:s], self.e[:s]])
        write_csv(path, self.header(), data)


def write_csv(path, header, data):
    """Write a numeric table with shortest-roundtrip float formatting."""
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    """Read back a table written by write_csv: (header list, 2-D array)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = fh.read()
    if not body.strip():
        return header, np.empty((0, len(header)))
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return header, data


def integrate_closed_loop(plant, model, controller, r_signal, x0, x_m0, T,
                          cfg=None, extra_channels=None, observer=None):
    """Run the fixed-step closed loop and log every step.

    controller(t, x, x_m, r) returns either u or (u, u_ad) and may mutate
    its own state; u is held over the step (zero-order hold).  r_signal(t)
    gives the reference command.  observer(i, log), when given, is called
    after each step is appended; it is where the harness hangs retraining
    and extra bookkeeping.
    """
    cfg = cfg or IntegratorConfig()
    if T <= 0:
        raise ValueError("horizon T must be positive")
    stepper = _STEPPERS[cfg.method]
    n_steps = int(round(T / cfg.dt))
    x = np.array(x0, dtype=float)
    x_m = np.array(x_m0, dtype=float)
    log = TrajectoryLog(plant.n, plant.m, n_steps + 1, extra_channels)
    t = 0.0
    for i in range(n_steps + 1):
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_m))):
            raise SimulationDiverged(
                f"non-finite state at t={t:.6f} s (step {i}); "
                f"last finite step index {i - 1}", i - 1, log.trim())
        r = np.atleast_1d(np.asarray(r_signal(t), dtype=float))
        out = controller(t, x, x_m, r)
        if isinstance(out, tuple):
            u, u_ad = out
        else:
            u, u_ad = out, np.zeros(plant.m)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        u_ad = np.atleast_1d(np.asarray(u_ad, dtype=float))
        delta = np.atleast_1d(np.asarray(plant.uncertainty(x), dtype=float))
        log.append(t, x, x_m, u, u_ad, delta, x - x_m)
        if observer is not None:
            observer(i, log)
        if i == n_steps:
            break
        x = stepper(lambda s: plant_derivative(plant, s, u), x, cfg.dt)
        x_m = reference_step(model, x_m, r, cfg.dt, cfg.method)
        t = (i + 1) * cfg.dt
    return log


def staircase(levels, period):
    """Piecewise-constant command stepping through levels every `period` s."""
    levels = [np.atleast_1d(np.asarray(v, dtype=float)) for v in levels]

    def r(t):
        idx = min(int(t // period), len(levels) - 1)
        return levels[idx]

    return r
