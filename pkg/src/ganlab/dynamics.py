"""Linear WGAN toy model: gradient flow, stochastic gradient flow, variance.

The real data and the generator noise are both ``N(0, I_d)``; the generator is
a shift ``G(x) = theta + x`` and the critic is linear, ``D(x) = w @ x``.  With
mini-batches of size ``m`` the critic sees ``x_mean - y_mean ~ N(0, 2/m I)``
instead of zero, so the pair ``(w, theta)`` follows the linear SDE

    dw     = eta_t * (-theta dt + sqrt(2/m) dW)
    dtheta = mu_t  * w dt

with ``eta_t = mu_t`` either constant or ``1/t``.  Everything here is numpy
except the inner Euler-Maruyama loop, which is compiled with numba.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import integrate

INFINITE = math.inf  # batchsize sentinel for the noise-free (full-batch) flow


def _vec(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParamState:
    w: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        w = _vec(self.w, "w")
        theta = _vec(self.theta, "theta")
        if w.shape != theta.shape or w.size == 0:
            raise ValueError(f"w and theta must share a positive dimension, got {w.size} and {theta.size}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(theta))):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return self.w.size

    @classmethod
    def origin(cls, d: int) -> ParamState:
        return cls(np.zeros(d), np.zeros(d))

    def energy(self) -> float:
        return float(self.w @ self.w + self.theta @ self.theta)


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``eta_t = mu_t``: ``constant`` (value ``c``) or ``vanishing`` (``1/t``)."""

    kind: str = "constant"
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "vanishing"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not self.c > 0:
            raise ValueError("constant step size must be positive")

    @classmethod
    def constant(cls, c: float = 1.0) -> StepSchedule:
        return cls("constant", float(c))

    @classmethod
    def vanishing(cls) -> StepSchedule:
        return cls("vanishing")

    @property
    def t_start(self) -> float:
        return 1.0 if self.kind == "vanishing" else 0.0

    def rate(self, t: float) -> float:
        if self.kind == "constant":
            return self.c
        if t < 1.0:
            raise ValueError(f"vanishing step size is defined for t >= 1, got t={t}")
        return 1.0 / t

    def phase(self, t: float) -> float:
        """Rotation angle accumulated by the noise-free flow from ``t_start`` to ``t``."""
        if self.kind == "constant":
            return self.c * t
        if t < 1.0:
            raise ValueError(f"vanishing schedule requires t >= 1, got t={t}")
        return math.log(t)


def _check_means(state: ParamState, x_mean, y_mean):
    xm, ym = _vec(x_mean, "x_mean"), _vec(y_mean, "y_mean")
    if xm.shape != state.w.shape or ym.shape != state.w.shape:
        raise ValueError(f"means must have dimension {state.d}, got {xm.size} and {ym.size}")
    return xm, ym


def value_function(state: ParamState, x_mean, y_mean) -> float:
    xm, ym = _check_means(state, x_mean, y_mean)
    return float(state.w @ (xm - ym - state.theta))


def gradients(state: ParamState, x_mean, y_mean) -> tuple[np.ndarray, np.ndarray]:
    """``(dF/dw, dF/dtheta)``; the critic ascends the first, the generator descends the second."""
    xm, ym = _check_means(state, x_mean, y_mean)
    return xm - ym - state.theta, -state.w


def exact_orbit(initial: ParamState, t: float, schedule: StepSchedule = StepSchedule()) -> ParamState:
    """Noise-free flow at time ``t`` started from ``initial`` at ``schedule.t_start``.

    The flow is a rotation of every ``(w_i, theta_i)`` plane by the accumulated
    phase (``c t`` or ``ln t``).
    """
    phi = schedule.phase(t)
    if schedule.kind == "constant" and t < 0:
        raise ValueError("t must be non-negative")
    cs, sn = math.cos(phi), math.sin(phi)
    return ParamState(initial.w * cs - initial.theta * sn, initial.theta * cs + initial.w * sn)


def noise_scale(m) -> float:
    if m == INFINITE:
        return 0.0
    if m < 1:
        raise ValueError(f"batchsize must be >= 1, got {m}")
    return math.sqrt(2.0 / m)


def em_step(state: ParamState, t: float, dt: float, m, schedule: StepSchedule,
            rng: np.random.Generator | None = None) -> ParamState:
    """One Euler-Maruyama step of the batchsize-``m`` stochastic gradient flow."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    eta = schedule.rate(t)
    scale = noise_scale(m)
    if scale:
        if rng is None:
            raise ValueError("a random stream is required for finite batchsize")
        g = rng.standard_normal(state.d)
        kick = scale * math.sqrt(dt) * g
    else:
        kick = 0.0
    w = state.w + eta * (-state.theta * dt + kick)
    theta = state.theta + eta * state.w * dt
    return ParamState(w, theta)


@dataclass(frozen=True)
class SimConfig:
    d: int = 1
    m: float = INFINITE
    dt: float = 1e-3
    t_end: float = 1.0
    schedule: StepSchedule = field(default_factory=StepSchedule)
    seed: int = 0
    record_stride: int = 1
    t_start: float | None = None

    def __post_init__(self):
        if self.t_start is None:
            object.__setattr__(self, "t_start", self.schedule.t_start)
        errors = []
        if self.d < 1:
            errors.append("d must be >= 1")
        if self.m != INFINITE and (self.m < 1 or int(self.m) != self.m):
            errors.append("m must be a positive integer or INFINITE")
        if not self.dt > 0:
            errors.append("dt must be positive")
        if not self.t_end > self.t_start:
            errors.append("t_end must exceed t_start")
        elif self.dt > self.t_end - self.t_start:
            errors.append("dt must not exceed t_end - t_start")
        if self.schedule.kind == "vanishing" and self.t_start < 1.0:
            errors.append("vanishing schedule requires t_start >= 1")
        if self.record_stride < 1:
            errors.append("record_stride must be >= 1")
        if errors:
            raise ValueError("invalid SimConfig: " + "; ".join(errors))

    @property
    def n_steps(self) -> int:
        span = self.t_end - self.t_start
        return max(1, math.ceil(span / self.dt - 1e-9))

    def step_times(self) -> np.ndarray:
        """Left end point of every step; the final step is shortened to land on ``t_end``."""
        return self.t_start + self.dt * np.arange(self.n_steps)


@dataclass
class Trajectory:
    times: np.ndarray
    w: np.ndarray  # (n_records, d)
    theta: np.ndarray

    @property
    def states(self) -> list[ParamState]:
        return [ParamState(a, b) for a, b in zip(self.w, self.theta)]

    @property
    def final(self) -> ParamState:
        return ParamState(self.w[-1], self.theta[-1])

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path) -> Path:
        path = Path(path)
        d = self.w.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t"] + [f"w_{i + 1}" for i in range(d)] + [f"theta_{i + 1}" for i in range(d)])
            for t, w, th in zip(self.times, self.w, self.theta):
                wr.writerow([format(float(v), ".17g") for v in (t, *w, *th)])
        return path

    @classmethod
    def from_csv(cls, path) -> Trajectory:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = (data.shape[1] - 1) // 2
        return cls(data[:, 0], data[:, 1:1 + d], data[:, 1 + d:])


def path_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one path, keyed by ``(seed, *key)``."""
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


@numba.njit(cache=True)
def _em_loop(w, theta, noise, times, dt, t_end, vanishing, c, scale, stride, rec_w, rec_theta):
    n_steps = times.shape[0]
    n_paths, d = w.shape
    r = 1
    for k in range(n_steps):
        t = times[k]
        h = dt
        if k == n_steps - 1:
            h = t_end - t
        eta = 1.0 / t if vanishing else c
        sq = math.sqrt(h)
        for p in range(n_paths):
            for i in range(d):
                kick = 0.0
                if scale != 0.0:
                    kick = scale * sq * noise[p, k, i]
                wi = w[p, i]
                thi = theta[p, i]
                w[p, i] = wi + eta * (-thi * h + kick)
                theta[p, i] = thi + eta * wi * h
        if rec_w.shape[0] > 1 and ((k + 1) % stride == 0 or k == n_steps - 1):
            for p in range(n_paths):
                for i in range(d):
                    rec_w[r, p, i] = w[p, i]
                    rec_theta[r, p, i] = theta[p, i]
            r += 1


def _record_count(n_steps: int, stride: int) -> int:
    # initial state, every stride-th step, and the final step
    return 1 + n_steps // stride + (1 if n_steps % stride else 0)


def _run(config: SimConfig, keys, w0, theta0, record: bool):
    n_steps = config.n_steps
    times = config.step_times()
    scale = noise_scale(config.m)
    n_paths = len(keys)
    w = np.array(np.broadcast_to(w0, (n_paths, config.d)), dtype=np.float64)
    theta = np.array(np.broadcast_to(theta0, (n_paths, config.d)), dtype=np.float64)
    if scale:
        noise = np.stack([path_rng(config.seed, *key).standard_normal((n_steps, config.d)) for key in keys])
    else:
        noise = np.zeros((n_paths, 0, config.d))
    n_rec = _record_count(n_steps, config.record_stride) if record else 1
    rec_w = np.empty((n_rec, n_paths, config.d))
    rec_theta = np.empty((n_rec, n_paths, config.d))
    rec_w[0], rec_theta[0] = w, theta
    _em_loop(w, theta, noise, times, config.dt, config.t_end, config.schedule.kind == "vanishing",
             config.schedule.c, scale, config.record_stride, rec_w, rec_theta)
    return w, theta, rec_w, rec_theta


def _initial(config: SimConfig, initial: ParamState | None) -> ParamState:
    initial = initial or ParamState.origin(config.d)
    if initial.d != config.d:
        raise ValueError(f"initial state has dimension {initial.d}, config expects {config.d}")
    return initial


def simulate_path(config: SimConfig, initial: ParamState | None = None, key=(0,)) -> Trajectory:
    """Euler-Maruyama path recorded every ``record_stride`` steps (and at ``t_end``).

    The noise stream is ``path_rng(config.seed, *key)``; the path equals repeated
    :func:`em_step` calls fed from that stream.
    """
    init = _initial(config, initial)
    _, _, rec_w, rec_theta = _run(config, [tuple(key)], init.w, init.theta, record=True)
    n_steps = config.n_steps
    idx = [k for k in range(config.record_stride, n_steps + 1, config.record_stride)]
    if not idx or idx[-1] != n_steps:
        idx.append(n_steps)
    times = np.concatenate([[config.t_start], config.t_start + config.dt * np.asarray(idx, dtype=np.float64)])
    times[-1] = config.t_end
    return Trajectory(times, rec_w[:, 0, :].copy(), rec_theta[:, 0, :].copy())


def simulate_final(config: SimConfig, keys, initial: ParamState | None = None,
                   chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Final ``(w, theta)`` of one path per key, shape ``(len(keys), d)`` each.

    Paths are integrated in chunks to bound memory; results do not depend on
    the chunk size because every path owns its stream.
    """
    init = _initial(config, initial)
    keys = [tuple(k) for k in keys]
    ws, ths = [], []
    for start in range(0, len(keys), chunk):
        w, th, _, _ = _run(config, keys[start:start + chunk], init.w, init.theta, record=False)
        ws.append(w)
        ths.append(th)
    if not ws:
        return np.empty((0, config.d)), np.empty((0, config.d))
    return np.concatenate(ws), np.concatenate(ths)


# --- variance oracles -------------------------------------------------------

def rotation(phi: float, d: int) -> np.ndarray:
    """``exp(phi * A)`` for ``A = [[0, -I], [I, 0]]``."""
    eye = np.eye(d)
    return np.block([[math.cos(phi) * eye, -math.sin(phi) * eye],
                     [math.sin(phi) * eye, math.cos(phi) * eye]])


def noise_matrix(m, d: int, level: float) -> np.ndarray:
    """Block-diagonal diffusion matrix with ``level`` on the critic block."""
    out = np.zeros((2 * d, 2 * d))
    out[:d, :d] = level * np.eye(d)
    return out


def theta_variance_integrand(s: float, t: float, m, d: int, i: int, schedule: StepSchedule,
                             sigma_reading: str = "definition") -> float:
    """Squared norm of row ``d + i`` of ``Phi(t, s) Sigma(s)``.

    ``Phi(t, s)`` is the noise-free propagator from ``s`` to ``t``.  For the
    vanishing schedule ``sigma_reading`` picks the diffusion level
    ``sqrt(2/m)/s`` (``"definition"``) or ``sqrt(2/m)/t`` (``"literal"``).
    """
    if schedule.kind == "constant":
        phi = schedule.c * (t - s)
        level = schedule.c * math.sqrt(2.0 / m)
    else:
        phi = math.log(t / s)
        if sigma_reading == "definition":
            level = math.sqrt(2.0 / m) / s
        elif sigma_reading == "literal":
            level = math.sqrt(2.0 / m) / t
        else:
            raise ValueError(f"unknown sigma_reading {sigma_reading!r}")
    row = (rotation(phi, d) @ noise_matrix(m, d, level))[d + i - 1]
    return float(row @ row)


def variance_oracle(t: float, m, d: int = 1, i: int = 1, schedule: StepSchedule = StepSchedule(),
                    sigma_reading: str = "definition", epsrel: float = 1e-8) -> float:
    """Variance of component ``i`` (1-based) of ``theta_t`` started from a fixed state.

    Constant schedules use the closed form; the vanishing schedule integrates
    :func:`theta_variance_integrand` adaptively over ``[1, t]``.
    """
    if not 1 <= i <= d:
        raise ValueError(f"component index must lie in 1..{d}, got {i}")
    if m == INFINITE:
        return 0.0
    if m < 1:
        raise ValueError(f"batchsize must be >= 1, got {m}")
    if schedule.kind == "constant":
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        c = schedule.c
        tau = c * t
        return (2.0 * c / m) * (tau / 2.0 - math.sin(2.0 * tau) / 4.0)
    if t < 1.0:
        raise ValueError(f"vanishing schedule requires t >= 1, got {t}")
    if t == 1.0:
        return 0.0
    # the integrand oscillates in log(t/s); split at its zeros for the adaptive rule
    n_half = int(math.log(t) / math.pi)
    points = [t * math.exp(-math.pi * k) for k in range(1, n_half + 1)]
    val, _ = integrate.quad(theta_variance_integrand, 1.0, t, args=(t, m, d, i, schedule, sigma_reading),
                            epsrel=epsrel, epsabs=0.0, limit=200, points=points or None)
    return float(val)
