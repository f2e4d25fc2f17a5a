"""Monte Carlo variance of the generator parameter across batchsizes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dynamics import INFINITE, ParamState, SimConfig, simulate_final, variance_oracle


@dataclass(frozen=True)
class SweepConfig:
    base: SimConfig
    m_values: tuple
    n_paths: int = 4000
    t_eval: float | None = None  # defaults to base.t_end
    component: int = 1  # 1-based index into theta
    initial: ParamState | None = None

    def __post_init__(self):
        object.__setattr__(self, "m_values", tuple(self.m_values))
        if self.t_eval is None:
            object.__setattr__(self, "t_eval", self.base.t_end)
        errors = []
        if not self.m_values:
            errors.append("m_values must be nonempty")
        elif any(b <= a for a, b in zip(self.m_values, self.m_values[1:])):
            errors.append("m_values must be strictly increasing")
        elif any(m != INFINITE and (m < 1 or int(m) != m) for m in self.m_values):
            errors.append("m_values must be positive integers")
        if not self.base.t_start < self.t_eval <= self.base.t_end:
            errors.append("t_eval must lie in (t_start, t_end]")
        if not 1 <= self.component <= self.base.d:
            errors.append(f"component must lie in 1..{self.base.d}")
        if errors:
            raise ValueError("invalid SweepConfig: " + "; ".join(errors))


@dataclass(frozen=True)
class VarianceEstimate:
    m: float
    var_hat: float
    stderr: float
    n_paths: int


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float


def sample_variance(x) -> tuple[float, float]:
    """Unbiased sample variance and its asymptotic standard error.

    The standard error uses the empirical fourth central moment:
    ``Var(s^2) ~= (mu4 - (n - 3)/(n - 1) * sigma^4) / n``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a variance")
    dev = x - x.mean()
    s2 = float(dev @ dev / (n - 1))
    mu4 = float(np.mean(dev ** 4))
    var_s2 = (mu4 - (n - 3) / (n - 1) * s2 * s2) / n
    return s2, math.sqrt(max(var_s2, 0.0))


def _m_key(m) -> int:
    return 0 if m == INFINITE else int(m)


def estimate_variance(config: SweepConfig, m) -> VarianceEstimate:
    """Sample variance of ``theta_i`` at ``t_eval`` over ``n_paths`` paths at batchsize ``m``.

    Path ``p`` draws from the stream keyed ``(seed, m, p)``.
    """
    if config.n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    sim = replace(config.base, m=m, t_end=config.t_eval)
    keys = [(_m_key(m), p) for p in range(config.n_paths)]
    _, theta = simulate_final(sim, keys, initial=config.initial)
    s2, se = sample_variance(theta[:, config.component - 1])
    return VarianceEstimate(m=m, var_hat=s2, stderr=se, n_paths=config.n_paths)


def sweep(config: SweepConfig) -> list[VarianceEstimate]:
    return [estimate_variance(config, m) for m in config.m_values]


def oracle_for(config: SweepConfig, m, **kwargs) -> float:
    return variance_oracle(config.t_eval, m, config.base.d, config.component, config.base.schedule, **kwargs)


def fit_scaling(estimates) -> ScalingFit:
    """Least squares of ``log(var_hat)`` on ``log(m)``; a ``1/m`` law has slope -1."""
    estimates = list(estimates)
    if len(estimates) < 3:
        raise ValueError("need at least three estimates to fit a scaling law")
    if any(e.var_hat <= 0 for e in estimates):
        raise ValueError("all variances must be positive for a log-log fit")
    if any(e.m == INFINITE for e in estimates):
        raise ValueError("cannot fit an infinite batchsize")
    # sort so the fit is independent of input order, bit for bit
    pts = sorted((float(e.m), float(e.var_hat)) for e in estimates)
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return ScalingFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0))


def write_sweep_csv(path, config: SweepConfig, estimates, fit: ScalingFit | None = None,
                    **oracle_kwargs) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if fit is not None:
            fh.write(f"# slope={fit.slope:.17g} intercept={fit.intercept:.17g} r2={fit.r_squared:.17g}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["m", "n_paths", "var_hat", "stderr", "oracle_value"])
        for e in estimates:
            m = "inf" if e.m == INFINITE else int(e.m)
            wr.writerow([m, e.n_paths, format(e.var_hat, ".17g"), format(e.stderr, ".17g"),
                         format(oracle_for(config, e.m, **oracle_kwargs), ".17g")])
    return path
