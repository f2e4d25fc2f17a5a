"""Latent priors and the training configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..combination import CombOp


class Regime(str, enum.Enum):
    VANILLA = "vanilla"
    FGD = "fgd"
    SC = "sc"
    PCR = "pcr"
    SC_PCR = "sc_pcr"

    @property
    def uses_sc(self) -> bool:
        return self in (Regime.SC, Regime.SC_PCR)

    @property
    def uses_pcr(self) -> bool:
        return self in (Regime.PCR, Regime.SC_PCR)


@dataclass(frozen=True)
class LatentPrior:
    """Either a Gaussian of dimension ``dim`` or a uniform pick among ``n`` fixed codes."""

    kind: str
    dim: int
    codes: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "discrete"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("latent dimension must be positive")
        if self.kind == "discrete":
            if self.codes is None or self.codes.ndim != 2 or len(self.codes) < 1:
                raise ValueError("a discrete prior needs at least one code")
            if self.codes.shape[1] != self.dim:
                raise ValueError("code width must equal the latent dimension")
            self.codes.setflags(write=False)

    @classmethod
    def gaussian(cls, dim: int) -> LatentPrior:
        return cls("gaussian", dim)

    @classmethod
    def discrete_uniform(cls, n: int, dim: int, seed: int) -> LatentPrior:
        """``n`` codes drawn once from a standard Gaussian and then frozen."""
        if n < 1:
            raise ValueError("support size must be at least 1")
        codes = np.random.default_rng([seed, 101]).standard_normal((n, dim)).astype(np.float32)
        return cls("discrete", dim, codes)

    @property
    def n(self) -> int | None:
        return None if self.codes is None else len(self.codes)

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal((k, self.dim)).astype(np.float32)
        return self.codes[rng.integers(0, len(self.codes), k)]

    def all_or_sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Every code once when the support fits in ``k`` draws, else ``k`` samples."""
        if self.kind == "discrete" and len(self.codes) <= k:
            return np.array(self.codes)
        return self.sample(k, rng)


@dataclass(frozen=True)
class ScMode:
    """Realism test for sample correction: exact count or normalized distance."""

    kind: str = "count"
    target: int = 2
    threshold: float = 0.1

    def __post_init__(self):
        if self.kind not in ("count", "dif"):
            raise ValueError(f"unknown sample-correction mode {self.kind!r}")
        if self.kind == "dif" and not 0.0 < self.threshold <= 1.0:
            raise ValueError("dif threshold must lie in (0, 1]")


@dataclass(frozen=True)
class GanConfig:
    regime: Regime = Regime.VANILLA
    batch_size: int | None = 64  # None trains on the full dataset each step
    steps: int = 1000
    d_steps_per_g: int = 1
    optimizer: str = "adam"
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay_d: float = 0.0
    weight_decay_d_end: float | None = None  # linear anneal target; None keeps it constant
    lr_end_factor: float = 1.0  # both learning rates anneal linearly to this fraction
    sc_mode: ScMode | None = None
    pcr_ops: tuple = ()
    pcr_pool: str = "siblings"  # or "pairs"
    latent_dim: int = 32
    prior: str = "discrete"  # or "gaussian"
    n_codes: int | None = None  # discrete prior support; None uses the dataset size
    g_hidden: tuple = (256, 256)
    d_hidden: tuple = (256, 256)
    g_out_scale: float = 0.1
    seed: int = 0
    log_stride: int = 100
    n_probes: int = 16
    n_eval: int = 1024
    sc_retries: int = 8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "pcr_ops", tuple(CombOp(op) for op in self.pcr_ops))
        object.__setattr__(self, "g_hidden", tuple(int(h) for h in self.g_hidden))
        object.__setattr__(self, "d_hidden", tuple(int(h) for h in self.d_hidden))
        errors = self.validation_errors()
        if errors:
            raise ValueError("invalid GanConfig: " + "; ".join(errors))

    def validation_errors(self) -> list[str]:
        errs = []
        if self.batch_size is not None and self.batch_size < 1:
            errs.append("batch_size must be positive (or None for full batch)")
        if self.regime is Regime.FGD and self.batch_size is not None:
            errs.append("regime fgd requires batch_size = full")
        if self.steps < 0:
            errs.append("steps must be non-negative")
        if self.d_steps_per_g < 1:
            errs.append("d_steps_per_g must be positive")
        if self.optimizer not in ("adam", "sgd"):
            errs.append("optimizer must be adam or sgd")
        if self.lr_d <= 0 or self.lr_g <= 0:
            errs.append("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errs.append("adam betas must lie in [0, 1)")
        if self.weight_decay_d < 0 or (self.weight_decay_d_end or 0.0) < 0:
            errs.append("weight_decay_d must be non-negative")
        if not 0.0 < self.lr_end_factor <= 1.0:
            errs.append("lr_end_factor must lie in (0, 1]")
        if self.regime.uses_sc != (self.sc_mode is not None):
            errs.append("sc_mode is required exactly for regimes sc and sc_pcr")
        if self.regime.uses_pcr != bool(self.pcr_ops):
            errs.append("pcr_ops is required exactly for regimes pcr and sc_pcr")
        if self.pcr_pool not in ("siblings", "pairs"):
            errs.append("pcr_pool must be siblings or pairs")
        if self.latent_dim < 1:
            errs.append("latent_dim must be positive")
        if self.prior not in ("discrete", "gaussian"):
            errs.append("prior must be discrete or gaussian")
        if self.n_codes is not None and self.n_codes < 1:
            errs.append("n_codes must be positive")
        if any(h < 1 for h in self.g_hidden + self.d_hidden):
            errs.append("hidden widths must be positive")
        if self.log_stride < 1:
            errs.append("log_stride must be positive")
        if self.n_probes < 0 or self.n_eval < 1:
            errs.append("n_probes must be >= 0 and n_eval >= 1")
        if self.sc_retries < 0:
            errs.append("sc_retries must be non-negative")
        return errs

    @property
    def full_batch(self) -> bool:
        return self.batch_size is None
