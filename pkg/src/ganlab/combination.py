"""Pixel-wise combinations of training images and the Lipschitz margin check.

For two positives ``x1, x2`` a critic ``f`` with Lipschitz constant ``L``
scores their convex mixture at least
``max(f(x1) - L (1 - lam) delta, f(x2) - L lam delta)`` with
``delta = ||x1 - x2||``.  So a sharp-margin critic cannot reject mixtures of
nearby positives unless something else in training pushes them down.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryDataset, write_pgm


class CombOp(str, enum.Enum):
    AVERAGE = "average"
    AND = "and"
    OR = "or"


def _pair(x1, x2):
    a = np.asarray(x1, dtype=np.float64)
    b = np.asarray(x2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _require_binary(*imgs):
    for img in imgs:
        if not np.all((img == 0.0) | (img == 1.0)):
            raise ValueError("logical combination needs binary (0/1) images")


def combine(x1, x2, op: CombOp | str) -> np.ndarray:
    """Average is ``(a + b) / 2``; And/Or are plain pixel-wise min/max of binary inputs."""
    op = CombOp(op)
    a, b = _pair(x1, x2)
    if op is CombOp.AVERAGE:
        return (a + b) / 2.0
    _require_binary(a, b)
    return np.minimum(a, b) if op is CombOp.AND else np.maximum(a, b)


def convex_mix(x1, x2, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    a, b = _pair(x1, x2)
    return lam * a + (1.0 - lam) * b


@dataclass
class CombDataset:
    images: np.ndarray
    op: CombOp
    source_pairs: list[tuple[int, int]]

    def __post_init__(self):
        if len(self.images) != len(self.source_pairs):
            raise ValueError("one source pair per combined image")
        if any(i == j for i, j in self.source_pairs):
            raise ValueError("source pairs must use two distinct images")

    def __len__(self) -> int:
        return len(self.images)


def _images_of(dataset) -> np.ndarray:
    if isinstance(dataset, GeometryDataset):
        return dataset.images
    return np.asarray(dataset, dtype=np.float64)


def _unrank_pairs(ranks: np.ndarray, n: int) -> list[tuple[int, int]]:
    """Map lexicographic ranks of ``(i, j), i < j`` back to index pairs."""
    rows = np.arange(n - 1)
    offsets = rows * (2 * n - rows - 1) // 2  # rank of (i, i + 1)
    i = np.searchsorted(offsets, ranks, side="right") - 1
    j = ranks - offsets[i] + i + 1
    return [(int(a), int(b)) for a, b in zip(i, j)]


def build_dcom(dataset, op: CombOp | str, max_size: int, seed: int) -> CombDataset:
    """Combined images over unordered pairs ``i < j``; subsampled without replacement above ``max_size``."""
    op = CombOp(op)
    imgs = _images_of(dataset)
    n = len(imgs)
    if n < 2:
        raise ValueError("need at least two images to combine")
    if max_size < 1:
        raise ValueError("max_size must be positive")
    total = n * (n - 1) // 2
    if total <= max_size:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        rng = np.random.default_rng(seed)
        ranks = np.sort(rng.choice(total, size=max_size, replace=False))
        pairs = _unrank_pairs(ranks, n)
    combined = np.stack([combine(imgs[i], imgs[j], op) for i, j in pairs])
    return CombDataset(combined, op, pairs)


def sibling_combinations(dataset: GeometryDataset, ops=(CombOp.AND, CombOp.OR)) -> np.ndarray:
    """Precomputed And/Or images of every sibling pair (1- and 3-rectangle images)."""
    imgs = dataset.images
    out = [combine(imgs[i], imgs[j], op) for i, j in dataset.sibling_pairs for op in ops]
    return np.stack(out) if out else np.empty((0,) + imgs.shape[1:])


def save_comb_dataset(comb: CombDataset, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "manifest.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filename", "op", "source_pair"])
        for k, (img, (i, j)) in enumerate(zip(comb.images, comb.source_pairs)):
            name = f"com_{k:06d}.pgm"
            write_pgm(out / name, img)
            written.append(out / name)
            wr.writerow([name, comb.op.value, f"{i},{j}"])
    written.append(out / "manifest.csv")
    return written


# --- Lipschitz bound and margin check -------------------------------------

def spectral_norm(w) -> float:
    return float(np.linalg.norm(np.asarray(w, dtype=np.float64), 2))


def lipschitz_upper_bound(disc) -> float:
    """Product of layer spectral norms: a global bound for the pre-output score.

    ``disc`` is a :class:`~ganlab.tinygan.nets.DenseNet` (or anything with a
    ``weights`` list and 1-Lipschitz hidden activations), or a bare matrix or
    vector for a single linear layer.
    """
    if hasattr(disc, "weights"):
        hidden = getattr(disc, "hidden", "leaky_relu")
        if hidden not in ("leaky_relu", "relu"):
            raise ValueError(f"activation {hidden!r} is not known to be 1-Lipschitz")
        if getattr(disc, "output", "identity") != "identity":
            raise ValueError("margin scores are logits; the output layer must be identity")
        layers = disc.weights
    elif isinstance(disc, (list, tuple)):
        layers = disc
    elif isinstance(disc, np.ndarray):
        layers = [disc]
    else:
        raise TypeError(f"unsupported discriminator type {type(disc).__name__}")
    bound = 1.0
    for w in layers:
        bound *= spectral_norm(np.atleast_2d(w))
    return bound


@dataclass(frozen=True)
class MarginReport:
    f_x1: float
    f_x2: float
    lam: float
    delta: float
    L: float
    bound: float
    f_mix: float
    holds: bool
    margin: float
    positivity_condition: bool  # margin > L * delta * min(lam, 1 - lam)
    mix_positive: bool


def _score(disc, x) -> float:
    out = disc(np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(np.asarray(out).ravel()[0])


def check_margin(disc, x1, x2, lam: float, L: float) -> MarginReport:
    """Evaluate the mixture lower bound for critic ``disc`` (a callable returning logits)."""
    a, b = _pair(x1, x2)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if L < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    f1, f2 = _score(disc, a), _score(disc, b)
    fm = _score(disc, convex_mix(a, b, lam))
    delta = float(np.linalg.norm((a - b).ravel()))
    bound = max(f1 - L * (1.0 - lam) * delta, f2 - L * lam * delta)
    margin = min(f1, f2)
    cond = margin > L * delta * min(lam, 1.0 - lam)
    return MarginReport(f1, f2, lam, delta, L, bound, fm, fm >= bound - 1e-9, margin, cond, fm > 0)


def dense_as_float64(disc):
    """Float64 copy of a network so margin checks are not limited by float32 rounding."""
    return disc.astype(np.float64) if hasattr(disc, "astype") else disc
