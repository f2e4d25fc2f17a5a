"""Quality and stability measurements for trained generators and discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import THRESHOLD, GeometryDataset, count_batch

UNCLEAN = -1  # class label for images that are not a clean set of rectangles


def _flat(images) -> np.ndarray:
    if isinstance(images, GeometryDataset):
        return images.flat.astype(np.float64)
    x = np.asarray(images, dtype=np.float64)
    return x.reshape(len(x), -1) if x.ndim > 2 else np.atleast_2d(x)


def min_distances(samples, dataset, chunk: int = 4096) -> np.ndarray:
    """Exact minimum L2 distance from each sample row to any dataset row."""
    a = _flat(samples)
    b = _flat(dataset)
    if len(b) == 0:
        raise ValueError("dataset is empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"pixel counts differ: {a.shape[1]} vs {b.shape[1]}")
    bb = (b * b).sum(1)
    out = np.empty(len(a))
    for lo in range(0, len(a), chunk):
        x = a[lo:lo + chunk]
        d2 = (x * x).sum(1)[:, None] + bb[None, :] - 2.0 * (x @ b.T)
        out[lo:lo + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def dif_batch(samples, dataset) -> np.ndarray:
    """Minimum L2 distance to the dataset divided by ``sqrt(P)``, one value per sample."""
    a = _flat(samples)
    return np.clip(min_distances(a, dataset) / np.sqrt(a.shape[1]), 0.0, 1.0)


def dif(sample, dataset) -> float:
    return float(dif_batch(np.asarray(sample, dtype=np.float64).reshape(1, -1), dataset)[0])


def class_labels(images) -> np.ndarray:
    """Rectangle count per image, or ``UNCLEAN`` when the image is not only rectangles."""
    imgs = np.asarray(images)
    if imgs.ndim == 2:
        side = int(round(np.sqrt(imgs.shape[1])))
        imgs = imgs.reshape(len(imgs), side, side)
    counts, clean = count_batch(imgs >= THRESHOLD)
    return np.where(clean, counts, UNCLEAN)


def correct_mask(images, target_count: int) -> np.ndarray:
    return class_labels(images) == target_count


def generate(gen, latents, chunk: int = 4096) -> np.ndarray:
    return np.concatenate([gen(latents[lo:lo + chunk]) for lo in range(0, len(latents), chunk)])


def prop_correct(gen, prior, n_samples: int, target_count: int, rng=None) -> float:
    """Fraction of generated images with exactly ``target_count`` clean rectangles.

    A discrete prior whose support fits in ``n_samples`` is evaluated once per code.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    z = prior.all_or_sample(n_samples, rng)
    return float(correct_mask(generate(gen, z), target_count).mean())


def score_combos(disc, real_batch, dcom_batch) -> tuple[float, float]:
    r, c = _flat(real_batch), _flat(dcom_batch)
    if len(r) == 0 or len(c) == 0:
        raise ValueError("score batches must be nonempty")
    return float(np.mean(disc(r))), float(np.mean(disc(c)))


def probe_latents(gen, probe_codes) -> np.ndarray:
    codes = np.asarray(probe_codes, dtype=np.float32)
    if len(codes) == 0:
        return np.empty(0, dtype=int)
    return class_labels(gen(codes))


def count_flips(label_history) -> int:
    """Number of (log point, probe) transitions where the class label changed."""
    h = np.asarray(label_history)
    if h.ndim != 2 or len(h) < 2:
        return 0
    return int((h[1:] != h[:-1]).sum())


@dataclass(frozen=True)
class CollapseReport:
    distances: np.ndarray  # per training image, nearest generated sample
    normalized: np.ndarray
    radius: float
    coverage: float
    n_gen: int
    n_distinct: int


def mode_collapse_report(gen, prior, dataset, n_gen: int, seed: int = 0,
                         radius: float = 0.1, binarize: bool = True, chunk: int = 8192) -> CollapseReport:
    """Nearest generated sample for every training image.

    Generated samples are thresholded at 0.5 first (``binarize``) so the
    comparison is made in the same binary space as the training images.
    Coverage is the fraction of training images within normalized distance
    ``radius`` of some generated sample.
    """
    train = _flat(dataset)
    if n_gen < len(train):
        raise ValueError("n_gen must be at least the dataset size")
    rng = np.random.default_rng([seed, 202])
    tt = (train * train).sum(1)
    best = np.full(len(train), np.inf)
    seen = set()
    done = 0
    while done < n_gen:
        k = min(chunk, n_gen - done)
        x = generate(gen, prior.sample(k, rng)).astype(np.float64)
        if binarize:
            x = (x >= THRESHOLD).astype(np.float64)
            seen.update(map(bytes, np.packbits(x.astype(bool), axis=1)))
        d2 = tt[:, None] + (x * x).sum(1)[None, :] - 2.0 * (train @ x.T)
        best = np.minimum(best, d2.min(axis=1))
        done += k
    dist = np.sqrt(np.maximum(best, 0.0))
    norm = dist / np.sqrt(train.shape[1])
    return CollapseReport(dist, norm, radius, float((norm < radius).mean()), n_gen,
                          len(seen) if binarize else -1)
