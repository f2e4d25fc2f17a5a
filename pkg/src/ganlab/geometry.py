"""Synthetic rectangle images: rendering, counting and the paired dataset.

Images are stored as float arrays of shape ``(height, width)`` with values in
[0, 1].  The binarized view (threshold 0.5) is what every counting metric
operates on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGE_SIZE = 32
RECT_SIZE = 8
THRESHOLD = 0.5

# 4-connectivity: diagonal contact must not merge two rectangles.
_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RectSpec:
    x: int
    y: int
    w: int = RECT_SIZE
    h: int = RECT_SIZE

    def fits(self, width: int, height: int) -> bool:
        return (self.x >= 0 and self.y >= 0 and self.w > 0 and self.h > 0
                and self.x + self.w <= width and self.y + self.h <= height)

    def separated_from(self, other: RectSpec, gap: int = 1) -> bool:
        """True when at least ``gap`` background pixels lie between the two."""
        return (self.x + self.w + gap <= other.x or other.x + other.w + gap <= self.x
                or self.y + self.h + gap <= other.y or other.y + other.h + gap <= self.y)


@dataclass
class GeometryDataset:
    images: np.ndarray  # (n, height, width)
    target_count: int
    sibling_pairs: list[tuple[int, int]] = field(default_factory=list)
    base_index: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.images)

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1)


def as_image(pixels, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> np.ndarray:
    """Validate pixel data and return it as a ``(height, width)`` float array."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim == 1:
        if img.size != width * height:
            raise ValueError(f"expected {width * height} pixels, got {img.size}")
        img = img.reshape(height, width)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ValueError("pixels must lie in [0, 1]")
    return img


def binarize(img: np.ndarray) -> np.ndarray:
    return np.asarray(img) >= THRESHOLD


def render(specs, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> np.ndarray:
    img = np.zeros((height, width))
    for s in specs:
        if not s.fits(width, height):
            raise ValueError(f"rectangle {s} lies outside a {width}x{height} image")
        img[s.y:s.y + s.h, s.x:s.x + s.w] = 1.0
    return img


def count_rectangles(img, rect_w: int = RECT_SIZE, rect_h: int = RECT_SIZE) -> tuple[int, bool]:
    """Count filled ``rect_w x rect_h`` blobs in the binarized image.

    Returns ``(count, clean)`` where ``clean`` means no foreground pixel belongs
    to anything other than a well-formed rectangle.
    """
    mask = binarize(img)
    if not mask.any():
        return 0, True
    labels, n = ndimage.label(mask, structure=_FOUR_CONN)
    count = 0
    for sl in ndimage.find_objects(labels):
        hh = sl[0].stop - sl[0].start
        ww = sl[1].stop - sl[1].start
        # a full bounding box means the component is a solid block
        if hh == rect_h and ww == rect_w and mask[sl].all():
            count += 1
    return count, count == n


def has_exactly(img, k: int, rect_w: int = RECT_SIZE, rect_h: int = RECT_SIZE) -> bool:
    count, clean = count_rectangles(img, rect_w, rect_h)
    return clean and count == k


def count_batch(images, rect_w: int = RECT_SIZE, rect_h: int = RECT_SIZE,
                width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Vector of counts and clean flags for a stack of images (flat or 2-D)."""
    images = np.asarray(images).reshape(-1, height, width)
    counts = np.empty(len(images), dtype=np.int64)
    clean = np.empty(len(images), dtype=bool)
    for i, img in enumerate(images):
        counts[i], clean[i] = count_rectangles(img, rect_w, rect_h)
    return counts, clean


def random_rects(k: int, rng: np.random.Generator, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE,
                 rect_w: int = RECT_SIZE, rect_h: int = RECT_SIZE, max_tries: int = 10_000) -> list[RectSpec]:
    """Place ``k`` mutually separated rectangles by rejection sampling."""
    placed: list[RectSpec] = []
    tries = 0
    while len(placed) < k:
        if tries >= max_tries:
            raise RuntimeError(f"could not place {k} separated rectangles in {max_tries} tries")
        tries += 1
        cand = RectSpec(int(rng.integers(0, width - rect_w + 1)),
                        int(rng.integers(0, height - rect_h + 1)), rect_w, rect_h)
        if all(cand.separated_from(p) for p in placed):
            placed.append(cand)
        elif tries % 100 == 0:
            placed = []  # restart; a bad early placement can block the rest
    return placed


def _base_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def sibling_rects(seed: int, index: int) -> tuple[list[RectSpec], list[RectSpec], list[RectSpec]]:
    """The 3-rectangle base layout and its two 2-rectangle siblings."""
    rng = _base_rng(seed, index)
    base = random_rects(3, rng)
    first, second = rng.choice(3, size=2, replace=False)
    a = [r for j, r in enumerate(base) if j != first]
    b = [r for j, r in enumerate(base) if j != second]
    return base, a, b


def generate_paired(n_base: int, seed: int) -> GeometryDataset:
    """Two-rectangle dataset built by dropping one of three rectangles, twice.

    Image ``2k`` and ``2k + 1`` are siblings from base layout ``k``.
    """
    if n_base < 1:
        raise ValueError("n_base must be positive")
    images = np.empty((2 * n_base, IMAGE_SIZE, IMAGE_SIZE))
    pairs = []
    for k in range(n_base):
        _, a, b = sibling_rects(seed, k)
        images[2 * k] = render(a)
        images[2 * k + 1] = render(b)
        pairs.append((2 * k, 2 * k + 1))
    return GeometryDataset(images, target_count=2, sibling_pairs=pairs,
                           base_index=np.repeat(np.arange(n_base), 2))


def generate_toy(seed: int) -> GeometryDataset:
    """Two 3-rectangle images sharing two rectangles.

    Their And keeps the two shared rectangles and their Or shows four, so
    both combinations have a wrong count.
    """
    r = random_rects(4, _base_rng(seed, 0))
    images = np.stack([render(r[:3]), render(r[:2] + r[3:])])
    return GeometryDataset(images, target_count=3, sibling_pairs=[(0, 1)], base_index=np.zeros(2, dtype=int))


def generate_fixed_count(n: int, k: int, seed: int) -> GeometryDataset:
    """``n`` independent images with exactly ``k`` separated rectangles each."""
    images = np.stack([render(random_rects(k, _base_rng(seed, i))) for i in range(n)]) if n else \
        np.empty((0, IMAGE_SIZE, IMAGE_SIZE))
    return GeometryDataset(images, target_count=k)


def nearest_neighbor(sample, dataset) -> tuple[int, float]:
    """Index and Euclidean distance of the closest dataset image (lowest index on ties)."""
    data = dataset.flat if isinstance(dataset, GeometryDataset) else np.asarray(dataset, dtype=np.float64)
    if len(data) == 0:
        raise ValueError("dataset is empty")
    data = data.reshape(len(data), -1)
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size != data.shape[1]:
        raise ValueError(f"sample has {x.size} pixels, dataset images have {data.shape[1]}")
    d2 = ((data - x) ** 2).sum(axis=1)
    idx = int(np.argmin(d2))  # argmin returns the first minimum
    return idx, float(np.sqrt(d2[idx]))


# --- persistence -----------------------------------------------------------

def write_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    data = np.clip(np.round(255.0 * img), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w) / float(maxval)


def save_dataset(dataset: GeometryDataset, out_dir) -> list[Path]:
    """Write one PGM per image plus ``manifest.csv``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sibling = {}
    for i, j in dataset.sibling_pairs:
        sibling[i], sibling[j] = j, i
    written = []
    rows = []
    for i, img in enumerate(dataset.images):
        name = f"img_{i:06d}.pgm"
        write_pgm(out / name, img)
        written.append(out / name)
        base = "" if dataset.base_index is None else int(dataset.base_index[i])
        rows.append([name, dataset.target_count, base, sibling.get(i, "")])
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filename", "target_count", "base_index", "sibling_of"])
        wr.writerows(rows)
    written.append(manifest)
    return written


def load_dataset(in_dir) -> GeometryDataset:
    src = Path(in_dir)
    with open(src / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{src}: empty manifest")
    images = np.stack([read_pgm(src / r["filename"]) for r in rows])
    pairs = sorted({tuple(sorted((i, int(r["sibling_of"]))))
                    for i, r in enumerate(rows) if r.get("sibling_of")})
    base = None
    if all(r.get("base_index") for r in rows):
        base = np.array([int(r["base_index"]) for r in rows])
    return GeometryDataset(images, target_count=int(rows[0]["target_count"]),
                           sibling_pairs=[tuple(p) for p in pairs], base_index=base)
