import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganlab.geometry import (
    GeometryDataset,
    RectSpec,
    count_rectangles,
    generate_paired,
    load_dataset,
    nearest_neighbor,
    random_rects,
    read_pgm,
    render,
    save_dataset,
    sibling_rects,
    write_pgm,
)


def test_render_empty_is_blank():
    img = render([])
    assert img.shape == (32, 32)
    assert not img.any()


def test_render_single_rect_area():
    img = render([RectSpec(0, 0)])
    assert int((img == 1.0).sum()) == 64
    assert set(np.unique(img)) == {0.0, 1.0}


def test_render_union_semantics():
    img = render([RectSpec(0, 0), RectSpec(4, 4)])
    assert img.sum() < 128


def test_render_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        render([RectSpec(25, 0)])
    with pytest.raises(ValueError):
        render([RectSpec(-1, 3)])


def test_count_blank():
    assert count_rectangles(np.zeros((32, 32))) == (0, True)


def test_count_two_separated():
    assert count_rectangles(render([RectSpec(0, 0), RectSpec(20, 20)])) == (2, True)


def test_count_wrong_shape_is_unclean():
    img = np.zeros((32, 32))
    img[3:10, 5:13] = 1.0  # 7 rows x 8 columns
    assert count_rectangles(img) == (0, False)


def test_count_stray_pixel_is_unclean():
    img = render([RectSpec(0, 0), RectSpec(20, 20)])
    img[15, 15] = 1.0
    assert count_rectangles(img) == (2, False)


def test_count_hollow_block_is_not_a_rectangle():
    img = render([RectSpec(10, 10)])
    img[13, 13] = 0.0
    assert count_rectangles(img) == (0, False)


def test_count_diagonal_contact_keeps_rectangles_apart():
    # corner-touching squares are distinct 4-connected components
    img = render([RectSpec(0, 0), RectSpec(8, 8)])
    assert count_rectangles(img) == (2, True)


def test_count_adjacent_rectangles_merge():
    img = render([RectSpec(0, 0), RectSpec(8, 0)])
    assert count_rectangles(img) == (0, False)


def test_count_thresholds_soft_pixels():
    img = render([RectSpec(2, 2)]) * 0.6 + 0.2  # foreground 0.8, background 0.2
    assert count_rectangles(img) == (1, True)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_count_inverts_render(k):
    for trial in range(200):
        rects = random_rects(k, np.random.default_rng([k, trial]))
        assert count_rectangles(render(rects)) == (k, True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(-6, 6), st.integers(-6, 6))
def test_count_translation_invariant(seed, dx, dy):
    rects = random_rects(2, np.random.default_rng(seed))
    moved = [RectSpec(r.x + dx, r.y + dy) for r in rects]
    if not all(r.fits(32, 32) for r in moved):
        return
    assert count_rectangles(render(moved)) == count_rectangles(render(rects))


def test_generate_paired_sizes():
    assert len(generate_paired(32, seed=3)) == 64
    ds = generate_paired(12800, seed=1)
    assert len(ds) == 25600
    assert ds.target_count == 2


def test_generate_paired_every_image_has_two():
    ds = generate_paired(200, seed=5)
    for img in ds.images:
        assert count_rectangles(img) == (2, True)
    assert ds.sibling_pairs[0] == (0, 1)
    for i, j in ds.sibling_pairs:
        assert not np.array_equal(ds.images[i], ds.images[j])


def test_generate_paired_deterministic():
    a, b = generate_paired(20, seed=9), generate_paired(20, seed=9)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, generate_paired(20, seed=10).images)


def test_sibling_or_and_counts():
    ds = generate_paired(300, seed=2)
    for i, j in ds.sibling_pairs:
        a, b = ds.images[i], ds.images[j]
        assert count_rectangles(np.maximum(a, b)) == (3, True)
        assert count_rectangles(np.minimum(a, b)) == (1, True)


def test_sibling_base_has_three_separated_rects():
    base, a, b = sibling_rects(4, 17)
    assert len(base) == 3 and len(a) == 2 and len(b) == 2
    assert all(p.separated_from(q) for p in base for q in base if p is not q)


def test_nearest_neighbor_exact_member():
    ds = generate_paired(8, seed=1)
    assert nearest_neighbor(ds.images[5], ds) == (5, 0.0)


def test_nearest_neighbor_blank_sample_ties():
    ds = generate_paired(8, seed=1)
    # exhaustive: every image has 128 foreground pixels, so every distance is sqrt(128)
    brute = [math.sqrt(float(((img - 0.0) ** 2).sum())) for img in ds.images]
    assert len(set(brute)) == 1
    idx, dist = nearest_neighbor(np.zeros((32, 32)), ds)
    assert idx == 0
    assert dist == pytest.approx(math.sqrt(128))


def test_nearest_neighbor_empty_dataset():
    with pytest.raises(ValueError):
        nearest_neighbor(np.zeros((32, 32)), GeometryDataset(np.empty((0, 32, 32)), 2))


def test_nearest_neighbor_zero_iff_member():
    ds = generate_paired(10, seed=4)
    other = generate_paired(10, seed=5)
    for img in other.images:
        member = any(np.array_equal(img, x) for x in ds.images)
        assert (nearest_neighbor(img, ds)[1] == 0.0) == member


def test_pgm_round_trip(tmp_path):
    img = np.round(np.random.default_rng(0).random((32, 32)) * 255) / 255
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n32 32\n255\n")
    assert len(raw) == len(b"P5\n32 32\n255\n") + 1024
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)


def test_dataset_round_trip(tmp_path):
    ds = generate_paired(4, seed=8)
    written = save_dataset(ds, tmp_path / "geo")
    assert len(written) == 9
    header = (tmp_path / "geo" / "manifest.csv").read_text().splitlines()[0]
    assert header == "filename,target_count,base_index,sibling_of"
    back = load_dataset(tmp_path / "geo")
    np.testing.assert_array_equal(back.images, ds.images)
    assert back.sibling_pairs == ds.sibling_pairs
    np.testing.assert_array_equal(back.base_index, ds.base_index)
