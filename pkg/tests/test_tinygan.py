import math

import numpy as np
import pytest

from ganlab.geometry import RectSpec, count_rectangles, generate_paired, render
from ganlab.tinygan import (
    DenseNet,
    GanConfig,
    LatentPrior,
    ScMode,
    TrainLog,
    count_flips,
    dif,
    dif_batch,
    gan_losses,
    load_checkpoint,
    mode_collapse_report,
    probe_latents,
    prop_correct,
    save_checkpoint,
    sc_filter,
    score_combos,
    train,
)
from ganlab.tinygan.train import read_checkpoint, write_checkpoint

TWO = render([RectSpec(0, 0), RectSpec(20, 20)]).ravel()
ONE = render([RectSpec(10, 10)]).ravel()
THREE = render([RectSpec(0, 0), RectSpec(20, 0), RectSpec(10, 20)]).ravel()


class ConstantGen:
    """Stand-in generator that ignores its latent input."""

    def __init__(self, img):
        self.img = np.asarray(img, dtype=np.float32).ravel()

    def __call__(self, z):
        return np.tile(self.img, (len(z), 1))


class TableGen:
    """Maps discrete code ``k`` (stored in the first coordinate) to ``table[k]``."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float32).reshape(len(table), -1)

    def __call__(self, z):
        return self.table[np.asarray(z)[:, 0].astype(int)]


def index_prior(n):
    codes = np.zeros((n, 2), dtype=np.float32)
    codes[:, 0] = np.arange(n)
    return LatentPrior("discrete", 2, codes)


# --- losses -------------------------------------------------------------------

def test_losses_at_zero_logits():
    z = np.zeros(5)
    d, g = gan_losses(z, z)
    assert d == pytest.approx(2 * math.log(2))
    assert g == pytest.approx(math.log(2))
    assert gan_losses(z, z, z, pcr=True)[0] == pytest.approx(2 * math.log(2))


def test_losses_perfect_discriminator():
    assert gan_losses(np.full(3, 60.0), np.full(3, -60.0))[0] < 1e-20


def test_pcr_with_fake_scores_equals_vanilla():
    rng = np.random.default_rng(0)
    sr, sf = rng.standard_normal(8), rng.standard_normal(8)
    assert gan_losses(sr, sf, sf.copy(), pcr=True)[0] == pytest.approx(gan_losses(sr, sf)[0])


def test_losses_reject_empty_and_mismatched():
    with pytest.raises(ValueError):
        gan_losses([], [0.0])
    with pytest.raises(ValueError):
        gan_losses([0.0], [0.0], pcr=True)


# --- dif ------------------------------------------------------------------------

def test_dif_member_is_zero():
    ds = generate_paired(4, seed=1)
    assert dif(ds.images[3], ds) == 0.0


def test_dif_diameter():
    assert dif(np.ones(1024), np.zeros((1, 1024))) == pytest.approx(1.0)


def test_dif_matches_brute_force():
    rng = np.random.default_rng(2)
    data = (rng.random((2, 1024)) < 0.5).astype(float)
    for _ in range(20):
        x = (rng.random(1024) < 0.5).astype(float)
        brute = min(math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y))) for y in data) / 32.0
        assert dif(x, data) == pytest.approx(brute, rel=1e-12)


def test_dif_empty_dataset():
    with pytest.raises(ValueError):
        dif(np.zeros(4), np.zeros((0, 4)))


# --- sample correction ------------------------------------------------------------

def test_sc_no_realistic_fakes_unchanged():
    batch = np.stack([ONE, THREE, np.zeros(1024)])
    res = sc_filter(batch, None, ScMode("count", 2))
    np.testing.assert_array_equal(res.batch, batch)
    assert res.n_flagged == 0 and not res.skipped


def test_sc_count_filter_removes_exactly_the_correct_images():
    ds = generate_paired(3, seed=0)
    batch = np.stack([ONE, ds.flat[0], THREE, ds.flat[1], np.zeros(1024), TWO])
    res = sc_filter(batch, ds, ScMode("count", 2))
    expected = [b for b in batch if count_rectangles(b.reshape(32, 32)) != (2, True)]
    np.testing.assert_array_equal(res.batch, np.stack(expected))
    assert res.n_flagged == 3 and res.n_dropped == 3


def test_sc_replacements_are_unrealistic():
    batch = np.stack([TWO, ONE, TWO])
    draws = iter([np.stack([TWO, THREE]), np.stack([ONE])])
    res = sc_filter(batch, None, ScMode("count", 2), lambda k: next(draws)[:k])
    np.testing.assert_array_equal(res.batch, np.stack([ONE, ONE, THREE]))
    assert res.n_dropped == 0


def test_sc_dif_filter_skips_when_everything_is_realistic():
    ds = generate_paired(2, seed=0)
    calls = []

    def regen(k):
        calls.append(k)
        return ds.flat[:k]

    res = sc_filter(ds.flat[:3], ds, ScMode("dif", threshold=0.1), regen, retries=8)
    assert res.skipped and len(calls) == 8


def test_sc_rejects_empty_batch():
    with pytest.raises(ValueError):
        sc_filter(np.empty((0, 1024)), None, ScMode())


# --- metrics -------------------------------------------------------------------------

def test_prop_correct_constant_generators():
    prior = LatentPrior.gaussian(4)
    assert prop_correct(ConstantGen(TWO), prior, 50, 2) == 1.0
    assert prop_correct(ConstantGen(np.zeros(1024)), prior, 50, 2) == 0.0


def test_prop_correct_mixed_table_evaluates_each_code_once():
    table = [TWO, ONE, THREE, TWO, np.zeros(1024)]
    oracle = np.mean([count_rectangles(t.reshape(32, 32)) == (2, True) for t in table])
    assert prop_correct(TableGen(table), index_prior(5), 100, 2) == pytest.approx(oracle)


def test_score_combos():
    disc = DenseNet.zeros([1024, 8, 1])
    assert score_combos(disc, np.stack([TWO]), np.stack([ONE])) == (0.0, 0.0)
    d2 = DenseNet.init([1024, 8, 1], np.random.default_rng(0))
    batch = np.stack([TWO, ONE])
    r, c = score_combos(d2, batch, batch)
    assert r == c
    with pytest.raises(ValueError):
        score_combos(d2, batch, np.empty((0, 1024)))


def test_probe_labels_and_flips():
    gen = TableGen([TWO, ONE, THREE, np.full(1024, 0.3)])
    codes = index_prior(4).codes
    labels = probe_latents(gen, codes)
    np.testing.assert_array_equal(labels, [2, 1, 3, 0])
    assert count_flips([labels, labels]) == 0
    assert count_flips([labels, [2, 2, 3, 0], [2, 1, 3, 0]]) == 2


def test_mode_collapse_replaying_dataset():
    ds = generate_paired(8, seed=0)
    rep = mode_collapse_report(TableGen(ds.flat), index_prior(16), ds, 1600)
    assert rep.coverage == 1.0 and not rep.distances.any()


def test_mode_collapse_constant_generator():
    ds = generate_paired(8, seed=0)
    rep = mode_collapse_report(ConstantGen(ds.flat[5]), LatentPrior.gaussian(3), ds, 100)
    assert rep.coverage == pytest.approx(1 / 16)
    assert rep.n_distinct == 1
    with pytest.raises(ValueError):
        mode_collapse_report(ConstantGen(TWO), LatentPrior.gaussian(3), ds, 5)


def test_discrete_prior_is_frozen():
    p = LatentPrior.discrete_uniform(4, 3, seed=1)
    np.testing.assert_array_equal(p.codes, LatentPrior.discrete_uniform(4, 3, seed=1).codes)
    with pytest.raises(ValueError):
        p.codes[0, 0] = 1.0
    with pytest.raises(ValueError):
        LatentPrior.discrete_uniform(0, 3, seed=1)


# --- configuration --------------------------------------------------------------

def test_config_lists_every_violation():
    with pytest.raises(ValueError) as err:
        GanConfig(regime="sc_pcr", batch_size=0, lr_d=-1.0)
    msg = str(err.value)
    for key in ("batch_size", "learning rates", "sc_mode", "pcr_ops"):
        assert key in msg


def test_config_regime_fields():
    GanConfig(regime="sc", sc_mode=ScMode())
    with pytest.raises(ValueError):
        GanConfig(regime="vanilla", sc_mode=ScMode())
    with pytest.raises(ValueError):
        GanConfig(regime="fgd", batch_size=16)


# --- training ---------------------------------------------------------------------

TINY = dict(latent_dim=4, g_hidden=(16,), d_hidden=(16,), n_probes=4, log_stride=5)


def test_train_zero_steps_logs_initial_metrics():
    run = train(GanConfig(steps=0, **TINY), generate_paired(4, seed=0))
    assert len(run.log.rows) == 1 and run.log.rows[0][0] == 0
    assert run.log.rows[0][-1] == 0


@pytest.mark.parametrize("regime", ["vanilla", "sc", "pcr", "sc_pcr"])
def test_train_is_bit_reproducible(regime, tmp_path):
    extra = {}
    if "sc" in regime:
        extra["sc_mode"] = ScMode("count", 2)
    if "pcr" in regime:
        extra["pcr_ops"] = ("and", "or")
    cfg = GanConfig(regime=regime, steps=12, batch_size=8, seed=3, **TINY, **extra)
    ds = generate_paired(6, seed=0)
    a = train(cfg, ds).log.to_csv(tmp_path / "a.csv").read_bytes()
    b = train(cfg, ds).log.to_csv(tmp_path / "b.csv").read_bytes()
    assert a == b
    log = TrainLog.from_csv(tmp_path / "a.csv")
    assert list(log.steps) == [0, 5, 10, 12]
    assert ((log.column("prop_correct") >= 0) & (log.column("prop_correct") <= 1)).all()
    assert ((log.column("mean_dif") >= 0) & (log.column("mean_dif") <= 1)).all()


def test_train_log_stride_does_not_change_training():
    ds = generate_paired(4, seed=0)
    a = train(GanConfig(steps=10, batch_size=None, regime="fgd", seed=1, **TINY), ds)
    b = train(GanConfig(steps=10, batch_size=None, regime="fgd", seed=1, **{**TINY, "log_stride": 3}), ds)
    for p, q in zip(a.gen.params + a.disc.params, b.gen.params + b.disc.params):
        np.testing.assert_array_equal(p, q)


def test_train_log_csv_header(tmp_path):
    run = train(GanConfig(steps=3, **TINY), generate_paired(2, seed=0))
    head = run.log.to_csv(tmp_path / "log.csv").read_text().splitlines()[0]
    assert head == ("step,d_loss,g_loss,grad_d,grad_g,score_real,score_fake,score_dcom,"
                    "prop_correct,mean_dif,probe_flips")


def test_train_divergence_guard():
    from ganlab.tinygan.train import TrainingDiverged

    cfg = GanConfig(steps=5, optimizer="sgd", lr_d=1e30, lr_g=1e30, **TINY)
    with pytest.raises(TrainingDiverged) as err:
        with np.errstate(all="ignore"):
            train(cfg, generate_paired(2, seed=0))
    assert "non-finite" in str(err.value)
    assert err.value.log.rows


def test_emit_probes(tmp_path):
    train(GanConfig(steps=5, **TINY), generate_paired(2, seed=0), probe_dir=tmp_path)
    assert len(list(tmp_path.glob("*.pgm"))) == 2 * 4


def test_checkpoint_round_trip(tmp_path):
    run = train(GanConfig(steps=4, **TINY), generate_paired(2, seed=0))
    path = save_checkpoint(tmp_path / "ck.bin", run)
    raw = path.read_bytes()
    assert raw[:6] == b"GLCKPT" and raw[6] == 1
    ck = load_checkpoint(path)
    assert ck.step == 4 and ck.disc.output == "identity" and ck.gen.output == "sigmoid"
    for p, q in zip(run.gen.params + run.disc.params, ck.gen.params + ck.disc.params):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(ck.prior_codes, run.prior.codes)
    assert ck.arrays["optD.t"][0] == 4


def test_checkpoint_rejects_bad_files(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "x")
    write_checkpoint(tmp_path / "y", {"a": np.arange(3, dtype=np.int64)})
    raw = bytearray((tmp_path / "y").read_bytes())
    raw[6] = 9
    (tmp_path / "y").write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "y")


def test_dif_batch_range():
    rng = np.random.default_rng(5)
    vals = dif_batch(rng.random((50, 1024)), generate_paired(3, seed=0))
    assert ((vals >= 0) & (vals <= 1)).all()


def test_n_codes_sets_discrete_support():
    run = train(GanConfig(steps=0, n_codes=11, **TINY), generate_paired(2, seed=0))
    assert run.prior.codes.shape == (11, TINY["latent_dim"])
    with pytest.raises(ValueError):
        GanConfig(n_codes=0)


def test_schedules_reach_their_end_values():
    cfg = GanConfig(steps=6, lr_d=1e-3, lr_g=2e-3, lr_end_factor=0.25, weight_decay_d=0.1,
                    weight_decay_d_end=0.0, **TINY)
    run = train(cfg, generate_paired(2, seed=0))
    assert run.opt_d.lr == pytest.approx(2.5e-4) and run.opt_g.lr == pytest.approx(5e-4)
    assert run.opt_d.weight_decay == 0.0
    with pytest.raises(ValueError):
        GanConfig(lr_end_factor=0.0)
