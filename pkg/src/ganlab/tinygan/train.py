"""The training loop, sample correction, the training log and checkpoints."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..combination import build_dcom, sibling_combinations
from ..geometry import GeometryDataset, write_pgm
from .config import GanConfig, LatentPrior, ScMode
from .losses import d_loss_grads, g_loss_grad, gan_losses
from .metrics import class_labels, dif_batch, generate
from .nets import SGD, Adam, DenseNet

LOG_COLUMNS = ("step", "d_loss", "g_loss", "grad_d", "grad_g", "score_real", "score_fake",
               "score_dcom", "prop_correct", "mean_dif", "probe_flips")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, log: TrainLog):
        super().__init__(message)
        self.log = log


# --- sample correction ------------------------------------------------------

def is_realistic(images, dataset, mode: ScMode) -> np.ndarray:
    if mode.kind == "count":
        return class_labels(images) == mode.target
    return dif_batch(images, dataset) < mode.threshold


@dataclass
class ScResult:
    batch: np.ndarray
    n_flagged: int  # realistic samples in the incoming batch
    n_dropped: int  # slots left empty after all retries

    @property
    def skipped(self) -> bool:
        return len(self.batch) == 0


def sc_filter(fakes, dataset, mode: ScMode, regenerate=None, retries: int = 8) -> ScResult:
    """Replace realistic fakes so none reach the discriminator as negatives.

    Each realistic slot gets up to ``retries`` fresh samples from
    ``regenerate(k)``; the first unrealistic one fills the slot, otherwise the
    slot is dropped. An empty result means the discriminator step is skipped.
    """
    fakes = np.asarray(fakes)
    if len(fakes) == 0:
        raise ValueError("sample correction needs a nonempty batch")
    bad = is_realistic(fakes, dataset, mode)
    n_flagged = int(bad.sum())
    out = fakes.copy()
    keep = ~bad
    open_slots = np.flatnonzero(bad)
    if regenerate is not None:
        for _ in range(retries):
            if not len(open_slots):
                break
            cand = np.asarray(regenerate(len(open_slots)), dtype=fakes.dtype)
            ok = ~is_realistic(cand, dataset, mode)
            out[open_slots[ok]] = cand[ok]
            keep[open_slots[ok]] = True
            open_slots = open_slots[~ok]
    return ScResult(out[keep], n_flagged, len(open_slots))


# --- training log -----------------------------------------------------------

@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # tuples ordered like LOG_COLUMNS
    probe_labels: list = field(default_factory=list)  # one label array per logged step
    skipped_steps: list = field(default_factory=list)  # generator steps whose D update was skipped

    def column(self, name: str) -> np.ndarray:
        k = LOG_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=np.float64)

    @property
    def steps(self) -> np.ndarray:
        return self.column("step").astype(int)

    @property
    def final(self) -> dict:
        return dict(zip(LOG_COLUMNS, self.rows[-1]))

    def probe_history(self) -> np.ndarray:
        return np.array(self.probe_labels)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(LOG_COLUMNS)
            for r in self.rows:
                wr.writerow([r[0]] + [format(v, ".17g") for v in r[1:-1]] + [r[-1]])
        return path

    @classmethod
    def from_csv(cls, path) -> TrainLog:
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            if tuple(next(rd)) != LOG_COLUMNS:
                raise ValueError(f"{path}: unexpected header")
            rows = [(int(r[0]), *map(float, r[1:-1]), int(r[-1])) for r in rd]
        return cls(rows)


# --- checkpoints --------------------------------------------------------------
#
# Layout (all little-endian):
#   magic b"GLCKPT" | version u8 | n_entries u32
#   per entry: name_len u16 | name utf-8 | dtype u8 (0=f4, 1=f8, 2=i8, 3=u1) |
#              ndim u8 | dims u32 * ndim | raw data

CKPT_MAGIC = b"GLCKPT"
CKPT_VERSION = 1
_DTYPES = [np.dtype("<f4"), np.dtype("<f8"), np.dtype("<i8"), np.dtype("u1")]


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode(), dtype=np.uint8)


def write_checkpoint(path, arrays: dict) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = next(i for i, dt in enumerate(_DTYPES) if dt.kind == arr.dtype.kind
                        and dt.itemsize == arr.dtype.itemsize)
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key + struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return path


def read_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CKPT_MAGIC)
    version, n = struct.unpack_from("<BI", raw, pos)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 5
    out = {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + klen].decode()
        pos += klen
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape)) * dt.itemsize
        out[name] = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
        pos += size
    return out


def _net_arrays(prefix: str, net: DenseNet) -> dict:
    out = {f"{prefix}.hidden": _text(net.hidden), f"{prefix}.output": _text(net.output)}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{k}"] = w
        out[f"{prefix}.b{k}"] = b
    return out


def _net_from(prefix: str, arrays: dict) -> DenseNet:
    ws, bs = [], []
    while f"{prefix}.W{len(ws)}" in arrays:
        ws.append(arrays[f"{prefix}.W{len(ws)}"])
        bs.append(arrays[f"{prefix}.b{len(bs)}"])
    return DenseNet(ws, bs, hidden=arrays[f"{prefix}.hidden"].tobytes().decode(),
                    output=arrays[f"{prefix}.output"].tobytes().decode())


def _opt_arrays(prefix: str, opt) -> dict:
    out = {f"{prefix}.t": np.array([opt.t], dtype=np.int64)}
    for k, s in enumerate(opt.state()):
        out[f"{prefix}.s{k}"] = s
    return out


def save_checkpoint(path, run: TrainRun) -> Path:
    arrays = {"step": np.array([run.step], dtype=np.int64)}
    arrays.update(_net_arrays("G", run.gen))
    arrays.update(_net_arrays("D", run.disc))
    arrays.update(_opt_arrays("optG", run.opt_g))
    arrays.update(_opt_arrays("optD", run.opt_d))
    if run.prior.codes is not None:
        arrays["prior.codes"] = run.prior.codes
    return write_checkpoint(path, arrays)


@dataclass
class Checkpoint:
    step: int
    gen: DenseNet
    disc: DenseNet
    prior_codes: np.ndarray | None
    arrays: dict


def load_checkpoint(path) -> Checkpoint:
    a = read_checkpoint(path)
    return Checkpoint(int(a["step"][0]), _net_from("G", a), _net_from("D", a), a.get("prior.codes"), a)


# --- training -----------------------------------------------------------------

@dataclass
class TrainRun:
    config: GanConfig
    log: TrainLog
    gen: DenseNet
    disc: DenseNet
    prior: LatentPrior
    opt_g: object
    opt_d: object
    step: int = 0


def _global_norm(grads) -> float:
    return float(math.sqrt(sum(float(np.vdot(g, g)) for g in grads)))


def _optimizer(cfg: GanConfig, params, lr: float, weight_decay: float = 0.0):
    if cfg.optimizer == "sgd":
        return SGD(params, lr, weight_decay)
    return Adam(params, lr, cfg.beta1, cfg.beta2, weight_decay=weight_decay)


def dcom_pool(dataset: GeometryDataset, ops, source: str, size: int, seed: int) -> np.ndarray:
    """Negative combined images: And/Or of sibling pairs, or combinations of sampled pairs."""
    if source == "siblings" and dataset.sibling_pairs:
        return sibling_combinations(dataset, ops).reshape(-1, dataset.flat.shape[1])
    parts = [build_dcom(dataset, op, size, seed).images for op in ops]
    return np.concatenate(parts).reshape(-1, dataset.flat.shape[1])


def build_prior(cfg: GanConfig, n_data: int) -> LatentPrior:
    if cfg.prior == "discrete":
        return LatentPrior.discrete_uniform(cfg.n_codes or n_data, cfg.latent_dim, cfg.seed)
    return LatentPrior.gaussian(cfg.latent_dim)


def init_networks(cfg: GanConfig, n_pixels: int, data_mean: float, rng: np.random.Generator):
    gen = DenseNet.init([cfg.latent_dim, *cfg.g_hidden, n_pixels], rng, output="sigmoid")
    gen.weights[-1] *= np.float32(cfg.g_out_scale)
    p = min(max(data_mean, 1e-3), 1 - 1e-3)
    gen.biases[-1][:] = np.float32(math.log(p / (1.0 - p)))
    disc = DenseNet.init([n_pixels, *cfg.d_hidden, 1], rng)
    return gen, disc


def train(cfg: GanConfig, dataset: GeometryDataset, probe_dir=None) -> TrainRun:
    """Alternate ``d_steps_per_g`` discriminator updates with one generator update.

    The generator starts by emitting the mean training image (small output
    weights plus a bias at the data logit). Metrics at each log point are taken
    on fixed evaluation latents and images, so logging never consumes training
    randomness.
    """
    X = dataset.flat.astype(np.float32)
    n_data, n_pix = X.shape
    target = dataset.target_count
    full = cfg.full_batch
    batch = n_data if full else cfg.batch_size

    rng = np.random.default_rng([cfg.seed, 7])
    prior = build_prior(cfg, n_data)
    gen, disc = init_networks(cfg, n_pix, float(X.mean()), rng)
    opt_g = _optimizer(cfg, gen.params, cfg.lr_g)
    opt_d = _optimizer(cfg, disc.params, cfg.lr_d, cfg.weight_decay_d)

    ops = cfg.pcr_ops or ("and", "or")
    pool = dcom_pool(dataset, ops, cfg.pcr_pool, 8 * batch, cfg.seed).astype(np.float32)

    eval_rng = np.random.default_rng([cfg.seed, 9])
    eval_z = prior.all_or_sample(cfg.n_eval, eval_rng)
    probe_z = prior.sample(cfg.n_probes, eval_rng)
    eval_real = X[:cfg.n_eval]
    eval_dcom = pool[:cfg.n_eval]

    def latents():
        if full:
            return prior.all_or_sample(n_data, rng)
        return prior.sample(batch, rng)

    run = TrainRun(cfg, TrainLog(), gen, disc, prior, opt_g, opt_d)
    last = {"d_loss": math.nan, "g_loss": math.nan, "grad_d": 0.0, "grad_g": 0.0}

    def record(step: int):
        fakes = generate(gen, eval_z)
        labels = class_labels(fakes)
        s_real = float(disc(eval_real).mean())
        s_fake = float(disc(fakes).mean())
        s_dcom = float(disc(eval_dcom).mean())
        probes = class_labels(gen(probe_z)) if cfg.n_probes else np.empty(0, dtype=int)
        prev = run.log.probe_labels[-1] if run.log.probe_labels else probes
        flips = int((probes != prev).sum())
        if step == 0:
            pcr = cfg.regime.uses_pcr
            last["d_loss"], last["g_loss"] = gan_losses(
                disc(eval_real), disc(fakes), disc(eval_dcom) if pcr else None, pcr)
        row = (step, last["d_loss"], last["g_loss"], last["grad_d"], last["grad_g"], s_real, s_fake,
               s_dcom, float((labels == target).mean()), float(dif_batch(fakes, X).mean()), flips)
        run.log.rows.append(row)
        run.log.probe_labels.append(probes)
        if probe_dir is not None and cfg.n_probes:
            out = Path(probe_dir)
            out.mkdir(parents=True, exist_ok=True)
            imgs = gen(probe_z)
            side = int(round(math.sqrt(n_pix)))
            for k, img in enumerate(imgs):
                write_pgm(out / f"step_{step:07d}_probe_{k:02d}.pgm", img.reshape(side, side))

    record(0)
    wd_end = cfg.weight_decay_d if cfg.weight_decay_d_end is None else cfg.weight_decay_d_end
    for step in range(1, cfg.steps + 1):
        frac = (step - 1) / max(cfg.steps - 1, 1)
        opt_d.weight_decay = cfg.weight_decay_d + (wd_end - cfg.weight_decay_d) * frac
        lr_scale = 1.0 + (cfg.lr_end_factor - 1.0) * frac
        opt_d.lr, opt_g.lr = cfg.lr_d * lr_scale, cfg.lr_g * lr_scale
        for _ in range(cfg.d_steps_per_g):
            real = X if full else X[rng.integers(0, n_data, batch)]
            fake = gen(latents())
            n_neg = len(fake)
            if cfg.regime.uses_sc:
                res = sc_filter(fake, X, cfg.sc_mode, lambda k: gen(prior.sample(k, rng)), cfg.sc_retries)
                fake = res.batch
                if res.skipped:
                    run.log.skipped_steps.append(step)
                    continue
            parts = [real, fake]
            if cfg.regime.uses_pcr:
                parts.append(pool[rng.integers(0, len(pool), n_neg)])
            cache = disc.forward(np.concatenate(parts))
            s = cache[-1][:, 0]
            nr, nf = len(real), len(fake)
            s_r, s_f, s_c = s[:nr], s[nr:nr + nf], s[nr + nf:]
            pcr = cfg.regime.uses_pcr
            last["d_loss"], _ = gan_losses(s_r, s_f, s_c if pcr else None, pcr)
            g_parts = [p for p in d_loss_grads(s_r, s_f, s_c if pcr else None, pcr) if p is not None]
            grads, _ = disc.backward(cache, np.concatenate(g_parts)[:, None])
            last["grad_d"] = _global_norm(grads)
            opt_d.step(grads)

        g_cache = gen.forward(latents())
        d_cache = disc.forward(g_cache[-1])
        s_f = d_cache[-1][:, 0]
        last["g_loss"] = float(np.logaddexp(0.0, -s_f.astype(np.float64)).mean())
        _, g_in = disc.backward(d_cache, g_loss_grad(s_f)[:, None], need_input_grad=True)
        g_grads, _ = gen.backward(g_cache, g_in)
        last["grad_g"] = _global_norm(g_grads)
        opt_g.step(g_grads)
        run.step = step

        if not (math.isfinite(last["d_loss"]) and math.isfinite(last["g_loss"])):
            record(step)
            raise TrainingDiverged(f"non-finite loss at step {step}: d_loss={last['d_loss']} "
                                   f"g_loss={last['g_loss']}", run.log)
        if step % cfg.log_stride == 0 or step == cfg.steps:
            record(step)
    return run
