"""Command-line entry point: ``ganlab <command> [--config FILE] [--key value ...]``.

Every command resolves its parameters from an optional ``key = value`` file
and command-line flags (flags win), writes ``resolved-config.txt`` and a
``manifest.csv`` of produced artifacts with SHA-256 hashes into ``--out``.
Failures print a single ``ganlab: error kind=... key=... msg="..."`` line on
stderr and exit nonzero.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import geometry as geo
from . import variance_lab as vl
from .combination import CombOp, build_dcom, check_margin, dense_as_float64, lipschitz_upper_bound, sibling_combinations
from .svgplot import plot_csv
from .tinygan import GanConfig, ScMode, TrainingDiverged, load_checkpoint, mode_collapse_report, save_checkpoint, train
from .tinygan.metrics import count_flips

REQUIRED = object()


class CliError(Exception):
    def __init__(self, kind: str, msg: str, key: str | None = None, status: int = 2):
        super().__init__(msg)
        self.kind, self.key, self.status = kind, key, status

    def line(self) -> str:
        key = f" key={self.key}" if self.key else ""
        msg = str(self).replace('"', "'").replace("\n", " ")
        return f'ganlab: error kind={self.kind}{key} msg="{msg}"'


# --- value parsers ------------------------------------------------------------

def p_int(s: str) -> int:
    return int(s)


def p_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def p_m(s: str) -> float:
    if s.strip().lower() in ("inf", "infinity"):
        return dyn.INFINITE
    v = int(s)
    if v < 1:
        raise ValueError("batchsize must be a positive integer or inf")
    return v


def p_list(item):
    def parse(s: str):
        parts = [x for x in s.replace(" ", "").split(",") if x]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(x) for x in parts)
    return parse


def p_choice(*options):
    def parse(s: str):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def p_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def p_batch(s: str):
    return None if s.strip().lower() == "full" else p_int(s)


def optional(parse):
    def wrapped(s: str):
        return None if s.strip().lower() == "none" else parse(s)
    return wrapped


p_opt_float = optional(p_float)


def p_str(s: str) -> str:
    if not s:
        raise ValueError("must not be empty")
    return s


def fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    if isinstance(v, tuple):
        return ",".join(fmt_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Opt:
    parse: object
    default: object = REQUIRED
    help: str = ""
    flag_only: bool = False  # boolean switch usable as a bare ``--flag``


COMMON = {
    "out": Opt(p_str, help="output directory"),
    "seed": Opt(p_int, help="master seed"),
    "jobs": Opt(p_int, 1, "parallel worker processes for independent runs"),
}

SIM = {
    "d": Opt(p_int, 1, "parameter dimension"),
    "m": Opt(p_m, help="batchsize (integer or inf)"),
    "dt": Opt(p_float, 1e-3, "time step"),
    "schedule": Opt(p_choice("constant", "vanishing"), "constant", "learning-rate schedule"),
    "c": Opt(p_float, 1.0, "constant rate"),
}

COMMANDS = {
    "simulate": dict(SIM, **{
        "w0": Opt(p_list(p_float), (0.0,), "initial discriminator parameter (scalar broadcasts)"),
        "theta0": Opt(p_list(p_float), (0.0,), "initial generator parameter"),
        "t_end": Opt(p_float, help="final time"),
        "t_start": Opt(p_opt_float, None, "start time (default per schedule)"),
        "record_stride": Opt(p_int, 1, "record every k-th step"),
    }),
    "variance-sweep": dict(SIM, **{
        "m": Opt(p_list(p_m), (1, 2, 4, 8, 16), "batchsizes"),
        "paths": Opt(p_int, 4000, "Monte Carlo paths per batchsize"),
        "t": Opt(p_float, help="evaluation time"),
        "t_start": Opt(p_opt_float, None, "start time (default per schedule)"),
        "component": Opt(p_int, 1, "1-based theta component"),
        "sigma_reading": Opt(p_choice("definition", "literal"), "definition", "vanishing-schedule noise level"),
    }),
    "gen-geometry": {
        "kind": Opt(p_choice("paired", "toy"), "paired", "paired dataset or the two-image toy"),
        "n_base": Opt(p_int, 32, "3-rectangle base layouts (dataset has twice as many images)"),
    },
    "train-gan": {
        "data": Opt(p_str, "none", "dataset directory; 'none' generates one"),
        "dataset": Opt(p_choice("paired", "toy"), "paired", "generated dataset kind"),
        "n_base": Opt(p_int, 32, "base layouts when generating"),
        "data_seed": Opt(p_int, 3, "seed of the generated dataset"),
        "seeds": Opt(optional(p_list(p_int)), None, "training seeds; none trains the single --seed"),
        "regime": Opt(p_choice("vanilla", "fgd", "sc", "pcr", "sc_pcr"), "vanilla", "training regime"),
        "batch_size": Opt(p_batch, 64, "minibatch size or full"),
        "steps": Opt(p_int, 1000, "generator updates"),
        "d_steps_per_g": Opt(p_int, 1, "discriminator updates per generator update"),
        "optimizer": Opt(p_choice("adam", "sgd"), "adam", "optimizer"),
        "lr_d": Opt(p_float, 2e-4, "discriminator learning rate"),
        "lr_g": Opt(p_float, 2e-4, "generator learning rate"),
        "beta1": Opt(p_float, 0.5, "adam beta1"),
        "beta2": Opt(p_float, 0.9, "adam beta2"),
        "weight_decay_d": Opt(p_float, 0.0, "discriminator L2 coefficient"),
        "weight_decay_d_end": Opt(p_opt_float, None, "final L2 coefficient (linear anneal)"),
        "lr_end_factor": Opt(p_float, 1.0, "final fraction of both learning rates (linear anneal)"),
        "sc_mode": Opt(p_choice("count", "dif"), "count", "sample-correction realism test"),
        "sc_target": Opt(optional(p_int), None, "count target (default: dataset target)"),
        "sc_threshold": Opt(p_float, 0.1, "dif threshold"),
        "sc_retries": Opt(p_int, 8, "replacement draws per slot"),
        "pcr_ops": Opt(p_list(p_choice("and", "or", "average")), ("and", "or"), "combination ops"),
        "pcr_pool": Opt(p_choice("siblings", "pairs"), "siblings", "combination source"),
        "prior": Opt(p_choice("discrete", "gaussian"), "discrete", "latent prior"),
        "n_codes": Opt(optional(p_int), None, "discrete prior codes (default: dataset size)"),
        "latent_dim": Opt(p_int, 32, "latent width"),
        "g_hidden": Opt(p_list(p_int), (256, 256), "generator hidden widths"),
        "d_hidden": Opt(p_list(p_int), (256, 256), "discriminator hidden widths"),
        "g_out_scale": Opt(p_float, 0.1, "generator output-layer init scale"),
        "log_stride": Opt(p_int, 100, "steps between log rows"),
        "n_probes": Opt(p_int, 16, "fixed probe latents"),
        "n_eval": Opt(p_int, 1024, "evaluation samples per log"),
        "coverage_factor": Opt(p_int, 0, "mode-collapse check with factor x dataset size samples (0 = off)"),
        "emit_probes": Opt(p_bool, False, "write probe PGMs at each log point", flag_only=True),
    },
    "eval-combos": {
        "run": Opt(p_str, help="train-gan output directory or a checkpoint file"),
        "data": Opt(p_str, "none", "dataset directory; 'none' regenerates it"),
        "dataset": Opt(p_choice("paired", "toy"), "paired", "generated dataset kind"),
        "n_base": Opt(p_int, 32, "base layouts when generating"),
        "data_seed": Opt(p_int, 3, "seed of the generated dataset"),
        "ops": Opt(p_list(p_choice("and", "or", "average")), ("and", "or", "average"), "combination ops"),
        "pool": Opt(p_choice("siblings", "pairs"), "pairs", "pairs used for And/Or"),
        "max_pairs": Opt(p_int, 1000, "combined images per op"),
    },
    "check-theorem3": {
        "run": Opt(p_str, help="train-gan output directory or a checkpoint file"),
        "data": Opt(p_str, "none", "dataset directory; 'none' regenerates it"),
        "dataset": Opt(p_choice("paired", "toy"), "paired", "generated dataset kind"),
        "n_base": Opt(p_int, 32, "base layouts when generating"),
        "data_seed": Opt(p_int, 3, "seed of the generated dataset"),
        "pairs": Opt(p_int, 1000, "sampled training pairs"),
        "lams": Opt(p_list(p_float), (0.25, 0.5, 0.75), "mixing weights"),
    },
    "plot": {
        "csv": Opt(p_str, help="input CSV"),
        "x": Opt(p_str, help="x column"),
        "y": Opt(p_list(p_str), help="y column(s)"),
        "kind": Opt(p_choice("line", "scatter"), "line", "chart kind"),
        "logx": Opt(p_bool, False, "log x axis", flag_only=True),
        "logy": Opt(p_bool, False, "log y axis", flag_only=True),
        "title": Opt(str, "", "chart title"),
        "name": Opt(str, "", "output file stem (default: CSV stem)"),
    },
}

# commands whose outcome never depends on random draws may omit the seed
SEED_OPTIONAL = {"plot", "eval-combos", "check-theorem3"}


def spec_for(command: str) -> dict[str, Opt]:
    spec = dict(COMMON)
    spec.update(COMMANDS[command])
    if command in SEED_OPTIONAL:
        spec["seed"] = Opt(p_int, 0, "seed for pair sampling")
    if command == "simulate":
        spec["seed"] = Opt(optional(p_int), None, "seed (required unless m = inf)")
    return spec


# --- config loading -----------------------------------------------------------

def _norm(key: str) -> str:
    return key.strip().replace("-", "_")


def load_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    p = Path(path)
    if not p.is_file():
        raise CliError("config", f"config file not found: {p}", "config")
    out: dict[str, str] = {}
    for n, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{p}:{n}: expected 'key = value'", None)
        key, value = line.split("=", 1)
        out[_norm(key)] = value.strip()
    return out


def parse_flags(argv: list[str], spec: dict[str, Opt]) -> tuple[dict[str, str], str | None]:
    flags: dict[str, str] = {}
    config = None
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise CliError("usage", f"unexpected argument {tok!r}")
        key = tok[2:]
        value = None
        if "=" in key:
            key, value = key.split("=", 1)
        key = _norm(key)
        if value is None:
            opt = spec.get(key)
            nxt = argv[i + 1] if i + 1 < len(argv) else None
            if opt is not None and opt.flag_only and (nxt is None or nxt.startswith("--")):
                value = "true"
            elif nxt is None:
                raise CliError("usage", f"flag --{key} needs a value", key)
            else:
                value = nxt
                i += 1
        if key == "config":
            config = value
        else:
            flags[key] = value
        i += 1
    return flags, config


def resolve(command: str, file_values: dict[str, str], flags: dict[str, str]) -> dict:
    """Merge file values and flags, parse every key and report all problems at once."""
    spec = spec_for(command)
    merged = dict(file_values)
    merged.update(flags)
    problems: list[tuple[str, str]] = []
    for key in merged:
        if key not in spec:
            problems.append((key, "unknown key"))
    out = {}
    for key, opt in spec.items():
        if key in merged:
            try:
                out[key] = opt.parse(merged[key])
            except (ValueError, TypeError) as exc:
                problems.append((key, f"cannot parse {merged[key]!r}: {exc}"))
        elif opt.default is REQUIRED:
            problems.append((key, "missing required key"))
        else:
            out[key] = opt.default
    if command == "simulate" and "seed" in out and out["seed"] is None \
            and out.get("m", dyn.INFINITE) != dyn.INFINITE:
        problems.append(("seed", "missing required key (stochastic run)"))
    if problems:
        keys = ",".join(k for k, _ in problems)
        detail = "; ".join(f"{k}: {m}" for k, m in problems)
        raise CliError("config", detail, keys)
    if out.get("jobs", 1) < 1:
        raise CliError("config", "jobs: must be >= 1", "jobs")
    return out


def write_resolved(out_dir: Path, command: str, cfg: dict) -> Path:
    path = out_dir / "resolved-config.txt"
    lines = [f"# ganlab {command}"] + [f"{k} = {fmt_value(cfg[k])}" for k in sorted(cfg)]
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path) -> Path:
    """Every file under ``out_dir`` with size and hash; the timestamp lives only here."""
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    path = out_dir / "manifest.csv"
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p != path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["path", "bytes", "sha256", "written_utc"])
        for f in files:
            wr.writerow([f.relative_to(out_dir).as_posix(), f.stat().st_size, sha256(f), stamp])
    return path


# --- datasets -----------------------------------------------------------------

def dataset_dir(path: Path) -> Path:
    """A dataset directory, or a ``gen-geometry`` output containing ``dataset/``."""
    if (path / "dataset" / "manifest.csv").is_file():
        return path / "dataset"
    return path


def get_dataset(cfg: dict) -> geo.GeometryDataset:
    if cfg.get("data", "none") != "none":
        path = dataset_dir(Path(cfg["data"]))
        if not (path / "manifest.csv").is_file():
            raise CliError("config", f"no dataset manifest under {cfg['data']}", "data")
        return geo.load_dataset(path)
    if cfg["dataset"] == "toy":
        return geo.generate_toy(cfg["data_seed"])
    return geo.generate_paired(cfg["n_base"], cfg["data_seed"])


def checkpoints_of(run: str) -> list[Path]:
    p = Path(run)
    if p.is_file():
        return [p]
    found = sorted(p.glob("seed_*/checkpoint.bin"))
    if not found:
        raise CliError("config", f"no checkpoints found under {run}", "run")
    return found


# --- commands -----------------------------------------------------------------

def _broadcast(values: tuple, d: int, key: str) -> np.ndarray:
    if len(values) == 1:
        return np.full(d, values[0])
    if len(values) != d:
        raise CliError("config", f"{key}: expected 1 or {d} values, got {len(values)}", key)
    return np.array(values, dtype=np.float64)


def _schedule(cfg: dict) -> dyn.StepSchedule:
    return dyn.StepSchedule.constant(cfg["c"]) if cfg["schedule"] == "constant" else dyn.StepSchedule.vanishing()


def cmd_simulate(cfg: dict, out: Path) -> str:
    d = cfg["d"]
    init = dyn.ParamState(_broadcast(cfg["w0"], d, "w0"), _broadcast(cfg["theta0"], d, "theta0"))
    sim = dyn.SimConfig(d=d, m=cfg["m"], dt=cfg["dt"], t_end=cfg["t_end"], schedule=_schedule(cfg),
                        seed=cfg["seed"] if cfg["seed"] is not None else 0,
                        record_stride=cfg["record_stride"], t_start=cfg["t_start"])
    traj = dyn.simulate_path(sim, initial=init)
    traj.to_csv(out / "trajectory.csv")
    fin = traj.final
    return "final t={:.17g} w={} theta={}".format(
        traj.times[-1], ",".join(f"{v:.17g}" for v in fin.w), ",".join(f"{v:.17g}" for v in fin.theta))


def cmd_variance_sweep(cfg: dict, out: Path) -> str:
    sched = _schedule(cfg)
    t_start = cfg["t_start"] if cfg["t_start"] is not None else sched.t_start
    base = dyn.SimConfig(d=cfg["d"], m=cfg["m"][0], dt=cfg["dt"], t_end=cfg["t"], schedule=sched,
                         seed=cfg["seed"], record_stride=1, t_start=t_start)
    sweep_cfg = vl.SweepConfig(base, cfg["m"], n_paths=cfg["paths"], component=cfg["component"])
    ests = vl.sweep(sweep_cfg)
    finite = [e for e in ests if e.m != dyn.INFINITE and e.var_hat > 0]
    fit = vl.fit_scaling(finite) if len(finite) >= 3 else None
    vl.write_sweep_csv(out / "sweep.csv", sweep_cfg, ests, fit, sigma_reading=cfg["sigma_reading"])
    return f"slope={fit.slope:.6g} r2={fit.r_squared:.6g}" if fit else "fit skipped (fewer than 3 finite m)"


def cmd_gen_geometry(cfg: dict, out: Path) -> str:
    ds = geo.generate_toy(cfg["seed"]) if cfg["kind"] == "toy" else geo.generate_paired(cfg["n_base"], cfg["seed"])
    geo.save_dataset(ds, out / "dataset")
    return f"images={len(ds)} target_count={ds.target_count}"


def gan_config(cfg: dict, seed: int, target: int) -> GanConfig:
    regime = cfg["regime"]
    sc = None
    if regime in ("sc", "sc_pcr"):
        sc = ScMode(cfg["sc_mode"], cfg["sc_target"] if cfg["sc_target"] is not None else target,
                    cfg["sc_threshold"])
    return GanConfig(
        regime=regime, batch_size=cfg["batch_size"], steps=cfg["steps"], d_steps_per_g=cfg["d_steps_per_g"],
        optimizer=cfg["optimizer"], lr_d=cfg["lr_d"], lr_g=cfg["lr_g"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        weight_decay_d=cfg["weight_decay_d"], weight_decay_d_end=cfg["weight_decay_d_end"],
        lr_end_factor=cfg["lr_end_factor"], sc_mode=sc,
        pcr_ops=cfg["pcr_ops"] if regime in ("pcr", "sc_pcr") else (), pcr_pool=cfg["pcr_pool"],
        latent_dim=cfg["latent_dim"], prior=cfg["prior"], n_codes=cfg["n_codes"], g_hidden=cfg["g_hidden"],
        d_hidden=cfg["d_hidden"], g_out_scale=cfg["g_out_scale"], seed=seed, log_stride=cfg["log_stride"],
        n_probes=cfg["n_probes"], n_eval=cfg["n_eval"], sc_retries=cfg["sc_retries"])


SUMMARY_COLUMNS = ("seed", "final_prop_correct", "final_mean_dif", "final_score_real", "final_score_fake",
                   "final_score_dcom", "probe_flips_second_half", "skipped_d_steps", "coverage")


def _train_one(args):
    cfg, seed, ds, out = args
    run_dir = out / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    gcfg = gan_config(cfg, seed, ds.target_count)
    probe_dir = run_dir / "probes" if cfg["emit_probes"] else None
    try:
        run = train(gcfg, ds, probe_dir=probe_dir)
    except TrainingDiverged as exc:
        exc.log.to_csv(run_dir / "trainlog.csv")
        raise CliError("diverged", f"seed {seed}: {exc}", status=1) from None
    run.log.to_csv(run_dir / "trainlog.csv")
    save_checkpoint(run_dir / "checkpoint.bin", run)
    with open(run_dir / "events.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "event"])
        wr.writerows([s, "d_step_skipped"] for s in run.log.skipped_steps)
    hist = run.log.probe_history()
    half = len(hist) // 2
    coverage = math.nan
    if cfg["coverage_factor"]:
        rep = mode_collapse_report(run.gen, run.prior, ds, cfg["coverage_factor"] * len(ds), seed=seed)
        coverage = rep.coverage
        with open(run_dir / "coverage.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["train_index", "nearest_distance", "normalized"])
            wr.writerows([i, format(d, ".17g"), format(n, ".17g")]
                         for i, (d, n) in enumerate(zip(rep.distances, rep.normalized)))
    f = run.log.final
    return (seed, f["prop_correct"], f["mean_dif"], f["score_real"], f["score_fake"], f["score_dcom"],
            count_flips(hist[half:]) if len(hist) else 0, len(run.log.skipped_steps), coverage)


def cmd_train_gan(cfg: dict, out: Path) -> str:
    ds = get_dataset(cfg)
    seeds = cfg["seeds"] or (cfg["seed"],)
    gan_config(cfg, seeds[0], ds.target_count)  # validate before spending time
    jobs = [(cfg, s, ds, out) for s in seeds]
    if cfg["jobs"] > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg["jobs"], len(seeds))) as pool:
            rows = list(pool.map(_train_one, jobs))
    else:
        rows = [_train_one(j) for j in jobs]
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        for r in rows:
            wr.writerow([r[0], *(format(v, ".17g") for v in r[1:6]), r[6], r[7], format(r[8], ".17g")])
    pcs = [r[1] for r in rows]
    return f"runs={len(rows)} median_final_prop_correct={float(np.median(pcs)):.4f}"


def cmd_eval_combos(cfg: dict, out: Path) -> str:
    ds = get_dataset(cfg)
    real = ds.flat
    pools = {}
    for op in cfg["ops"]:
        if op != "average" and cfg["pool"] == "siblings" and ds.sibling_pairs:
            imgs = sibling_combinations(ds, (CombOp(op),))
        else:
            imgs = build_dcom(ds, op, cfg["max_pairs"], cfg["seed"]).images
        pools[op] = imgs.reshape(len(imgs), -1)
    with open(out / "combos.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["checkpoint", "op", "n_real", "n_dcom", "mean_real", "mean_dcom"])
        for ck_path in checkpoints_of(cfg["run"]):
            disc = load_checkpoint(ck_path).disc
            s_real = float(disc(real).mean())
            for op, imgs in pools.items():
                wr.writerow([ck_path.parent.name or ck_path.name, op, len(real), len(imgs),
                             format(s_real, ".17g"), format(float(disc(imgs).mean()), ".17g")])
    return f"checkpoints={len(checkpoints_of(cfg['run']))} ops={','.join(cfg['ops'])}"


def cmd_check_theorem3(cfg: dict, out: Path) -> str:
    ds = get_dataset(cfg)
    x = ds.flat
    n = len(x)
    if n < 2:
        raise CliError("config", "need at least two training images", "data")
    rng = np.random.default_rng([cfg["seed"], 303])
    i = rng.integers(0, n, cfg["pairs"])
    j = (i + rng.integers(1, n, cfg["pairs"])) % n  # uniform over j != i
    checked = held = 0
    with open(out / "theorem3.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["checkpoint", "i", "j", "lam", "f_x1", "f_x2", "delta", "L", "bound", "f_mix", "holds",
                     "positivity_condition", "mix_positive"])
        for ck_path in checkpoints_of(cfg["run"]):
            disc = dense_as_float64(load_checkpoint(ck_path).disc)
            L = lipschitz_upper_bound(disc)
            for a, b in zip(i, j):
                for lam in cfg["lams"]:
                    r = check_margin(disc, x[a], x[b], lam, L)
                    checked += 1
                    held += r.holds
                    wr.writerow([ck_path.parent.name or ck_path.name, int(a), int(b), repr(lam),
                                 *(format(v, ".17g") for v in (r.f_x1, r.f_x2, r.delta, r.L, r.bound, r.f_mix)),
                                 int(r.holds), int(r.positivity_condition), int(r.mix_positive)])
    return f"checked={checked} holds={held}"


def cmd_plot(cfg: dict, out: Path) -> str:
    src = Path(cfg["csv"])
    if not src.is_file():
        raise CliError("config", f"no such CSV: {src}", "csv")
    name = cfg["name"] or src.stem
    try:
        path = plot_csv(src, out / f"{name}.svg", cfg["x"], cfg["y"], kind=cfg["kind"], logx=cfg["logx"],
                        logy=cfg["logy"], title=cfg["title"])
    except KeyError as exc:
        raise CliError("config", str(exc).strip("'\""), "y") from None
    return f"wrote {path.name}"


HANDLERS = {
    "simulate": cmd_simulate,
    "variance-sweep": cmd_variance_sweep,
    "gen-geometry": cmd_gen_geometry,
    "train-gan": cmd_train_gan,
    "eval-combos": cmd_eval_combos,
    "check-theorem3": cmd_check_theorem3,
    "plot": cmd_plot,
}


def usage() -> str:
    lines = ["usage: ganlab <command> [--config FILE] [--key value ...]", "", "commands:"]
    lines += [f"  {c}" for c in HANDLERS]
    lines += ["", "'ganlab <command> --help' lists the keys of a command."]
    return "\n".join(lines)


def command_help(command: str) -> str:
    rows = [f"usage: ganlab {command} [--config FILE] [--key value ...]", ""]
    for key, opt in spec_for(command).items():
        default = "required" if opt.default is REQUIRED else f"default {fmt_value(opt.default)}"
        rows.append(f"  --{key.replace('_', '-'):<22} {opt.help} ({default})")
    return "\n".join(rows)


def run_command(argv: list[str]) -> int:
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(usage(), file=sys.stdout if argv else sys.stderr)
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    try:
        if command not in HANDLERS:
            print(usage(), file=sys.stderr)
            raise CliError("usage", f"unknown command {command!r}", "command")
        if "--help" in rest or "-h" in rest:
            print(command_help(command))
            return 0
        spec = spec_for(command)
        flags, config_path = parse_flags(rest, spec)
        file_values = load_config(config_path) if config_path else {}
        cfg = resolve(command, file_values, flags)
        out = Path(cfg["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise CliError("io", f"output directory not writable: {exc}", "out") from None
        write_resolved(out, command, cfg)
        summary = HANDLERS[command](cfg, out)
        write_manifest(out)
        print(f"ganlab {command}: ok {summary}")
        return 0
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.status
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(CliError("runtime", f"{type(exc).__name__}: {exc}", status=1).line(), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
