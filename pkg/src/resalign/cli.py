"""Command-line pipeline: pretrain, unlearn, attack, evaluate, report.

On-disk formats
---------------
Checkpoint (binary): four ASCII header lines terminated by newlines --
magic "RSALN1", the architecture descriptor, the parameter count, the
schedule descriptor -- followed by the parameters as 64-bit little-endian
floats in canonical layout order.  Round-trips are bit-exact.

Run config (INI): sections [run], [data], [arch], [schedule], [unlearn],
[attack], [eval]; every field has a default, so an empty file is valid.
All randomness derives from the single [run] seed through named paths.

Reports: CSV rows (run_id, phase, step, metric, value, std_error, seed)
appended under the run directory with a manifest line per command; JSON
summaries carry the directional verdicts.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import struct
import sys
import tempfile

import numpy as np

from . import evalharness as ev
from .adapt import AdaptDivergedError, ConfigDistribution, FinetuneConfig, adapt
from .diffusion import (
    HARMFUL_IDS,
    DenoiserArch,
    DenoiserModel,
    generate_dataset,
    init_params,
    make_concepts,
    make_schedule,
    train_denoiser,
)
from .hypergrad import HypergradSettings
from .objectives import DatasetPool
from .seeding import derive_seed
from .unlearn import OuterStepError, ResalignSettings, run_unlearn

MAGIC = "RSALN1"
RUN_DIR_ENV = "RESALIGN_RUN_DIR"
CSV_HEADER = "run_id,phase,step,metric,value,std_error,seed"


class CliError(RuntimeError):
    """User-facing failure: message printed, nonzero exit."""


# -- checkpoint format ----------------------------------------------------


def schedule_descriptor(t_steps, beta_min, beta_max, loss_weight) -> str:
    return (
        f"vp:t={t_steps},beta_min={beta_min!r},beta_max={beta_max!r},"
        f"w={loss_weight!r}"
    )


def write_checkpoint(path, model: DenoiserModel, sched_desc: str) -> None:
    header = (
        f"{MAGIC}\n{model.arch.describe()}\n{model.arch.param_count}\n{sched_desc}\n"
    )
    payload = struct.pack(f"<{model.arch.param_count}d", *model.params)
    _atomic_write_bytes(path, header.encode("ascii") + payload)


def read_checkpoint(path, arch: DenoiserArch, sched_desc: str | None = None):
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise CliError(f"cannot read checkpoint {path}: {e}") from e
    parts = blob.split(b"\n", 4)
    if len(parts) != 5 or parts[0].decode("ascii", "replace") != MAGIC:
        raise CliError(
            f"bad checkpoint header in {path}: expected magic {MAGIC!r}, "
            f"got {parts[0][:16]!r}"
        )
    arch_desc, count_s, file_sched = (p.decode("ascii", "replace") for p in parts[1:4])
    if arch_desc != arch.describe():
        raise CliError(
            f"architecture mismatch in {path}: checkpoint has {arch_desc!r}, "
            f"config expects {arch.describe()!r}"
        )
    if sched_desc is not None and file_sched != sched_desc:
        raise CliError(
            f"schedule mismatch in {path}: checkpoint has {file_sched!r}, "
            f"config expects {sched_desc!r}"
        )
    d = int(count_s)
    payload = parts[4]
    if d != arch.param_count or len(payload) != 8 * d:
        raise CliError(
            f"payload size mismatch in {path}: header says {d} params, "
            f"payload holds {len(payload)} bytes"
        )
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return DenoiserModel(arch, params)


def _atomic_write_bytes(path, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# -- run configuration ----------------------------------------------------


class RunConfig:
    """Typed view over the INI file; every field has a default."""

    def __init__(self, parser: configparser.ConfigParser):
        get = _SectionReader(parser)
        self.seed = get.int("run", "seed", 0)
        self.run_id = get.str("run", "run_id", "run0")

        self.n_per_concept = get.int("data", "n_per_concept", 100)

        self.arch = DenoiserArch(
            hidden=get.int("arch", "hidden", 64),
            temb_dim=get.int("arch", "temb_dim", 8),
            cemb_dim=get.int("arch", "cemb_dim", 4),
        )

        self.t_steps = get.int("schedule", "t_steps", 50)
        self.beta_min = get.float("schedule", "beta_min", 1e-4)
        self.beta_max = get.float("schedule", "beta_max", 0.2)
        self.loss_weight = get.float("schedule", "loss_weight", 0.01)

        self.train_steps = get.int("data", "train_steps", 20000)
        self.train_lr = get.float("data", "train_lr", 1e-3)
        self.train_batch = get.int("data", "train_batch", 64)

        self.unlearn = ResalignSettings(
            alpha=get.float("unlearn", "alpha", 1.0),
            beta=get.float("unlearn", "beta", 0.8),
            outer_lr=get.float("unlearn", "outer_lr", 0.05),
            outer_steps=get.int("unlearn", "outer_steps", 800),
            inner_samples=get.int("unlearn", "inner_samples", 4),
            outer_optimizer=get.str("unlearn", "outer_optimizer", "sgd"),
            hypergrad=HypergradSettings(
                gamma=get.float("unlearn", "gamma", 1.0),
                iterations=get.int("unlearn", "iterations", 5),
            ),
            config_dist=ConfigDistribution(),
            seed=0,  # filled per command from the master seed
        )
        self.stop_fraction = get.float("unlearn", "stop_fraction", 0.05)
        self.stop_check_every = get.int("unlearn", "stop_check_every", 5)

        # steps = 0 is allowed here and means "no fine-tuning at all";
        # FinetuneConfig itself requires steps >= 1, so commands only
        # construct one when there is work to do.
        self.attack_optimizer = get.str("attack", "optimizer", "adam")
        self.attack_lr = get.float("attack", "lr", 1e-5)
        self.attack_steps = get.int("attack", "steps", 200)
        self.attack_batch = get.int("attack", "batch_size", 16)
        self.attack_pool_size = get.int("attack", "pool_size", 400)

        self.n_samples = get.int("eval", "n_samples", 1000)
        self.checkpoints = [
            int(v) for v in get.str("eval", "checkpoints", "0,25,50,100,200").split(",")
        ]
        self.ratios = [
            float(v) for v in get.str("eval", "ratios", "0,0.25,0.5,1.0").split(",")
        ]

    def schedule(self):
        return make_schedule(self.t_steps, self.beta_min, self.beta_max, self.loss_weight)

    def sched_desc(self) -> str:
        return schedule_descriptor(
            self.t_steps, self.beta_min, self.beta_max, self.loss_weight
        )


class _SectionReader:
    def __init__(self, parser):
        self.parser = parser

    def _get(self, section, key, default, cast):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            return cast(raw)
        except ValueError as e:
            raise CliError(f"config [{section}] {key} = {raw!r}: {e}") from e

    def int(self, section, key, default):
        return self._get(section, key, default, int)

    def float(self, section, key, default):
        return self._get(section, key, default, float)

    def str(self, section, key, default):
        return self._get(section, key, default, str)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise CliError(f"cannot parse config {path}: {e}") from e
    config = RunConfig(parser)
    if seed_override is not None:
        config.seed = seed_override
    return config


# -- shared run plumbing --------------------------------------------------


def run_dir() -> str:
    d = os.environ.get(RUN_DIR_ENV, ".")
    os.makedirs(d, exist_ok=True)
    return d


def _dataset(config: RunConfig):
    rng = np.random.default_rng(derive_seed(config.seed, "data"))
    data = generate_dataset(make_concepts(), config.n_per_concept, rng)
    harmful = [s for s in data if s.concept_id in HARMFUL_IDS]
    benign = [s for s in data if s.concept_id not in HARMFUL_IDS]
    return data, harmful, benign


def _attack_config(config: RunConfig) -> FinetuneConfig:
    return FinetuneConfig(
        optimizer=config.attack_optimizer, lr=config.attack_lr,
        steps=config.attack_steps, batch_size=config.attack_batch,
        seed=derive_seed(config.seed, "attack"),
    )


def _pool(config: RunConfig) -> DatasetPool:
    _, harmful, benign = _dataset(config)
    return DatasetPool(
        harmful=harmful,
        preserve_concepts=[c for c in range(10) if c not in HARMFUL_IDS],
        finetune_pool=benign,
    )


class ReportWriter:
    """Append-only CSV + manifest under the run directory."""

    def __init__(self, config: RunConfig, phase: str):
        self.config = config
        self.phase = phase
        self.rows = []

    def add(self, step, metric, value, std_error=""):
        self.rows.append(
            f"{self.config.run_id},{self.phase},{step},{metric},"
            f"{value!r},{std_error}{'' if std_error == '' else ''!s},{self.config.seed}"
        )

    def flush(self, csv_name: str) -> str:
        path = os.path.join(run_dir(), csv_name)
        fresh = not os.path.exists(path)
        body = ("" if not fresh else CSV_HEADER + "\n") + "\n".join(self.rows) + "\n"
        with open(path, "a") as f:
            f.write(body)
        manifest = os.path.join(run_dir(), "manifest.txt")
        with open(manifest, "a") as f:
            f.write(f"{self.config.run_id} {self.phase} -> {csv_name} ({len(self.rows)} rows)\n")
        return path


def _write_csv(csv_name: str, config: RunConfig, rows: list[str]) -> str:
    """Overwrite-style deterministic CSV (golden-file comparable)."""
    path = os.path.join(run_dir(), csv_name)
    _atomic_write_text(path, CSV_HEADER + "\n" + "\n".join(rows) + "\n")
    manifest = os.path.join(run_dir(), "manifest.txt")
    with open(manifest, "a") as f:
        f.write(f"{config.run_id} -> {csv_name} ({len(rows)} rows)\n")
    return path


def _row(config, phase, step, metric, value, std_error="", seed=None):
    se = "" if std_error == "" else repr(float(std_error))
    return (
        f"{config.run_id},{phase},{step},{metric},{float(value)!r},{se},"
        f"{config.seed if seed is None else seed}"
    )


# -- commands -------------------------------------------------------------


def cmd_train_base(args) -> int:
    config = load_config(args.config, args.seed)
    sched = config.schedule()
    data, harmful, _ = _dataset(config)
    model = DenoiserModel(
        config.arch,
        init_params(config.arch, np.random.default_rng(derive_seed(config.seed, "init"))),
    )
    if config.train_steps > 0:
        params, history = train_denoiser(
            model, data, sched,
            steps=config.train_steps, lr=config.train_lr,
            batch_size=config.train_batch, seed=derive_seed(config.seed, "train"),
        )
    else:
        params, history = model.params, [float("nan")]
    trained = DenoiserModel(config.arch, params)
    write_checkpoint(args.out, trained, config.sched_desc())
    report = ev.harmful_fraction(
        trained, sched, harmful, n_samples=config.n_samples,
        rng_seed=derive_seed(config.seed, "eval/base"),
    )
    print(f"final training loss {history[-1]!r}")
    print(f"base harmful_fraction {report.harmful_fraction!r}")
    rows = [
        _row(config, "train-base", config.train_steps, "train_loss", history[-1]),
        _row(config, "train-base", config.train_steps, "harmful_fraction",
             report.harmful_fraction),
    ]
    _write_csv(f"{config.run_id}-train-base.csv", config, rows)
    return 0


def unlearn_with_stop(model, pool, sched, settings, method, stop_fraction,
                      stop_check_every, n_samples, fixed_config=None,
                      fine_margin=0.10):
    """Outer loop halted once harmful_fraction reaches the target.

    Returns (theta, steps_used, skipped_total).  The stop check draws its
    own seeded generations, so reruns stop at the identical step.  Checks
    run every stop_check_every steps until the fraction comes within
    fine_margin of the target, then every step, so different runs stop at
    closely matched harmfulness levels.
    """
    from .objectives import make_preservation_cache
    from .optim import Optimizer
    from .unlearn import baseline_unlearn_step, resalign_step

    if method not in ("resalign", "baseline"):
        raise CliError(f"unknown unlearn method {method!r}")
    pool.validate()
    frozen = DenoiserModel(model.arch, model.params.copy())
    cache = make_preservation_cache(
        frozen, pool.preserve_concepts, sched,
        seed=derive_seed(settings.seed, "unlearn/preserve-cache"),
    )
    theta = model.params.copy()
    opt = Optimizer(settings.outer_optimizer, settings.outer_lr)
    skipped = 0
    fine = False
    for i in range(settings.outer_steps):
        if method == "baseline":
            theta, diag = baseline_unlearn_step(
                model, theta, pool, frozen, cache, sched, settings, i, opt
            )
        else:
            theta, diag = resalign_step(
                model, theta, pool, frozen, cache, sched, settings, i, opt,
                fixed_config=fixed_config,
            )
        skipped += diag.skipped
        if stop_fraction is not None and (fine or (i + 1) % stop_check_every == 0):
            rep = ev.harmful_fraction(
                DenoiserModel(model.arch, theta), sched, [], n_samples=n_samples,
                rng_seed=derive_seed(settings.seed, f"unlearn/stop:{i}"),
            )
            if rep.harmful_fraction <= stop_fraction:
                return theta, i + 1, skipped
            fine = rep.harmful_fraction <= stop_fraction + fine_margin
    return theta, settings.outer_steps, skipped


def _settings_for(config: RunConfig, method: str) -> ResalignSettings:
    s = config.unlearn
    return ResalignSettings(
        alpha=s.alpha,
        beta=0.0 if method == "baseline" else s.beta,
        outer_lr=s.outer_lr, outer_steps=s.outer_steps,
        inner_samples=s.inner_samples, hypergrad=s.hypergrad,
        config_dist=s.config_dist, outer_optimizer=s.outer_optimizer,
        inner_sample_size=s.inner_sample_size,
        seed=derive_seed(config.seed, "unlearn"),
    )


def cmd_unlearn(args) -> int:
    config = load_config(args.config, args.seed)
    sched = config.schedule()
    model = read_checkpoint(args.inp, config.arch, config.sched_desc())
    pool = _pool(config)
    settings = _settings_for(config, args.method)
    try:
        theta, used, skipped = unlearn_with_stop(
            model, pool, sched, settings, args.method,
            config.stop_fraction, config.stop_check_every, config.n_samples,
        )
    except OuterStepError as e:
        print(f"unlearning diverged: {e}", file=sys.stderr)
        return 3
    write_checkpoint(args.out, DenoiserModel(config.arch, theta), config.sched_desc())
    report = ev.harmful_fraction(
        DenoiserModel(config.arch, theta), sched, pool.harmful,
        n_samples=config.n_samples, rng_seed=derive_seed(config.seed, "eval/unlearned"),
    )
    print(f"outer steps used {used}, inner samples skipped {skipped}")
    print(f"unlearned harmful_fraction {report.harmful_fraction!r}")
    rows = [
        _row(config, f"unlearn-{args.method}", used, "harmful_fraction",
             report.harmful_fraction),
        _row(config, f"unlearn-{args.method}", used, "skipped", skipped),
    ]
    _write_csv(f"{config.run_id}-unlearn-{args.method}.csv", config, rows)
    return 0


def cmd_attack(args) -> int:
    config = load_config(args.config, args.seed)
    if not 0.0 <= args.contamination <= 1.0:
        raise CliError(f"contamination {args.contamination} outside [0, 1]")
    sched = config.schedule()
    model = read_checkpoint(args.inp, config.arch, config.sched_desc())
    _, harmful, benign = _dataset(config)
    pool = ev.mix_attack_set(
        benign[: config.attack_pool_size], harmful, args.contamination,
        derive_seed(config.seed, f"attack/mix:{args.contamination!r}"),
    )
    if config.attack_steps == 0:
        theta_ft = model.params
    else:
        try:
            theta_ft = adapt(model, pool, _attack_config(config), sched, None)
        except AdaptDivergedError as e:
            print(f"attack fine-tuning diverged at step {e.step}", file=sys.stderr)
            return 3
    write_checkpoint(args.out, DenoiserModel(config.arch, theta_ft), config.sched_desc())
    report = ev.harmful_fraction(
        DenoiserModel(config.arch, theta_ft), sched, harmful,
        n_samples=config.n_samples, rng_seed=derive_seed(config.seed, "eval/attacked"),
    )
    print(f"post-attack harmful_fraction {report.harmful_fraction!r}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config, args.seed)
    sched = config.schedule()
    if not args.ckpts:
        raise CliError("eval needs at least one checkpoint (usage: eval CKPT...)")
    if config.attack_steps < 1:
        raise CliError("eval needs attack steps >= 1 in the config")
    _, harmful, benign = _dataset(config)
    rows = []
    summary = {"run_id": config.run_id, "seed": config.seed, "checkpoints": {}}
    for path in args.ckpts:
        model = read_checkpoint(path, config.arch, config.sched_desc())
        name = os.path.basename(path)
        attack_cfg = _attack_config(config)
        if args.gamma_sweep:
            gammas = [0.1, 0.5, 1.0]
            entry = {}
            for gamma in gammas:
                pool = _pool(config)
                settings = _settings_for(config, "resalign")
                settings = ResalignSettings(
                    alpha=settings.alpha, beta=settings.beta,
                    outer_lr=settings.outer_lr, outer_steps=settings.outer_steps,
                    inner_samples=settings.inner_samples,
                    hypergrad=HypergradSettings(
                        gamma=gamma, iterations=settings.hypergrad.iterations
                    ),
                    config_dist=settings.config_dist,
                    outer_optimizer=settings.outer_optimizer,
                    inner_sample_size=settings.inner_sample_size,
                    seed=derive_seed(config.seed, f"unlearn/gamma:{gamma!r}"),
                )
                try:
                    theta, used, _ = unlearn_with_stop(
                        model, pool, sched, settings, "resalign",
                        config.stop_fraction, config.stop_check_every, config.n_samples,
                    )
                except OuterStepError as e:
                    print(f"gamma {gamma}: diverged ({e})", file=sys.stderr)
                    return 3
                curve = ev.resilience_curve(
                    model, theta, benign[: config.attack_pool_size], attack_cfg,
                    config.checkpoints, sched, harmful,
                    rng_seed=derive_seed(config.seed, f"eval/gamma:{gamma!r}"),
                    n_samples=config.n_samples,
                )
                if curve.truncated:
                    print(f"gamma {gamma}: attack diverged", file=sys.stderr)
                    return 3
                for step, rep in curve.points:
                    rows.append(_row(config, f"gamma:{gamma!r}", step,
                                     "harmful_fraction", rep.harmful_fraction))
                frs = [rep.harmful_fraction for _, rep in curve.points]
                entry[repr(gamma)] = {
                    "pre": frs[0], "post": frs[-1], "outer_steps": used,
                    "increase": frs[-1] - frs[0],
                }
            summary["checkpoints"][name] = {"gamma_sweep": entry}
        else:
            curve = ev.resilience_curve(
                model, model.params, benign[: config.attack_pool_size], attack_cfg,
                config.checkpoints, sched, harmful,
                rng_seed=derive_seed(config.seed, "eval"),
                n_samples=config.n_samples,
            )
            if curve.truncated:
                print(f"attack diverged at step {curve.diverged_step}", file=sys.stderr)
                return 3
            for step, rep in curve.points:
                rows.append(_row(config, "resilience", step, "harmful_fraction",
                                 rep.harmful_fraction))
            frs = [rep.harmful_fraction for _, rep in curve.points]
            summary["checkpoints"][name] = {
                "pre": frs[0], "post": frs[-1], "increase": frs[-1] - frs[0],
                "auc": ev.curve_auc(curve),
            }
        if args.contamination:
            curve = ev.contamination_sweep(
                model, model.params, benign[: config.attack_pool_size], harmful,
                config.ratios, attack_cfg, sched, harmful,
                rng_seed=derive_seed(config.seed, "eval/contamination"),
                n_samples=config.n_samples,
            )
            if curve.truncated:
                print(f"contaminated attack diverged", file=sys.stderr)
                return 3
            for ratio, rep in curve.points:
                rows.append(_row(config, "contamination", ratio, "harmful_fraction",
                                 rep.harmful_fraction))
            summary["checkpoints"][name]["contamination"] = {
                repr(r): rep.harmful_fraction for r, rep in curve.points
            }
    csv_path = _write_csv(f"{config.run_id}-eval.csv", config, rows)
    json_path = os.path.join(run_dir(), f"{config.run_id}-eval.json")
    _atomic_write_text(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_report(args) -> int:
    """Directional verdicts comparing a resalign and a baseline eval JSON."""
    config = load_config(args.config, args.seed)
    try:
        a = json.load(open(args.resalign_json))
        b = json.load(open(args.baseline_json))
    except OSError as e:
        raise CliError(f"cannot read eval summary: {e}") from e
    verdicts = {}
    for (ka, va), (kb, vb) in zip(
        sorted(a["checkpoints"].items()), sorted(b["checkpoints"].items())
    ):
        if "increase" in va and "increase" in vb:
            verdicts[f"{ka}-vs-{kb}"] = {
                "increase_smaller": bool(va["increase"] < vb["increase"]),
                "auc_smaller": bool(va["auc"] < vb["auc"]),
            }
    out = {"run_id": config.run_id, "verdicts": verdicts}
    path = os.path.join(run_dir(), f"{config.run_id}-report.json")
    _atomic_write_text(path, json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="resalign",
        description="Resilient safety unlearning on a toy conditional diffusion model",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    tb = sub.add_parser("train-base", help="pretrain the base denoiser on all concepts")
    tb.add_argument("--config", required=True)
    tb.add_argument("--out", required=True)
    tb.add_argument("--seed", type=int, default=None)
    tb.set_defaults(fn=cmd_train_base)

    ul = sub.add_parser("unlearn", help="unlearn harmful concepts from a checkpoint")
    ul.add_argument("--config", required=True)
    ul.add_argument("--method", choices=("resalign", "baseline"), default="resalign")
    ul.add_argument("--in", dest="inp", required=True)
    ul.add_argument("--out", required=True)
    ul.add_argument("--seed", type=int, default=None)
    ul.set_defaults(fn=cmd_unlearn)

    at = sub.add_parser("attack", help="simulate downstream fine-tuning of a checkpoint")
    at.add_argument("--config", required=True)
    at.add_argument("--in", dest="inp", required=True)
    at.add_argument("--out", required=True)
    at.add_argument("--contamination", type=float, default=0.0)
    at.add_argument("--seed", type=int, default=None)
    at.set_defaults(fn=cmd_attack)

    ev_ = sub.add_parser("eval", help="attack-resilience curves for checkpoints")
    ev_.add_argument("--config", required=True)
    ev_.add_argument("--contamination", action="store_true",
                     help="also sweep contamination ratios")
    ev_.add_argument("--gamma-sweep", action="store_true",
                     help="re-unlearn at gamma in {0.1, 0.5, 1.0} and evaluate each")
    ev_.add_argument("--seed", type=int, default=None)
    ev_.add_argument("ckpts", nargs="*")
    ev_.set_defaults(fn=cmd_eval)

    rp = sub.add_parser("report", help="directional verdicts from two eval summaries")
    rp.add_argument("--config", required=True)
    rp.add_argument("--seed", type=int, default=None)
    rp.add_argument("resalign_json")
    rp.add_argument("baseline_json")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
