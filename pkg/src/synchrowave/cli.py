"""Command-line entry point: generate | train | sweep | report | gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage/config, 3 I/O, 4 numeric,
5 partial sweep failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError, CliConfig, load_config, parse_config, resolve_seed, with_section
from .experiment import (
    SweepResult,
    read_cells_csv,
    render_report,
    run_sweep,
    summary_markdown,
)
from .nn import LearnableLineParams, NumericError
from .simulate import DisturbanceConfig, LineParams, generate_dataset
from .training import (
    DEFAULT_LAMBDA_GRID,
    CompositeObjective,
    EventBatch,
    Normalization,
    save_checkpoint,
    select_lambda,
    train_data_only,
    train_piml_known,
    train_piml_unknown,
    training_log_csv,
    trajectory_csv,
)
from .waveform import Dataset, SamplingConfig, StructureError, load_dataset, save_dataset, split_events

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}", EXIT_IO) from None


def _prepare_output_dir(path: Path, force: bool) -> None:
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise CliError(f"output {path} exists; pass --force to overwrite", EXIT_USAGE)
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {path}: {exc.strerror}", EXIT_IO) from None


def _load_dataset(path: str) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset {p} not found", EXIT_USAGE)
    try:
        return load_dataset(p).to_differential()
    except (OSError, json.JSONDecodeError, StructureError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read dataset {p}: {exc}", EXIT_USAGE) from None


# ---------------------------------------------------------------- generate


def cmd_generate(args, cfg: CliConfig) -> int:
    dist = cfg.disturbance
    seed = resolve_seed(args.seed, cfg, "disturbance.seed", dist.seed)
    changes = {"seed": seed}
    if args.events is not None:
        changes["event_count"] = args.events
    if args.amplitude is not None:
        changes["amplitude_range"] = tuple(args.amplitude)
    if args.noise is not None:
        changes["noise_std"] = args.noise
    try:
        dist = replace(dist, **changes)
        sampling = cfg.sampling
        if args.rate is not None:
            explicit_n = "sampling.samples_per_event" in cfg.explicit
            cycles = sampling.samples_per_event / sampling.samples_per_cycle
            n = sampling.samples_per_event if explicit_n else int(round(cycles * args.rate))
            sampling = SamplingConfig(args.rate, sampling.grid_frequency, n)
    except ValueError as exc:
        raise CliError(f"invalid option: {exc}", EXIT_USAGE) from None
    cfg = with_section(cfg, disturbance=dist, sampling=sampling)
    out = Path(args.out or cfg.dataset_path)
    if out.exists() and not args.force:
        raise CliError(f"dataset {out} exists; pass --force to overwrite", EXIT_USAGE)
    ds = generate_dataset(dist, cfg.ibr, cfg.line, sampling)
    try:
        save_dataset(ds, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}", EXIT_IO) from None
    meta = {"effective_config": cfg.to_dict(), "seed": seed, "event_count": dist.event_count,
            "samples_per_cycle": sampling.samples_per_cycle}
    _write_text(out.with_name(out.name + ".meta.json"), json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out}: p={dist.event_count} events, N={sampling.samples_per_cycle} samples/cycle, "
          f"n={sampling.samples_per_event} samples/event, seed={seed}")
    return EXIT_OK


# ------------------------------------------------------------------- train

_MODE_FLAGS = {"data": "data_only", "phys": "phys_known", "phys-learn": "phys_learnable"}


def cmd_train(args, cfg: CliConfig) -> int:
    ds = _load_dataset(args.dataset or cfg.dataset_path)
    seed = resolve_seed(args.seed, cfg, "train.seed", cfg.train.seed)
    tcfg = replace(cfg.train, seed=seed)
    if args.max_iterations is not None:
        try:
            tcfg = replace(tcfg, max_iterations=args.max_iterations,
                           patience=min(tcfg.patience, args.max_iterations))
        except ValueError as exc:
            raise CliError(f"invalid option: {exc}", EXIT_USAGE) from None
    events = ds.by_id()
    sweep = cfg.sweep
    try:
        split = split_events(len(events), args.train_count, sweep.val_count, sweep.test_count, seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    mode = _MODE_FLAGS[args.mode]
    line = cfg.line
    lam = args.lam
    try:
        if mode == "data_only":
            trained = train_data_only(events, split, tcfg)
        elif lam is None:
            grid = sweep.lambda_grid or DEFAULT_LAMBDA_GRID
            sel = select_lambda(events, split, grid, mode, tcfg, line=line)
            trained = sel.best
        elif mode == "phys_known":
            trained = train_piml_known(events, split, line, lam, tcfg)
        else:
            trained = train_piml_unknown(events, split, lam, tcfg)
    except NumericError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None

    out = Path(args.out or Path(cfg.output_dir) / f"train_{args.mode}_{args.train_count}_{seed}")
    _prepare_output_dir(out, args.force)
    try:
        save_checkpoint(trained, out / "checkpoint.json")
    except OSError as exc:
        raise CliError(f"cannot write checkpoint: {exc.strerror}", EXIT_IO) from None
    _write_text(out / "training_log.csv", training_log_csv(trained))
    if mode == "phys_learnable":
        _write_text(out / "trajectory.csv", trajectory_csv(trained))
    _write_text(out / "effective_config.json", json.dumps(with_section(cfg, train=tcfg).to_dict(), indent=2) + "\n")
    test_mse = trained.mse(events, split.test_ids)
    print(f"mode={mode} lambda={trained.lam:g} train_events={args.train_count} seed={seed}")
    print(f"final train loss: {trained.final_train_loss:.6g}")
    print(f"validation MSE:   {trained.best_val_mse:.6g}")
    print(f"test MSE:         {test_mse:.6g}")
    if mode == "phys_learnable":
        print(f"learned R: {trained.line_params.R:.6g} ohm")
        print(f"learned L: {trained.line_params.L:.6g} H")
    print(f"wrote {out}")
    return EXIT_OK


# ------------------------------------------------------------------- sweep


def _sweep_datasets(cfg: CliConfig, generate: bool) -> dict | None:
    rates = cfg.sweep.samples_per_cycle
    if generate:
        return None
    path = cfg.dataset_path
    out = {}
    if "{rate}" in path:
        for rate in rates:
            out[rate] = _load_dataset(path.format(rate=rate))
    else:
        ds = _load_dataset(path)
        out[ds.sampling.samples_per_cycle] = ds
    for rate, ds in out.items():
        if ds.sampling.samples_per_cycle != rate:
            raise CliError(f"dataset for rate {rate} has N={ds.sampling.samples_per_cycle}", EXIT_USAGE)
        if len(ds.events) != cfg.sweep.event_count:
            raise CliError(
                f"dataset for rate {rate} has {len(ds.events)} events, sweep expects {cfg.sweep.event_count}",
                EXIT_USAGE,
            )
    missing = [r for r in rates if r not in out]
    if missing:
        raise CliError(f"no dataset for samples_per_cycle {missing}; use --generate or a '{{rate}}' path", EXIT_USAGE)
    return out


def cmd_sweep(args, cfg: CliConfig) -> int:
    out = Path(args.out or cfg.output_dir)
    datasets = _sweep_datasets(cfg, args.generate)
    _prepare_output_dir(out, args.force)
    result = run_sweep(cfg.sweep, datasets, jobs=args.jobs)
    try:
        render_report(result, out)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc.strerror}", EXIT_IO) from None
    print(summary_markdown(result, cfg.sweep.regimes), end="")
    if result.failed():
        print(f"error: {len(result.failed())} sweep cell(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args, cfg: CliConfig) -> int:
    src = Path(args.results)
    try:
        cells = read_cells_csv((src / "cells.csv").read_text(encoding="utf-8"))
        saved = json.loads((src / "effective_config.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read results in {src}: {exc.strerror}", EXIT_IO) from None
    sweep_doc = {k: v for k, v in saved.items() if k not in ("train", "disturbance", "ibr", "line")}
    eff = parse_config({k: saved[k] for k in ("train", "disturbance", "ibr", "line")} | {"sweep": sweep_doc})
    trajectories = {}
    for rate in eff.sweep.samples_per_cycle:
        for count in eff.sweep.train_counts:
            p = src / "unknown_RL" / str(rate) / f"trajectory_{count}.csv"
            if not p.exists():
                continue
            for rec in csv.DictReader(p.read_text(encoding="utf-8").splitlines()):
                key = (rate, count, int(rec["seed"]))
                trajectories.setdefault(key, []).append(
                    (int(rec["iteration"]), float(rec["R_ohm"]), float(rec["L_henry"]))
                )
    result = SweepResult(eff.sweep, cells, trajectories)
    regimes = eff.sweep.regimes if args.regime is None else tuple(args.regime)
    out = Path(args.out) if args.out else src
    if out != src:
        _prepare_output_dir(out, args.force)
    try:
        render_report(result, out, regimes)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    print(summary_markdown(result, regimes), end="")
    return EXIT_OK


# --------------------------------------------------------------- gradcheck


def gradcheck_objectives(seed: int, lam: float, samples_per_cycle: int = 8, n_events: int = 2):
    """Random network and small synthetic batch.

    Returns ``(name, objective, point)`` for the pure data loss and for the
    composite loss with fixed and with learnable line parameters.
    """
    sampling = SamplingConfig(samples_per_cycle, 60.0, 2 * samples_per_cycle)
    ds = generate_dataset(DisturbanceConfig(event_count=n_events, seed=seed), sampling=sampling)
    events = ds.by_id()
    ids = sorted(events)
    norm = Normalization.fit(list(events.values()))
    batch = EventBatch(events, ids, norm)
    rng = np.random.default_rng([seed, 1])
    model = nn.init_model(seed)
    # Nonzero biases so every parameter receives a generic gradient.
    for _, b in model.layers():
        b[...] = rng.normal(0.0, 0.3, size=b.shape)
    fixed = CompositeObjective(model, batch, lam, LineParams(float(rng.uniform(1, 20)), float(rng.uniform(1e-4, 2e-3))))
    learn_line = LearnableLineParams(float(rng.normal(1.0, 1.0)), float(rng.normal(0.0, 1.0)))
    learnable = CompositeObjective(model, batch, lam, learn_line)
    data = CompositeObjective(model, batch, 0.0, None)
    return [(name, obj, obj.initial_vector()) for name, obj in
            (("data", data), ("fixed", fixed), ("learnable", learnable))]


def _corrupted(grad):
    # Negative control for the checker: perturb one gradient entry.
    def wrapped(v):
        g = grad(v)
        g[0] = g[0] * 1.01 + 1e-3
        return g

    return wrapped


def run_gradcheck(seed: int, lam: float, epsilon: float = 1e-5, sabotage: bool = False) -> dict:
    errors = {}
    for name, obj, x in gradcheck_objectives(seed, lam):
        grad = _corrupted(obj.gradient) if sabotage else obj.gradient
        errors[name] = nn.grad_check(obj.values, grad, x, epsilon, batched=True)
    return errors


def cmd_gradcheck(args, cfg: CliConfig) -> int:
    seed = resolve_seed(args.seed, cfg, "train.seed", cfg.train.seed)
    worst = 0.0
    for s in range(seed, seed + args.seeds):
        errs = run_gradcheck(s, args.lam, args.epsilon, args.sabotage)
        worst = max(worst, *errs.values())
        print(f"seed={s} lambda={args.lam:g} " + " ".join(f"{k}={v:.3e}" for k, v in errs.items()))
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'}, threshold {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_CHECK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synchrowave", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    g = sub.add_parser("generate", help="write a synthetic differential dataset")
    common(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--events", type=int)
    g.add_argument("--rate", type=int, help="samples per grid cycle")
    g.add_argument("--amplitude", type=float, nargs=2, metavar=("LOW", "HIGH"))
    g.add_argument("--noise", type=float, help="noise standard deviation")
    g.add_argument("--out", help="dataset path (default: paths.dataset_path)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model")
    common(t)
    t.add_argument("--dataset")
    t.add_argument("--mode", choices=sorted(_MODE_FLAGS), default="data")
    t.add_argument("--lambda", dest="lam", type=float, help="physics weight (default: select on validation)")
    t.add_argument("--train-count", type=int, default=3)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-iterations", type=int)
    t.add_argument("--out", help="output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run the training-size x rate x regime sweep")
    common(s)
    s.add_argument("--generate", action="store_true", help="generate per-rate datasets in memory")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="results directory (default: paths.output_dir)")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="re-render tables and charts from a results directory")
    common(r)
    r.add_argument("--results", required=True)
    r.add_argument("--regime", action="append", choices=["known_RL", "unknown_RL"])
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    common(c)
    c.add_argument("--seed", type=int)
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    c.add_argument("--lambda", dest="lam", type=float, default=0.3)
    c.add_argument("--epsilon", type=float, default=1e-5)
    c.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if getattr(args, "lam", None) is not None and args.lam < 0:
            raise ConfigError("--lambda must be non-negative")
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
