"""Sweeps over training-set size, sampling rate and line-parameter knowledge."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nn import NumericError
from .simulate import DisturbanceConfig, GroundTruthIbr, LineParams, generate_dataset
from .training import (
    DEFAULT_LAMBDA_GRID,
    TrainConfig,
    select_lambda,
    train_data_only,
)
from .waveform import Dataset, SamplingConfig, split_events

REGIMES = ("known_RL", "unknown_RL")
_REGIME_MODE = {"known_RL": "phys_known", "unknown_RL": "phys_learnable"}

DATA_EFFICIENCY_NOTE = (
    "data efficiency: for each training count c with physics-informed MSE m, c' is the "
    "smallest count (linear interpolation on the data-only curve, clamped to the grid) "
    "at which the data-only MSE is <= m; ratio = c'/c; the summary value is the median "
    "ratio. A '>=' flag marks counts where the data-only curve never reaches m."
)


@dataclass(frozen=True)
class SweepConfig:
    train_counts: tuple[int, ...] = (3, 5, 10, 20, 30, 40, 50)
    samples_per_cycle: tuple[int, ...] = (128, 64, 32)
    regimes: tuple[str, ...] = REGIMES
    seeds: tuple[int, ...] = (0, 1, 2)
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    val_count: int = 10
    test_count: int = 20
    event_count: int = 80
    cycles_per_event: int = 2
    grid_frequency: float = 60.0
    train: TrainConfig = field(default_factory=TrainConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    ibr: GroundTruthIbr = field(default_factory=GroundTruthIbr)
    line: LineParams = field(default_factory=LineParams)

    def __post_init__(self) -> None:
        for name in ("train_counts", "samples_per_cycle", "regimes", "seeds", "lambda_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.train_counts or min(self.train_counts) < 1:
            raise ValueError("train_counts must be nonempty positive integers")
        if max(self.train_counts) + self.val_count + self.test_count > self.event_count:
            raise ValueError(
                f"max train count {max(self.train_counts)} + val {self.val_count} + test "
                f"{self.test_count} exceeds event_count {self.event_count}"
            )
        if not self.regimes:
            raise ValueError("at least one regime is required")
        unknown = set(self.regimes) - set(REGIMES)
        if unknown:
            raise ValueError(f"unknown regimes {sorted(unknown)}")
        if not self.seeds or not self.samples_per_cycle:
            raise ValueError("seeds and samples_per_cycle must be nonempty")
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise ValueError("lambda_grid must be nonempty and positive")
        if self.val_count < 1:
            raise ValueError("val_count must be at least 1 (lambda selection)")
        if self.cycles_per_event < 2:
            raise ValueError("cycles_per_event must be at least 2")

    def sampling(self, rate: int) -> SamplingConfig:
        return SamplingConfig(rate, self.grid_frequency, self.cycles_per_event * rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("train_counts", "samples_per_cycle", "regimes", "seeds", "lambda_grid"):
            d[key] = list(d[key])
        d["train"]["shape"] = list(d["train"]["shape"])
        for key in ("amplitude_range", "frequency_range", "damping_cycles_range"):
            d["disturbance"][key] = list(d["disturbance"][key])
        return d


def improvement_pct(mse_data: float, mse_phy: float) -> float:
    """Relative error reduction of the physics-informed model, in percent."""
    if not mse_data > 0:
        raise ValueError(f"mse_data must be positive, got {mse_data}")
    return 100.0 * (1.0 - mse_phy / mse_data)


@dataclass(frozen=True)
class EfficiencyPoint:
    count: int
    matched_count: float
    ratio: float
    lower_bound: bool


@dataclass(frozen=True)
class DataEfficiency:
    median_ratio: float
    points: tuple[EfficiencyPoint, ...]


def _crossing(counts: np.ndarray, mses: np.ndarray, target: float) -> tuple[float, bool]:
    if mses[0] <= target:
        return float(counts[0]), False
    for j in range(1, len(counts)):
        if mses[j] <= target:
            c0, c1, m0, m1 = counts[j - 1], counts[j], mses[j - 1], mses[j]
            return float(c0 + (c1 - c0) * (m0 - target) / (m0 - m1)), False
    return float(counts[-1]), True


def data_efficiency(curve_data: Mapping[int, float], curve_phy: Mapping[int, float]) -> DataEfficiency:
    """How many more events the data-only model needs to match the physics-informed MSE."""
    if sorted(curve_data) != sorted(curve_phy):
        raise ValueError("curves must be defined on the same training counts")
    if not curve_data:
        raise ValueError("curves are empty")
    counts = np.array(sorted(curve_data), dtype=float)
    mses = np.array([curve_data[c] for c in sorted(curve_data)], dtype=float)
    points = []
    for c in sorted(curve_phy):
        matched, flag = _crossing(counts, mses, curve_phy[c])
        points.append(EfficiencyPoint(int(c), matched, matched / c, flag))
    return DataEfficiency(float(np.median([p.ratio for p in points])), tuple(points))


# ------------------------------------------------------------------ sweep


@dataclass(frozen=True)
class CellResult:
    regime: str
    rate: int
    train_count: int
    seed: int
    mse_data: float
    mse_phy: float
    improvement_pct: float
    lambda_star: float
    R_hat: float | None = None  # ohm
    L_hat: float | None = None  # henry
    status: str = "ok"


@dataclass
class SweepResult:
    config: SweepConfig
    cells: list[CellResult]
    trajectories: dict = field(default_factory=dict)  # (rate, count, seed) -> [(it, R, L)]

    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.status != "ok"]

    def groups(self) -> dict[tuple[str, int], list[CellResult]]:
        out: dict = {}
        for c in self.cells:
            out.setdefault((c.regime, c.rate), []).append(c)
        return out

    def mean_rows(self, regime: str, rate: int) -> list[dict]:
        """Seed-averaged table rows for one (regime, rate)."""
        rows = []
        cells = [c for c in self.cells if c.regime == regime and c.rate == rate and c.status == "ok"]
        for count in sorted({c.train_count for c in cells}):
            sub = [c for c in cells if c.train_count == count]
            mse_d = float(np.mean([c.mse_data for c in sub]))
            mse_p = float(np.mean([c.mse_phy for c in sub]))
            lams = sorted(c.lambda_star for c in sub)
            row = {
                "TrainEv": count,
                "mse_data": mse_d,
                "mse_phy": mse_p,
                "improvement_pct": improvement_pct(mse_d, mse_p),
                "lambda_star": lams[(len(lams) - 1) // 2],
            }
            if regime == "unknown_RL":
                row["R_ohm"] = float(np.mean([c.R_hat for c in sub]))
                row["L_mH"] = float(np.mean([c.L_hat for c in sub])) * 1e3
            rows.append(row)
        return rows

    def efficiency(self, regime: str, rate: int) -> DataEfficiency:
        rows = self.mean_rows(regime, rate)
        return data_efficiency(
            {r["TrainEv"]: r["mse_data"] for r in rows}, {r["TrainEv"]: r["mse_phy"] for r in rows}
        )


def build_datasets(cfg: SweepConfig) -> dict[int, Dataset]:
    """One dataset per rate; analog disturbance draws are shared across rates."""
    dist = replace(cfg.disturbance, event_count=cfg.event_count)
    return {rate: generate_dataset(dist, cfg.ibr, cfg.line, cfg.sampling(rate)) for rate in cfg.samples_per_cycle}


def _run_cell(args) -> tuple[list[CellResult], dict]:
    cfg, dataset, rate, seed, count = args
    events = dataset.by_id()
    split = split_events(len(events), count, cfg.val_count, cfg.test_count, seed)
    tcfg = replace(cfg.train, seed=seed)
    cells: list[CellResult] = []
    trajectories: dict = {}
    try:
        base = train_data_only(events, split, tcfg)
        mse_data = base.mse(events, split.test_ids)
    except NumericError as exc:
        msg = f"failed: data-only: {exc}"
        return [_failed(r, rate, count, seed, msg) for r in cfg.regimes], {}
    for regime in cfg.regimes:
        mode = _REGIME_MODE[regime]
        try:
            sel = select_lambda(events, split, cfg.lambda_grid, mode, tcfg, line=cfg.line)
        except NumericError as exc:
            cells.append(_failed(regime, rate, count, seed, f"failed: {regime}: {exc}"))
            continue
        best = sel.best
        mse_phy = best.mse(events, split.test_ids)
        imp = improvement_pct(mse_data, mse_phy) if mse_data > 0 else float("nan")
        R_hat = L_hat = None
        if regime == "unknown_RL":
            R_hat, L_hat = best.line_params.R, best.line_params.L
            trajectories[(rate, count, seed)] = list(best.param_trajectory)
        cells.append(
            CellResult(regime, rate, count, seed, mse_data, mse_phy, imp, sel.lambda_star, R_hat, L_hat)
        )
    return cells, trajectories


def _failed(regime: str, rate: int, count: int, seed: int, msg: str) -> CellResult:
    nan = float("nan")
    has_line = regime == "unknown_RL"
    return CellResult(
        regime, rate, count, seed, nan, nan, nan, nan, nan if has_line else None, nan if has_line else None, msg
    )


def run_sweep(
    cfg: SweepConfig,
    datasets: Mapping[int, Dataset] | None = None,
    jobs: int = 1,
) -> SweepResult:
    if datasets is None:
        datasets = build_datasets(cfg)
    missing = [r for r in cfg.samples_per_cycle if r not in datasets]
    if missing:
        raise ValueError(f"no dataset for samples_per_cycle {missing}")
    tasks = [
        (cfg, datasets[rate], rate, seed, count)
        for rate in cfg.samples_per_cycle
        for seed in cfg.seeds
        for count in cfg.train_counts
    ]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_cell, tasks))
    else:
        outputs = [_run_cell(t) for t in tasks]
    cells: list[CellResult] = []
    trajectories: dict = {}
    for c, tr in outputs:
        cells.extend(c)
        trajectories.update(tr)
    order = {r: i for i, r in enumerate(REGIMES)}
    cells.sort(key=lambda c: (order[c.regime], -c.rate, c.train_count, c.seed))
    return SweepResult(cfg, cells, trajectories)


# ----------------------------------------------------------------- CSV I/O

TABLE_COLUMNS = ["TrainEv", "mse_data", "mse_phy", "improvement_pct", "lambda_star"]
LINE_COLUMNS = ["R_ohm", "L_mH"]
CELL_COLUMNS = [
    "regime", "rate", "train_count", "seed", "mse_data", "mse_phy",
    "improvement_pct", "lambda_star", "R_ohm", "L_henry", "status",
]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def table_csv(rows: list[dict], regime: str) -> str:
    cols = TABLE_COLUMNS + (LINE_COLUMNS if regime == "unknown_RL" else [])
    return _csv_text(cols, ([r[c] for c in cols] for r in rows))


def read_table_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"TrainEv": int(rec["TrainEv"])}
        for k, v in rec.items():
            if k != "TrainEv":
                row[k] = float(v)
        rows.append(row)
    return rows


def cells_csv(cells: Sequence[CellResult]) -> str:
    rows = (
        [c.regime, c.rate, c.train_count, c.seed, c.mse_data, c.mse_phy, c.improvement_pct,
         c.lambda_star, c.R_hat, c.L_hat, c.status]
        for c in cells
    )
    return _csv_text(CELL_COLUMNS, rows)


def read_cells_csv(text: str) -> list[CellResult]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        opt = lambda v: float(v) if v != "" else None  # noqa: E731
        out.append(
            CellResult(
                rec["regime"], int(rec["rate"]), int(rec["train_count"]), int(rec["seed"]),
                float(rec["mse_data"]), float(rec["mse_phy"]), float(rec["improvement_pct"]),
                float(rec["lambda_star"]), opt(rec["R_ohm"]), opt(rec["L_henry"]), rec["status"],
            )
        )
    return out


def efficiency_csv(result: SweepResult) -> str:
    rows = []
    for (regime, rate) in sorted(result.groups(), key=lambda k: (REGIMES.index(k[0]), -k[1])):
        if not result.mean_rows(regime, rate):
            continue
        eff = result.efficiency(regime, rate)
        for p in eff.points:
            rows.append([regime, rate, p.count, p.matched_count, p.ratio, "1" if p.lower_bound else "0", eff.median_ratio])
    return _csv_text(["regime", "rate", "TrainEv", "matched_data_count", "ratio", "lower_bound", "median_ratio"], rows)


def trajectory_file_csv(result: SweepResult, rate: int, count: int) -> str:
    rows = []
    for seed in result.config.seeds:
        for it, R, L in result.trajectories.get((rate, count, seed), []):
            rows.append([seed, it, R, L])
    return _csv_text(["seed", "iteration", "R_ohm", "L_henry"], rows)


# ------------------------------------------------------------------ report


def axis_limits(values: Iterable[float], margin: float = 0.05) -> tuple[float, float]:
    """Axis range covering ``values`` with ``margin`` of the span on each side."""
    vals = [float(v) for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    span = hi - lo
    if span == 0:
        span = abs(hi) if hi != 0 else 1.0
    pad = margin * span * 1.0001
    return lo - pad, hi + pad


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "synchrowave"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def curve_svg(rows: list[dict], title: str, path: Path) -> tuple[tuple, tuple]:
    plt = _svg_figure()
    x = [r["TrainEv"] for r in rows]
    yd = [r["mse_data"] for r in rows]
    yp = [r["mse_phy"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, yd, "-o", color="tab:blue", label="data-only")
    ax.plot(x, yp, "--s", color="tab:red", label="physics-informed")
    xlim, ylim = axis_limits(x), axis_limits(yd + yp)
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_xlabel("training events")
    ax.set_ylabel("test MSE (A$^2$)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)
    return xlim, ylim


def trajectory_svg(traj: Mapping[int, list], title: str, path: Path, line: LineParams) -> None:
    plt = _svg_figure()
    fig, (ax_r, ax_l) = plt.subplots(2, 1, figsize=(5, 4.5), sharex=True)
    its, Rs, Ls = [], [line.R], [line.L * 1e3]
    for seed, rows in sorted(traj.items()):
        if not rows:
            continue
        it = [r[0] for r in rows]
        ax_r.plot(it, [r[1] for r in rows], label=f"seed {seed}")
        ax_l.plot(it, [r[2] * 1e3 for r in rows], label=f"seed {seed}")
        its += it
        Rs += [r[1] for r in rows]
        Ls += [r[2] * 1e3 for r in rows]
    ax_r.axhline(line.R, color="k", ls=":", label="true")
    ax_l.axhline(line.L * 1e3, color="k", ls=":", label="true")
    ax_r.set_ylabel("R (ohm)")
    ax_l.set_ylabel("L (mH)")
    ax_l.set_xlabel("iteration")
    ax_r.set_xlim(*axis_limits(its or [0]))
    ax_r.set_ylim(*axis_limits(Rs))
    ax_l.set_ylim(*axis_limits(Ls))
    ax_r.set_title(title)
    ax_r.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def summary_markdown(result: SweepResult, regimes: Sequence[str]) -> str:
    cfg = result.config
    lines = ["# Sweep summary", ""]
    lines.append(
        f"Events: {cfg.event_count} (validation {cfg.val_count}, test {cfg.test_count}); "
        f"seeds: {', '.join(map(str, cfg.seeds))}; values are seed means."
    )
    t = cfg.train
    lines.append(
        f"Training: Adam lr={t.lr}, betas=({t.beta1}, {t.beta2}), eps={t.eps}, full batch, "
        f"max {t.max_iterations} iterations, early stop patience {t.patience} "
        f"(validation every {t.eval_every}), network {list(t.shape)} tanh, Glorot-uniform init, "
        f"{t.precision} compute."
    )
    lines.append(
        "Inputs: dv1 standardized by training mean/std, time scaled to [0, 1) over the event; "
        "target scaled by training std of di1."
    )
    lines.append("")
    for regime in regimes:
        for rate in cfg.samples_per_cycle:
            rows = result.mean_rows(regime, rate)
            if not rows:
                continue
            lines.append(f"## {regime}, {rate} samples/cycle")
            lines.append("")
            head = ["TrainEv", "MSE data", "MSE phy", "Imp. (%)", "lambda*"]
            if regime == "unknown_RL":
                head += ["R (ohm)", "L (mH)"]
            lines.append("| " + " | ".join(head) + " |")
            lines.append("|" + "---|" * len(head))
            for r in rows:
                vals = [
                    str(r["TrainEv"]), f"{r['mse_data']:.4g}", f"{r['mse_phy']:.4g}",
                    f"{r['improvement_pct']:+.2f}", f"{r['lambda_star']:g}",
                ]
                if regime == "unknown_RL":
                    vals += [f"{r['R_ohm']:.3f}", f"{r['L_mH']:.3f}"]
                lines.append("| " + " | ".join(vals) + " |")
            eff = result.efficiency(regime, rate)
            lines.append("")
            lines.append(f"Data efficiency (median ratio): {eff.median_ratio:.2f}x")
            lines.append("")
    failed = result.failed()
    if failed:
        lines.append(f"Failed cells: {len(failed)}")
        for c in failed:
            lines.append(f"- {c.regime} rate={c.rate} count={c.train_count} seed={c.seed}: {c.status}")
        lines.append("")
    lines.append(DATA_EFFICIENCY_NOTE)
    return "\n".join(lines) + "\n"


def render_report(result: SweepResult, out_dir: str | Path, regimes: Sequence[str] | None = None) -> list[Path]:
    """Write tables, charts, trajectories and the summary under ``out_dir``."""
    if not result.cells:
        raise ValueError("no results to render")
    regimes = tuple(result.config.regimes if regimes is None else regimes)
    if not regimes:
        raise ValueError("regime filter is empty")
    bad = set(regimes) - set(REGIMES)
    if bad:
        raise ValueError(f"unknown regimes {sorted(bad)}")
    out = Path(out_dir)
    written: list[Path] = []

    def write(path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)

    for regime in regimes:
        for rate in result.config.samples_per_cycle:
            rows = result.mean_rows(regime, rate)
            if not rows:
                continue
            d = out / regime / str(rate)
            write(d / "table.csv", table_csv(rows, regime))
            d.mkdir(parents=True, exist_ok=True)
            curve_svg(rows, f"{regime}, {rate} samples/cycle", d / "curve.svg")
            written.append(d / "curve.svg")
            if regime == "unknown_RL":
                for count in result.config.train_counts:
                    write(d / f"trajectory_{count}.csv", trajectory_file_csv(result, rate, count))
                    traj = {s: result.trajectories.get((rate, count, s), []) for s in result.config.seeds}
                    trajectory_svg(traj, f"{rate} samples/cycle, {count} events", d / f"trajectory_{count}.svg", result.config.line)
                    written.append(d / f"trajectory_{count}.svg")
    write(out / "cells.csv", cells_csv([c for c in result.cells if c.regime in regimes]))
    write(out / "data_efficiency.csv", efficiency_csv(result))
    write(out / "summary.md", summary_markdown(result, regimes))
    write(out / "effective_config.json", json.dumps(result.config.to_dict(), indent=2) + "\n")
    return written
