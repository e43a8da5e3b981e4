"""Losses and trainers for the data-only and physics-informed current models."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .nn import LearnableLineParams, MlpModel, NumericError
from .simulate import LineParams
from .waveform import DatasetSplit, DifferentialEvent, SamplingConfig, index_events

MODES = ("data_only", "phys_known", "phys_learnable")

# Grid of candidate physics weights; spans 1e-5 ... 3.
DEFAULT_LAMBDA_GRID = (1e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0)


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 20000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 2000
    eval_every: int = 100
    seed: int = 0
    shape: tuple[int, ...] = nn.DEFAULT_SHAPE
    init_R: float = 5.0  # ohm
    init_L: float = 1e-3  # henry
    r_scale: float = 1.0
    l_scale: float = 1e-3
    # Compute precision of the network passes; weights and Adam state stay float64.
    precision: str = "float64"

    def __post_init__(self) -> None:
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not 0 < self.patience <= self.max_iterations:
            raise ValueError("patience must be in (0, max_iterations]")
        if self.eval_every <= 0:
            raise ValueError("eval_every must be positive")
        if self.shape[0] != 2 or self.shape[-1] != 1:
            raise ValueError("network must map (voltage, time) to one current")


@dataclass(frozen=True)
class Normalization:
    """Input/target scaling fitted on the training events."""

    v1_mean: float
    v1_std: float
    i1_std: float

    @classmethod
    def fit(cls, events: Sequence[DifferentialEvent]) -> "Normalization":
        dv1 = np.concatenate([ev.dv1 for ev in events])
        di1 = np.concatenate([ev.di1 for ev in events])
        v_std = float(np.std(dv1))
        i_std = float(np.std(di1))
        return cls(float(np.mean(dv1)), v_std if v_std > 0 else 1.0, i_std if i_std > 0 else 1.0)

    def features(self, dv1: np.ndarray) -> np.ndarray:
        """(voltage, time) inputs; time is the sample index scaled to [0, 1)."""
        dv1 = np.asarray(dv1, dtype=float)
        n = dv1.shape[-1]
        t = np.broadcast_to(np.arange(n) / n, dv1.shape)
        return np.stack([(dv1 - self.v1_mean) / self.v1_std, t], axis=-1).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {"v1_mean": self.v1_mean, "v1_std": self.v1_std, "i1_std": self.i1_std}


class EventBatch:
    """Events stacked into (events, samples) arrays for vectorized losses."""

    def __init__(self, events, ids: Sequence[int], norm: Normalization):
        events = index_events(events)
        if len(ids) == 0:
            raise ValueError("ids must be nonempty")
        missing = [k for k in ids if k not in events]
        if missing:
            raise ValueError(f"unknown event ids {missing}")
        chosen = [events[k] for k in ids]
        lengths = {ev.n for ev in chosen}
        if len(lengths) != 1:
            raise ValueError(f"events in a batch must share one length, got {sorted(lengths)}")
        self.ids = tuple(ids)
        self.sampling = chosen[0].sampling
        self.dv1 = np.stack([ev.dv1 for ev in chosen])
        self.dv2 = np.stack([ev.dv2 for ev in chosen])
        self.di1 = np.stack([ev.di1 for ev in chosen])
        self.norm = norm
        self.features = norm.features(self.dv1)
        # dv2 - dv1 from the second sample on; the constant part of the residual.
        self.residual_base = self.dv2[:, 1:] - self.dv1[:, 1:]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dv1.shape

    @property
    def dt(self) -> float:
        if self.sampling is None:
            raise ValueError("events carry no sampling metadata")
        return self.sampling.dt


def predict_currents(model: MlpModel, batch: EventBatch, params: np.ndarray | None = None) -> np.ndarray:
    out = nn.forward(model, batch.features, params)
    return out.reshape(batch.shape) * batch.norm.i1_std


def physics_residual(dv1, dv2, predicted_di1, line: LineParams, sampling: SamplingConfig) -> np.ndarray:
    """Circuit mismatch ``dv2 - dv1 + R*i + L*(i[l]-i[l-1])/dt`` for l >= 1.

    Works on one event (1-D inputs) or a stack of events along axis 0.
    """
    dv1 = np.asarray(dv1, dtype=float)
    dv2 = np.asarray(dv2, dtype=float)
    i = np.asarray(predicted_di1, dtype=float)
    if not dv1.shape == dv2.shape == i.shape:
        raise ValueError(f"length mismatch: {dv1.shape}, {dv2.shape}, {i.shape}")
    if dv1.shape[-1] < 2:
        raise ValueError("need at least two samples for the backward difference")
    di_dt = (i[..., 1:] - i[..., :-1]) / sampling.dt
    return dv2[..., 1:] - dv1[..., 1:] + line.R * i[..., 1:] + line.L * di_dt


class CompositeObjective:
    """Data MSE plus ``lam`` times mean squared circuit residual.

    The optimization vector is the flat network parameters, followed by
    ``(theta_R, theta_L)`` when the line parameters are learnable.
    """

    def __init__(
        self,
        model: MlpModel,
        batch: EventBatch,
        lam: float,
        line: LineParams | LearnableLineParams | None = None,
        dtype=np.float64,
    ):
        if lam < 0 or not math.isfinite(lam):
            raise ValueError(f"lambda must be a non-negative finite number, got {lam}")
        self.model = model
        self.batch = batch
        self.lam = float(lam)
        self.learnable = isinstance(line, LearnableLineParams)
        self.line = line
        if self.lam > 0 and line is None:
            raise ValueError("physics term needs line parameters")
        self.n_net = model.n_params
        E, n = batch.shape
        self._data_scale = 1.0 / (E * n)
        self._phys_scale = 1.0 / (E * (n - 1)) if n > 1 else 0.0
        self._dt = batch.dt if self.lam > 0 else float("nan")
        self._work = nn.Workspace(model, batch.features, dtype)

    @property
    def size(self) -> int:
        return self.n_net + (2 if self.learnable else 0)

    def initial_vector(self) -> np.ndarray:
        x = self.model.params.copy()
        if self.learnable:
            x = np.concatenate([x, [self.line.theta_R, self.line.theta_L]])
        return x

    def line_values(self, x: np.ndarray) -> tuple[float, float]:
        if self.learnable:
            lp = LearnableLineParams(x[self.n_net], x[self.n_net + 1], self.line.r_scale, self.line.l_scale)
            return lp.R, lp.L
        if self.line is None:
            return float("nan"), float("nan")
        return self.line.R, self.line.L

    def parts(self, x: np.ndarray) -> dict:
        """Loss components at ``x`` without gradients."""
        pred = predict_currents(self.model, self.batch, x[: self.n_net])
        err = pred - self.batch.di1
        data = float(np.mean(np.mean(err * err, axis=1)))
        phys = float("nan")
        if self.line is not None:
            R, L = self.line_values(x)
            r = physics_residual(self.batch.dv1, self.batch.dv2, pred, LineParams(R, L), self.batch.sampling)
            phys = float(np.mean(r * r))
        total = data + self.lam * phys if self.lam > 0 else data
        return {"data": data, "physics": phys, "total": total}

    def value(self, x: np.ndarray) -> float:
        return self.parts(x)["total"]

    def values(self, xs: np.ndarray) -> np.ndarray:
        """Total loss at each row of a (K, size) stack, via a stacked forward pass."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        b = self.batch
        out = nn.forward_many(self.model, b.features, xs[:, : self.n_net])
        pred = out.reshape((xs.shape[0],) + b.shape) * b.norm.i1_std
        err = pred - b.di1
        total = np.mean(err * err, axis=(1, 2))
        if self.line is not None and self.lam > 0:
            if self.learnable:
                R = nn.softplus(xs[:, self.n_net]) * self.line.r_scale
                L = nn.softplus(xs[:, self.n_net + 1]) * self.line.l_scale
            else:
                R = np.full(xs.shape[0], self.line.R)
                L = np.full(xs.shape[0], self.line.L)
            step = (pred[..., 1:] - pred[..., :-1]) / b.sampling.dt
            r = b.residual_base + R[:, None, None] * pred[..., 1:] + L[:, None, None] * step
            total = total + self.lam * np.mean(r * r, axis=(1, 2))
        return total

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        b = self.batch
        out = self._work.forward(x[: self.n_net])
        i_std = b.norm.i1_std
        pred = out.reshape(b.shape).astype(np.float64)
        pred *= i_std
        err = pred - b.di1
        loss = float(np.vdot(err, err)) * self._data_scale
        g_pred = err
        g_pred *= 2.0 * self._data_scale
        grad = np.zeros(self.size)
        if self.lam > 0:
            R, L = self.line_values(x)
            dt = self._dt
            step = pred[:, 1:] - pred[:, :-1]
            r = b.residual_base + R * pred[:, 1:] + (L / dt) * step
            loss += self.lam * float(np.vdot(r, r)) * self._phys_scale
            gr = r
            gr *= 2.0 * self.lam * self._phys_scale
            g_pred[:, 1:] += (R + L / dt) * gr
            g_pred[:, :-1] -= (L / dt) * gr
            if self.learnable:
                lp = LearnableLineParams(x[self.n_net], x[self.n_net + 1], self.line.r_scale, self.line.l_scale)
                dR_dtheta, dL_dtheta = lp.chain()
                grad[self.n_net] = float(np.vdot(gr, pred[:, 1:])) * dR_dtheta
                grad[self.n_net + 1] = float(np.vdot(gr, step)) / dt * dL_dtheta
        if not math.isfinite(loss):
            raise NumericError("non-finite loss")
        g_pred *= i_std
        grad[: self.n_net] = self._work.backward(g_pred)
        return loss, grad

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_grad(x)[1]


def data_loss(model: MlpModel, norm: Normalization, events, ids: Sequence[int]) -> float:
    """Mean over events of per-event mean squared current error (A^2)."""
    batch = EventBatch(events, ids, norm)
    err = predict_currents(model, batch) - batch.di1
    return float(np.mean(np.mean(err * err, axis=1)))


def composite_loss(
    model: MlpModel,
    norm: Normalization,
    line: LineParams | LearnableLineParams,
    lam: float,
    events,
    ids: Sequence[int],
) -> float:
    objective = CompositeObjective(model, EventBatch(events, ids, norm), lam, line)
    return objective.value(objective.initial_vector())


# ------------------------------------------------------------- training


@dataclass
class TrainedModel:
    model: MlpModel
    norm: Normalization
    mode: str
    lam: float
    line_params: LineParams | None
    param_trajectory: list = field(default_factory=list)  # (iteration, R, L)
    log: list = field(default_factory=list)  # (iteration, train_loss, val_mse, R, L)
    final_train_loss: float = float("nan")
    best_val_mse: float = float("nan")
    best_iteration: int = 0
    iterations_run: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "data_only" and (self.lam != 0 or self.param_trajectory):
            raise ValueError("data-only models have lambda 0 and no trajectory")

    def predict(self, event: DifferentialEvent) -> np.ndarray:
        feats = self.norm.features(event.dv1)
        return nn.forward(self.model, feats) * self.norm.i1_std

    def predict_all(self, events, ids: Sequence[int]) -> dict[int, np.ndarray]:
        events = index_events(events)
        batch = EventBatch(events, ids, self.norm)
        pred = predict_currents(self.model, batch)
        return {k: pred[j] for j, k in enumerate(batch.ids)}

    def mse(self, events, ids: Sequence[int]) -> float:
        return data_loss(self.model, self.norm, events, ids)


def _train(
    events,
    split: DatasetSplit,
    cfg: TrainConfig,
    mode: str,
    lam: float,
    line: LineParams | None,
) -> TrainedModel:
    events = index_events(events)
    if not split.train_ids:
        raise ValueError("training set is empty")
    norm = Normalization.fit([events[k] for k in split.train_ids])
    train = EventBatch(events, split.train_ids, norm)
    val = EventBatch(events, split.val_ids, norm) if split.val_ids else None
    model = nn.init_model(cfg.seed, cfg.shape)

    if mode == "phys_learnable":
        line_arg = LearnableLineParams.from_values(cfg.init_R, cfg.init_L, cfg.r_scale, cfg.l_scale)
    else:
        line_arg = line
    objective = CompositeObjective(model, train, lam, line_arg, dtype=cfg.precision)
    x = objective.initial_vector()
    adam = nn.AdamState(objective.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    def val_mse(vec: np.ndarray) -> float:
        if val is None:
            return float("nan")
        err = predict_currents(model, val, vec[: objective.n_net]) - val.di1
        return float(np.mean(err * err))

    log = []
    trajectory = []
    best_x = x.copy()
    best_val = val_mse(x)
    best_it = 0
    R0, L0 = objective.line_values(x)
    log.append((0, objective.value(x), best_val, R0, L0))
    if mode == "phys_learnable":
        trajectory.append((0, R0, L0))

    it = 0
    train_loss = float("nan")
    for it in range(1, cfg.max_iterations + 1):
        try:
            train_loss, grad = objective.value_and_grad(x)
        except NumericError as exc:
            raise NumericError(f"{exc} at iteration {it}") from None
        x = nn.adam_step(adam, x, grad)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite parameters at iteration {it}")
        if it % cfg.eval_every == 0 or it == cfg.max_iterations:
            v = val_mse(x)
            R, L = objective.line_values(x)
            log.append((it, train_loss, v, R, L))
            if mode == "phys_learnable":
                trajectory.append((it, R, L))
            # Without validation data keep the latest iterate.
            if val is None or v < best_val:
                best_val, best_x, best_it = v, x.copy(), it
            elif it - best_it >= cfg.patience:
                break

    model.params[:] = best_x[: objective.n_net]
    if mode == "phys_learnable":
        trajectory = [row for row in trajectory if row[0] <= best_it]
        R, L = objective.line_values(best_x)
        line_out = LineParams(R, L)
    else:
        line_out = line
    return TrainedModel(
        model=model,
        norm=norm,
        mode=mode,
        lam=float(lam),
        line_params=line_out,
        param_trajectory=trajectory,
        log=log,
        final_train_loss=objective.value(best_x),
        best_val_mse=best_val,
        best_iteration=best_it,
        iterations_run=it,
    )


def train_data_only(events, split: DatasetSplit, cfg: TrainConfig) -> TrainedModel:
    return _train(events, split, cfg, "data_only", 0.0, None)


def train_piml_known(events, split: DatasetSplit, line: LineParams, lam: float, cfg: TrainConfig) -> TrainedModel:
    return _train(events, split, cfg, "phys_known", lam, line)


def train_piml_unknown(events, split: DatasetSplit, lam: float, cfg: TrainConfig) -> TrainedModel:
    return _train(events, split, cfg, "phys_learnable", lam, None)


@dataclass
class LambdaSelection:
    lambda_star: float
    val_mse: dict  # lambda -> validation MSE
    models: dict = field(repr=False, default_factory=dict)

    @property
    def best(self) -> TrainedModel:
        return self.models[self.lambda_star]

    def __iter__(self):
        return iter((self.lambda_star, self.val_mse))


def choose_lambda(val_mse: Mapping[float, float]) -> float:
    """Argmin of validation MSE; ties go to the smaller lambda."""
    if not val_mse:
        raise ValueError("lambda grid is empty")
    best = None
    for lam in sorted(val_mse):
        if best is None or val_mse[lam] < val_mse[best]:
            best = lam
    return best


def select_lambda(
    events,
    split: DatasetSplit,
    grid: Sequence[float],
    mode: str,
    cfg: TrainConfig,
    line: LineParams | None = None,
    jobs: int = 1,
) -> LambdaSelection:
    """Train one model per lambda; pick the one with the lowest validation MSE."""
    if not grid:
        raise ValueError("lambda grid is empty")
    if mode not in ("phys_known", "phys_learnable"):
        raise ValueError(f"lambda selection applies to physics modes, not {mode!r}")
    if not split.val_ids:
        raise ValueError("lambda selection needs validation events")
    grid = sorted(float(g) for g in grid)
    if mode == "phys_known":
        tasks = [(events, split, cfg, mode, lam, line) for lam in grid]
    else:
        tasks = [(events, split, cfg, mode, lam, None) for lam in grid]
    models = dict(zip(grid, _map(_train_task, tasks, jobs)))
    val = {lam: m.best_val_mse for lam, m in models.items()}
    return LambdaSelection(choose_lambda(val), val, models)


def _train_task(args) -> TrainedModel:
    return _train(*args)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ------------------------------------------------------------ file I/O


def checkpoint_dict(trained: TrainedModel) -> dict:
    doc = {
        "shape": list(trained.model.shape),
        "parameters": [float(p) for p in trained.model.params],
        "normalization": trained.norm.to_dict(),
        "mode": trained.mode,
        "lambda": trained.lam,
    }
    if trained.mode == "phys_learnable" and trained.line_params is not None:
        doc["learned_line_params"] = trained.line_params.to_dict()
    return doc


def save_checkpoint(trained: TrainedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(trained), indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    model = MlpModel(doc["shape"], np.asarray(doc["parameters"], dtype=float))
    norm = Normalization(**doc["normalization"])
    line = None
    if "learned_line_params" in doc:
        lp = doc["learned_line_params"]
        line = LineParams(lp["R_ohm"], lp["L_henry"])
    mode = doc.get("mode", "data_only")
    lam = float(doc.get("lambda", 0.0))
    return TrainedModel(model, norm, mode, lam, line)


def training_log_csv(trained: TrainedModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "train_loss", "val_mse", "R_ohm", "L_henry"])
    fixed = trained.mode != "phys_learnable"
    for it, loss, val, R, L in trained.log:
        if fixed:
            w.writerow([it, repr(float(loss)), repr(float(val)), "", ""])
        else:
            w.writerow([it, repr(float(loss)), repr(float(val)), repr(float(R)), repr(float(L))])
    return buf.getvalue()


def trajectory_csv(trained: TrainedModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "R_ohm", "L_henry"])
    for it, R, L in trained.param_trajectory:
        w.writerow([it, repr(float(R)), repr(float(L))])
    return buf.getvalue()
