"""Waveform event types, the one-cycle differential transform, splits and the test metric."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1
CHANNELS = ("v1", "v2", "i1")
DIFF_CHANNELS = ("dv1", "dv2", "di1")


class StructureError(ValueError):
    """Event arrays have the wrong shape or missing pre-history."""


class DataError(ValueError):
    """A sample is non-finite."""


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_cycle: int = 128
    grid_frequency: float = 60.0
    samples_per_event: int = 256

    def __post_init__(self) -> None:
        if self.samples_per_cycle < 1:
            raise ValueError("samples_per_cycle must be a positive integer")
        if self.grid_frequency <= 0:
            raise ValueError("grid_frequency must be positive")
        if self.samples_per_event < 2 * self.samples_per_cycle:
            raise ValueError(
                f"samples_per_event={self.samples_per_event} must be at least "
                f"2*samples_per_cycle={2 * self.samples_per_cycle}"
            )

    @property
    def dt(self) -> float:
        # Go through Fraction so 1/(N*f) is the correctly rounded double.
        return float(1 / (Fraction(self.samples_per_cycle) * Fraction(self.grid_frequency)))

    @property
    def duration(self) -> float:
        return self.samples_per_event * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.samples_per_event) * self.dt

    def to_dict(self) -> dict:
        return {
            "samples_per_cycle": self.samples_per_cycle,
            "grid_frequency": self.grid_frequency,
            "samples_per_event": self.samples_per_event,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SamplingConfig":
        return cls(
            samples_per_cycle=int(d["samples_per_cycle"]),
            grid_frequency=float(d.get("grid_frequency", 60.0)),
            samples_per_event=int(d["samples_per_event"]),
        )


def _as_channel(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise StructureError(f"channel {name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _check_finite(event_id: int, channels: Mapping[str, np.ndarray]) -> None:
    for name, arr in channels.items():
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise DataError(
                f"event {event_id}: channel {name} has non-finite value at index {int(bad[0])}"
            )


@dataclass(frozen=True)
class WaveformEvent:
    """Raw samples of one disturbance, starting at the onset sample.

    ``pre_history`` holds the cycle immediately preceding the onset for each
    channel, so the transform is defined from the first post-onset sample.
    """

    event_id: int
    v1: np.ndarray
    v2: np.ndarray
    i1: np.ndarray
    pre_history: Mapping[str, np.ndarray]
    onset_index: int = 0

    def __post_init__(self) -> None:
        for name in CHANNELS:
            object.__setattr__(self, name, _as_channel(getattr(self, name), name))
        lengths = {len(getattr(self, c)) for c in CHANNELS}
        if len(lengths) != 1:
            raise StructureError(f"event {self.event_id}: channel lengths differ: {sorted(lengths)}")
        pre = {}
        for name in CHANNELS:
            if name not in self.pre_history:
                raise StructureError(f"event {self.event_id}: pre_history missing channel {name}")
            pre[name] = _as_channel(self.pre_history[name], f"pre_history.{name}")
        object.__setattr__(self, "pre_history", pre)

    @property
    def n(self) -> int:
        return len(self.v1)


@dataclass(frozen=True)
class DifferentialEvent:
    event_id: int
    dv1: np.ndarray
    dv2: np.ndarray
    di1: np.ndarray
    sampling: SamplingConfig | None = field(repr=False, default=None)

    def __post_init__(self) -> None:
        for name in DIFF_CHANNELS:
            object.__setattr__(self, name, _as_channel(getattr(self, name), name))
        n = {len(self.dv1), len(self.dv2), len(self.di1)}
        if len(n) != 1:
            raise StructureError(f"event {self.event_id}: channel lengths differ: {sorted(n)}")
        _check_finite(self.event_id, {c: getattr(self, c) for c in DIFF_CHANNELS})

    @property
    def n(self) -> int:
        return len(self.dv1)


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple[int, ...]
    val_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        sets = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise ValueError("train/val/test index sets overlap")


def differential(event: WaveformEvent, sampling: SamplingConfig | None = None) -> DifferentialEvent:
    """One-cycle difference ``x[l] - x[l-N]`` for every channel.

    Negative indices read from the stored pre-history, so the output keeps
    all ``n`` samples. Without ``sampling`` the cycle length is taken from the
    pre-history of ``v1``.
    """
    N = sampling.samples_per_cycle if sampling is not None else len(event.pre_history["v1"])
    if N < 1:
        raise StructureError(f"event {event.event_id}: empty pre_history")
    out = {}
    for name in CHANNELS:
        pre = event.pre_history[name]
        if len(pre) != N:
            raise StructureError(
                f"event {event.event_id}: pre_history.{name} has {len(pre)} samples, need {N}"
            )
        x = getattr(event, name)
        _check_finite(event.event_id, {name: x, f"pre_history.{name}": pre})
        full = np.concatenate([pre, x])
        out["d" + name] = full[N:] - full[:-N]
    return DifferentialEvent(event.event_id, out["dv1"], out["dv2"], out["di1"], sampling)


def split_events(
    p: int, train_count: int, val_count: int = 10, test_count: int = 20, seed: int = 0
) -> DatasetSplit:
    """Seeded train/val/test partition of event ids ``1..p``.

    A single permutation is drawn per seed: test takes the head, validation
    the next block, training the block after. Evaluation sets therefore do not
    depend on ``train_count`` and training sets are nested as it grows.
    """
    if min(train_count, val_count, test_count) < 0:
        raise ValueError("counts must be non-negative")
    if train_count + val_count + test_count > p:
        raise ValueError(
            f"train+val+test = {train_count + val_count + test_count} exceeds event count p={p}"
        )
    order = np.random.default_rng(seed).permutation(np.arange(1, p + 1))
    test = order[:test_count]
    val = order[test_count : test_count + val_count]
    train = order[test_count + val_count : test_count + val_count + train_count]
    return DatasetSplit(
        tuple(int(i) for i in train), tuple(int(i) for i in val), tuple(int(i) for i in test)
    )


def test_mse(
    predictions: Mapping[int, Sequence[float]],
    truth: Mapping[int, DifferentialEvent] | Sequence[DifferentialEvent],
    ids: Sequence[int],
) -> float:
    """Per-event mean squared current error, averaged uniformly over events."""
    truth = index_events(truth)
    if len(ids) == 0:
        raise ValueError("ids must be nonempty")
    per_event = []
    for k in sorted(ids):
        if k not in predictions:
            raise ValueError(f"missing prediction for event {k}")
        pred = np.asarray(predictions[k], dtype=float)
        target = truth[k].di1
        if pred.shape != target.shape:
            raise ValueError(f"event {k}: prediction length {pred.shape} != {target.shape}")
        per_event.append(np.mean((pred - target) ** 2))
    return float(np.mean(per_event))


test_mse.__test__ = False  # not a pytest test despite the name


def index_events(
    events: Mapping[int, DifferentialEvent] | Sequence[DifferentialEvent],
) -> dict[int, DifferentialEvent]:
    if isinstance(events, Mapping):
        return dict(events)
    return {ev.event_id: ev for ev in events}


# ---------------------------------------------------------------- file format


def _floats(arr: np.ndarray) -> list[float]:
    return [float(x) for x in arr]


@dataclass(frozen=True)
class Dataset:
    sampling: SamplingConfig
    events: tuple
    line_params_truth: Mapping[str, float] | None = None

    @property
    def is_differential(self) -> bool:
        return not self.events or isinstance(self.events[0], DifferentialEvent)

    def by_id(self) -> dict:
        return {ev.event_id: ev for ev in self.events}

    def to_dict(self) -> dict:
        doc: dict = {"format_version": FORMAT_VERSION, "sampling": self.sampling.to_dict()}
        if self.line_params_truth is not None:
            doc["line_params_truth"] = dict(self.line_params_truth)
        events = []
        for ev in self.events:
            if isinstance(ev, DifferentialEvent):
                events.append({"event_id": ev.event_id, **{c: _floats(getattr(ev, c)) for c in DIFF_CHANNELS}})
            else:
                entry = {"event_id": ev.event_id, "onset_index": ev.onset_index}
                entry["pre_history"] = {c: _floats(ev.pre_history[c]) for c in CHANNELS}
                entry.update({c: _floats(getattr(ev, c)) for c in CHANNELS})
                events.append(entry)
        doc["events"] = events
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Dataset":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise StructureError(f"unsupported format_version {version!r}")
        sampling = SamplingConfig.from_dict(doc["sampling"])
        events = []
        for entry in doc["events"]:
            eid = int(entry["event_id"])
            if "dv1" in entry:
                events.append(
                    DifferentialEvent(eid, entry["dv1"], entry["dv2"], entry["di1"], sampling)
                )
            else:
                events.append(
                    WaveformEvent(
                        eid,
                        entry["v1"],
                        entry["v2"],
                        entry["i1"],
                        pre_history=entry["pre_history"],
                        onset_index=int(entry.get("onset_index", 0)),
                    )
                )
        for ev in events:
            if ev.n != sampling.samples_per_event:
                raise StructureError(
                    f"event {ev.event_id} has {ev.n} samples, header says {sampling.samples_per_event}"
                )
        return cls(sampling, tuple(events), doc.get("line_params_truth"))

    def to_differential(self) -> "Dataset":
        if self.is_differential:
            return self
        events = tuple(differential(ev, self.sampling) for ev in self.events)
        return Dataset(self.sampling, events, self.line_params_truth)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    text = json.dumps(dataset.to_dict(), separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return Dataset.from_dict(doc)

