"""Shared sweeps for the empirical checks, and the per-criterion summary lines.

The empirical sweeps use the default simulator, splits, network and lambda
grid, with a reduced iteration budget (5000 Adam steps, patience 2000) and
float32 network passes so the suite runs on a single CPU core. Each sweep is
run once per session and shared between test modules.
"""

import time

import pytest

from synchrowave.experiment import SweepConfig, SweepResult, run_sweep
from synchrowave.training import TrainConfig

EMPIRICAL_TRAIN = TrainConfig(max_iterations=5000, patience=2000, precision="float32")

SMALL_COUNTS = (3, 5, 10)
LARGE_COUNTS = (20, 30, 40, 50)

_CRITERIA: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def _timed_sweep(**overrides) -> tuple[SweepResult, float]:
    cfg = SweepConfig(samples_per_cycle=(128,), train=EMPIRICAL_TRAIN, **overrides)
    t0 = time.perf_counter()
    result = run_sweep(cfg)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def known_small_sweep():
    """Known (R, L), 128 samples/cycle, counts 3/5/10, seeds 0-2."""
    return _timed_sweep(train_counts=SMALL_COUNTS, regimes=("known_RL",))


@pytest.fixture(scope="session")
def known_full_curve(known_small_sweep):
    """Known (R, L) at 128 samples/cycle over every default training count."""
    small, _ = known_small_sweep
    large, _ = _timed_sweep(train_counts=LARGE_COUNTS, regimes=("known_RL",))
    cfg = SweepConfig(samples_per_cycle=(128,), regimes=("known_RL",), train=EMPIRICAL_TRAIN)
    return SweepResult(cfg, small.cells + large.cells, {})


@pytest.fixture(scope="session")
def unknown_20_sweep():
    """Unknown (R, L), 128 samples/cycle, 20 training events, seeds 0-2."""
    return _timed_sweep(train_counts=(20,), regimes=("unknown_RL",))
