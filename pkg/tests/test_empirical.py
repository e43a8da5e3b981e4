"""Empirical trend checks on the default simulator, using the shared session sweeps."""

import numpy as np


def _means(result, regime="known_RL", rate=128):
    return {r["TrainEv"]: r for r in result.mean_rows(regime, rate)}


def test_more_events_do_not_hurt_data_only(known_full_curve):
    rows = _means(known_full_curve)
    assert rows[50]["mse_data"] <= rows[3]["mse_data"]


def test_selected_lambda_beats_data_only_at_three_events(known_small_sweep):
    result, _ = known_small_sweep
    assert _means(result)[3]["mse_phy"] < _means(result)[3]["mse_data"]


def test_small_data_improvement_positive(known_small_sweep):
    result, _ = known_small_sweep
    rows = _means(result)
    assert np.mean([rows[c]["improvement_pct"] for c in (3, 5, 10)]) > 0


def test_selected_lambdas_come_from_grid(known_full_curve):
    grid = set(known_full_curve.config.lambda_grid)
    assert {c.lambda_star for c in known_full_curve.cells} <= grid


def test_learned_resistance_near_truth(unknown_20_sweep):
    result, _ = unknown_20_sweep
    (row,) = result.mean_rows("unknown_RL", 128)
    assert abs(row["R_ohm"] - 10.0) <= 1.5


def test_learned_line_trajectories_recorded(unknown_20_sweep):
    result, _ = unknown_20_sweep
    for seed in result.config.seeds:
        traj = result.trajectories[(128, 20, seed)]
        its = [t[0] for t in traj]
        assert its[0] == 0 and all(a < b for a, b in zip(its, its[1:]))
        cell = next(c for c in result.cells if c.seed == seed)
        assert traj[-1][1:] == (cell.R_hat, cell.L_hat)
