import json

import numpy as np
import pytest

from synchrowave import nn
from synchrowave.nn import LearnableLineParams, MlpModel
from synchrowave.simulate import DisturbanceConfig, LineParams, generate_dataset
from synchrowave.training import (
    DEFAULT_LAMBDA_GRID,
    CompositeObjective,
    EventBatch,
    Normalization,
    TrainConfig,
    choose_lambda,
    composite_loss,
    data_loss,
    load_checkpoint,
    physics_residual,
    save_checkpoint,
    select_lambda,
    train_data_only,
    train_piml_known,
    train_piml_unknown,
    training_log_csv,
    trajectory_csv,
)
from synchrowave.waveform import DifferentialEvent, SamplingConfig, split_events

S16 = SamplingConfig(16, 60.0, 32)
LINE = LineParams(10.0, 2e-4)
QUICK = TrainConfig(max_iterations=400, patience=200, eval_every=50)


@pytest.fixture(scope="module")
def small_events():
    return generate_dataset(DisturbanceConfig(event_count=40, seed=3), line=LINE, sampling=S16).by_id()


def _const_model(value):
    m = MlpModel()
    m.layers()[-1][1][0] = value
    return m


def _unit_norm():
    return Normalization(0.0, 1.0, 1.0)


def test_data_loss_exact_and_offset():
    events = {1: DifferentialEvent(1, np.zeros(3), np.zeros(3), np.zeros(3), S16)}
    assert data_loss(_const_model(0.0), _unit_norm(), events, [1]) == 0.0
    assert data_loss(_const_model(2.0), _unit_norm(), events, [1]) == 4.0


def test_residual_mean_square_hand_value():
    # Residuals (1, 0, -2) on l = 1..3.
    dv1 = np.zeros(4)
    dv2 = np.array([0.0, 1.0, 0.0, -2.0])
    r = physics_residual(dv1, dv2, np.zeros(4), LINE, S16)
    assert np.array_equal(r, [1.0, 0.0, -2.0])
    assert np.mean(r * r) == pytest.approx(5.0 / 3.0, rel=1e-15)


def test_residual_zero_for_true_current():
    ev = generate_dataset(DisturbanceConfig(event_count=1), line=LINE).events[0]
    r = physics_residual(ev.dv1, ev.dv2, ev.di1, LINE, ev.sampling)
    assert np.max(np.abs(r)) <= 1e-10 * np.max(np.abs(ev.dv1))


def test_residual_zero_prediction():
    rng = np.random.default_rng(0)
    dv1, dv2 = rng.normal(size=10), rng.normal(size=10)
    r = physics_residual(dv1, dv2, np.zeros(10), LINE, S16)
    assert np.array_equal(r, dv2[1:] - dv1[1:])


def test_residual_single_term():
    i = np.array([0.0, 2.0])
    r = physics_residual(np.zeros(2), np.zeros(2), i, LineParams(10.0, 0.0), S16)
    assert r[0] == 20.0


def test_residual_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        physics_residual(np.zeros(3), np.zeros(4), np.zeros(3), LINE, S16)


def test_composite_lambda_zero_is_data_loss(small_events):
    m = nn.init_model(1)
    ids = [1, 2, 3]
    norm = Normalization.fit([small_events[k] for k in ids])
    assert composite_loss(m, norm, LINE, 0.0, small_events, ids) == data_loss(m, norm, small_events, ids)


def test_composite_linear_combination():
    # Data mse 1.0 from a unit offset, residual mean square 0.25.
    S = SamplingConfig(2, 60.0, 4)
    line = LineParams(0.0, 0.0)
    dv2 = np.array([0.0, 0.5, -0.5, 0.5])
    ev = DifferentialEvent(1, np.zeros(4), dv2, np.full(4, -1.0), S)
    loss = composite_loss(_const_model(0.0), _unit_norm(), line, 2.0, {1: ev}, [1])
    assert loss == pytest.approx(1.5, rel=1e-15)


def test_composite_perfect_model_is_zero():
    # Zero current everywhere: dv2 = dv1, and the zero network is exact.
    dv1 = np.sin(np.arange(32.0))
    ev = DifferentialEvent(1, dv1, dv1, np.zeros(32), S16)
    assert composite_loss(MlpModel(), _unit_norm(), LINE, 0.3, {1: ev}, [1]) == 0.0


@pytest.mark.parametrize("learnable", [False, True])
@pytest.mark.parametrize("lam", [0.0, 0.3, 3.0])
def test_objective_gradient_check(small_events, lam, learnable):
    ids = [1, 2]
    norm = Normalization.fit([small_events[k] for k in ids])
    model = nn.init_model(7)
    line = LearnableLineParams.from_values(6.0, 5e-4) if learnable else LINE
    obj = CompositeObjective(model, EventBatch(small_events, ids, norm), lam, line)
    x = obj.initial_vector() + np.random.default_rng(0).normal(0, 0.05, obj.size)
    assert nn.grad_check(obj.values, obj.gradient, x, 1e-5, batched=True) < 1e-4


def test_float32_objective_close_to_float64(small_events):
    ids = [1, 2, 3]
    norm = Normalization.fit([small_events[k] for k in ids])
    batch = EventBatch(small_events, ids, norm)
    model = nn.init_model(2)
    o64 = CompositeObjective(model, batch, 0.3, LINE)
    o32 = CompositeObjective(model, batch, 0.3, LINE, dtype="float32")
    x = o64.initial_vector()
    (l64, g64), (l32, g32) = o64.value_and_grad(x), o32.value_and_grad(x)
    assert l32 == pytest.approx(l64, rel=1e-4)
    assert np.linalg.norm(g32 - g64) <= 1e-3 * np.linalg.norm(g64)


def test_zero_current_is_learned():
    # A zero map is representable, so training drives the loss to (near) zero.
    rng = np.random.default_rng(0)
    events = {
        k: DifferentialEvent(k, rng.normal(0, 50, 32), rng.normal(0, 50, 32), np.zeros(32), S16)
        for k in range(1, 16)
    }
    split = split_events(15, 3, 4, 8, seed=0)
    cfg = TrainConfig(max_iterations=5000, patience=2000)
    trained = train_data_only(events, split, cfg)
    assert trained.final_train_loss < 1e-6


def test_training_is_deterministic(small_events):
    split = split_events(40, 3, 10, 20, seed=1)
    a = train_piml_known(small_events, split, LINE, 0.3, QUICK)
    b = train_piml_known(small_events, split, LINE, 0.3, QUICK)
    assert a.model.params.tobytes() == b.model.params.tobytes()
    assert a.log == b.log


def test_lambda_zero_bitwise_equals_data_only(small_events):
    split = split_events(40, 5, 10, 20, seed=2)
    a = train_data_only(small_events, split, QUICK)
    b = train_piml_known(small_events, split, LINE, 0.0, QUICK)
    assert a.model.params.tobytes() == b.model.params.tobytes()
    assert [row[:3] for row in a.log] == [row[:3] for row in b.log]


def test_known_line_residual_small(small_events):
    split = split_events(40, 5, 10, 20, seed=0)
    cfg = TrainConfig(max_iterations=3000, patience=2000)
    trained = train_piml_known(small_events, split, LINE, 0.3, cfg)
    batch = EventBatch(small_events, split.train_ids, trained.norm)
    pred = np.stack([trained.predict(small_events[k]) for k in batch.ids])
    r = physics_residual(batch.dv1, batch.dv2, pred, LINE, S16)
    rms_r = np.sqrt(np.mean(r * r))
    rms_v = np.sqrt(np.mean(batch.dv1 * batch.dv1))
    assert rms_r < 0.1 * rms_v


def test_unknown_lambda_zero_keeps_initial_line(small_events):
    split = split_events(40, 3, 10, 20, seed=0)
    trained = train_piml_unknown(small_events, split, 0.0, QUICK)
    Rs = {round(R, 12) for _, R, _ in trained.param_trajectory}
    Ls = {round(L, 15) for _, _, L in trained.param_trajectory}
    assert Rs == {5.0} and Ls == {1e-3}


def test_unknown_trajectory_bookkeeping(small_events):
    split = split_events(40, 3, 10, 20, seed=0)
    trained = train_piml_unknown(small_events, split, 0.3, QUICK)
    its = [row[0] for row in trained.param_trajectory]
    assert len(its) >= 2
    assert all(a < b for a, b in zip(its, its[1:]))
    _, R, L = trained.param_trajectory[-1]
    assert (R, L) == (trained.line_params.R, trained.line_params.L)
    assert trained.line_params.R > 0 and trained.line_params.L > 0


def test_best_snapshot_is_restored(small_events):
    split = split_events(40, 3, 10, 20, seed=4)
    trained = train_data_only(small_events, split, QUICK)
    assert trained.mse(small_events, split.val_ids) == pytest.approx(trained.best_val_mse, rel=1e-12)
    assert trained.best_val_mse == min(row[2] for row in trained.log)


def test_choose_lambda_rules():
    assert choose_lambda({0.3: 1.0}) == 0.3
    assert choose_lambda({0.1: 5.0, 1.0: 3.0, 3.0: 3.0}) == 1.0
    with pytest.raises(ValueError):
        choose_lambda({})


def test_default_grid():
    assert DEFAULT_LAMBDA_GRID == (1e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0)


def test_select_lambda_singleton(small_events):
    split = split_events(40, 3, 10, 20, seed=0)
    sel = select_lambda(small_events, split, [0.3], "phys_known", QUICK, line=LINE)
    lam, val = sel
    assert lam == 0.3 and set(val) == {0.3}
    assert sel.best.lam == 0.3


def test_select_lambda_rejects_data_mode(small_events):
    with pytest.raises(ValueError):
        select_lambda(small_events, split_events(40, 3), [0.3], "data_only", QUICK)


def test_checkpoint_round_trip(tmp_path, small_events):
    split = split_events(40, 3, 10, 20, seed=0)
    trained = train_piml_unknown(small_events, split, 0.3, QUICK)
    path = tmp_path / "ckpt.json"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    assert np.array_equal(back.model.params, trained.model.params)
    assert back.line_params == trained.line_params
    assert back.mse(small_events, split.test_ids) == trained.mse(small_events, split.test_ids)
    assert json.loads(path.read_text())["mode"] == "phys_learnable"


def test_log_csv_columns(small_events):
    split = split_events(40, 3, 10, 20, seed=0)
    data = train_data_only(small_events, split, QUICK)
    rows = training_log_csv(data).splitlines()
    assert rows[0] == "iteration,train_loss,val_mse,R_ohm,L_henry"
    assert rows[1].endswith(",,")
    learn = train_piml_unknown(small_events, split, 0.3, QUICK)
    assert trajectory_csv(learn).splitlines()[0] == "iteration,R_ohm,L_henry"


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(precision="float16")
    with pytest.raises(ValueError):
        TrainConfig(max_iterations=100, patience=200)
