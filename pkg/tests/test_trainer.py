import csv
import math

import numpy as np
import pytest

from normuon import trainer as tr
from normuon.errors import ConfigError, DivergenceError
from normuon.optimizers import default_config
from normuon.rng import SplitMix64, derive_seed


def make_task(**kw):
    base = dict(kind="teacher_regression", input_dim=5, output_dim=3,
                sample_count=16, seed=11)
    base.update(kw)
    return tr.SyntheticTask(**base)


def make_model(task, hidden=6, activation="tanh", seed=None):
    dims = [task.input_dim, hidden, task.output_dim]
    return tr.MlpModel.build(dims, activation, derive_seed(task.seed if seed is None else seed, "init"))


def test_task_validation_and_loss_kind():
    assert make_task().loss_kind == "mse"
    assert make_task(kind="gaussian_classification").loss_kind == "cross_entropy"
    with pytest.raises(ConfigError):
        make_task(kind="mystery")
    with pytest.raises(ConfigError):
        make_task(input_dim=0)
    with pytest.raises(ConfigError):
        make_task(noise_std=-0.1)


def test_model_build_shapes_and_init():
    model = tr.MlpModel.build([5, 8, 3], "tanh", seed=2)
    names = [(name, kind, arr.shape) for name, kind, arr in model.param_items()]
    assert names == [
        ("layer0.weight", "hidden_2d", (8, 5)),
        ("layer0.bias", "bias", (1, 8)),
        ("layer1.weight", "hidden_2d", (3, 8)),
        ("layer1.bias", "bias", (1, 3)),
    ]
    assert not np.any(model.biases[0]) and not np.any(model.biases[1])
    big = tr.MlpModel.build([64, 256], "tanh", seed=3)
    std = float(np.std(big.weights[0]))
    assert abs(std - 1.0 / math.sqrt(64)) < 0.2 / math.sqrt(64)
    again = tr.MlpModel.build([5, 8, 3], "tanh", seed=2)
    assert np.array_equal(model.weights[0], again.weights[0])
    with pytest.raises(ConfigError):
        tr.MlpModel.build([5, 8], "gelu", seed=2)
    with pytest.raises(ConfigError):
        tr.MlpModel.build([5], "tanh", seed=2)


def test_synthetic_regression_is_deterministic_and_consistent():
    task = make_task()
    x1, y1 = tr.gen_synthetic(task, "train")
    x2, y2 = tr.gen_synthetic(task, "train")
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    xv, _ = tr.gen_synthetic(task, "val")
    assert not np.array_equal(x1, xv)
    # The teacher that produced the labels reproduces them exactly.
    teacher = tr.teacher_model(task)
    assert tr.evaluate(teacher, x1, y1, "mse") == 0.0


def test_synthetic_regression_noise():
    clean = make_task()
    noisy = make_task(noise_std=0.5)
    _, y_clean = tr.gen_synthetic(clean, "train")
    x, y_noisy = tr.gen_synthetic(noisy, "train")
    resid = y_noisy - y_clean
    assert np.any(resid)
    assert 0.2 < float(np.std(resid)) < 0.9


def test_synthetic_classification():
    task = make_task(kind="gaussian_classification", input_dim=4, output_dim=3,
                     sample_count=120)
    x, y = tr.gen_synthetic(task, "train")
    assert y.shape == (120, 3)
    assert np.array_equal(np.unique(y), [0.0, 1.0])
    assert np.array_equal(y.sum(axis=1), np.ones(120))
    counts = y.sum(axis=0)
    assert np.all(counts >= 3)
    # Inputs cluster around the shared class means.
    means = SplitMix64(derive_seed(task.seed, "classes")).gauss_matrix(3, 4, scale=2.0)
    for c in range(3):
        centroid = x[y[:, c] == 1.0].mean(axis=0)
        assert np.max(np.abs(centroid - means[c])) < 1.0


def identity_model():
    model = tr.MlpModel.build([2, 2], "tanh", seed=1)
    model.set_param("layer0.weight", np.eye(2))
    model.set_param("layer0.bias", np.zeros((1, 2)))
    return model


def test_mse_hand_value():
    model = identity_model()
    loss = tr.evaluate(model, np.array([[1.0, 2.0]]), np.zeros((1, 2)), "mse")
    assert loss == pytest.approx(2.5, rel=1e-15)


def test_cross_entropy_hand_value_and_stability():
    model = identity_model()
    x = np.array([[0.0, 0.0]])
    assert tr.evaluate(model, x, np.array([[1.0, 0.0]]), "cross_entropy") == \
        pytest.approx(math.log(2.0), rel=1e-15)
    huge = np.array([[1000.0, 0.0]])
    wrong = tr.evaluate(model, huge, np.array([[0.0, 1.0]]), "cross_entropy")
    right = tr.evaluate(model, huge, np.array([[1.0, 0.0]]), "cross_entropy")
    assert math.isfinite(wrong) and wrong == pytest.approx(1000.0, rel=1e-12)
    assert 0.0 <= right < 1e-300 or right == 0.0


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("kind", ["teacher_regression", "gaussian_classification"])
def test_gradients_match_finite_differences(activation, kind):
    task = make_task(kind=kind)
    model = make_model(task, activation=activation)
    x, y = tr.gen_synthetic(task, "train")
    assert tr.finite_diff_check(model, x, y, task.loss_kind) <= 1e-6


def test_schedule_constant():
    for step in (0, 1, 50, 100):
        assert tr.lr_schedule(step, 100, "constant") == 1.0


def test_schedule_warmup_linear_decay():
    sched = lambda s: tr.lr_schedule(s, 100, "warmup_linear_decay", warmup_steps=10)
    assert sched(0) == 0.0
    assert sched(5) == 0.5
    assert sched(10) == 1.0
    assert sched(55) == pytest.approx(0.5)
    assert sched(100) == 0.0


def test_schedule_wsd():
    sched = lambda s: tr.lr_schedule(s, 100, "wsd", warmup_steps=10,
                                     decay_start_frac=0.8)
    assert sched(9) == 0.9
    assert sched(10) == 1.0
    assert sched(79) == 1.0
    assert sched(90) == pytest.approx(0.5)
    assert sched(100) == 0.0
    flat = lambda s: tr.lr_schedule(s, 100, "wsd", decay_start_frac=1.0)
    assert flat(99) == 1.0
    assert flat(100) == 0.0


def test_schedule_validation():
    with pytest.raises(ConfigError):
        tr.lr_schedule(0, 100, "cosine")
    with pytest.raises(ConfigError):
        tr.lr_schedule(101, 100, "constant")
    with pytest.raises(ConfigError):
        tr.lr_schedule(-1, 100, "constant")
    with pytest.raises(ConfigError):
        tr.lr_schedule(0, 100, "warmup_linear_decay", warmup_steps=100)
    with pytest.raises(ConfigError):
        tr.lr_schedule(0, 100, "wsd", decay_start_frac=1.5)


def test_param_step_config_routes_aux_params_to_stable_adam():
    cfg = default_config("normuon", 0.02, weight_decay=0.1)
    aux = tr.param_step_config(cfg, "normuon", "adamw", "layer0.bias",
                               eff_lr=0.01, aux_lr_scale=0.5)
    assert aux.lr == 0.005
    assert (aux.beta1, aux.beta2) == tr.AUX_ADAM_BETAS
    assert aux.weight_decay == 0.0
    assert aux.bias_correction is True
    hidden = tr.param_step_config(cfg, "normuon", "normuon", "layer0.weight",
                                  eff_lr=0.01)
    assert hidden.lr == 0.01
    assert hidden.weight_decay == 0.1
    assert hidden.beta1 == cfg.beta1


def test_param_step_config_decay_scope():
    cfg = default_config("adamw", 0.02, weight_decay=0.1)
    bias = tr.param_step_config(cfg, "adamw", "adamw", "layer0.bias", eff_lr=0.02)
    assert bias.weight_decay == 0.0
    everywhere = tr.param_step_config(cfg, "adamw", "adamw", "layer0.bias",
                                      eff_lr=0.02, decay_hidden_only=False)
    assert everywhere.weight_decay == 0.1


def run_once(optimizer="normuon", steps=8, lr=0.02, seed=11, **kw):
    task = make_task(seed=seed)
    model = make_model(task)
    cfg = default_config(optimizer, lr)
    return tr.train_loop(model, task, optimizer, cfg, steps, **kw)


def test_training_is_deterministic_apart_from_wall_time():
    a = run_once()
    b = run_once()
    assert a.checksum == b.checksum
    assert len(a.rows) == 8
    for ra, rb in zip(a.rows, b.rows):
        assert (ra.step, ra.train_loss, ra.val_loss, ra.effective_lr) == \
            (rb.step, rb.train_loss, rb.val_loss, rb.effective_lr)
    for name, arr in a.final_params.items():
        assert np.array_equal(arr, b.final_params[name])


@pytest.mark.parametrize("optimizer", ["adamw", "muon", "normuon"])
def test_training_reduces_loss(optimizer):
    record = run_once(optimizer=optimizer, steps=40)
    assert record.rows[-1].train_loss < 0.5 * record.rows[0].train_loss


def test_effective_lr_follows_schedule():
    record = run_once(steps=4, lr=0.04,
                      schedule=tr.ScheduleSpec(kind="warmup_linear_decay",
                                               warmup_steps=2))
    assert [r.effective_lr for r in record.rows] == [0.0, 0.02, 0.04, 0.02]


def test_zero_lr_run_is_a_no_op():
    task = make_task()
    model = make_model(task)
    before = tr.weights_checksum(model)
    record = tr.train_loop(model, task, "normuon", default_config("normuon", 0.0), 3)
    assert record.checksum == before


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_error_names_the_step():
    task = make_task()
    model = make_model(task)
    run = tr.TrainingRun(model, task, "normuon", default_config("normuon", 0.02), 10)
    for _ in range(3):
        run.advance()
    model.weights[0][0, 0] = np.inf
    with pytest.raises(DivergenceError) as err:
        run.advance()
    assert err.value.step == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_unstable_decay_diverges():
    task = make_task()
    model = make_model(task)
    cfg = default_config("normuon", 20.0, weight_decay=1.0)
    with pytest.raises(DivergenceError) as err:
        tr.train_loop(model, task, "normuon", cfg, 400)
    assert 1 <= err.value.step <= 400


def test_minibatch_runs_are_deterministic_and_cover_data():
    a = run_once(steps=10, batch_size=4)
    b = run_once(steps=10, batch_size=4)
    assert a.checksum == b.checksum
    task = make_task()
    model = make_model(task)
    run = tr.TrainingRun(model, task, "normuon", default_config("normuon", 0.02),
                         10, batch_size=4)
    x1, _ = run._next_batch()
    x2, _ = run._next_batch()
    assert x1.shape == (4, task.input_dim)
    # Within an epoch batches are disjoint rows of the training set.
    rows = {tuple(r) for r in np.vstack([x1, x2])}
    train_rows = {tuple(r) for r in run.x_train}
    assert rows <= train_rows and len(rows) == 8


def test_checksum_tracks_weights():
    task = make_task()
    model = make_model(task)
    before = tr.weights_checksum(model)
    assert tr.weights_checksum(model) == before
    model.weights[0][0, 0] += 1.0
    assert tr.weights_checksum(model) != before


def test_run_csv_round_trip(tmp_path):
    record = run_once(steps=5)
    path = tmp_path / "run.csv"
    tr.write_run_csv(record, path)
    with open(path, newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == tr.RUN_HEADER
    assert len(got) == 6
    assert int(got[1][0]) == 1
    assert float(got[3][1]) == record.rows[2].train_loss
    assert float(got[3][3]) == record.rows[2].effective_lr


def test_step_reports_csv(tmp_path):
    record = run_once(steps=3)
    path = tmp_path / "steps.csv"
    tr.write_step_reports_csv(record, path)
    with open(path, newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == tr.STEP_REPORT_HEADER
    assert len(got) == 1 + 3 * 4  # three steps, four parameters
    assert float(got[1][2]) == record.step_reports[0][2].update_fro_norm
