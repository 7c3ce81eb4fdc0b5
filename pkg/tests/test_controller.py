import math

import numpy as np
import pytest

from hopplan.controller import (
    Controller,
    ControllerGrid,
    ControllerHyper,
    ControllerSample,
    desired_angle,
    eval_controller,
    gen_controller_dataset,
    train_controller,
)
from hopplan.slip import ApexState, apex_step
from hopplan.terrain import Terrain, flat

SMALL = ControllerGrid(xdot=(0.0, 2.0, 5), z_rel=(0.7, 1.0, 3), theta=(-0.4, 0.4, 9))


def test_neutral_sample_has_zero_step(params):
    grid = ControllerGrid(xdot=(0.0, 1.0, 2), z_rel=(0.8, 0.9, 2), theta=(-0.4, 0.4, 3))
    data = gen_controller_dataset(grid, params)
    s = next(d for d in data if d.xdot == 0.0 and d.z_rel == 0.8 and d.theta == 0.0)
    assert abs(s.x_L) < 1e-9


def test_reflection_symmetry_at_rest(params):
    data = gen_controller_dataset(SMALL, params)
    at_rest = {(d.z_rel, round(d.theta, 9)): d.x_L for d in data if d.xdot == 0.0}
    checked = 0
    for (z, th), xl in at_rest.items():
        if th > 0 and (z, -th) in at_rest:
            assert at_rest[(z, -th)] == pytest.approx(-xl, abs=1e-9)
            checked += 1
    assert checked > 0


def test_default_grid_keeps_only_successes(controller_data, params):
    assert 0 < len(controller_data) <= 5000
    ground = flat(0.0, mu=0.8)
    for s in controller_data[::97]:
        r = apex_step(ApexState(0.0, s.z_rel, s.xdot), s.theta, ground, params)
        assert r.ok
        assert r.footstep_x == pytest.approx(s.x_L)


def test_grid_validation():
    with pytest.raises(ValueError):
        ControllerGrid(theta=(-0.8, 0.8, 5)).axes()
    with pytest.raises(ValueError):
        ControllerGrid(xdot=(0.0, 1.0, 1)).axes()


def test_dataset_is_deterministic(params):
    assert gen_controller_dataset(SMALL, params) == gen_controller_dataset(SMALL, params)


def test_training_rejects_tiny_or_degenerate_data():
    with pytest.raises(ValueError):
        train_controller([ControllerSample(0.0, 0.8, 0.0, 0.0)] * 10)
    with pytest.raises(ValueError):
        train_controller([ControllerSample(0.0, 0.8, 0.0, 0.0)] * 200)


def test_training_is_seed_deterministic(controller_data):
    hyper = ControllerHyper(epochs=3)
    a, _ = train_controller(controller_data, hyper, rng=5)
    b, _ = train_controller(controller_data, hyper, rng=5)
    for k in a.mlp.params:
        np.testing.assert_array_equal(a.mlp.params[k], b.mlp.params[k])


def test_loss_drops_and_generalises(trained_controller):
    _, report = trained_controller
    assert report["final_loss"] < 0.25 * report["initial_loss"]
    assert report["holdout_mse"] <= 2.0 * report["train_mse"]


def test_zero_step_at_rest_needs_vertical_leg(trained_controller):
    ctrl, _ = trained_controller
    assert abs(ctrl.angle(0.0, 0.8, 0.0)) < 0.05


def test_angle_increases_with_step_length(trained_controller):
    ctrl, _ = trained_controller
    xl = np.linspace(0.2, 0.5, 7)
    th = ctrl.predict(np.full(7, 1.0), np.full(7, 0.85), xl)
    assert np.all(np.diff(th) > 0)


def test_out_of_range_input_still_answers(trained_controller):
    ctrl, _ = trained_controller
    assert math.isfinite(ctrl.angle(1.0, 0.85, 5.0))


def test_inference_is_repeatable(trained_controller):
    ctrl, _ = trained_controller
    before = {k: v.copy() for k, v in ctrl.mlp.params.items()}
    a = ctrl.angle(1.2, 0.9, 0.4)
    assert ctrl.angle(1.2, 0.9, 0.4) == a
    for k, v in before.items():
        np.testing.assert_array_equal(ctrl.mlp.params[k], v)


def test_desired_angle_uses_height_at_landing(trained_controller):
    ctrl, _ = trained_controller
    apex = ApexState(0.0, 1.0, 1.0)
    raised = Terrain(((0.0, 0.0), (0.3, 0.2)), mu=0.8)
    assert desired_angle(ctrl, apex, raised, 0.4) == pytest.approx(ctrl.angle(1.0, 0.8, 0.4))
    assert desired_angle(ctrl, apex, flat(0.0), 0.4) == pytest.approx(ctrl.angle(1.0, 1.0, 0.4))


def test_eval_error_bounds(trained_controller, params):
    ctrl, _ = trained_controller
    stats = eval_controller(ctrl, params)
    assert stats.n > 0
    assert stats.max_abs <= 0.5
    assert stats.mean_abs < stats.max_abs


def test_eval_on_training_tuple_and_rest_probe(trained_controller, controller_data, params):
    ctrl, _ = trained_controller
    s = controller_data[len(controller_data) // 3]
    stats = eval_controller(ctrl, params, [(ApexState(0.0, s.z_rel, s.xdot), s.x_L)])
    assert stats.max_abs < 0.1
    rest = eval_controller(ctrl, params, [(ApexState(0.0, 0.8, 0.0), 0.0)])
    assert rest.max_abs < 0.02


def test_save_load_roundtrip(trained_controller, tmp_path):
    ctrl, _ = trained_controller
    p = tmp_path / "c.json"
    ctrl.save(p)
    back = Controller.load(p)
    x = (np.array([0.5, 1.5]), np.array([0.8, 0.95]), np.array([0.1, 0.6]))
    np.testing.assert_allclose(back.predict(*x), ctrl.predict(*x), rtol=0, atol=1e-12)


def test_load_rejects_other_models(tmp_path):
    from hopplan import nn

    p = tmp_path / "w.json"
    nn.save_weights(p, {"a": np.zeros(2)}, {"model": "planner"})
    with pytest.raises(ValueError):
        Controller.load(p)
