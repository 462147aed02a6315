"""
Tests for the teacher-student training harness.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from src.cascade import cascade_finite_difference
from src.gradient import ParamTarget
from src.training import (COMPARE_RUNS, CrossbarCascadeModel, GradMethod, NoiseConfig,
                          TrainConfig, TrainingCurve, aggregate_error, compare_runs,
                          generate_synthetic_dataset, initial_student, loss_grad, random_teacher,
                          network_path_for, run_training, sgd_train)
from src.utils import NetlistError, load_config

TINY = dict(widths=(3, 2, 2), epochs=3, n_samples=4, seed=11)


@pytest.fixture
def teacher(rng):
    return random_teacher((3, 2, 2), rng)


@pytest.fixture
def dataset(teacher, rng):
    return generate_synthetic_dataset(teacher, 5, rng)


class TestConfig:
    @pytest.mark.parametrize("changes", [
        {"widths": (3,)},
        {"widths": (3, 0, 2)},
        {"epochs": -1},
        {"learning_rate": -0.1},
        {"n_samples": 0},
        {"initial_resistance": 0.0},
        {"device": "memristor"},
    ])
    def test_rejects_invalid_values(self, changes):
        with pytest.raises(NetlistError):
            TrainConfig(**{**TINY, **changes})

    def test_noise_range(self):
        with pytest.raises(NetlistError):
            NoiseConfig(init_rel_var=1.0)
        with pytest.raises(NetlistError):
            NoiseConfig(update_rel_var=-0.1)

    def test_from_dict_uses_defaults(self):
        config = TrainConfig.from_dict({"training": {"widths": [2, 2], "epochs": 1}})
        assert config.widths == (2, 2)
        assert config.learning_rate == 1e-3
        assert config.grad_method is GradMethod.HARDWARE
        assert config.noise is None

    def test_from_dict_rejects_unknown_method(self):
        with pytest.raises(NetlistError):
            TrainConfig.from_dict({"training": {"grad_method": "adjoint-ish"}})

    def test_dict_round_trip(self):
        config = TrainConfig(**TINY, noise=NoiseConfig(0.01, 0.02), grad_method="backprop")
        assert TrainConfig.from_dict(config.to_dict()) == config

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("EQUINET_SEED", "7")
        assert TrainConfig.from_dict(load_config()).seed == 7
        monkeypatch.setenv("EQUINET_SEED", "seven")
        with pytest.raises(NetlistError):
            load_config()


class TestModel:
    def test_parameter_shapes_are_checked(self):
        params = initial_student((3, 2)).params
        params.resistances[0] = np.ones((3, 3))
        with pytest.raises(NetlistError):
            CrossbarCascadeModel((3, 2), params)
        with pytest.raises(NetlistError):
            CrossbarCascadeModel((3, 2, 2), initial_student((3, 2)).params)

    def test_bindings_follow_values(self, teacher):
        bindings = teacher.bindings()
        values = teacher.values()
        assert len(bindings) == len(values) == (4 * 3 + 2 + 3) + (3 * 3 + 2 + 2)
        assert [b.index for b in bindings] == list(range(len(bindings)))
        assert bindings[0].target is ParamTarget.RESISTANCE
        assert values[0] == teacher.params.resistances[0][0, 0]

    def test_initial_student(self):
        student = initial_student((3, 2, 2), 50.0)
        assert np.all(student.params.resistances[1] == 50.0)
        assert student.params.synapses[1].tolist() == [2.0, 2.0]
        assert np.all(student.params.offsets[0] == 0.0)

    def test_to_dict(self, teacher):
        data = teacher.to_dict()
        assert data["widths"] == [3, 2, 2]
        assert len(data["layers"]) == 2
        assert data["layers"][0]["version"] == 1

    def test_teacher_fits_its_own_data(self, teacher, dataset):
        inputs, targets = dataset
        assert targets.shape == (5, 2)
        assert aggregate_error(teacher, inputs, targets) < 1e-12

    def test_dataset_size_is_checked(self, teacher, rng):
        with pytest.raises(NetlistError):
            generate_synthetic_dataset(teacher, 0, rng)


class TestLossGrad:
    def test_exact_target_has_zero_gradient(self, teacher, dataset):
        network = teacher.network()
        x = dataset[0][0]
        y = network.evaluate(x, teacher.aux()).y
        for method in GradMethod:
            loss, gradient, _, _ = loss_grad(network, teacher.aux(), (x, y), teacher.bindings(), method)
            assert loss == 0.0
            np.testing.assert_array_equal(gradient, 0.0)

    @pytest.mark.parametrize("method", list(GradMethod))
    def test_matches_finite_differences(self, dataset, method):
        student = initial_student((3, 2, 2), 80.0)
        network = student.network()
        bindings = student.bindings()
        x, target = dataset[0][1], dataset[1][1]
        loss, gradient, _, state = loss_grad(network, student.aux(), (x, target), bindings, method)
        residual = state.y - target
        assert loss == pytest.approx(residual @ residual)

        picks = [next(b for b in bindings if b.target is target_kind and b.layer == layer)
                 for target_kind, layer in [(ParamTarget.RESISTANCE, 0), (ParamTarget.INPUT_OFFSET, 1),
                                            (ParamTarget.SYNAPSE, 1), (ParamTarget.RESISTANCE, 1)]]
        for binding in picks:
            dy = cascade_finite_difference(network, binding, x, student.aux())
            assert gradient[binding.index] == pytest.approx(2.0 * residual @ dy, rel=1e-4, abs=1e-10)


class TestTraining:
    def test_zero_learning_rate_is_flat(self, dataset):
        config = TrainConfig(**{**TINY, "learning_rate": 0.0})
        curve = sgd_train(initial_student(config.widths), dataset, config)
        assert len(curve) == config.epochs
        assert curve.errors == pytest.approx([curve.initial_error] * config.epochs)

    def test_zero_epochs(self, tmp_path, dataset):
        config = TrainConfig(**{**TINY, "epochs": 0})
        curve = sgd_train(initial_student(config.widths), dataset, config)
        assert curve.errors == []
        path = curve.to_csv(tmp_path / "errors.csv")
        assert path.read_text(encoding="utf-8").splitlines() == ["errors"]
        assert TrainingCurve.from_csv(path).errors == []

    def test_hardware_and_backprop_agree_without_noise(self):
        hardware, _ = run_training(TrainConfig(**TINY, grad_method="hardware"))
        backprop, _ = run_training(TrainConfig(**TINY, grad_method="backprop"))
        np.testing.assert_allclose(hardware.errors, backprop.errors, rtol=1e-6)

    def test_runs_are_deterministic(self):
        config = TrainConfig(**TINY)
        first, model = run_training(config)
        second, _ = run_training(config)
        assert first.errors == second.errors
        assert model.params.resistances[0].shape == (4, 3)

    def test_noisy_run(self):
        config = TrainConfig(**TINY, noise=NoiseConfig())
        curve, _ = run_training(config)
        assert len(curve) == config.epochs
        assert np.all(np.isfinite(curve.errors))

    def test_curve_csv(self, tmp_path):
        curve = TrainingCurve(errors=[3.0, 2.5, 0.125])
        restored = TrainingCurve.from_csv(curve.to_csv(tmp_path / "curve.csv"))
        assert restored.errors == [3.0, 2.5, 0.125]

    def test_curve_csv_needs_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("loss\n1.0\n", encoding="utf-8")
        with pytest.raises(NetlistError):
            TrainingCurve.from_csv(path)

    def test_compare_runs(self, tmp_path):
        config = TrainConfig(**{**TINY, "epochs": 2})
        results = compare_runs(config, tmp_path / "runs")
        assert len(results) == 4
        for name in COMPARE_RUNS:
            path = tmp_path / "runs" / name
            assert path.exists()
            assert len(TrainingCurve.from_csv(path)) == 2
            network = json.loads(network_path_for(path).read_text(encoding="utf-8"))
            assert network["widths"] == [3, 2, 2]
            assert len(network["layers"]) == 2

    def test_network_path_for(self):
        assert network_path_for("runs/errors_split_0_error.csv") == Path("runs/network_split_0_error.json")


@pytest.mark.slow
def test_full_experiment():
    curve, _ = run_training(TrainConfig())
    assert len(curve) == 250
    assert curve.errors[-1] < curve.initial_error
