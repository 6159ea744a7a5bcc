import numpy as np
import pytest

from mvdpm import dpm, selfdpm
from mvdpm.dpm import SHARED, TrainConfig
from mvdpm.errors import InvalidArgument
from mvdpm.models import ModelSpec, constant_diffusion, linear_meanfield
from mvdpm.noise import TimeGrid, make_grid, sample_brownian


def test_occupation_examples():
    g = TimeGrid([0.0, 0.5, 1.0])
    y = np.array([9.0, 2.0, 4.0])
    np.testing.assert_array_equal(selfdpm.occupation_measure(y, g, 0.5).atoms, [2.0])
    np.testing.assert_array_equal(selfdpm.occupation_measure(y, g, 0.75).atoms, [2.0])
    np.testing.assert_array_equal(selfdpm.occupation_measure(y, g, 1.0).atoms, [2.0, 4.0])
    const = selfdpm.occupation_measure(np.full(3, 1.5), g, 1.0)
    assert np.all(const.atoms == 1.5)
    with pytest.raises(InvalidArgument):
        selfdpm.occupation_measure(y, g, 0.2)


def test_occupation_weights_and_prefix(rng):
    g = make_grid(1.0, 11)
    y = rng.normal(size=11)
    for k in range(1, 11):
        m = selfdpm.occupation_measure(y, g, g.points[k])
        assert m.weight == pytest.approx(1 / k)
        np.testing.assert_array_equal(m.atoms, y[1:k + 1])
    seq = selfdpm.occupation_measures(y, g, start=1)
    for k in range(10):
        np.testing.assert_array_equal(seq[k].atoms, y[1:k + 2])


def test_measure_free_model_equals_single_path_dpm():
    ou = ModelSpec("ou", lambda t, x, m: -np.asarray(x), constant_diffusion(0.4),
                   drift_dx=lambda t, x, m: -np.ones(np.shape(x)))
    p = sample_brownian(make_grid(2.0, 11), 1, seed=5)
    cfg = TrainConfig(epochs=20, mode=SHARED, layer_sizes=(2, 6, 1), seed=2)
    a = selfdpm.train_self(ou, p, 0.3, cfg)
    b = dpm.train(ou, p, 0.3, cfg)
    assert a.loss_history == b.loss_history


def test_train_self_requires_one_path():
    with pytest.raises(InvalidArgument):
        selfdpm.train_self(linear_meanfield(), sample_brownian(make_grid(1.0, 3), 2, 0))


def test_train_self_deterministic_and_recorder(tmp_path):
    p = sample_brownian(make_grid(5.0, 11), 1, seed=0)
    cfg = TrainConfig(epochs=10, mode=SHARED, layer_sizes=(2, 4, 1))
    rec = selfdpm.StatsRecorder(0.2)
    a = selfdpm.train_self(linear_meanfield(), p, None, cfg, callback=rec)
    b = selfdpm.train_self(linear_meanfield(), p, None, cfg)
    assert a.loss_history == b.loss_history
    assert len(rec.rows) == 10
    rec.write_csv(tmp_path / "stats.csv")
    assert (tmp_path / "stats.csv").read_text().startswith("epoch,mean,sd\n")
    assert rec.rows[-1][1:] == pytest.approx(selfdpm.stationary_stats(
        dpm.TrainedSolver(*_previous_nets(a, cfg, p)), burn_in=0.2))


def _previous_nets(solver, cfg, p):
    # the recorder saw the outputs before the final update, so retrain one epoch short
    short = TrainConfig(**{**cfg.__dict__, "epochs": cfg.epochs - 1})
    s = selfdpm.train_self(solver.model, p, None, short)
    return s.nets, s.paths, s.config, s.model


def test_trajectory_stats_examples():
    assert selfdpm.trajectory_stats(np.full(10, 0.7), 0.2) == (0.7, 0.0)
    assert selfdpm.trajectory_stats([0.0, 2.0], 0.0) == (1.0, 1.0)
    assert selfdpm.trajectory_stats([100.0, 0.0, 2.0, 0.0, 2.0], 0.2) == (1.0, 1.0)
    with pytest.raises(InvalidArgument):
        selfdpm.stationary_stats(None, burn_in=1.0)
