import numpy as np
import pytest
from scipy.stats import norm

from mvdpm.errors import InvalidArgument, NumericalFailure
from mvdpm.metrics import BurgersCDF, mse_dist
from mvdpm.models import ModelSpec, burgers, constant_coefficients, constant_diffusion, linear_meanfield
from mvdpm.noise import FBM, PathSet, TimeGrid, make_grid, sample_brownian, sample_paths, thin_grid
from mvdpm.pem import Ensemble, read_ensemble_csv, reference_cdf, simulate, write_ensemble_csv


def test_pure_diffusion_is_exact():
    p = sample_brownian(thin_grid(make_grid(1.0, 41), 0.4, 2), 20, seed=0)
    ens = simulate(constant_coefficients(0.0, 0.7, 0.25), p)
    np.testing.assert_allclose(ens.states, 0.25 + 0.7 * p.values, atol=1e-14)


def test_hand_euler_step():
    model = ModelSpec("lin", lambda t, x, m: -2 * np.asarray(x) - m.mean(),
                      lambda t, x, m: np.zeros(np.shape(x)), x0=1.0)
    p = PathSet(TimeGrid([0.0, 0.5]), np.zeros((1, 2)))
    assert simulate(model, p).states[0, 1] == pytest.approx(-0.5)


def test_zero_noise_deterministic_ode():
    g = make_grid(1.0, 11)
    p = PathSet(g, np.zeros((3, 11)))
    model = ModelSpec("lin", lambda t, x, m: -2 * np.asarray(x) - m.mean(),
                      lambda t, x, m: np.zeros(np.shape(x)), x0=1.0)
    np.testing.assert_allclose(simulate(model, p).states[0], 0.7 ** np.arange(11))


def test_exchangeability():
    p = sample_brownian(make_grid(1.0, 21), 12, seed=3)
    perm = np.random.default_rng(0).permutation(12)
    a = simulate(burgers(), p).states
    b = simulate(burgers(), p.take(perm)).states
    np.testing.assert_allclose(a[perm], b, atol=1e-14)


def test_first_order_convergence_linear_ode():
    # dX = -(2X + E X) dt without noise: Euler error is O(h)
    errs = []
    for h in (0.1, 0.05, 0.025):
        m = int(round(1 / h)) + 1
        p = PathSet(make_grid(1.0, m), np.zeros((2, m)))
        model = ModelSpec("lin", lambda t, x, mu: -2 * np.asarray(x) - mu.mean(),
                          lambda t, x, mu: np.zeros(np.shape(x)), x0=1.0)
        errs.append(abs(simulate(model, p).terminal[0] - np.exp(-3.0)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.7 <= r <= 2.3 for r in ratios)


def test_reference_cdf_standard_normal_dkw():
    ref = reference_cdf(constant_coefficients(0.0, 1.0), 1.0, 0.5, 10_000, seed=1)
    x = np.linspace(-4, 4, 2001)
    assert np.max(np.abs(ref(x) - norm.cdf(x))) < 0.02


def test_burgers_fine_pem_matches_exact_cdf():
    ref = reference_cdf(burgers(0.5), 1.0, 0.01, 5000, seed=2)
    assert mse_dist(ref, BurgersCDF(0.5)) < 1e-4


def test_burgers_mean_shift():
    # E[X_1] = integral of E[F(X_t)] = 1/2 by exchangeability
    ens = simulate(burgers(0.5), sample_brownian(make_grid(1.0, 51), 4000, seed=3))
    assert ens.terminal.mean() == pytest.approx(0.5, abs=0.03)


def test_rejects_mismatched_noise():
    p = sample_paths(make_grid(1.0, 5), 3, 0, FBM, 0.7)
    with pytest.raises(InvalidArgument):
        simulate(burgers(), p)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_reports_step():
    model = ModelSpec("blow", lambda t, x, m: np.asarray(x) ** 8 * 1e30,
                      constant_diffusion(1.0), x0=10.0)
    with pytest.raises(NumericalFailure) as info:
        simulate(model, PathSet(make_grid(1.0, 5), np.zeros((1, 5))))
    assert info.value.index is not None


def test_ensemble_csv_roundtrip(tmp_path):
    ens = simulate(linear_meanfield(), sample_brownian(make_grid(2.0, 9), 5, seed=0))
    write_ensemble_csv(ens, tmp_path / "e.csv")
    back = read_ensemble_csv(tmp_path / "e.csv", "linear_meanfield")
    assert back.grid == ens.grid and np.array_equal(back.states, ens.states)
    np.testing.assert_array_equal(back.at(1.0), ens.states[:, 4])
