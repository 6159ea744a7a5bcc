"""Acceptance criteria, each checked at its stated tolerance.

Seed convention for the Monte-Carlo criteria: noise seed ``s`` and network
initialisation seed ``1000 + s`` for ``s`` in 0..4.
"""

import itertools
import time

import numpy as np
from scipy.stats import norm

from mvdpm import autonet, dpm, selfdpm
from mvdpm.autonet import Mlp
from mvdpm.dpm import PER_PARTICLE, SHARED, TrainConfig
from mvdpm.metrics import BurgersCDF, burgers_exact_cdf, ecdf, mse_dist, wasserstein_p_1d
from mvdpm.models import burgers, constant_coefficients, fbm_interaction, linear_meanfield
from mvdpm.noise import FBM, fbm_covariance, make_grid, row_rng, sample_brownian, sample_fbm, sample_paths, thin_grid
from mvdpm.pem import reference_cdf, simulate

SEEDS = range(5)
EXACT = BurgersCDF(0.5, 1.0)


def _dpm_mse(model, paths, ref, **cfg):
    solver = dpm.train(model, paths, None, TrainConfig(**cfg))
    return mse_dist(ecdf(dpm.evaluate(solver).terminal), ref)


def test_criterion_1_burgers_baseline_gap(report):
    grid = make_grid(1.0, 2)
    pem_vals, dpm_vals, worst_time = [], [], 0.0
    for s in SEEDS:
        paths = sample_brownian(grid, 50, s)
        pem_vals.append(mse_dist(ecdf(simulate(burgers(0.5), paths).terminal), EXACT))
        t0 = time.process_time()
        dpm_vals.append(_dpm_mse(burgers(0.5), paths, EXACT, epochs=150, lr=1e-3, mode=PER_PARTICLE,
                                 layer_sizes=(2, 32, 32, 1), seed=1000 + s))
        worst_time = max(worst_time, time.process_time() - t0)
    pem_med, dpm_med = np.median(pem_vals), np.median(dpm_vals)
    checks = [2.812570e-2 / 3 <= pem_med <= 2.812570e-2 * 3, dpm_med <= 5e-3,
              all(d < p for d, p in zip(dpm_vals, pem_vals)), worst_time <= 600]
    detail = (f"PEM median {pem_med:.3e} (band [9.38e-03, 8.44e-02]); DPM median {dpm_med:.3e} (<= 5e-03); "
              f"DPM<PEM on {sum(d < p for d, p in zip(dpm_vals, pem_vals))}/5 seeds; "
              f"max CPU {worst_time:.1f}s per seed")
    assert report(1, "Burgers baseline gap h=1 M=2 N=50", all(checks), detail)


def test_criterion_2_meshless_robustness(report):
    grid = make_grid(1.0, 51)
    paths = sample_paths(grid, 50, 0)
    vals = {}
    for rate in (0.1, 0.5, 0.9):
        thinned = paths.restrict(thin_grid(grid, rate, row_rng(0, 7)))
        vals[rate] = _dpm_mse(burgers(0.5), thinned, EXACT, epochs=150, seed=1000)
    ratio = max(vals.values()) / min(vals.values())
    ok = all(v <= 2e-3 for v in vals.values()) and ratio <= 5
    detail = ", ".join(f"rate {r}: {v:.3e}" for r, v in vals.items()) + f"; max/min {ratio:.2f} (<= 5)"
    assert report(2, "meshless robustness h=0.02 M=51 N=50", ok, detail)


def test_criterion_3_fbm_experiment(report):
    model = fbm_interaction(0.5, 0.7)
    ref = reference_cdf(model, 1.0, 0.05, 2000, seed=99)
    grid = make_grid(1.0, 11)
    pem_vals, dpm_vals = [], []
    for s in SEEDS:
        paths = sample_paths(grid, 50, s, FBM, 0.7)
        pem_vals.append(mse_dist(ecdf(simulate(model, paths).terminal), ref))
        dpm_vals.append(_dpm_mse(model, paths, ref, epochs=200, layer_sizes=(2, 64, 64, 1), seed=1000 + s))
    pem_med, dpm_med = np.median(pem_vals), np.median(dpm_vals)
    ratio = max(pem_med, dpm_med) / min(pem_med, dpm_med)
    ok = ratio <= 3 and pem_med <= 1e-2 and dpm_med <= 1e-2
    detail = (f"median over 5 seeds: DPM {dpm_med:.3e}, PEM {pem_med:.3e}, factor {ratio:.2f} (<= 3); "
              f"reference fine PEM h=0.05 N=2000")
    assert report(3, "fBM H=0.7 h=0.1 M=11 N=50", ok, detail)


def test_criterion_4_stationary_distribution(report):
    model = linear_meanfield(0.5, 0.0)
    grid = make_grid(25.0, 51)
    means, sds = [], []
    for s in SEEDS:
        solver = selfdpm.train_self(model, sample_brownian(grid, 1, s), None,
                                    TrainConfig(epochs=20000, mode=SHARED, seed=1000 + s))
        mean, sd = selfdpm.stationary_stats(solver, burn_in=0.2)
        means.append(mean)
        sds.append(sd)
    mean, sd = np.median(means), np.median(sds)
    ok = abs(mean) <= 0.05 and abs(sd - 0.25) <= 0.05
    detail = (f"median over 5 paths: mean {mean:+.4f} (|.| <= 0.05), sd {sd:.4f} (0.25 +- 0.05); "
              f"per-path sd {', '.join(f'{v:.3f}' for v in sds)}")
    assert report(4, "self-interacting stationary law", ok, detail)


def _rel(a, b, floor=1e-3):
    return abs(a - b) / max(abs(b), floor)


def test_criterion_5_derivative_engine(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_t = worst_w = worst_ww = worst_bp = 0.0
    for k in range(100):
        sizes = (2,) + tuple(int(n) for n in rng.integers(1, 9, rng.integers(1, 4))) + (1,)
        net = autonet.init(sizes, seed=k)
        net.theta += 0.1 * rng.normal(size=net.theta.size)  # nonzero biases
        t, w = rng.uniform(0, 1), rng.normal()
        f = lambda a, b: net(np.array([a]), np.array([b]))[0]
        j = net.jet(np.array([t]), np.array([w]))
        h1, h2 = 1e-4, 1e-3
        worst_t = max(worst_t, _rel((f(t + h1, w) - f(t - h1, w)) / (2 * h1), j.f_t[0]))
        worst_w = max(worst_w, _rel((f(t, w + h1) - f(t, w - h1)) / (2 * h1), j.f_w[0]))
        worst_ww = max(worst_ww, _rel((f(t, w + h2) - 2 * f(t, w) + f(t, w - h2)) / h2 ** 2, j.f_ww[0]))

        cot = rng.normal(size=4)
        grad = net.backprop(np.array([t]), np.array([w]), list(cot))
        objective = lambda th: float(np.dot(cot, [c[0] for c in Mlp(sizes, th).jet(np.array([t]), np.array([w]))]))
        eps = 1e-5
        for i in range(net.theta.size):
            e = np.zeros_like(net.theta)
            e[i] = eps
            fd = (objective(net.theta + e) - objective(net.theta - e)) / (2 * eps)
            worst_bp = max(worst_bp, _rel(grad[i], fd))
    elapsed = time.perf_counter() - start
    ok = worst_t <= 1e-5 and worst_w <= 1e-5 and worst_ww <= 1e-4 and worst_bp <= 1e-4 and elapsed < 60
    detail = (f"max rel err f_t {worst_t:.1e}, f_w {worst_w:.1e} (<= 1e-5), f_ww {worst_ww:.1e} (<= 1e-4), "
              f"backprop {worst_bp:.1e} (<= 1e-4); {elapsed:.1f}s; relative to max(|value|, 1e-3)")
    assert report(5, "derivative-engine oracle suite", ok, detail)


def test_criterion_6_exact_solution_property(report):
    x0, a, c = 0.2, 0.3, 0.5
    paths = sample_brownian(make_grid(1.0, 11), 200, 0)
    solver = dpm.train(constant_coefficients(a, c, x0), paths, None,
                       TrainConfig(epochs=6000, lr=1e-2, mode=SHARED, layer_sizes=(2, 16, 16, 1), seed=1,
                                   thresholds=(3e-6, 3e-6, 3e-6)))
    y = dpm.evaluate(solver).terminal
    analytic = x0 + a * 1.0 + c * paths.values[:, -1]
    w2 = wasserstein_p_1d(y, analytic, 2)
    loss = solver.final_loss.total
    ok = loss < 1e-5 and w2 < 0.05
    detail = (f"total loss {loss:.2e} (< 1e-5) after {len(solver.loss_history)} epochs; "
              f"W2 to x0+aT+cW_T on the same N=200 paths {w2:.2e} (< 0.05)")
    assert report(6, "constant-coefficient exact solution", ok, detail)


def test_criterion_7_oracle_equivalences(report):
    rng = np.random.default_rng(77)
    worst_w = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=n), rng.normal(size=n)
        best = min(np.mean((a - b[list(p)]) ** 2) for p in itertools.permutations(range(n))) ** 0.5
        worst_w = max(worst_w, abs(wasserstein_p_1d(a, b, 2) - best))

    grid = make_grid(1.0, 5)
    worst_z = 0.0
    n_paths = 100_000
    for hurst in (0.5, 0.7, 0.9):
        x = sample_fbm(grid, hurst, n_paths, seed=int(hurst * 10))
        x = x.values[:, 1:]
        cov = fbm_covariance(grid.points[1:], hurst)
        emp = x.T @ x / n_paths  # zero-mean process
        se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n_paths)
        worst_z = max(worst_z, float(np.max(np.abs(emp - cov) / se)))

    xs = np.linspace(-10, 10, 401)
    cdf = burgers_exact_cdf(xs, 0.5)
    monotone = bool(np.all(np.diff(cdf) >= 0))
    tails = burgers_exact_cdf(-10.0, 0.5) < 1e-6 and 1 - burgers_exact_cdf(10.0, 0.5) < 1e-6
    ok = worst_w <= 1e-12 and worst_z <= 3 and monotone and tails
    detail = (f"W2 vs permutations max gap {worst_w:.1e} (<= 1e-12); fBM covariance max |z| {worst_z:.2f} (<= 3); "
              f"Burgers CDF monotone={monotone}, tails<1e-6={tails}")
    assert report(7, "oracle equivalences", ok, detail)


def test_criterion_8_shared_vs_per_particle(report):
    grid = make_grid(1.0, 101)
    shared, per = [], []
    for s in SEEDS:
        paths = sample_brownian(grid, 50, s)
        shared.append(_dpm_mse(burgers(0.5), paths, EXACT, epochs=150, mode=SHARED, seed=1000 + s))
        per.append(_dpm_mse(burgers(0.5), paths, EXACT, epochs=150, mode=PER_PARTICLE, seed=1000 + s))
    ok = np.median(shared) >= np.median(per)
    detail = (f"150 epochs each, median MSE_dist shared {np.median(shared):.3e} >= "
              f"per-particle {np.median(per):.3e}")
    assert report(8, "shared-F vs per-particle ordering", ok, detail)
