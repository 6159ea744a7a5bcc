"""Experiment harness: ``gen-noise``, ``run``, ``compare`` and ``reproduce <preset>``.

Configuration is a flat ``key = value`` file; ``--set key=value`` and the
``--seed`` / ``--out`` flags override it. All randomness derives from the
single run seed through named sub-streams (see ``derive_seed``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
import zlib
from dataclasses import dataclass, fields
from datetime import datetime, timezone

import numpy as np

from mvdpm import dpm, selfdpm
from mvdpm.errors import InvalidArgument, NumericalFailure
from mvdpm.metrics import (BurgersCDF, ecdf, mse_dist, trajectory_error,
                           wasserstein_p_1d, moments)
from mvdpm.models import get_model
from mvdpm.noise import (BROWNIAN, FBM, make_grid, row_rng, sample_paths, thin_grid,
                         write_paths_csv)
from mvdpm.pem import read_ensemble_csv, reference_ensemble, simulate, write_ensemble_csv

log = logging.getLogger("mvdpm")

SOLVERS = ("pem", "dpm-shared", "dpm-particle", "dpm-self")
STREAMS = ("noise", "init", "thin", "mse", "reference")


def derive_seed(seed: int, stream: str) -> int:
    """64-bit seed for a named sub-stream of the run seed.

    The stream is ``SeedSequence([seed, crc32(name)])``; noise, network
    initialisation, grid thinning, MSE evaluation points and the reference
    ensemble each draw from their own.
    """
    if stream not in STREAMS:
        raise InvalidArgument(f"unknown stream {stream!r}")
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class RunConfig:
    name: str = "run"
    model: str = "burgers"
    sigma: float = 0.5
    hurst: float = 0.7
    x0: float = 0.0
    t_end: float = 1.0
    m_points: int = 101
    deletion_rate: float = 0.0
    n_particles: int = 50
    solver: str = "dpm-particle"
    epochs: int = 150
    lr: float = 1e-3
    layer_sizes: str = "2,32,32,1"
    thresholds: str = "0,0,0"
    include_initial: bool = True
    reference: str = "auto"
    fine_h: float = 0.05
    big_n: int = 2000
    mse_points: int = 10_000
    mse_lo: float = -1.5
    mse_hi: float = 2.5
    burn_in: float = 0.2
    seed: int = 0
    out: str = "runs/run"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise InvalidArgument(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.reference not in ("auto", "exact", "pem", "none"):
            raise InvalidArgument(f"unknown reference {self.reference!r}")
        get_model(self.model, **self.model_params())
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")

    def model_params(self) -> dict:
        params = {"sigma": self.sigma, "x0": self.x0}
        if self.model == "fbm_interaction":
            params["hurst"] = self.hurst
        return params

    def train_config(self) -> dpm.TrainConfig:
        mode = dpm.PER_PARTICLE if self.solver == "dpm-particle" else dpm.SHARED
        return dpm.TrainConfig(
            epochs=self.epochs, lr=self.lr, mode=mode,
            layer_sizes=tuple(int(v) for v in str(self.layer_sizes).split(",")),
            thresholds=tuple(float(v) for v in str(self.thresholds).split(",")),
            seed=derive_seed(self.seed, "init"), include_initial=self.include_initial)

    def reference_kind(self) -> str:
        if self.reference != "auto":
            return self.reference
        if self.solver == "dpm-self":
            return "none"
        return "exact" if self.model == "burgers" and self.x0 == 0.0 else "pem"


def _coerce(field_type, value: str):
    if field_type in (bool, "bool"):
        lowered = str(value).strip().lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise InvalidArgument(f"not a boolean: {value!r}")
        return lowered in ("true", "1", "yes")
    if field_type in (int, "int"):
        return int(float(value)) if float(value).is_integer() else int(value)
    if field_type in (float, "float"):
        return float(value)
    return str(value).strip()


def parse_assignments(lines) -> dict:
    known = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise InvalidArgument(f"unknown config key {key!r}")
        out[key] = _coerce(known[key], value)
    return out


def load_config(path=None, overrides=(), **flags) -> RunConfig:
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_assignments(fh))
    values.update(parse_assignments(overrides))
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(**values)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "params"])
        for metric, value, params in rows:
            writer.writerow([metric, f"{value:.17g}", params])


def read_metrics_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {row["metric"]: float(row["value"]) for row in csv.DictReader(fh)}


def build_paths(cfg: RunConfig):
    grid = make_grid(cfg.t_end, cfg.m_points)
    model = get_model(cfg.model, **cfg.model_params())
    n = 1 if cfg.solver == "dpm-self" else cfg.n_particles
    paths = sample_paths(grid, n, derive_seed(cfg.seed, "noise"), model.noise_kind, cfg.hurst)
    if cfg.deletion_rate > 0:
        thinned = thin_grid(grid, cfg.deletion_rate, row_rng(derive_seed(cfg.seed, "thin"), 0))
        paths = paths.restrict(thinned)
    return model, paths


def reference_cdf_for(cfg: RunConfig, model):
    kind = cfg.reference_kind()
    if kind == "exact":
        if cfg.model != "burgers" or cfg.x0 != 0.0:
            raise InvalidArgument("the exact reference CDF exists only for burgers with x0 = 0")
        return BurgersCDF(cfg.sigma, cfg.t_end), "exact"
    if kind == "pem":
        ens = reference_ensemble(model, cfg.t_end, cfg.fine_h, cfg.big_n,
                                 derive_seed(cfg.seed, "reference"))
        return ecdf(ens.terminal), f"pem(h={cfg.fine_h:g},N={cfg.big_n})"
    return None, "none"


def run(cfg: RunConfig) -> dict:
    """Execute one configured run and write its artifacts to ``cfg.out``."""
    os.makedirs(cfg.out, exist_ok=True)
    files = []
    manifest = {"config": dataclasses.asdict(cfg), "started": _now(), "status": "running", "partial": True,
                "streams": {s: str(derive_seed(cfg.seed, s)) for s in STREAMS}}
    t_start = time.perf_counter()

    def out(name):
        path = os.path.join(cfg.out, name)
        files.append(path)
        return path

    try:
        model, paths = build_paths(cfg)
        write_paths_csv(paths, out("paths.csv"))
        metrics = []
        t_train = time.perf_counter()
        if cfg.solver == "pem":
            ensemble = simulate(model, paths)
        else:
            tc = cfg.train_config()
            if cfg.solver == "dpm-self":
                recorder = selfdpm.StatsRecorder(cfg.burn_in)
                solver = selfdpm.train_self(model, paths, None, tc, callback=recorder)
                recorder.write_csv(out("stats.csv"))
                mean, sd = selfdpm.stationary_stats(solver, burn_in=cfg.burn_in)
                metrics += [("stationary_mean", mean, f"burn_in={cfg.burn_in:g}"),
                            ("stationary_sd", sd, f"burn_in={cfg.burn_in:g}")]
            else:
                solver = dpm.train(model, paths, None, tc)
            dpm.write_loss_history(solver.loss_history, out("loss_history.csv"))
            for name in dpm.save_solver(solver, os.path.join(cfg.out, "solver")):
                files.append(name)
            ensemble = dpm.evaluate(solver)
            final = solver.final_loss
            metrics += [("L1", final.L1, f"epochs={len(solver.loss_history)}"),
                        ("L2", final.L2, f"epochs={len(solver.loss_history)}"),
                        ("L3", final.L3, f"epochs={len(solver.loss_history)}")]
        manifest["train_seconds"] = time.perf_counter() - t_train
        write_ensemble_csv(ensemble, out("ensemble.csv"))

        mean, sd = moments(ensemble.terminal)
        metrics += [("terminal_mean", mean, f"t={cfg.t_end:g}"), ("terminal_sd", sd, f"t={cfg.t_end:g}")]
        ref, ref_label = reference_cdf_for(cfg, model)
        if ref is not None:
            value = mse_dist(ecdf(ensemble.terminal), ref, cfg.mse_points, (cfg.mse_lo, cfg.mse_hi),
                             derive_seed(cfg.seed, "mse"))
            metrics.append(("mse_dist", value,
                            f"reference={ref_label};k={cfg.mse_points};range=({cfg.mse_lo:g},{cfg.mse_hi:g})"))
        write_metrics_csv(metrics, out("metrics.csv"))
        manifest["status"] = "ok"
        manifest["partial"] = False
        manifest["metrics"] = {m: v for m, v, _ in metrics}
    except NumericalFailure as exc:
        manifest["status"] = "failed"
        manifest["error"] = str(exc)
        raise
    finally:
        manifest["finished"] = _now()
        manifest["wall_seconds"] = time.perf_counter() - t_start
        manifest["files"] = [{"name": os.path.basename(p), "sha256": _sha256(p)}
                             for p in files if os.path.exists(p)]
        with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
    return manifest


def _load_run(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = RunConfig(**manifest["config"])
    return cfg, read_ensemble_csv(os.path.join(path, "ensemble.csv"), cfg.model)


def compare(run_a, run_b, reference, out_path) -> list:
    """Side-by-side metrics of two runs against a reference run directory or ``exact``."""
    cfg_a, ens_a = _load_run(run_a)
    cfg_b, ens_b = _load_run(run_b)
    if cfg_a.model != cfg_b.model or not np.isclose(ens_a.grid.t_end, ens_b.grid.t_end):
        raise InvalidArgument("runs must share the model and the evaluation time")
    ens_ref = None
    if reference == "exact":
        ref_cdf = BurgersCDF(cfg_a.sigma, cfg_a.t_end)
        if cfg_a.model != "burgers":
            raise InvalidArgument("the exact reference exists only for burgers")
    else:
        cfg_r, ens_ref = _load_run(reference)
        if cfg_r.model != cfg_a.model or not np.isclose(ens_ref.grid.t_end, ens_a.grid.t_end):
            raise InvalidArgument("reference run has a different model or evaluation time")
        ref_cdf = ecdf(ens_ref.terminal)
    mse_seed = derive_seed(cfg_a.seed, "mse")
    rng = (cfg_a.mse_lo, cfg_a.mse_hi)
    rows = [("mse_dist", "", mse_dist(ecdf(ens_a.terminal), ref_cdf, cfg_a.mse_points, rng, mse_seed),
             mse_dist(ecdf(ens_b.terminal), ref_cdf, cfg_a.mse_points, rng, mse_seed))]
    if ens_ref is not None:
        w2 = []
        for ens in (ens_a, ens_b):
            w2.append(wasserstein_p_1d(ens.terminal, ens_ref.terminal, 2)
                      if ens.n_particles == ens_ref.n_particles else float("nan"))
        rows.append(("w2_terminal", "", w2[0], w2[1]))
        curves = []
        for ens in (ens_a, ens_b):
            curves.append(_paired_trajectory_error(ens, ens_ref))
        if curves[0] is not None and curves[1] is not None:
            times = sorted(set(curves[0]) & set(curves[1]))
            rows += [("trajectory_error", f"{t:.17g}", curves[0][t], curves[1][t]) for t in times]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "t", "run_a", "run_b"])
        for metric, t, a, b in rows:
            writer.writerow([metric, t, f"{a:.17g}", f"{b:.17g}"])
    return rows


def _paired_trajectory_error(ens, ref):
    if ens.n_particles != ref.n_particles:
        return None
    common = np.intersect1d(np.round(ens.grid.points, 12), np.round(ref.grid.points, 12))
    if common.size == 0:
        return None
    from mvdpm.noise import TimeGrid
    from mvdpm.pem import Ensemble

    sub = TimeGrid(common)
    a = Ensemble(sub, ens.states[:, ens.grid.indices_of(sub)])
    b = Ensemble(sub, ref.states[:, ref.grid.indices_of(sub)])
    return dict(zip(common.tolist(), trajectory_error(a, b).tolist()))


# Named experiment presets: lists of (row name, config overrides).
_BURGERS = {"model": "burgers", "sigma": 0.5, "x0": 0.0, "t_end": 1.0}
_FBM = {"model": "fbm_interaction", "sigma": 0.5, "hurst": 0.7, "x0": 0.0, "t_end": 1.0,
        "reference": "pem", "fine_h": 0.05, "big_n": 2000, "layer_sizes": "2,64,64,1",
        "epochs": 200}


def _table1_rows():
    rows = []
    for i, (m, n) in enumerate([(2, 50), (3, 50), (2, 100), (3, 100)]):
        epochs = 150 if i == 0 else 100
        rows.append((f"row{2 * i + 1}", dict(_BURGERS, solver="pem", m_points=m, n_particles=n)))
        rows.append((f"row{2 * i + 2}", dict(_BURGERS, solver="dpm-particle", m_points=m,
                                             n_particles=n, epochs=epochs)))
    return rows


def _table2_rows():
    rows = []
    for m in (51, 101):
        for rate in (0.1, 0.2, 0.5, 0.7, 0.9):
            rows.append((f"M{m}-del{rate:g}", dict(_BURGERS, solver="dpm-particle", m_points=m,
                                                   n_particles=50, deletion_rate=rate, epochs=150)))
    return rows


def _table3_rows():
    rows = []
    for i, (m, n) in enumerate([(11, 50), (3, 50), (11, 100), (3, 100)]):
        rows.append((f"row{2 * i + 1}", dict(_FBM, solver="pem", m_points=m, n_particles=n)))
        rows.append((f"row{2 * i + 2}", dict(_FBM, solver="dpm-particle", m_points=m, n_particles=n)))
    return rows


PRESETS = {
    "table1": _table1_rows(),
    "table2": _table2_rows(),
    "table3": _table3_rows(),
    "stationary": [("stationary", {"model": "linear_meanfield", "sigma": 0.5, "x0": 0.0,
                                   "t_end": 25.0, "m_points": 51, "solver": "dpm-self",
                                   "epochs": 20000, "burn_in": 0.2})],
    "convergence": [(name, dict(_BURGERS, solver=solver, m_points=101, n_particles=50, epochs=150))
                    for name, solver in (("pem", "pem"), ("dpm1", "dpm-shared"),
                                         ("dpm2", "dpm-particle"))],
}
for _table in ("table1", "table3"):
    for _row, _over in PRESETS[_table]:
        PRESETS[f"{_table}-{_row}"] = [(_row, _over)]


def reproduce(preset: str, seed: int = 0, out: str = "runs") -> list:
    if preset not in PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = os.path.join(out, preset)
    summary = []
    for row, overrides in PRESETS[preset]:
        cfg = RunConfig(name=f"{preset}/{row}", seed=seed, out=os.path.join(base, row), **overrides)
        log.info("running %s", cfg.name)
        manifest = run(cfg)
        summary.append((row, cfg, manifest))
    with open(os.path.join(base, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "solver", "h", "M", "N", "deletion_rate", "mse_dist", "train_seconds"])
        for row, cfg, manifest in summary:
            writer.writerow([row, cfg.solver, f"{cfg.t_end / (cfg.m_points - 1):g}", cfg.m_points,
                             cfg.n_particles, cfg.deletion_rate,
                             f"{manifest['metrics'].get('mse_dist', float('nan')):.6e}",
                             f"{manifest['train_seconds']:.2f}"])
    if preset == "convergence":
        compare(os.path.join(base, "dpm1"), os.path.join(base, "dpm2"), "exact",
                os.path.join(base, "comparison_exact.csv"))
        compare(os.path.join(base, "dpm1"), os.path.join(base, "dpm2"), os.path.join(base, "pem"),
                os.path.join(base, "comparison_pem.csv"))
    return summary


def _cmd_gen_noise(args):
    grid = make_grid(args.t_end, args.m_points)
    seed = derive_seed(args.seed, "noise")
    paths = sample_paths(grid, args.n_paths, seed, args.kind, args.hurst)
    if args.deletion_rate > 0:
        paths = paths.restrict(thin_grid(grid, args.deletion_rate, row_rng(derive_seed(args.seed, "thin"), 0)))
    write_paths_csv(paths, args.out)
    print(f"wrote {paths.n_paths} paths x {len(paths.grid)} points to {args.out}")


def _cmd_run(args):
    cfg = load_config(args.config, args.set, seed=args.seed, out=args.out)
    manifest = run(cfg)
    for metric, value in manifest["metrics"].items():
        print(f"{metric:>16s}  {value:.6e}")
    print(f"artifacts in {cfg.out}")


def _cmd_compare(args):
    rows = compare(args.run_a, args.run_b, args.reference, args.out)
    for metric, t, a, b in rows:
        if metric != "trajectory_error":
            print(f"{metric:>16s}  a={a:.6e}  b={b:.6e}")
    print(f"wrote {args.out}")


def _cmd_reproduce(args):
    summary = reproduce(args.preset, args.seed if args.seed is not None else 0, args.out or "runs")
    for row, cfg, manifest in summary:
        shown = {k: f"{v:.4e}" for k, v in manifest["metrics"].items()
                 if k in ("mse_dist", "stationary_mean", "stationary_sd")}
        print(f"{row:>12s}  {cfg.solver:<13s} M={cfg.m_points:<4d} N={cfg.n_particles:<4d} {shown}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvdpm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-noise", help="sample driving paths to CSV")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--m-points", type=int, default=101)
    p.add_argument("--n-paths", type=int, default=50)
    p.add_argument("--kind", choices=(BROWNIAN, FBM), default=BROWNIAN)
    p.add_argument("--hurst", type=float, default=0.5)
    p.add_argument("--deletion-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_noise)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="compare two run directories against a reference")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--reference", required=True, help="reference run directory, or 'exact'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("reproduce", help="rerun a named experiment preset")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
