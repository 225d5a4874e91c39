"""Command-line runner.

    sgrld sample --config run.json --out results/ [--replicates N] [--seed S]
    sgrld verify --out results/
    sgrld funnel-bench --out results/ [--samples N]

Exit codes: 0 success, 1 configuration error, 2 chain abort, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .bench import FUNNEL_PRESETS, FUNNEL_SIGMA2, marginal_histogram, run_funnel_bench
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import DiagnosticsReport, ece, ensemble_predict, ks_statistic
from .sampler import run_replicates

log = logging.getLogger("sgrld")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_VERIFY = 0, 1, 2, 3


# ---------------------------------------------------------------- file helpers


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _write_matrix(path: Path, header, first_col, matrix) -> None:
    """Integer first column plus float columns, %.17g, LF line endings."""
    data = np.column_stack([first_col, matrix]) if matrix.size else np.asarray(first_col)[:, None]
    fmt = ["%d"] + ["%.17g"] * (data.shape[1] - 1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        if data.shape[0]:
            np.savetxt(fh, data, fmt=fmt, delimiter=",", newline="\n")


def _write_samples(path: Path, chain, target, coords=None) -> None:
    if coords is None:
        header = ["step"] + [f"theta_{i}" for i in range(target.dim)]
        _write_matrix(path, header, chain.sample_steps, chain.samples)
        return
    coords = [int(c) for c in coords]
    u = np.array([target.log_potential(theta) for theta in chain.samples])
    header = ["step", "U"] + [f"theta_{i}" for i in coords]
    body = np.column_stack([u, chain.samples[:, coords]]) if len(u) else np.empty((0, len(coords) + 1))
    _write_matrix(path, header, chain.sample_steps, body)


def _write_steplog(path: Path, chain) -> None:
    data = np.column_stack([chain.u, chain.grad_norm, chain.safeguard.astype(np.float64)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,u,grad_norm,safeguard\n")
        if data.shape[0]:
            np.savetxt(
                fh, np.column_stack([chain.steps, data]), fmt=["%d", "%.17g", "%.17g", "%d"],
                delimiter=",", newline="\n",
            )


def _plots_enabled(flag) -> bool:
    if flag is False:
        return False
    if not plotting.available():
        log.warning("matplotlib not installed; skipping figures")
        return False
    return True


# ---------------------------------------------------------------- sample


def _experiment_summary(cfg: ExperimentConfig, target, chain, rep_dir: Path, plots: bool) -> dict:
    kind = cfg.experiment.kind
    out: dict = {}
    if chain.n_samples == 0:
        return out
    if kind == "funnel":
        theta_d = chain.samples[:, -1]
        out["ks_theta_d"] = ks_statistic(theta_d, target.marginal_cdf)
        out["theta_d_min"] = float(theta_d.min())
        _write_rows(
            rep_dir / "histogram.csv",
            ["bin_left", "bin_right", "count", "true_density"],
            marginal_histogram(theta_d, target.sigma2),
        )
        if plots:
            plotting.funnel_figure({cfg.metric.kind.value: chain.samples}, target.sigma2, rep_dir / "funnel.png")
    elif kind == "gaussian-check":
        out["mean"] = chain.samples.mean(axis=0).tolist()
        out["var"] = chain.samples.var(axis=0).tolist()
    elif kind == "bnn":
        test = cfg.target.build_test_data()
        if test is not None:
            ens = ensemble_predict(chain.samples, target, test.X)
            conf = ens.confidences()
            correct = np.argmax(ens.mean_probs, axis=1) == test.y
            report = DiagnosticsReport(
                log_prob=ens.log_prob(test.y),
                accuracy=ens.accuracy(test.y),
                ece=ece(conf, correct, 10),
            )
            out.update(report.to_dict())
            out.pop("ks", None)
            out.pop("oracle_residuals", None)
            out["last_sample_log_prob"] = ens.member_log_prob(-1, test.y)
            if plots:
                plotting.reliability_figure(conf, correct, 10, rep_dir / "reliability.png")
    return out


def cmd_sample(config_path, out_dir, replicates=None, seed=None, plots=None) -> int:
    try:
        cfg = load_config(config_path)
        if replicates is not None:
            if replicates < 1:
                raise ConfigError("--replicates must be >= 1")
            cfg.experiment.replicates = replicates
        if seed is not None:
            cfg.sampler.seed = seed
        if cfg.experiment.kind == "verify":
            return cmd_verify(out_dir)
        target = cfg.target.build()
        chain_cfg = cfg.chain_config()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(out_dir or cfg.output.dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    n_rep = cfg.experiment.replicates
    plots = _plots_enabled(cfg.output.plots if plots is None else plots)
    manifest = {
        "tool": "sgrld",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": [chain_cfg.seed + i for i in range(n_rep)],
        "status": "running",
        "replicates": [],
    }
    _write_json(out / "manifest.json", manifest)

    started = time.perf_counter()
    chains = run_replicates(chain_cfg, target, n_rep)
    summaries = []
    status = EXIT_OK
    for i, chain in enumerate(chains):
        rep_dir = out / f"replicate_{i:03d}"
        rep_dir.mkdir(exist_ok=True)
        _write_samples(rep_dir / "samples.csv", chain, target, cfg.output.store_coordinates)
        _write_steplog(rep_dir / "steplog.csv", chain)
        if cfg.output.scatter_subsample and chain.n_samples:
            rng = np.random.default_rng(chain.seed)
            k = min(cfg.output.scatter_subsample, chain.n_samples)
            pick = np.sort(rng.choice(chain.n_samples, size=k, replace=False))
            _write_matrix(
                rep_dir / "scatter.csv", ["step"] + [f"theta_{j}" for j in range(target.dim)],
                chain.sample_steps[pick], chain.samples[pick],
            )
        if plots and chain.n_samples:
            plotting.trace_figure(chain, rep_dir / "trace.png")
        summary = {
            "index": i,
            "seed": chain.seed,
            "n_samples": chain.n_samples,
            "steps_run": int(chain.steps.size),
            "step_size": chain.step_size,
            "integration_time": chain.integration_time,
            "safeguard_count": chain.safeguard_count,
            "aborted": chain.aborted,
        }
        summary.update(_experiment_summary(cfg, target, chain, rep_dir, plots))
        summaries.append(summary)
        manifest["replicates"].append({
            "index": i,
            "seed": chain.seed,
            "samples": str((rep_dir / "samples.csv").relative_to(out)),
            "steplog": str((rep_dir / "steplog.csv").relative_to(out)),
            "wall_time": chain.wall_time,
        })
        if chain.aborted:
            print(f"error: replicate {i} aborted: {chain.aborted}", file=sys.stderr)
            status = EXIT_ABORT

    manifest["status"] = "aborted" if status else "complete"
    manifest["wall_time"] = time.perf_counter() - started
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "report.json", {"experiment": cfg.experiment.kind, "replicates": summaries})
    return status


# ---------------------------------------------------------------- verify


def cmd_verify(out_dir, trials: int = 100) -> int:
    from .verify import run_checks

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checks = run_checks(trials=trials)
    rows = [(c.name, c.value, c.threshold, c.passed) for c in checks]
    _write_rows(out / "verify_report.csv", ["check", "value", "threshold", "passed"], rows)
    failed = [c.name for c in checks if not c.passed]
    _write_json(out / "verify_report.json", {
        "checks": [
            {"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed, "mode": c.mode}
            for c in checks
        ],
        "failed": failed,
        "passed": not failed,
    })
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<36s} {c.value:.3e}  (threshold {c.threshold:g})")
    if failed:
        print(f"error: verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- funnel bench


def cmd_funnel_bench(out_dir, samples: int = 200_000, seed: int = 0, plots=True, workers=None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_funnel_bench(samples, seed, workers=workers)
    rows = []
    for name, r in results.items():
        rows.append((name, r.step_size, r.ks, r.theta_d_min, r.theta_d_mean, r.safeguard_count,
                     r.wall_time, r.aborted or ""))
        theta_d = r.samples[:, -1]
        _write_rows(out / f"hist_{name}.csv", ["bin_left", "bin_right", "count", "true_density"],
                    marginal_histogram(theta_d, FUNNEL_SIGMA2))
        if r.samples.shape[0]:
            rng = np.random.default_rng(seed)
            pick = np.sort(rng.choice(r.samples.shape[0], size=min(1000, r.samples.shape[0]), replace=False))
            _write_rows(out / f"scatter_{name}.csv", ["theta_1", "theta_d"],
                        [(float(a), float(b)) for a, b in r.samples[pick]])
    _write_rows(
        out / "funnel_bench.csv",
        ["metric", "step_size", "ks", "theta_d_min", "theta_d_mean", "safeguard_count", "wall_time", "aborted"],
        rows,
    )
    ks = {n: r.ks for n, r in results.items()}
    report = {
        "samples_per_metric": samples,
        "seed": seed,
        "presets": {n: {"metric": p[0], "step_size": p[1]} for n, p in FUNNEL_PRESETS.items()},
        "ks": ks,
        "theta_d_min": {n: r.theta_d_min for n, r in results.items()},
        "orderings": {
            "ks_monge_below_identity": ks["monge"] < ks["identity"],
            "ks_shampoo_below_identity": ks["shampoo"] < ks["identity"],
            "identity_min_above_monge_min": results["identity"].theta_d_min > results["monge"].theta_d_min,
        },
    }
    _write_json(out / "report.json", report)
    if _plots_enabled(plots):
        plotting.funnel_figure({n: r.samples for n, r in results.items()}, FUNNEL_SIGMA2, out / "funnel.png")
    print(f"{'metric':<10s} {'ks':>8s} {'min theta_D':>12s} {'safeguard':>10s}")
    for name, r in results.items():
        print(f"{name:<10s} {r.ks:8.4f} {r.theta_d_min:12.3f} {r.safeguard_count:10d}")
    if any(r.aborted for r in results.values()):
        return EXIT_ABORT
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgrld", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sgrld {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run chains from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-plots", action="store_true")

    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("--out", required=True)
    v.add_argument("--trials", type=int, default=100)

    f = sub.add_parser("funnel-bench", help="funnel comparison of identity, RMSprop, Monge and Shampoo")
    f.add_argument("--out", required=True)
    f.add_argument("--samples", type=int, default=200_000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--no-plots", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "sample":
        return cmd_sample(args.config, args.out, args.replicates, args.seed, False if args.no_plots else None)
    if args.command == "verify":
        return cmd_verify(args.out, args.trials)
    return cmd_funnel_bench(args.out, args.samples, args.seed, plots=not args.no_plots)


if __name__ == "__main__":
    sys.exit(main())
