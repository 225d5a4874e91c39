"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the summary lines are printed
at the end of the session) or directly with ``python3 tests/test_acceptance.py``.
Tolerances and runtime budgets are fixed here.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import norm

from sgrld.bench import run_funnel_bench
from sgrld.cli import main as cli_main
from sgrld.diagnostics import (
    ece,
    ensemble_predict,
    gradient_check,
    ks_statistic,
    verify_metric,
    verify_monge_gamma,
)
from sgrld.metrics import MetricKind, make_metric, monge_gamma
from sgrld.sampler import ChainAbort, ChainConfig, run_chain
from sgrld.targets import FunnelTarget, GaussianTarget, MlpTarget, PriorSpec, two_cluster
from sgrld.tensorcore import ParamRegistry

RESULTS: dict[int, str] = {}

# Funnel pilot (seed 0, 2e5 samples per metric), recorded when the presets were fixed.
# The required orderings are the criterion; these values are kept for reference.
FUNNEL_PILOT_KS = {"identity": 0.111, "rmsprop": 0.055, "monge": 0.179, "shampoo": 0.091}
FUNNEL_PILOT_MIN = {"identity": -7.7, "rmsprop": -11.0, "monge": -42.0, "shampoo": -10.5}

# Desk-scale BNN hyperparameters chosen by a pilot over learning rates {0.01, 0.1, 1}.
BNN_LR = 0.1
BNN_METRICS = {
    "identity": {"kind": "identity"},
    "rmsprop": {"kind": "rmsprop"},
    "wenzel": {"kind": "wenzel"},
    "monge": {"kind": "monge"},
    "shampoo": {"kind": "shampoo", "eps": 1e-2, "refresh_interval": 10},
}


def record(n: int, passed: bool, detail: str, elapsed: float, budget: float) -> bool:
    within = elapsed < budget
    ok = passed and within
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s / budget {budget:.0f}s]"
    RESULTS[n] = line
    print(line, flush=True)
    return ok


# ---------------------------------------------------------------- 1


def criterion_1():
    t0 = time.perf_counter()
    parts = []
    ok = True
    for kind in MetricKind:
        shampoo = kind is MetricKind.SHAMPOO
        r = verify_metric(kind, 64, 100, seed=1)
        tol_apply, tol_eye = (1e-8, 1e-7) if shampoo else (1e-10, 1e-10)
        good = r["inv"] < tol_apply and r["inv_sqrt"] < tol_apply and r["inverse"] < tol_eye and r["root"] < 1e-9
        ok &= good
        parts.append(f"{kind.value}={max(r.values()):.1e}")
    return record(1, ok, "metric oracles " + " ".join(parts), time.perf_counter() - t0, 10)


def test_criterion_1_metric_oracles():
    assert criterion_1()


# ---------------------------------------------------------------- 2


def criterion_2():
    t0 = time.perf_counter()
    ok = True
    for target in (FunnelTarget(noise_std=1.0), GaussianTarget(np.zeros(5), 1.0)):
        base = dict(learning_rate=1e-3, total_steps=10_000, burn_in_steps=0, thinning=1, seed=123)
        a = run_chain(ChainConfig(metric={"kind": "identity"}, **base), target)
        b = run_chain(ChainConfig(metric={"kind": "monge", "alpha2": 0.0, "lam": 0.7}, **base), target)
        ok &= a.samples.tobytes() == b.samples.tobytes()
    return record(2, ok, "alpha2=0 Monge bit-identical to Identity (funnel, Gaussian; 1e4 steps)",
                  time.perf_counter() - t0, 5)


def test_criterion_2_identity_reduction():
    assert criterion_2()


# ---------------------------------------------------------------- 3


def criterion_3():
    t0 = time.perf_counter()
    err = verify_monge_gamma(D=3, trials=20, fd_step=1e-5, seed=0)
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 3))
    A = A + A.T
    m = A @ rng.standard_normal(3)
    gaps = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    ratios = [monge_gamma(m, A, 0.5, 1.0 - g) / g for g in gaps]
    linear = max(np.max(np.abs(r - ratios[0])) for r in ratios) <= 1e-9 * np.max(np.abs(ratios[0]))
    ok = err < 1e-4 and linear
    return record(3, ok, f"Gamma vs finite differences rel.err={err:.2e} (<1e-4); linear in (1-lam): {linear}",
                  time.perf_counter() - t0, 5)


def test_criterion_3_gamma_oracle():
    assert criterion_3()


# ---------------------------------------------------------------- 4


STATIONARITY_SPECS = {
    "identity": {"kind": "identity"},
    "rmsprop": {"kind": "rmsprop"},
    "wenzel": {"kind": "wenzel"},
    "monge": {"kind": "monge", "alpha2": 0.1},
    "shampoo": {"kind": "shampoo", "refresh_interval": 100},
}


def criterion_4():
    t0 = time.perf_counter()
    target = GaussianTarget(np.zeros(10), 1.0)
    ok = True
    parts = []
    for name, spec in STATIONARITY_SPECS.items():
        cfg = ChainConfig(metric=spec, learning_rate=1e-3, total_steps=201_000, burn_in_steps=1000,
                          thinning=1, seed=0)
        try:
            s = run_chain(cfg, target).samples
        except ChainAbort as exc:
            ok = False
            parts.append(f"{name}: aborted ({exc})")
            continue
        mean_err = float(np.max(np.abs(s.mean(axis=0))))
        var = s.var(axis=0)
        good = mean_err < 0.05 and np.all((var >= 0.9) & (var <= 1.1))
        ok &= bool(good)
        parts.append(f"{name}: max|m|={mean_err:.3f} var=[{var.min():.2f},{var.max():.2f}]")
    return record(4, ok, "stationarity " + "; ".join(parts), time.perf_counter() - t0, 120)


def test_criterion_4_stationarity():
    assert criterion_4()


# ---------------------------------------------------------------- 5


def criterion_5():
    t0 = time.perf_counter()
    res = run_funnel_bench(n_samples=200_000, seed=0)
    ks = {k: r.ks for k, r in res.items()}
    lo = {k: r.theta_d_min for k, r in res.items()}
    checks = {
        "KS(monge)<KS(identity)": ks["monge"] < ks["identity"],
        "KS(shampoo)<KS(identity)": ks["shampoo"] < ks["identity"],
        "min(identity)>min(monge)": lo["identity"] > lo["monge"],
    }
    ok = all(checks.values()) and not any(r.aborted for r in res.values())
    detail = "funnel KS " + " ".join(f"{k}={v:.3f}" for k, v in ks.items())
    detail += f"; min theta_D identity={lo['identity']:.1f} monge={lo['monge']:.1f}; "
    detail += ", ".join(f"{k}:{'ok' if v else 'NO'}" for k, v in checks.items())
    return record(5, ok, detail, time.perf_counter() - t0, 600)


def test_criterion_5_funnel():
    assert criterion_5()


# ---------------------------------------------------------------- 6


def criterion_6():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errs = {}
    funnel = FunnelTarget(dim=3, mu=[0.5, -0.5])
    pts = [np.r_[rng.normal(0, 2, 2), rng.uniform(-5, 5)] for _ in range(100)]
    errs["funnel"] = gradient_check(funnel.log_potential, funnel.full_grad, pts)
    gauss = GaussianTarget(rng.normal(size=6), rng.uniform(0.2, 5.0, 6))
    pts = [rng.normal(0, 2, 6) for _ in range(100)]
    errs["gaussian"] = gradient_check(gauss.log_potential, gauss.full_grad, pts)
    data = two_cluster(30, 3.0, 7)
    for prior in ("gaussian", "horseshoe"):
        mlp = MlpTarget([2, 8, 8, 2], data, PriorSpec(prior, 1.0), activation="tanh")
        pts = [rng.normal(0, 0.7, mlp.dim) for _ in range(100)]
        errs[f"mlp_{prior}"] = gradient_check(mlp.log_potential, mlp.full_grad, pts)
    ok = all(v < 1e-5 for v in errs.values())
    return record(6, ok, "gradient checks " + " ".join(f"{k}={v:.1e}" for k, v in errs.items()),
                  time.perf_counter() - t0, 30)


def test_criterion_6_gradients():
    assert criterion_6()


# ---------------------------------------------------------------- 7


def bnn_run(spec: dict, seed: int, train, test):
    target = MlpTarget([2, 16, 16, 2], train, PriorSpec("gaussian", 1.0))
    batch = 10
    steps = 5 * len(train) // batch  # five epochs
    cfg = ChainConfig(metric=spec, learning_rate=BNN_LR, total_steps=steps, burn_in_steps=steps - 100,
                      thinning=10, batch_size=batch, seed=seed)
    chain = run_chain(cfg, target)
    assert chain.n_samples == 10
    ens = ensemble_predict(chain.samples, target, test.X)
    return ens.accuracy(test.y), ens.log_prob(test.y), ens.member_log_prob(-1, test.y)


def criterion_7():
    t0 = time.perf_counter()
    train = two_cluster(1000, 3.0, 0)
    test = two_cluster(1000, 3.0, 1)
    ok = True
    parts = []
    for name, spec in BNN_METRICS.items():
        accs, wins, finite = [], 0, True
        for seed in range(5):
            acc, lp, last = bnn_run(spec, seed, train, test)
            accs.append(acc)
            finite &= math.isfinite(lp)
            wins += lp >= last
        good = min(accs) >= 0.9 and finite and wins >= 4
        ok &= good
        parts.append(f"{name}: acc>={min(accs):.3f} ens>=last {wins}/5")
    return record(7, ok, "BNN " + "; ".join(parts), time.perf_counter() - t0, 180)


def test_criterion_7_bnn():
    assert criterion_7()


# ---------------------------------------------------------------- 8


def criterion_8():
    t0 = time.perf_counter()
    hand = ece([0.9, 0.6], [True, False], n_bins=2)
    rng = np.random.default_rng(8)
    conf = rng.uniform(0.0, 1.0, 10**6)
    sim = ece(conf, rng.uniform(size=conf.size) < conf, n_bins=10)
    ok = hand == 0.25 and sim < 0.01
    return record(8, ok, f"ECE hand example={hand} (==0.25), calibrated stream={sim:.4f} (<0.01)",
                  time.perf_counter() - t0, 10)


def test_criterion_8_ece():
    assert criterion_8()


# ---------------------------------------------------------------- 9


def _csv_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def criterion_9(tmp: Path):
    import os

    t0 = time.perf_counter()
    cfg = {
        "experiment": {"kind": "funnel", "replicates": 4},
        "target": {"kind": "funnel", "noise_std": 1.0},
        "metric": {"kind": "monge", "alpha2": 0.1, "lam": 0.7},
        "sampler": {"learning_rate": 0.003, "total_steps": 3000, "burn_in_steps": 1000, "thinning": 1, "seed": 17},
        "output": {"plots": False, "scatter_subsample": 200},
    }
    path = tmp / "det.json"
    path.write_text(json.dumps(cfg))
    old = os.environ.get("SGRLD_THREADS")
    codes = []
    try:
        for name, threads in (("seq_a", "1"), ("seq_b", "1"), ("par", "4")):
            os.environ["SGRLD_THREADS"] = threads
            codes.append(cli_main(["sample", "--config", str(path), "--out", str(tmp / name)]))
    finally:
        if old is None:
            os.environ.pop("SGRLD_THREADS", None)
        else:
            os.environ["SGRLD_THREADS"] = old
    a, b, c = (_csv_bytes(tmp / n) for n in ("seq_a", "seq_b", "par"))
    same_seed = a == b and len(a) > 0
    schedule = a == c
    ok = codes == [0, 0, 0] and same_seed and schedule
    return record(9, ok, f"byte-identical CSVs: repeat={same_seed}, concurrent vs sequential={schedule} "
                         f"({len(a)} files)", time.perf_counter() - t0, 60)


def test_criterion_9_determinism(tmp_path):
    assert criterion_9(tmp_path)


# ---------------------------------------------------------------- 10


def _median_time(fn, reps: int) -> float:
    ts = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.median(ts))


def criterion_10():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    dims = [10**3, 10**4, 10**5, 10**6]
    times = []
    for D in dims:
        m = make_metric({"kind": "monge", "alpha2": 0.1}, ParamRegistry([("x", (D,))]))
        m.observe(rng.standard_normal(D), 0)
        x = rng.standard_normal(D)
        m.apply_inv(x)  # warm the coefficient cache
        times.append(_median_time(lambda: m.apply_inv(x), 200 if D < 10**6 else 30))
    slope = float(np.polyfit(np.log(dims), np.log(times), 1)[0])
    monge_ok = abs(slope - 1.0) <= 0.15

    sizes = [32, 64, 128]
    costs = []
    for n in sizes:
        sh = make_metric({"kind": "shampoo", "lam": 0.9, "refresh_interval": 1}, ParamRegistry([("w", (n,))]))
        for t in range(5):
            sh.observe(rng.standard_normal(n), t)
        costs.append(_median_time(lambda: sh.refresh(0), 40))
    work = np.array([float(n) ** 3 for n in sizes])  # sum of n_i^3 over the single factor
    # best constant in log space, then every size must sit within a factor 2 of c * sum n_i^3
    ratio = np.array(costs) / work
    c = float(np.exp(np.mean(np.log(ratio))))
    band = ratio / c
    shampoo_ok = bool(np.all((band >= 0.5) & (band <= 2.0)))
    detail = (f"Monge apply_inv exponent={slope:.3f} (1.0+-0.15): {'ok' if monge_ok else 'NO'}; "
              f"Shampoo refresh / (c*sum n^3) = {', '.join(f'{b:.2f}' for b in band)} (within [0.5, 2]): "
              f"{'ok' if shampoo_ok else 'NO'}")
    return record(10, monge_ok and shampoo_ok, detail, time.perf_counter() - t0, 120)


def test_criterion_10_cost_model():
    assert criterion_10()


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        runs = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
                criterion_8, lambda: criterion_9(Path(d)), criterion_10]
        outcome = [run() for run in runs]
    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(0 if all(outcome) else 1)
