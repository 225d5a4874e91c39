import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import sgrld.metrics.monge as monge_mod
from sgrld.cli import main
from sgrld.config import ConfigError, ExperimentConfig, load_config

FUNNEL = {
    "experiment": {"kind": "funnel"},
    "target": {"kind": "funnel", "noise_std": 1.0},
    "metric": {"kind": "monge", "alpha2": 0.1, "lam": 0.7},
    "sampler": {"learning_rate": 0.003, "total_steps": 1500, "burn_in_steps": 1000, "thinning": 1, "seed": 4,
                "safeguard_threshold": 1000.0},
    "output": {"plots": False},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# ---------------------------------------------------------------- config


metric_st = st.one_of(
    st.builds(dict, kind=st.just("identity")),
    st.builds(dict, kind=st.just("rmsprop"), lam=st.floats(0, 1), eps=st.floats(0, 1e-3)),
    st.builds(dict, kind=st.just("wenzel"), lam=st.floats(0, 1), update_period=st.integers(1, 500)),
    st.builds(dict, kind=st.just("monge"), lam=st.floats(0, 1), alpha2=st.floats(0, 10)),
    st.builds(dict, kind=st.just("shampoo"), lam=st.floats(0, 1), eps=st.floats(1e-12, 1e-2),
              refresh_interval=st.integers(1, 1000), block_size=st.none() | st.integers(1, 64)),
)


@st.composite
def configs(draw):
    kind = draw(st.sampled_from(["funnel", "gaussian-check", "bnn"]))
    if kind == "funnel":
        dim = draw(st.integers(2, 5))
        target = {"kind": "funnel", "dim": dim, "sigma2": draw(st.floats(0.1, 20)),
                  "noise_std": draw(st.floats(0, 3)),
                  "mu": draw(st.lists(st.floats(-5, 5), min_size=dim - 1, max_size=dim - 1))}
    elif kind == "gaussian-check":
        dim = draw(st.integers(1, 6))
        target = {"kind": "gaussian", "mean": draw(st.lists(st.floats(-5, 5), min_size=dim, max_size=dim)),
                  "var": draw(st.floats(0.1, 4))}
    else:
        target = {"kind": "mlp", "sizes": [2, draw(st.integers(1, 8)), 2],
                  "activation": draw(st.sampled_from(["relu", "tanh"])),
                  "prior": {"kind": draw(st.sampled_from(["gaussian", "horseshoe"])), "sigma2": draw(st.floats(0.1, 5))},
                  "data": {"kind": "two_cluster", "n": draw(st.integers(2, 50)), "seed": draw(st.integers(0, 99))}}
    total = draw(st.integers(2, 10**6))
    sampler = {"learning_rate": draw(st.floats(1e-6, 1.0)), "temperature": draw(st.floats(0, 2)),
               "total_steps": total, "burn_in_steps": draw(st.integers(0, total - 1)),
               "thinning": draw(st.integers(1, 100)), "batch_size": draw(st.integers(1, 256)),
               "seed": draw(st.integers(0, 2**31)),
               "safeguard_threshold": draw(st.none() | st.floats(1, 1e4)),
               "safeguard_scale": draw(st.just("clip") | st.floats(0.01, 10))}
    output = {"plots": draw(st.booleans()), "scatter_subsample": draw(st.none() | st.integers(1, 5000))}
    return {"experiment": {"kind": kind, "replicates": draw(st.integers(1, 8))}, "target": target,
            "metric": draw(metric_st), "sampler": sampler, "output": output}


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(configs())
def test_config_round_trip(data):
    cfg = ExperimentConfig.from_dict(data)
    text = cfg.to_json()
    again = ExperimentConfig.from_dict(json.loads(text))
    assert again.to_json() == text
    assert again == cfg


def test_epochs_become_steps():
    data = {"experiment": {"kind": "bnn"},
            "target": {"kind": "mlp", "sizes": [2, 4, 2], "data": {"kind": "two_cluster", "n": 250}},
            "metric": {"kind": "rmsprop"},
            "sampler": {"total_epochs": 2, "batch_size": 100, "burn_in_steps": 0, "thinning": 1}}
    assert ExperimentConfig.from_dict(data).sampler.total_steps == 6


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(extra=1), "unknown top-level"),
    (lambda d: d["sampler"].update(lr=0.1), "unknown key"),
    (lambda d: d["metric"].update(kind="adam"), "unknown metric"),
    (lambda d: d["target"].update(sizes=[2, 2]), "does not apply"),
    (lambda d: d["experiment"].update(kind="bnn"), "needs a 'mlp' target"),
    (lambda d: d["sampler"].update(total_epochs=3), "exactly one"),
    (lambda d: d["sampler"].update(burn_in_steps=5000), "burn_in"),
    (lambda d: d.pop("metric"), "missing"),
])
def test_invalid_configs(mutate, match):
    data = json.loads(json.dumps(FUNNEL))
    mutate(data)
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


# ---------------------------------------------------------------- cli: sample


def test_sample_funnel_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["sample", "--config", str(_write(tmp_path, FUNNEL)), "--out", str(out)]) == 0
    lines = (out / "replicate_000" / "samples.csv").read_text().splitlines()
    assert lines[0] == "step,theta_0,theta_1"
    assert len(lines) == 1 + 500
    step, a, b = lines[1].split(",")
    assert step == "1001" and float(a) == float(a) and "," not in a
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["seeds"] == [4]
    assert manifest["config"]["metric"]["alpha2"] == 0.1
    report = json.loads((out / "report.json").read_text())
    assert 0 <= report["replicates"][0]["ks_theta_d"] <= 1
    hist = (out / "replicate_000" / "histogram.csv").read_text().splitlines()
    assert hist[0] == "bin_left,bin_right,count,true_density"
    steplog = (out / "replicate_000" / "steplog.csv").read_text().splitlines()
    assert steplog[0] == "step,u,grad_norm,safeguard" and len(steplog) == 1501
    assert b"\r\n" not in (out / "replicate_000" / "samples.csv").read_bytes()


def test_sample_byte_identical(tmp_path):
    cfg = _write(tmp_path, FUNNEL)
    for name in ("a", "b"):
        assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / name), "--replicates", "2"]) == 0
    for rep in ("replicate_000", "replicate_001"):
        for f in ("samples.csv", "steplog.csv"):
            assert (tmp_path / "a" / rep / f).read_bytes() == (tmp_path / "b" / rep / f).read_bytes()


def test_sample_seed_override(tmp_path):
    cfg = _write(tmp_path, FUNNEL)
    main(["sample", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "9"])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seeds"] == [9]


def test_sample_coordinate_subset(tmp_path):
    data = json.loads(json.dumps(FUNNEL))
    data["target"]["dim"] = 4
    data["output"]["store_coordinates"] = [3]
    out = tmp_path / "run"
    assert main(["sample", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    lines = (out / "replicate_000" / "samples.csv").read_text().splitlines()
    assert lines[0] == "step,U,theta_3"


def test_sample_bnn_report(tmp_path):
    data = {"experiment": {"kind": "bnn"},
            "target": {"kind": "mlp", "sizes": [2, 8, 2], "data": {"kind": "two_cluster", "n": 200}},
            "metric": {"kind": "rmsprop"},
            "sampler": {"learning_rate": 0.1, "total_steps": 200, "burn_in_steps": 100, "thinning": 20,
                        "batch_size": 20},
            "output": {"plots": False}}
    out = tmp_path / "bnn"
    assert main(["sample", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())["replicates"][0]
    assert rep["n_samples"] == 5
    assert rep["accuracy"] > 0.8
    assert np.isfinite(rep["log_prob"]) and 0 <= rep["ece"] <= 1


def test_sample_missing_config(tmp_path, capsys):
    assert main(["sample", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_sample_invalid_config(tmp_path, capsys):
    data = json.loads(json.dumps(FUNNEL))
    data["metric"]["typo"] = 1
    assert main(["sample", "--config", str(_write(tmp_path, data)), "--out", str(tmp_path / "o")]) == 1
    assert "typo" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sample_abort_exit_code(tmp_path):
    data = {"experiment": {"kind": "gaussian-check"},
            "target": {"kind": "gaussian", "mean": [0.0], "var": 1e-6},
            "metric": {"kind": "identity"},
            "sampler": {"learning_rate": 1.0, "temperature": 0.0, "total_steps": 3000, "burn_in_steps": 0,
                        "thinning": 1, "init": [1.0]},
            "output": {"plots": False}}
    out = tmp_path / "abort"
    assert main(["sample", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 2
    assert json.loads((out / "manifest.json").read_text())["status"] == "aborted"
    assert (out / "replicate_000" / "samples.csv").exists()


# ---------------------------------------------------------------- cli: verify


def test_verify_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--trials", "20"]) == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["passed"] and len(report["checks"]) >= 8
    assert (tmp_path / "verify_report.csv").read_text().startswith("check,value,threshold,passed\n")


def test_verify_detects_alpha_sign_flip(tmp_path, monkeypatch, capsys):
    real = monge_mod.monge_f

    def flipped(n, norm_sq, alpha2):
        # -alpha2 makes 1 + alpha2 * |m|^2 negative for large |m|; keep those finite
        if alpha2 * norm_sq < 1.0:
            return real(n, norm_sq, -alpha2)
        return real(n, norm_sq, alpha2)

    monkeypatch.setattr(monge_mod, "monge_f", flipped)
    assert main(["verify", "--out", str(tmp_path), "--trials", "20"]) == 3
    err = capsys.readouterr().err
    assert "monge." in err
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert any(name.startswith("monge.") for name in report["failed"])


# ---------------------------------------------------------------- cli: funnel-bench


def test_funnel_bench_small(tmp_path, monkeypatch):
    monkeypatch.setenv("SGRLD_THREADS", "1")
    assert main(["funnel-bench", "--out", str(tmp_path), "--samples", "1500", "--no-plots"]) == 0
    table = (tmp_path / "funnel_bench.csv").read_text().splitlines()
    assert table[0].startswith("metric,step_size,ks,")
    assert [row.split(",")[0] for row in table[1:]] == ["identity", "rmsprop", "monge", "shampoo"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["ks"]) == {"identity", "rmsprop", "monge", "shampoo"}
    hist = (tmp_path / "hist_monge.csv").read_text().splitlines()
    assert hist[0] == "bin_left,bin_right,count,true_density" and len(hist) == 61
    assert len((tmp_path / "scatter_identity.csv").read_text().splitlines()) == 1001


def test_bad_thread_env(monkeypatch):
    from sgrld.sampler import default_workers

    monkeypatch.setenv("SGRLD_THREADS", "many")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.setenv("SGRLD_THREADS", "3")
    assert default_workers() == 3
