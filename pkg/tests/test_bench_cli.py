import json
import math

import numpy as np
import pytest

from gfomkit.bench import (
    ExperimentConfig,
    SweepRecord,
    TrialRecord,
    emit_csv,
    emit_json,
    read_csv,
    run_experiment,
)
from gfomkit.cli import main
from gfomkit.errors import ConfigError

ALGOS = [{"name": "bayes_amp"}, {"name": "gd", "eta": 10.0}, {"name": "one_step_prox_linear", "xi": 0.1},
         {"name": "taf"}, {"name": "prox_linear", "inner_iters": 50}]


def small(**kw):
    base = dict(kind="pr_bench", n=250, d=100, trials=2, t_max=3, algorithms=tuple(ALGOS))
    base.update(kw)
    return ExperimentConfig(**base)


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


# ---------------------------------------------------------------- config

def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(write(tmp_path, "c.json", {"kind": "pr_bench", "nn": 3}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "pr_bench", "algorithms": [{"name": "adam"}]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "pr_bench", "algorithms": [{"name": "gd", "lr": 1}]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "magic"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "pr_bench"}, kind="se_check")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(tmp_path / "missing.json")


def test_config_kind_from_subcommand():
    cfg = ExperimentConfig.from_dict({"n": 10, "d": 5}, kind="pr_bench")
    assert cfg.kind == "pr_bench" and cfg.delta_eff == 2.0


# ---------------------------------------------------------------- pr_bench

def test_iteration_zero_only():
    res = run_experiment(small(trials=1, t_max=0))
    assert len(res.records) == len(ALGOS)
    assert {r.iter for r in res.records} == {0}
    # every algorithm starts from the same spectral estimate
    assert len({r.correlation for r in res.records}) == 1


def test_rows_and_sidecar():
    res = run_experiment(small())
    assert len(res.records) == 2 * 4 * len(ALGOS)
    assert set(res.sidecar) == {"delta", "epsilon", "a", "lambda_star", "beta", "optimal_correlation"}
    assert len(res.sidecar["optimal_correlation"]) == 4
    assert res.sidecar["optimal_correlation"][0] == pytest.approx(res.sidecar["a"])
    assert all(r.wall_ms == 0.0 for r in res.records)
    assert set(res.timing) == {a["name"] for a in ALGOS}


def test_same_config_same_bytes(tmp_path):
    cfg = small()
    a = emit_csv(run_experiment(cfg).records, tmp_path / "a.csv").read_bytes()
    b = emit_csv(run_experiment(cfg).records, tmp_path / "b.csv").read_bytes()
    c = emit_csv(run_experiment(cfg.replace(workers=2)).records, tmp_path / "c.csv").read_bytes()
    assert a == b == c
    assert b"\r" not in a


def test_seed_changes_output():
    r0 = run_experiment(small(trials=1, t_max=1))
    r1 = run_experiment(small(trials=1, t_max=1, master_seed=1))
    assert [r.correlation for r in r0.records] != [r.correlation for r in r1.records]


def test_divergence_is_recorded():
    res = run_experiment(small(trials=1, t_max=4, algorithms=({"name": "gd", "eta": 1e6},)))
    bad = [r for r in res.records if r.status == "diverged"]
    assert bad and all(r.correlation == 0.0 and math.isnan(r.mse) for r in bad)
    assert res.summary["rows_diverged"] == len(bad)


def test_wall_clock_opt_in():
    res = run_experiment(small(trials=1, t_max=2, algorithms=({"name": "gd"},), record_wall_clock=True))
    assert res.records[-1].wall_ms > 0.0


# ---------------------------------------------------------------- sweep

def test_single_grid_point_matches_bench():
    sweep = run_experiment(ExperimentConfig(kind="step_sweep", n=250, d=100, trials=2, t_max=3,
                                            sweep={"gd": {"values": [7.0]}}))
    bench = run_experiment(small(algorithms=({"name": "gd", "eta": 7.0},)))
    assert [r.correlation for r in sweep.records] == [r.correlation for r in bench.records]
    assert sweep.summary["best"]["gd"]["step"] == 7.0


def test_zero_step_is_flat():
    res = run_experiment(ExperimentConfig(kind="step_sweep", n=250, d=100, trials=2, t_max=3,
                                          sweep={"one_step_prox_linear": {"values": [0.0, 0.1]}}))
    for trial in (0, 1):
        flat = [r.correlation for r in res.records if r.step == 0.0 and r.trial_index == trial]
        assert len(set(flat)) == 1


def test_sweep_grid_is_logarithmic():
    res = run_experiment(ExperimentConfig(kind="step_sweep", n=250, d=100, trials=1, t_max=1,
                                          sweep={"gd": {"lo": 1, "hi": 100, "points": 3}}))
    assert res.summary["best"]["gd"]["grid"] == pytest.approx([1.0, 10.0, 100.0])


# ---------------------------------------------------------------- persistence

def test_csv_empty_and_round_trip(tmp_path):
    p = emit_csv([], tmp_path / "e.csv")
    assert p.read_text() == ",".join(f for f in TrialRecord.__dataclass_fields__) + "\n"
    recs = [TrialRecord("gd", 1000, 400, 2.5, i, k, 0.1 * k + 1e-17 * i, 1 / 3, 0.0) for i in range(3) for k in range(2)]
    assert read_csv(emit_csv(recs, tmp_path / "r.csv")) == recs
    srecs = [SweepRecord("gd", 0.1, 10, 5, 2.0, 0, 1, 0.5, 0.25)]
    assert read_csv(emit_csv(srecs, tmp_path / "s.csv"), SweepRecord) == srecs


def test_csv_row_count(tmp_path):
    recs = [TrialRecord(a, 1000, 400, 2.5, t, k, 0.5, 0.5, 0.0)
            for t in range(50) for k in range(1, 11) for a in "abcde"]
    lines = emit_csv(recs, tmp_path / "n.csv").read_text().split("\n")
    assert len(lines) == 2502 and lines[-1] == ""


def test_csv_precision(tmp_path):
    x = 0.1 + 0.2
    p = emit_csv([TrialRecord("gd", 1, 1, 1.0, 0, 0, x, x, 0.0)], tmp_path / "p.csv")
    assert "0.30000000000000004" in p.read_text()


def test_json_nonfinite_to_null(tmp_path):
    p = emit_json({"beta": [1.0, math.inf, np.float64(2.0)], "x": math.nan}, tmp_path / "j.json")
    assert json.loads(p.read_text()) == {"beta": [1.0, None, 2.0], "x": None}


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_csv([], tmp_path / "nope" / "x.csv")


# ---------------------------------------------------------------- other experiment kinds

def test_lower_bound_kinds():
    res = run_experiment(ExperimentConfig(kind="lower_bound", t_max=3))
    assert res.sidecar["kind"] == "rank_one" and len(res.sidecar["gamma"]) == 4
    res = run_experiment(ExperimentConfig(kind="lower_bound", t_max=3, channel={"kind": "squared_noiseless"},
                                          prior={"kind": "gaussian_with_overlap", "a": 0.5}, delta=2.0))
    assert res.sidecar["kind"] == "glm" and res.sidecar["beta"][0] == 0.0


def test_spectral_and_fuzz_kinds():
    res = run_experiment(ExperimentConfig(kind="spectral_theory", delta=2.0))
    assert res.sidecar["a"] == pytest.approx(0.79930, abs=1e-5)
    res = run_experiment(ExperimentConfig(kind="oamp_fuzz", t_max=3, fuzz_specs=5))
    assert res.sidecar["failures"] == [] and res.sidecar["n_specs"] == 5


def test_se_check_kind():
    res = run_experiment(ExperimentConfig(kind="se_check", n=300, trials=2, t_max=3))
    assert len(res.records) == 6 and len(res.summary["se_mu"]) == 3


# ---------------------------------------------------------------- CLI

def test_cli_pr_bench(tmp_path, capsys):
    cfg = write(tmp_path, "pr.json", {"n": 200, "d": 80, "trials": 1, "t_max": 2,
                                      "algorithms": [{"name": "bayes_amp"}, {"name": "taf"}]})
    out = tmp_path / "pr.csv"
    assert main(["pr-bench", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    assert "mean ms" in capsys.readouterr().out
    rows = read_csv(out)
    assert len(rows) == 6
    side = json.loads((tmp_path / "pr.theory.json").read_text())
    assert side["delta"] == 2.5
    assert (tmp_path / "pr.timing.json").exists()


def test_cli_json_subcommands(tmp_path, capsys):
    cfg = write(tmp_path, "lb.json", {"t_max": 2})
    assert main(["lower-bound", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "rank_one"
    cfg = write(tmp_path, "sp.json", {"delta": 1.0005})
    out = tmp_path / "sp.json.out"
    assert main(["spectral", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["sub_threshold"] is True
    cfg = write(tmp_path, "of.json", {"t_max": 2, "fuzz_specs": 3})
    assert main(["oamp-fuzz", "--config", str(cfg), "--quadrature-order", "16"]) == 0
    assert json.loads(capsys.readouterr().out)["failures"] == []


def test_cli_sweep_and_se_check(tmp_path, capsys):
    cfg = write(tmp_path, "sw.json", {"n": 200, "d": 80, "trials": 1, "t_max": 2,
                                      "sweep": {"gd": {"lo": 1, "hi": 10, "points": 2}}})
    assert main(["step-sweep", "--config", str(cfg), "--out", str(tmp_path / "sw.csv")]) == 0
    assert "best step" in capsys.readouterr().out
    assert "best" in json.loads((tmp_path / "sw.summary.json").read_text())
    cfg = write(tmp_path, "se.json", {"n": 200, "trials": 1, "t_max": 2})
    assert main(["se-check", "--config", str(cfg), "--out", str(tmp_path / "se.csv"), "--workers", "1"]) == 0
    assert len(read_csv(tmp_path / "se.csv")) == 2


def test_cli_config_errors(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"kind": "lower_bound"})
    assert main(["pr-bench", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["unknown", "--config", str(cfg)])
