import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from endiff import cli
from endiff.config import ExperimentConfig, MonteCarloSpec, dumps, load, loads
from endiff.errors import ConfigError
from endiff.fdr import DissipationCurve
from endiff.pipeline import StageError, run_experiment
from endiff.report import (
    DECAY_HEADER, FDR_HEADER, KappaResult, RunReport, emit_outputs, fmt, read_csv,
)

SWEEP = ["--kappa", "1e-2", "--kappa", "3e-3", "--kappa", "1e-3", "--kappa", "1e-4"]


def small_config(**kw):
    base = dict(kappas=[1e-2], stages=["solve-pde", "estimate-fdr"],
                mc=MonteCarloSpec(M=200, times=[1.0, 2.0]))
    base.update(kw)
    return ExperimentConfig(**base).validate()


# --------------------------------------------------------------------------
# config


def test_config_round_trip():
    conf = small_config(seed=2 ** 63 + 5)
    assert loads(dumps(conf)) == conf


@given(st.lists(st.floats(1e-9, 0.99), min_size=1, max_size=6, unique=True),
       st.integers(0, 2 ** 64 - 1))
@settings(max_examples=40, deadline=None)
def test_config_round_trip_property(kappas, seed):
    conf = ExperimentConfig(kappas=kappas, seed=seed).validate()
    assert loads(dumps(conf)) == conf


@pytest.mark.parametrize("text", [
    "kappas = []",
    "kappas = [1.5]",
    "kappas = [0.01]\nstages = ['bogus']",
    "kappas = [0.01]\n[mc]\nM = 10",
    "kappas = [0.01]\n[flow]\nfamily = 'vortex'",
    "kappas = [0.01]\n[pde]\nunknown = 1",
    "kappas = [0.01]\ncolour = 'red'",
    "kappas = [0.01",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_empty_kappa_list_fails_before_work(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(kappas=[]), out=tmp_path)
    assert list(tmp_path.iterdir()) == []


# --------------------------------------------------------------------------
# report files


def test_shortest_round_trip_numbers():
    for v in (0.1, 1 / 3, 1e-300, 2.0 ** 0.5, 123456789.123):
        assert float(fmt(v)) == v
    assert fmt(0.1) == "0.1"


def test_empty_report_writes_only_json(tmp_path):
    report = RunReport(ExperimentConfig(kappas=[0.01]))
    files = emit_outputs(report, tmp_path)
    assert [p.name for p in files] == ["rates.json"]
    data = json.loads((tmp_path / "rates.json").read_text())
    assert data["rate_fit"] is None and data["sharpness"] is None


def test_csv_round_trip(tmp_path):
    t = np.array([0.0, 0.1, 1 / 3])
    r = KappaResult(0.01, t, np.array([1.0, 0.9, 2 / 3]), np.array([0.0, math.pi, 1e-17]))
    r.fdr = DissipationCurve(0.01, t[1:], [0.2, 1 / 7], [0.01, 0.02])
    emit_outputs(RunReport(ExperimentConfig(kappas=[0.01]), [r]), tmp_path)
    header, cols = read_csv(tmp_path / "decay_0.01.csv")
    assert header == DECAY_HEADER
    assert np.array_equal(cols[0], t) and np.array_equal(cols[2], r.dissipation)
    header, cols = read_csv(tmp_path / "fdr_0.01.csv")
    assert header == FDR_HEADER
    assert np.array_equal(cols[1], r.fdr.values)
    raw = (tmp_path / "fdr_0.01.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_one_kappa_report_manifest(tmp_path):
    report = run_experiment(small_config(), out=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["decay_0.01.csv", "fdr_0.01.csv", "rates.json", "summary.svg"]
    r = report.results[0]
    assert r.fdr is not None and r.pde_times is not None
    assert r.max_rel_gap is not None and r.max_rel_gap < 0.2
    echo = json.loads((tmp_path / "rates.json").read_text())["config"]
    assert ExperimentConfig.from_dict(echo) == report.config


def test_rerun_is_byte_identical(tmp_path):
    run_experiment(small_config(), out=tmp_path / "a")
    run_experiment(small_config(), out=tmp_path / "b")
    for name in ("decay_0.01.csv", "fdr_0.01.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    conf = small_config(kappas=[1e-2, 5e-3])
    run_experiment(conf, out=tmp_path / "serial")
    run_experiment(conf, out=tmp_path / "par", jobs=2)
    for name in ("fdr_0.01.csv", "fdr_0.005.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_no_overwrite_without_force(tmp_path):
    conf = small_config(stages=["solve-pde"])
    run_experiment(conf, out=tmp_path)
    before = (tmp_path / "rates.json").read_bytes()
    with pytest.raises(FileExistsError):
        run_experiment(conf, out=tmp_path)
    assert (tmp_path / "rates.json").read_bytes() == before
    run_experiment(conf, out=tmp_path, force=True)


def test_failure_names_stage_and_keeps_partial_results(tmp_path):
    conf = small_config(stages=["solve-pde", "fit-rate"])
    with pytest.raises(StageError) as info:
        run_experiment(conf, out=tmp_path)
    assert info.value.stage == "fit-rate"
    data = json.loads((tmp_path / "rates.json").read_text())
    assert data["partial"] is True
    assert data["failures"][0]["stage"] == "fit-rate"
    assert (tmp_path / "decay_0.01.csv").exists()


# --------------------------------------------------------------------------
# command line


def test_cli_fit_rate(tmp_path, capsys):
    assert cli.main(["fit-rate", *SWEEP, "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "rates.json").read_text())
    assert data["rate_fit"]["exponent"] == pytest.approx(0.5, abs=0.05)
    assert (tmp_path / "summary.svg").read_text().startswith("<svg")
    assert "exponent=" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["solve-pde", "--out", str(tmp_path)]) == 2
    assert cli.main(["solve-pde", "--kappa", "2.0", "--out", str(tmp_path)]) == 2
    assert cli.main(["fit-rate", "--kappa", "0.01", "--out", str(tmp_path / "a")]) == 2
    assert cli.main(["solve-pde", "--kappa", "0.01", "--out", str(tmp_path / "b")]) == 0
    assert cli.main(["solve-pde", "--kappa", "0.01", "--out", str(tmp_path / "b")]) == 4
    assert cli.main(["solve-pde", "--kappa", "0.01", "--out", str(tmp_path / "b"),
                     "--force"]) == 0
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["solve-pde", "--kappa", "0.01", "--out", str(blocker)]) == 4


def test_cli_numerical_error_exit_code(tmp_path, capsys):
    # the horizon is far too short and may not be extended
    conf = tmp_path / "c.toml"
    conf.write_text("kappas = [0.01]\n[pde]\nt_end = 0.01\nmax_doublings = 0\n")
    code = cli.main(["fit-rate", "--config", str(conf), "--out", str(tmp_path / "o")])
    assert code == 3
    err = capsys.readouterr().err
    assert "solve-pde" in err and "kappa=0.01" in err


def test_cli_config_and_seed_override(tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text(dumps(small_config(stages=["simulate-trajectories"])))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["report", "--config", str(conf), "--out", str(out_a), "--seed", "7"]) == 0
    assert cli.main(["report", "--config", str(conf), "--out", str(out_b), "--seed", "8"]) == 0
    a = json.loads((out_a / "rates.json").read_text())
    b = json.loads((out_b / "rates.json").read_text())
    assert a["seeds"]["master_seed"] == 7
    assert a["results"][0]["trajectories"]["mean_X"] != b["results"][0]["trajectories"]["mean_X"]


def test_cli_bad_seed_is_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["solve-pde", "--kappa", "0.01", "--seed", str(2 ** 64)])
    assert info.value.code == 2


def test_config_file_loader(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('kappas = [0.001, 0.0001]\n[flow]\nfamily = "circular"\nq = 2.0\n')
    conf = load(path)
    assert conf.flow.family == "circular" and conf.kappas == [1e-3, 1e-4]
