import pytest

from deeprace import cli, data
from deeprace.cli import main, parse_config_file, resolve_config

# A deliberately tiny configuration so train/simulate/aggregate runs finish
# in well under a second each.
TINY = [
    "--tau", "6", "--n", "10", "--hidden", "6", "--ell", "1",
    "--it-max", "10", "--m", "2", "--length", "120",
]


@pytest.fixture(scope="module")
def trace_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("traces")
    presets = {
        "a": data.SynthParams(6e-5, 2e-4, 0.03, 3e-4, 120, seed=1),
        "b": data.SynthParams(7e-5, 1.8e-4, 0.028, 3e-4, 120, seed=2),
        "c": data.SynthParams(6.5e-5, 2.2e-4, 0.029, 3e-4, 120, seed=3),
    }
    for name, p in presets.items():
        data.save_csv(data.synth_degradation(p, name), path / f"{name}.csv")
    return path


@pytest.fixture(scope="module")
def trained_model(trace_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = main(
        ["train", "--data", str(trace_dir), "--holdout", "c",
         "--out", str(out), "--seed", "0", *TINY]
    )
    assert code == 0
    return out / "model.bin"


class TestConfigResolution:
    def test_config_file_parsing(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("tau = 8  # lookback\nlr=0.01\n\n# comment only\n")
        out = parse_config_file(path)
        assert out == {"tau": 8, "lr": 0.01}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("bogus=1\n")
        with pytest.raises(cli.CliError, match="bogus"):
            parse_config_file(path)

    def test_missing_equals_rejected(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("tau 8\n")
        with pytest.raises(cli.CliError, match="key=value"):
            parse_config_file(path)

    def test_flag_beats_config_file(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("tau=8\nhidden=16\n")
        parser = cli.build_parser()
        args = parser.parse_args(
            ["synth", "--config", str(path), "--tau", "9", "--out", "unused"]
        )
        cfg = resolve_config(args)
        assert cfg["tau"] == 9       # flag wins
        assert cfg["hidden"] == 16   # config file beats default
        assert cfg["ell"] == 4       # default

    def test_usage_error_exit_code_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.build_parser().parse_args(["no-such-command"])
        assert exc.value.code == 2


class TestSynth:
    def test_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "synth"
        assert main(["synth", "--out", str(out), "--length", "130"]) == 0
        for name in data.PRESETS:
            assert (out / f"{name}.csv").exists()
        assert (out / "presets.txt").exists()
        assert (out / "traces.png").stat().st_size > 0

    def test_length_below_window_fails(self, tmp_path, capsys):
        out = tmp_path / "synth"
        assert main(["synth", "--out", str(out), "--length", "50"]) == 1
        assert "tau+n" in capsys.readouterr().err

    def test_byte_identical_csvs(self, tmp_path):
        o1, o2 = tmp_path / "s1", tmp_path / "s2"
        main(["synth", "--out", str(o1), "--length", "130"])
        main(["synth", "--out", str(o2), "--length", "130"])
        assert (o1 / "dev1.csv").read_bytes() == (o2 / "dev1.csv").read_bytes()


class TestTrain:
    def test_outputs(self, trained_model):
        out = trained_model.parent
        assert trained_model.stat().st_size > 0
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "iteration,train_mse,test_mse"
        assert len(history) > 1
        assert (out / "history.png").exists()

    def test_missing_holdout(self, trace_dir, tmp_path, capsys):
        code = main(["train", "--data", str(trace_dir), "--holdout", "zz",
                     "--out", str(tmp_path / "o"), *TINY])
        assert code == 1
        assert "holdout" in capsys.readouterr().err

    def test_empty_data_dir(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["train", "--data", str(empty), "--holdout", "a",
                     "--out", str(tmp_path / "o"), *TINY])
        assert code == 1
        assert "no trace CSVs" in capsys.readouterr().err


class TestPredict:
    def test_prediction_schema(self, trained_model, trace_dir, tmp_path):
        out = tmp_path / "pred"
        code = main(["predict", "--model", str(trained_model),
                     "--trace", str(trace_dir / "c.csv"),
                     "--out", str(out), "--horizon", "7"])
        assert code == 0
        lines = (out / "prediction.csv").read_text().splitlines()
        assert lines[0] == "index,predicted_delta_r_ohms"
        assert len(lines) == 8
        first_index = int(lines[1].split(",")[0])
        assert first_index == 120  # trace ends at index 119

    def test_zero_horizon_header_only(self, trained_model, trace_dir, tmp_path):
        out = tmp_path / "pred0"
        code = main(["predict", "--model", str(trained_model),
                     "--trace", str(trace_dir / "c.csv"),
                     "--out", str(out), "--horizon", "0"])
        assert code == 0
        assert (out / "prediction.csv").read_text() == "index,predicted_delta_r_ohms\n"

    def test_horizon_beyond_n_fails(self, trained_model, trace_dir, tmp_path, capsys):
        code = main(["predict", "--model", str(trained_model),
                     "--trace", str(trace_dir / "c.csv"),
                     "--out", str(tmp_path / "o"), "--horizon", "999"])
        assert code == 1
        assert "exceeds" in capsys.readouterr().err

    def test_corrupt_model_file(self, trace_dir, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not a model at all")
        code = main(["predict", "--model", str(bad),
                     "--trace", str(trace_dir / "c.csv"),
                     "--out", str(tmp_path / "o")])
        assert code == 1


class TestEvaluate:
    def test_report_and_residuals(self, trained_model, trace_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(["evaluate", "--model", str(trained_model),
                     "--trace", str(trace_dir / "c.csv"),
                     "--start", "10", "--out", str(out)])
        assert code == 0
        report = (out / "report.txt").read_text()
        assert "mse=" in report and "log_base=e" in report
        resid = (out / "residuals.csv").read_text().splitlines()
        assert resid[0] == "index,error_diff_ohms"
        assert len(resid) == 11  # n=10 outputs
        assert (out / "evaluation.png").exists()
        assert "normalized_mse=" in capsys.readouterr().out

    def test_window_outside_trace(self, trained_model, trace_dir, tmp_path, capsys):
        code = main(["evaluate", "--model", str(trained_model),
                     "--trace", str(trace_dir / "c.csv"),
                     "--start", "500", "--out", str(tmp_path / "o")])
        assert code == 1
        assert "outside" in capsys.readouterr().err


@pytest.fixture(scope="module")
def hot_trace(tmp_path_factory):
    """A trace steep enough to cross the 0.05-ohm detection level."""
    path = tmp_path_factory.mktemp("hot") / "hot.csv"
    params = data.SynthParams(6.5e-5, 2.2e-4, 0.05, 3e-4, 120, seed=7)
    data.save_csv(data.synth_degradation(params, "hot"), path)
    return path


class TestCompare:
    def test_artifacts_and_reference_row(self, trained_model, hot_trace, tmp_path):
        out = tmp_path / "cmp"
        code = main(["compare", "--model", str(trained_model),
                     "--trace", str(hot_trace),
                     "--out", str(out), "--lead", "8"])
        assert code == 0
        lines = (out / "comparison.csv").read_text().splitlines()
        assert lines[0] == "method,error_at_5pct,ratio_vs_deep_race"
        assert lines[1].startswith("deep_race,")
        assert {ln.split(",")[0] for ln in lines[1:]} == {
            "deep_race", "kalman", "particle"
        }
        assert (out / "comparison.png").exists()

    def test_lead_beyond_n_fails(self, trained_model, hot_trace, tmp_path, capsys):
        code = main(["compare", "--model", str(trained_model),
                     "--trace", str(hot_trace),
                     "--out", str(tmp_path / "o"), "--lead", "50"])
        assert code == 1


class TestSimulate:
    def test_artifacts(self, trace_dir, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--data", str(trace_dir), "--holdout", "c",
                     "--out", str(out), "--retrain-budget", "1",
                     "--delta-r-t", "0.002", "--horizon", "5",
                     "--upload-every", "20", "--train-latency", "5", *TINY])
        assert code == 0
        assert (out / "events.csv").read_text().splitlines()[0] == "tick,kind,detail"
        assert "retrains=" in (out / "summary.txt").read_text()
        assert (out / "simulation.png").exists()

    def test_deterministic_summary(self, trace_dir, tmp_path):
        outs = []
        for sub in ("s1", "s2"):
            out = tmp_path / sub
            main(["simulate", "--data", str(trace_dir), "--holdout", "c",
                  "--out", str(out), "--retrain-budget", "1",
                  "--delta-r-t", "0.002", "--horizon", "5",
                  "--upload-every", "20", "--train-latency", "5", *TINY])
            outs.append((out / "summary.txt").read_bytes())
        assert outs[0] == outs[1]


class TestAggregate:
    def test_curve_csv(self, trace_dir, tmp_path, capsys):
        out = tmp_path / "agg"
        code = main(["aggregate", "--data", str(trace_dir), "--holdout", "c",
                     "--m-values", "1,2", "--trials", "2",
                     "--out", str(out), *TINY])
        assert code == 0
        lines = (out / "aggregation.csv").read_text().splitlines()
        assert lines[0] == "m,mean_mse"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2"]
        assert "monotone_trend=" in capsys.readouterr().out
        assert (out / "aggregation.png").exists()

    def test_m_exceeding_pool_fails(self, trace_dir, tmp_path, capsys):
        code = main(["aggregate", "--data", str(trace_dir), "--holdout", "c",
                     "--m-values", "5", "--trials", "1",
                     "--out", str(tmp_path / "o"), *TINY])
        assert code == 1
