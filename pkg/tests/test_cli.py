import json
import re

import numpy as np
import pytest

from xcov.cli import build_parser, main, read_matrix_csv, write_matrix_csv
from xcov.estimators import bbp_clean, sample_cross_correlation
from xcov.harness import ReturnsPanel, write_panel_csv
from xcov.neural import NeuralModel, save_model
from xcov.neural.model import read_header

SUBCOMMANDS = ["synth-bench", "clean", "train", "eval", "feasibility"]


def _panels(tmp_path, n_dates=300, n_x=5, n_y=8, seed=0, unit_std=False):
    g = np.random.default_rng(seed)
    r = g.standard_normal((n_dates, n_x + n_y))
    r[:, n_x:] += 0.4 * r[:, :1]
    if unit_std:
        r = (r - r.mean(0)) / r.std(0)
    dates = np.datetime64("2015-01-01") + np.arange(n_dates)
    write_panel_csv(ReturnsPanel(dates, [f"X{i}" for i in range(n_x)], r[:, :n_x]), tmp_path / "x.csv")
    write_panel_csv(ReturnsPanel(dates, [f"Y{i}" for i in range(n_y)], r[:, n_x:]), tmp_path / "y.csv")
    return r[:, :n_x], r[:, n_x:]


class TestHelp:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_help_documents_flags(self, cmd, capsys):
        with pytest.raises(SystemExit) as exit_:
            main([cmd, "--help"])
        assert exit_.value.code == 0
        out = capsys.readouterr().out
        sub = next(a for a in build_parser()._subparsers._group_actions[0].choices.items() if a[0] == cmd)[1]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in out
            if action.option_strings and action.dest != "help":
                assert action.help

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exit_:
            main(["feasibility", "--cxx", "a", "--cyy", "b", "--cxy", "c", "--bogus"])
        assert exit_.value.code == 2


class TestSynthBench:
    ARGS = ["synth-bench", "--benchmark", "finite-rank", "--param", "0.3", "--nx", "8", "--ny", "12",
            "--dt", "60", "--nsim", "3", "--seed", "7", "--bootstrap", "200"]

    def test_byte_identical(self, tmp_path):
        assert main(self.ARGS + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(self.ARGS + ["--out", str(tmp_path / "b.csv"), "--threads", "2"]) == 0
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes()
        assert a.startswith(b"estimator,condition,param,mean_mse,ci_low,ci_high,n_sim,seconds\n")

    def test_figure(self, tmp_path):
        assert main(self.ARGS + ["--out", str(tmp_path / "a.csv"), "--figure", str(tmp_path / "a.png")]) == 0
        assert (tmp_path / "a.png").read_bytes()[:4] == b"\x89PNG"

    def test_nsim_zero(self, tmp_path):
        with pytest.raises(SystemExit) as exit_:
            main(["synth-bench", "--benchmark", "mode", "--param", "0.5", "--nsim", "0", "--out", str(tmp_path / "t.csv")])
        assert exit_.value.code == 2

    @pytest.mark.parametrize("bench,param", [("mode", "gaussian"), ("finite-rank", "2"), ("heavy-bulk", "0.5")])
    def test_bad_combination(self, tmp_path, bench, param):
        assert main(["synth-bench", "--benchmark", bench, "--param", param, "--out", str(tmp_path / "t.csv")]) == 2

    def test_partial_failure_exit_one(self, tmp_path):
        # a model built for token rows of width 3 but with a NaN weight fails at forward time
        model = NeuralModel.initial()
        model.params["encoder.w1"][0, 0] = np.nan
        save_model(model, tmp_path / "bad.bin")
        code = main(self.ARGS + ["--estimators", "mle,nn", "--model", str(tmp_path / "bad.bin"), "--out", str(tmp_path / "p.csv")])
        assert code == 1
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[1].startswith("mle,") and lines[1].endswith(",3,")
        assert lines[2].startswith("nn,") and ",0," in lines[2]


class TestClean:
    def test_bbp_bit_exact(self, tmp_path):
        x, y = _panels(tmp_path)
        out = tmp_path / "c.csv"
        assert main(["clean", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--method", "bbp", "--out", str(out)]) == 0
        expected = bbp_clean(sample_cross_correlation(x, y)).cleaned
        np.testing.assert_array_equal(read_matrix_csv(out), expected)
        side = json.loads(out.with_suffix(".json").read_text())
        assert side["method"] == "bbp" and len(side["s_clean"]) == 5 and side["y_assets"][0] == "Y0"

    def test_nn_zero_init_is_mle(self, tmp_path):
        x, y = _panels(tmp_path)
        save_model(NeuralModel.initial(), tmp_path / "m.bin")
        out = tmp_path / "c.csv"
        args = ["clean", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--method", "nn",
                "--model", str(tmp_path / "m.bin"), "--out", str(out)]
        assert main(args) == 0
        np.testing.assert_allclose(read_matrix_csv(out), sample_cross_correlation(x, y).cxy, atol=1e-15)

    def test_covariance_on_unit_std(self, tmp_path):
        _panels(tmp_path, unit_std=True)
        base = ["clean", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--method", "cv"]
        assert main(base + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(base + ["--covariance", "on", "--out", str(tmp_path / "b.csv")]) == 0
        np.testing.assert_allclose(read_matrix_csv(tmp_path / "a.csv"), read_matrix_csv(tmp_path / "b.csv"), rtol=1e-13)

    def test_misaligned_dates(self, tmp_path, capsys):
        _panels(tmp_path)
        text = (tmp_path / "y.csv").read_text()
        (tmp_path / "y.csv").write_text(text.replace("\n2015-01-01,", "\n2014-12-31,", 1))
        code = main(["clean", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--method", "bbp", "--out", str(tmp_path / "c.csv")])
        assert code == 2
        assert "first mismatching date 2015-01-01" in capsys.readouterr().err

    def test_model_required_iff_nn(self, tmp_path):
        _panels(tmp_path)
        base = ["clean", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"), "--out", str(tmp_path / "c.csv")]
        assert main(base + ["--method", "nn"]) == 2
        assert main(base + ["--method", "bbp", "--model", "m.bin"]) == 2

    def test_missing_file(self, tmp_path, capsys):
        code = main(["clean", "--x", str(tmp_path / "nope.csv"), "--y", str(tmp_path / "nope.csv"), "--method", "bbp", "--out", str(tmp_path / "c.csv")])
        assert code == 2 and "nope.csv" in capsys.readouterr().err


class TestFeasibility:
    def test_infeasible_is_success(self, tmp_path, capsys):
        write_matrix_csv(np.eye(2), tmp_path / "cxx.csv")
        write_matrix_csv(np.eye(2), tmp_path / "cyy.csv")
        write_matrix_csv(np.diag([1.5, 0.5]), tmp_path / "cxy.csv")
        args = ["feasibility"] + [f"--{k}={tmp_path / (k + '.csv')}" for k in ("cxx", "cyy", "cxy")]
        assert main(args + ["--figure", str(tmp_path / "h.png")]) == 0
        out = capsys.readouterr().out
        assert "max_canonical 1.5" in out and "feasible_psd false" in out and "fraction_in_unit_interval 0.5" in out
        assert (tmp_path / "h.png").exists()

    def test_parse_error_location(self, tmp_path, capsys):
        (tmp_path / "cxx.csv").write_text("1,0\n0,x\n")
        write_matrix_csv(np.eye(2), tmp_path / "cyy.csv")
        write_matrix_csv(np.eye(2), tmp_path / "cxy.csv")
        args = ["feasibility"] + [f"--{k}={tmp_path / (k + '.csv')}" for k in ("cxx", "cyy", "cxy")]
        assert main(args) == 2
        assert re.search(r"cxx\.csv:2", capsys.readouterr().err)

    def test_matrix_round_trip(self, tmp_path):
        a = np.random.default_rng(0).standard_normal((3, 4))
        write_matrix_csv(a, tmp_path / "m.csv")
        np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), a)


class TestTrainEval:
    def _panel(self, tmp_path):
        g = np.random.default_rng(1)
        r = 0.01 * (0.5 * g.standard_normal((500, 1)) + g.standard_normal((500, 60)))
        dates = np.datetime64("2012-01-02") + np.arange(500)
        write_panel_csv(ReturnsPanel(dates, [f"A{i}" for i in range(60)], r), tmp_path / "panel.csv")

    def test_train_then_eval(self, tmp_path):
        self._panel(tmp_path)
        tc = dict(epochs=2, steps_per_epoch=2, batch_size=2, accumulation_steps=1, n_range=[20, 40],
                  nu_range=[0.3, 0.7], dt_range=[80, 120], dt_out=60, train_end="2012-10-01")
        (tmp_path / "tc.json").write_text(json.dumps(tc))
        assert main(["train", "--panel", str(tmp_path / "panel.csv"), "--config", str(tmp_path / "tc.json"),
                     "--out", str(tmp_path / "m.bin")]) == 0
        header = read_header(tmp_path / "m.bin")
        assert header["parameter_count"] == 331_355 and header["config"]["train_end"] == "2012-10-01"

        ec = dict(estimators=["mle", "nn", "bbp"], n_sim=3, n=30, nu=0.4, dt_in=120, dt_out=60, bootstrap_copies=100,
                  periods=[{"label": "p", "start": "2012-10-01", "end": "2013-02-01"}])
        (tmp_path / "ec.json").write_text(json.dumps(ec))
        base = ["eval", "--panel", str(tmp_path / "panel.csv"), "--model", str(tmp_path / "m.bin"),
                "--config", str(tmp_path / "ec.json")]
        assert main(base + ["--out", str(tmp_path / "e.csv"), "--figure", str(tmp_path / "e.png")]) == 0
        assert len((tmp_path / "e.csv").read_text().splitlines()) == 4
        assert main(base + ["--dt-out", "240", "--out", str(tmp_path / "f.csv")]) == 2

    def test_bad_config(self, tmp_path, capsys):
        self._panel(tmp_path)
        (tmp_path / "bad.json").write_text("{\"epochs\": 2,,}")
        assert main(["train", "--panel", str(tmp_path / "panel.csv"), "--config", str(tmp_path / "bad.json"),
                     "--out", str(tmp_path / "m.bin")]) == 2
        assert "bad.json:1" in capsys.readouterr().err
        (tmp_path / "bad.json").write_text("{\"epochz\": 2}")
        assert main(["train", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "m.bin")]) == 2
