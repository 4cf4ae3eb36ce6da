import re

import numpy as np
import pytest

from sgpsde.cli import EXIT_BUDGET, EXIT_ERROR, EXIT_OK, WORKERS_ENV, main
from sgpsde.fileio import load_curves, load_model, load_series, read_model_file

ERROR_LINE = re.compile(r"^E_[A-Z]+: \S.*$")


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


@pytest.fixture
def toy_series(tmp_path, capsys):
    path = tmp_path / "toy.csv"
    rc, _, _ = run(capsys, "simulate", "--model", "m1", "--n", 100, "--dt", 0.01,
                   "--seed", 3, "--out", path)
    assert rc == EXIT_OK
    return path


@pytest.fixture
def fitted(tmp_path, toy_series, capsys):
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("m = 4\nrestarts = 1\nmax_em_iterations = 60\n")
    model = tmp_path / "model.json"
    rc, out, _ = run(capsys, "fit", "--in", toy_series, "--config", cfg, "--out", model)
    return rc, out, model


class TestFit:
    def test_writes_loadable_model(self, fitted):
        rc, out, model = fitted
        assert rc in (EXIT_OK, EXIT_BUDGET)
        keys = [line.split(" = ")[0] for line in out.splitlines()]
        assert keys == ["L", "L'", "iterations", "converged"]
        assert (rc == EXIT_OK) == out.rstrip().endswith("true")
        assert load_model(model).m == 4

    def test_budget_exit_code(self, tmp_path, toy_series, capsys):
        cfg = tmp_path / "short.cfg"
        cfg.write_text("m = 3\nrestarts = 1\nmax_em_iterations = 1\n")
        rc, out, _ = run(capsys, "fit", "--in", toy_series, "--config", cfg,
                         "--out", tmp_path / "m.json")
        assert rc == EXIT_BUDGET and "converged = false" in out

    def test_workers_env_validated(self, toy_series, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "zero")
        rc, _, err = run(capsys, "fit", "--in", toy_series, "--out", tmp_path / "m.json")
        assert rc == EXIT_ERROR and err.startswith("E_USAGE:")


class TestPredict:
    def test_default_grid_is_training_range(self, fitted, toy_series, tmp_path, capsys):
        out = tmp_path / "curves.csv"
        rc, _, _ = run(capsys, "predict", "--model", fitted[2], "--out", out)
        assert rc == EXIT_OK
        curves = load_curves(out)
        x = load_series(toy_series).x
        assert curves["x"].size == 200
        assert curves["x"][0] == x.min() and curves["x"][-1] == x.max()
        assert np.all(curves["g_lower"] <= curves["g_upper"])

    def test_explicit_grid_and_evaluate(self, fitted, toy_series, tmp_path, capsys):
        curves = tmp_path / "curves.csv"
        rc, _, _ = run(capsys, "predict", "--model", fitted[2], "--grid-min", 1, "--grid-max", 5,
                       "--grid-n", 11, "--ci", 0.5, "--out", curves)
        assert rc == EXIT_OK and load_curves(curves)["x"].tolist() == list(np.linspace(1, 5, 11))
        table = tmp_path / "err.csv"
        rc, _, _ = run(capsys, "evaluate", "--truth", "M1", "--curves", curves,
                       "--series", toy_series, "--out", table)
        lines = table.read_text().splitlines()
        assert rc == EXIT_OK and len(lines) == 3
        assert sorted(line.split(",")[2] for line in lines[1:]) == ["diffusion", "drift"]

    def test_inverted_grid(self, fitted, tmp_path, capsys):
        rc, _, err = run(capsys, "predict", "--model", fitted[2], "--grid-min", 2,
                         "--grid-max", 1, "--out", tmp_path / "c.csv")
        assert rc == EXIT_ERROR and err.startswith("E_USAGE:")


class TestBaseline:
    @pytest.mark.parametrize("extra", [["--method", "binning", "--bins", "4"],
                                       ["--method", "nw"], ["--method", "nw", "--bandwidth", "0.3"]])
    def test_columns(self, toy_series, tmp_path, capsys, extra):
        out = tmp_path / "b.csv"
        rc, _, _ = run(capsys, "baseline", "--in", toy_series, *extra, "--grid-n", 25, "--out", out)
        assert rc == EXIT_OK
        cols = load_curves(out)
        assert list(cols) == ["x", "f_hat", "g_hat"] and cols["x"].size == 25

    def test_bins_and_bandwidth_exclusive(self, toy_series, tmp_path, capsys):
        rc, _, err = run(capsys, "baseline", "--in", toy_series, "--method", "nw", "--bins", 3,
                         "--bandwidth", 0.2, "--out", tmp_path / "b.csv")
        assert rc == EXIT_ERROR and err.startswith("E_USAGE:")


class TestBenchmark:
    def test_byte_identical_reruns(self, tmp_path, capsys):
        cfg = tmp_path / "b.cfg"
        cfg.write_text("m = 4\nrestarts = 1\nmax_em_iterations = 5\n")
        outs = []
        for k in range(2):
            out = tmp_path / f"bench{k}.csv"
            rc, _, _ = run(capsys, "benchmark", "--models", "M1,M2", "--replicates", 2,
                           "--seed", 7, "--n", 800, "--dt", 0.01, "--config", cfg,
                           "--summary", tmp_path / f"sum{k}.csv", "--out", out)
            assert rc == EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        assert len(outs[0].decode().splitlines()) == 1 + 2 * 3 * 2 * 2
        assert (tmp_path / "sum0.csv").read_bytes() == (tmp_path / "sum1.csv").read_bytes()


class TestPreprocess:
    def test_log_returns(self, tmp_path, capsys):
        src = tmp_path / "p.csv"
        src.write_text("price\n1\n2\n4\n")
        out = tmp_path / "r.csv"
        assert run(capsys, "preprocess", "--in", src, "--log-returns", "--out", out)[0] == EXIT_OK
        np.testing.assert_allclose(load_curves(out)["x"], [np.log(2)] * 2)

    def test_zero_price(self, tmp_path, capsys):
        src = tmp_path / "p.csv"
        src.write_text("price\n1\n0\n4\n5\n")
        rc, _, err = run(capsys, "preprocess", "--in", src, "--log-returns", "--out", tmp_path / "r")
        assert rc == EXIT_ERROR and err.strip() == "E_PREPROCESS: non-positive price at index 1"


@pytest.mark.parametrize("argv,code", [
    (["frobnicate"], "E_USAGE"),
    (["simulate", "--model", "M9", "--n", "10", "--dt", "0.1", "--out", "x"], "E_USAGE"),
    (["simulate", "--model", "M1", "--n", "1", "--dt", "0.1", "--out", "x"], "E_CONFIG"),
    (["fit", "--in", "/nonexistent/series.csv", "--dt", "0.1", "--out", "m"], "E_IO"),
    (["predict", "--model", "/nonexistent/model.json", "--out", "c"], "E_IO"),
])
def test_error_lines(capsys, argv, code):
    rc, out, err = run(capsys, *argv)
    assert rc == EXIT_ERROR and out == ""
    lines = err.splitlines()
    assert len(lines) == 1 and ERROR_LINE.match(lines[0]) and lines[0].startswith(code + ":")


def test_bad_config_and_bad_model(tmp_path, toy_series, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("m = 4\nbogus = 1\n")
    rc, _, err = run(capsys, "fit", "--in", toy_series, "--config", cfg, "--out", tmp_path / "m")
    assert rc == EXIT_ERROR and err.strip() == "E_CONFIG: line 2: unknown key 'bogus'"
    broken = tmp_path / "broken.json"
    broken.write_text('{"format_version": 1, "x_m": [')
    rc, _, err = run(capsys, "predict", "--model", broken, "--out", tmp_path / "c")
    assert rc == EXIT_ERROR and err.startswith("E_PARSE:") and "line 1" in err
    broken.write_text('{"format_version": 99}')
    rc, _, err = run(capsys, "predict", "--model", broken, "--out", tmp_path / "c")
    assert err.startswith("E_VERSION:")
