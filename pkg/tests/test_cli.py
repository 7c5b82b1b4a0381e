import csv
import io

import numpy as np
import pytest

from fcopt.cli import (COLUMNS, ConfigError, SearchFailure, bench_bytes, line_search_B, main,
                       parse_config_text, parse_value, run_experiment)
from fcopt.oracles import NoiseConfig
from fcopt.problems import make_benchmark

MINIMAL = "[problem]\nname = ball-projection\n"

BENCH = """\
[problem]
name = ball-projection

[run]
budgets = 100, 200, 400, 800, 1600, 3200
"""


class TestParseValue:
    @pytest.mark.parametrize("text, expected", [
        ("1", 1),
        ("2.5", 2.5),
        ("1e-3", 1e-3),
        ("1, 2", [1, 2]),
        ("1, 0; 0, 1", [[1, 0], [0, 1]]),
        ("ball-projection", "ball-projection"),
        ("1, 0; 0, 1 | 2, 0; 0, 2", [[[1, 0], [0, 1]], [[2, 0], [0, 2]]]),
    ])
    def test_examples(self, text, expected):
        assert parse_value(text) == expected

    def test_integer_type(self):
        assert isinstance(parse_value("3"), int)
        assert isinstance(parse_value("3.0"), float)


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert cfg.problem == "ball-projection"
        assert (cfg.regime, cfg.method, cfg.schedule, cfg.B) == \
            ("deterministic", "conex", "strongly-convex", "auto")
        assert cfg.seeds == (0,) and cfg.checkpoints == 8 and cfg.budgets == ()

    def test_problem_params(self):
        cfg = parse_config_text(MINIMAL + "a = 2, 0\nr = 0.3\n")
        assert cfg.problem_params == {"a": [2, 0], "r": 0.3}

    def test_budgets_increasing(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config_text(MINIMAL + "[run]\nbudgets = 200, 100\n")

    def test_budgets_positive(self):
        with pytest.raises(ConfigError, match="positive integers"):
            parse_config_text(MINIMAL + "[run]\nbudgets = 0, 100\n")

    def test_stochastic_rate_needs_seeds(self):
        text = MINIMAL + "[noise]\nregime = semi-stochastic\nsigma0 = 1\n[run]\nbudgets = 10\n"
        with pytest.raises(ConfigError, match="seeds"):
            parse_config_text(text)
        assert parse_config_text(text, seeds_override=8).seeds == tuple(range(8))
        with pytest.raises(ConfigError):
            parse_config_text(text, seeds_override=4)

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 5"):
            parse_config_text(MINIMAL + "\n[solver]\nstepsize = 2\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config_text(MINIMAL + "[extras]\nx = 1\n")

    def test_missing_problem(self):
        with pytest.raises(ConfigError, match="required"):
            parse_config_text("[run]\nbudgets = 10\n")

    @pytest.mark.parametrize("line", ["B = 0.5", "B = sometimes", "eps = 0", "output = best"])
    def test_solver_values(self, line):
        with pytest.raises(ConfigError):
            parse_config_text(MINIMAL + "[solver]\n" + line + "\n")

    def test_proxpoint_needs_smooth_problem(self):
        with pytest.raises(ConfigError):
            parse_config_text("[problem]\nname = nonsmooth-l1\n[solver]\nmethod = proxpoint-exact\n")

    def test_seed_and_seeds_exclusive(self):
        with pytest.raises(ConfigError):
            parse_config_text(MINIMAL + "[run]\nseed = 1\nseeds = 1, 2\n")


@pytest.fixture(scope="module")
def bench_rows():
    return run_experiment(parse_config_text(BENCH))


class TestBench:
    def test_rows(self, bench_rows):
        assert [r["T"] for r in bench_rows] == [100, 200, 400, 800, 1600, 3200]
        assert all(r["status"] == "ok" for r in bench_rows)

    def test_accuracy_nonincreasing(self, bench_rows):
        acc = np.array([max(abs(r["gap"]), r["infeas"]) for r in bench_rows])
        assert np.all(np.diff(acc) <= 0)

    def test_csv_columns(self):
        text = bench_bytes(parse_config_text(BENCH.replace("1600, 3200", "1600"))).decode()
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == COLUMNS
        assert len(rows) == 6

    def test_identical_bytes(self):
        text = """\
[problem]
name = ball-projection
[noise]
regime = semi-stochastic
sigma0 = 1
[run]
budgets = 50, 100, 200, 400
seeds = 0, 1, 2, 3, 4, 5, 6, 7
"""
        cfg = parse_config_text(text)
        assert bench_bytes(cfg) == bench_bytes(cfg)

    def test_timing_column_optional(self):
        text = bench_bytes(parse_config_text(BENCH.replace(", 200, 400, 800, 1600, 3200", "")
                                             + "[output]\ntiming = true\n")).decode()
        assert text.splitlines()[0].endswith(",wall_time")

    def test_failed_cell_recorded(self):
        # certificate fails for this start, the row carries the error
        cfg = parse_config_text("[problem]\nname = nonconvex-quadratic\n[solver]\n"
                                "method = proxpoint-exact\nx0 = 0, 1\n[run]\nbudgets = 2\n")
        row = run_experiment(cfg)[0]
        assert row["status"].startswith("error: PreconditionError")


class TestLineSearch:
    def test_ball_projection(self):
        p = make_benchmark("ball-projection")
        B, history = line_search_B(p, NoiseConfig(), 1e-3)
        assert B <= 8
        assert history[-1][2] <= 1e-3
        assert [h[0] for h in history] == [2.0 ** k for k in range(len(history))]

    def test_inactive_constraint(self):
        p = make_benchmark("ball-projection", {"r": 2.0})
        B, history = line_search_B(p, NoiseConfig(), 1e-3)
        assert B == 1.0 and len(history) == 1

    def test_unattainable(self):
        p = make_benchmark("ball-projection")
        with pytest.raises(SearchFailure) as info:
            line_search_B(p, NoiseConfig(), 0.0)
        assert len(info.value.history) == 17


class TestMain:
    def test_bench_to_file(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text(BENCH.replace(", 800, 1600, 3200", ""))
        out = tmp_path / "rows.csv"
        assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 4

    def test_empty_budgets_warns(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text(MINIMAL)
        out = tmp_path / "rows.csv"
        assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
        assert "warning" in capsys.readouterr().err
        assert out.read_text().splitlines() == [",".join(COLUMNS)]

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text(MINIMAL + "[run]\nbudgets = 5, 1\n")
        assert main(["bench", "--config", str(cfg)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == 2

    def test_solve_summary(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text(MINIMAL + "[run]\nbudgets = 500\n")
        assert main(["solve", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "psi0* = 0.4178932188" in out and "status              ok" in out

    def test_accept_subset(self, capsys):
        assert main(["accept", "--only", "1"]) == 0
        assert "PASS criterion  1" in capsys.readouterr().out
