import json
import os

import numpy as np
import pytest

from wbary.cli import main
from wbary.fileio import load_measure_csv, read_pgm, save_measure_csv, write_pgm
from wbary.measures import DiscreteMeasure, SupportGrid, grid_support
from wbary.solver import load_state, save_state

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures", "golden3")


def _golden_args(tmp_path, extra=()):
    return [
        "solve",
        "--inputs", os.path.join(FIXTURES, "input_*.csv"),
        "--support", os.path.join(FIXTURES, "support.csv"),
        "--tol", "1e-8",
        "--out", str(tmp_path / "p.csv"),
        *extra,
    ]


class TestGenerate:
    def test_writes_pgms_and_index(self, tmp_path):
        out = tmp_path / "data"
        code = main(
            ["gen", "--kind", "ellipses", "--n", "3", "--ellipses", "2",
             "--side", "24", "--seed", "5", "--out", str(out)]
        )
        assert code == 0
        files = sorted(os.listdir(out))
        assert files == ["index.csv", "measure_0000.pgm", "measure_0001.pgm", "measure_0002.pgm"]
        lines = (out / "index.csv").read_text().splitlines()
        assert lines[0] == "file,ellipses,side,density"
        assert len(lines) == 4
        img = read_pgm(out / "measure_0000.pgm")
        assert img.shape == (24, 24)
        assert img.sum() > 0

    def test_fixed_seed_reproduces_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen", "--n", "1", "--seed", "7", "--side", "16",
                         "--out", str(out)]) == 0
        assert (a / "measure_0000.pgm").read_bytes() == (b / "measure_0000.pgm").read_bytes()
        assert (a / "index.csv").read_text() == (b / "index.csv").read_text()

    def test_invalid_ellipse_count_is_usage_error(self, tmp_path, capsys):
        code = main(["gen", "--n", "1", "--ellipses", "0", "--out", str(tmp_path / "x")])
        assert code == 3
        assert "ellipses" in capsys.readouterr().err


class TestSolve:
    def test_golden_fixture_matches_oracle_value(self, tmp_path, capsys):
        code = main(_golden_args(tmp_path))
        assert code == 0
        result = load_measure_csv(tmp_path / "p.csv")
        np.testing.assert_allclose(result.weights, [0.0, 1.0, 0.0], atol=1e-6)
        assert "converged" in capsys.readouterr().out

    def test_outputs_are_byte_reproducible(self, tmp_path):
        main(_golden_args(tmp_path))
        first = (tmp_path / "p.csv").read_bytes()
        main(_golden_args(tmp_path))
        assert (tmp_path / "p.csv").read_bytes() == first

    def test_randomized_outputs_reproducible_for_fixed_seed(self, tmp_path):
        extra = ["--select", "random:2", "--seed", "13", "--max-iter", "200000"]
        main(_golden_args(tmp_path, extra))
        first = (tmp_path / "p.csv").read_bytes()
        main(_golden_args(tmp_path, extra))
        assert (tmp_path / "p.csv").read_bytes() == first

    def test_manifest_and_trace(self, tmp_path):
        code = main(_golden_args(tmp_path, ["--trace", str(tmp_path / "t.csv")]))
        assert code == 0
        manifest = json.loads((tmp_path / "p.csv.manifest.json").read_text())
        assert manifest["termination"] == "converged"
        assert manifest["objective"] == pytest.approx(1.0, abs=1e-8)
        assert manifest["config"]["rho"] > 0
        assert manifest["config"]["tol"] == 1e-8
        assert manifest["build"]["version"]
        trace_lines = (tmp_path / "t.csv").read_text().splitlines()
        assert trace_lines[0] == "iter,t,distL,residual,mass,seconds"
        assert len(trace_lines) >= 2

    def test_iteration_cap_gives_exit_two(self, tmp_path):
        code = main(_golden_args(tmp_path, ["--max-iter", "2", "--tol", "1e-15"]))
        assert code == 2

    def test_unbalanced_without_gamma_is_rejected(self, tmp_path, capsys):
        heavy = tmp_path / "heavy.csv"
        light = tmp_path / "light.csv"
        grid = SupportGrid(np.array([0.0]))
        save_measure_csv(heavy, DiscreteMeasure(grid, np.array([2.0])))
        save_measure_csv(light, DiscreteMeasure(grid, np.array([1.0])))
        args = [
            "solve", "--inputs", str(tmp_path / "*.csv"),
            "--support", str(light), "--out", str(tmp_path / "out" / "p.csv"),
        ]
        code = main(args)
        assert code == 3
        err = capsys.readouterr().err
        assert "unbalanced" in err and "--gamma" in err
        code = main(args[:-2] + ["--gamma", "0.5", "--out", str(tmp_path / "p.csv")])
        assert code == 0
        np.testing.assert_allclose(
            load_measure_csv(tmp_path / "p.csv").weights, [1.5], atol=1e-7
        )

    def test_random_selection_and_workers(self, tmp_path):
        code = main(
            _golden_args(
                tmp_path,
                ["--select", "random:2", "--seed", "11", "--workers", "2",
                 "--max-iter", "200000"],
            )
        )
        assert code == 0
        result = load_measure_csv(tmp_path / "p.csv")
        np.testing.assert_allclose(result.weights, [0.0, 1.0, 0.0], atol=1e-5)

    def test_shuffle_partition_requires_random_mode(self, tmp_path):
        assert main(_golden_args(tmp_path, ["--shuffle-partition"])) == 3

    def test_env_var_sets_worker_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MAM_THREADS", "2")
        code = main(_golden_args(tmp_path))
        assert code == 0
        manifest = json.loads((tmp_path / "p.csv.manifest.json").read_text())
        assert manifest["config"]["workers"] == 2
        monkeypatch.setenv("MAM_THREADS", "zero")
        assert main(_golden_args(tmp_path)) == 3

    def test_checkpoint_and_resume(self, tmp_path):
        state = tmp_path / "state.bin"
        assert main(_golden_args(tmp_path, ["--checkpoint", str(state)])) == 0
        assert state.exists()
        code = main(_golden_args(tmp_path, ["--resume", str(state)]))
        assert code == 0
        manifest = json.loads((tmp_path / "p.csv.manifest.json").read_text())
        assert manifest["iterations"] <= 2

    def test_non_finite_state_gives_exit_four(self, tmp_path, capsys):
        state = tmp_path / "state.bin"
        assert main(_golden_args(tmp_path, ["--checkpoint", str(state)])) == 0
        plan, _ = load_state(state)
        plan.slabs[0][0, 0] = np.nan
        plan.refresh_marginal(0)
        save_state(state, plan)
        code = main(_golden_args(tmp_path, ["--resume", str(state)]))
        assert code == 4
        assert "non-finite" in capsys.readouterr().err

    def test_missing_inputs_glob(self, tmp_path):
        assert main(["solve", "--inputs", str(tmp_path / "nope*.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 3

    def test_grid_images_solve_without_support_flag(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(2):
            img = rng.integers(1, 255, size=(6, 6)).astype(np.uint8)
            write_pgm(tmp_path / f"in{i}.pgm", img)
        code = main([
            "solve", "--inputs", str(tmp_path / "in*.pgm"),
            "--tol", "1e-6", "--max-iter", "20000",
            "--render", str(tmp_path / "p.pgm"),
            "--out", str(tmp_path / "p.csv"),
        ])
        assert code == 0
        assert read_pgm(tmp_path / "p.pgm").shape == (6, 6)


class TestEval:
    def test_oracle_gap_zero_at_solution(self, tmp_path, capsys):
        main(_golden_args(tmp_path))
        code = main([
            "eval", "--p", str(tmp_path / "p.csv"),
            "--inputs", os.path.join(FIXTURES, "input_*.csv"), "--oracle",
        ])
        assert code == 0
        out = capsys.readouterr().out
        lines = dict(line.split(" ", 1) for line in out.strip().splitlines())
        assert float(lines["objective"]) == pytest.approx(1.0, abs=1e-8)
        assert abs(float(lines["gap"])) <= 1e-8

    def test_exact_reference_gap_of_split_candidate(self, tmp_path, capsys):
        candidate = tmp_path / "half.csv"
        save_measure_csv(
            candidate,
            DiscreteMeasure(
                SupportGrid(np.array([0.0, 1.0, 2.0])), np.array([0.5, 0.0, 0.5])
            ),
        )
        code = main([
            "eval", "--p", str(candidate),
            "--inputs", os.path.join(FIXTURES, "input_*.csv"),
            "--exact", os.path.join(FIXTURES, "exact.csv"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        lines = dict(line.split(" ", 1) for line in out.strip().splitlines())
        assert float(lines["objective"]) == pytest.approx(2.0, abs=1e-10)
        assert float(lines["gap"]) == pytest.approx(1.0, abs=1e-10)

    def test_objective_only_without_reference(self, tmp_path, capsys):
        main(_golden_args(tmp_path))
        code = main([
            "eval", "--p", str(tmp_path / "p.csv"),
            "--inputs", os.path.join(FIXTURES, "input_*.csv"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "objective" in out and "gap" not in out

    def test_oracle_size_cap_is_reported(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        big = DiscreteMeasure(grid_support(40), rng.dirichlet(np.ones(1600)))
        save_measure_csv(tmp_path / "big0.csv", big)
        save_measure_csv(tmp_path / "big1.csv", big)
        save_measure_csv(tmp_path / "cand.csv", big)
        code = main([
            "eval", "--p", str(tmp_path / "cand.csv"),
            "--inputs", str(tmp_path / "big*.csv"), "--oracle",
        ])
        assert code == 3
        assert "exceeds" in capsys.readouterr().err


class TestRender:
    def test_round_trip(self, tmp_path):
        weights = np.zeros(16)
        weights[5] = 1.0
        source = DiscreteMeasure(grid_support(4), weights)
        save_measure_csv(tmp_path / "m.csv", source)
        code = main(["render", "--p", str(tmp_path / "m.csv"),
                     "--out", str(tmp_path / "m.pgm")])
        assert code == 0
        img = read_pgm(tmp_path / "m.pgm")
        assert img[1, 1] == 255
        assert img.sum() == 255

    def test_non_grid_support_fails_cleanly(self, tmp_path, capsys):
        nu = DiscreteMeasure(SupportGrid(np.array([[0.3, 0.3], [0.9, 0.1]])), np.ones(2))
        save_measure_csv(tmp_path / "m.csv", nu)
        assert main(["render", "--p", str(tmp_path / "m.csv"),
                     "--out", str(tmp_path / "m.pgm")]) == 3
        assert "grid" in capsys.readouterr().err
