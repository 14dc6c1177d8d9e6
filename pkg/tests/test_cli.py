import csv
import json
import shutil

import numpy as np
import pytest
import yaml

from hjbsafe.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from hjbsafe.scenario import bundled_path
from hjbsafe.sga import ValueFunction


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    """Output directory holding the hovercraft and spacecraft value functions."""
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit-value", "--config", "hovercraft", "--out-dir", str(out)]) == EXIT_OK
    assert main(["fit-value", "--config", "spacecraft_case1", "--out-dir", str(out)]) == EXIT_OK
    return out


def with_fits(fitted, tmp_path):
    tmp_path.mkdir(parents=True, exist_ok=True)
    for name in ("hovercraft.vf", "spacecraft.vf"):
        shutil.copy(fitted / name, tmp_path / name)
    return tmp_path


def write_scenario(tmp_path, base, edit):
    doc = yaml.safe_load(bundled_path(base).read_text())
    edit(doc)
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


class TestFitValue:
    def test_hovercraft(self, fitted):
        V = ValueFunction.load(fitted / "hovercraft.vf")
        assert len(V.coeffs) == 3
        np.testing.assert_allclose(V.coeffs, [np.sqrt(3), 2.0, np.sqrt(3)], rtol=1e-8)
        rows = read_rows(fitted / "hovercraft_iterations.csv")
        assert rows[0] == ["iter", "max_delta", "integral_V", "cond", "method"]
        assert len(rows) - 2 <= 6

    def test_spacecraft(self, fitted):
        V = ValueFunction.load(fitted / "spacecraft.vf")
        assert len(V.coeffs) == 147
        assert V.offline_indices == (0, 1, 2, 3, 4, 5)

    def test_reports_progress(self, capsys, tmp_path):
        code, out = run(capsys, "fit-value", "--config", "hovercraft", "--out-dir", str(tmp_path))
        assert code == EXIT_OK
        assert "3 coefficients" in out and "iterations" in out

    def test_unstable_initial_policy(self, capsys, tmp_path):
        path = write_scenario(tmp_path, "hovercraft", lambda d: d["initial_policy"].update(gain=[[1.0, 0.0]]))
        code, out = run(capsys, "fit-value", "--config", str(path), "--out-dir", str(tmp_path))
        assert code == EXIT_FAIL and "not stabilizing" in out

    def test_non_convergence(self, capsys, tmp_path):
        def edit(d):
            d["policy_iteration"]["max_iter"] = 1
        path = write_scenario(tmp_path, "hovercraft", edit)
        code, _ = run(capsys, "fit-value", "--config", str(path), "--out-dir", str(tmp_path))
        assert code == EXIT_FAIL


class TestConfigErrors:
    def test_unknown_key(self, capsys, tmp_path):
        path = write_scenario(tmp_path, "hovercraft", lambda d: d["simulation"].update(bogus_rate=3))
        code, out = run(capsys, "simulate", "--config", str(path), "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE and "bogus_rate" in out

    def test_wrong_type(self, capsys, tmp_path):
        path = write_scenario(tmp_path, "hovercraft", lambda d: d["barriers"][0].update(alpha="ten"))
        code, out = run(capsys, "echo-params", "--config", str(path))
        assert code == EXIT_USAGE and "alpha" in out

    def test_missing_config(self, capsys, tmp_path):
        code, out = run(capsys, "echo-params", "--config", str(tmp_path / "nope.yaml"))
        assert code == EXIT_USAGE and "nope.yaml" in out

    def test_dimension_mismatch(self, capsys, tmp_path):
        path = write_scenario(tmp_path, "hovercraft", lambda d: d["simulation"].update(x0=[1.0, 2.0, 3.0]))
        code, out = run(capsys, "echo-params", "--config", str(path))
        assert code == EXIT_USAGE and "x0" in out

    def test_missing_value_file(self, capsys, tmp_path):
        missing = tmp_path / "absent.vf"
        code, out = run(capsys, "simulate", "--config", "hovercraft", "--value-fn", str(missing),
                        "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE and str(missing) in out

    def test_value_file_for_other_model(self, capsys, fitted, tmp_path):
        code, out = run(capsys, "simulate", "--config", "hovercraft", "--value-fn",
                        str(fitted / "spacecraft.vf"), "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE and "expects" in out

    def test_corrupt_value_file(self, capsys, tmp_path):
        (tmp_path / "hovercraft.vf").write_text("# hjbsafe value function v1\ngarbage\n")
        code, out = run(capsys, "simulate", "--config", "hovercraft", "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE and "could not parse" in out

    def test_sweep_needs_box(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        code, out = run(capsys, "sweep-alpha", "--config", "spacecraft_case2", "--out-dir", str(out_dir))
        assert code == EXIT_USAGE and "integrator-box" in out


class TestSimulate:
    def test_hovercraft(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        code, out = run(capsys, "simulate", "--config", "hovercraft", "--out-dir", str(out_dir))
        assert code == EXIT_OK
        summary = json.loads((out_dir / "hovercraft_summary.json").read_text())
        assert summary["cost"] == pytest.approx(398.3448, abs=1e-3)
        assert summary["within_band"] and summary["passed"]
        assert summary["infeasible_steps"] == 0
        results = read_rows(out_dir / "results.csv")
        assert results[0][:3] == ["scenario", "alpha", "cost"]
        assert results[1][0] == "hovercraft" and float(results[1][2]) == summary["cost"]
        assert "solve time" in out

    def test_case2_within_band(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        code, _ = run(capsys, "simulate", "--config", "spacecraft_case2", "--out-dir", str(out_dir))
        assert code == EXIT_OK
        summary = json.loads((out_dir / "spacecraft_case2_summary.json").read_text())
        assert 3.3768 <= summary["cost"] <= 4.06
        assert summary["min_margins"]["pointing_psi0"] >= -1e-6

    def test_deterministic_outputs(self, capsys, fitted, tmp_path):
        blobs = []
        for k in range(2):
            out_dir = with_fits(fitted, tmp_path / f"run{k}")
            assert main(["simulate", "--config", "spacecraft_case1", "--out-dir", str(out_dir)]) == EXIT_OK
            blobs.append(((out_dir / "spacecraft_case1_trajectory.csv").read_bytes(),
                          (out_dir / "spacecraft_case1_summary.json").read_bytes()))
        capsys.readouterr()
        assert blobs[0] == blobs[1]

    def test_fit_is_deterministic(self, fitted, tmp_path):
        assert main(["fit-value", "--config", "hovercraft", "--out-dir", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "hovercraft.vf").read_bytes() == (fitted / "hovercraft.vf").read_bytes()


class TestSweep:
    def test_single_alpha_equals_simulate(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        assert main(["simulate", "--config", "hovercraft", "--out-dir", str(out_dir)]) == EXIT_OK
        assert main(["sweep-alpha", "--config", "hovercraft", "--out-dir", str(out_dir)]) == EXIT_OK
        capsys.readouterr()
        summary = json.loads((out_dir / "hovercraft_summary.json").read_text())
        rows = read_rows(out_dir / "hovercraft_alpha_sweep.csv")
        assert rows[0] == ["alpha", "cost", "min_margin", "infeasible_steps"]
        assert len(rows) == 2 and float(rows[1][0]) == 10.0
        assert float(rows[1][1]) == summary["cost"]

    def test_fine_sampling_gap(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        code, _ = run(capsys, "sweep-alpha", "--config", "hovercraft_sweep", "--out-dir", str(out_dir))
        assert code == EXIT_OK
        rows = read_rows(out_dir / "hovercraft_sweep_alpha_sweep.csv")[1:]
        cost = {float(r[0]): float(r[1]) for r in rows}
        margin = {float(r[0]): float(r[2]) for r in rows}
        assert sorted(cost) == [1.0, 2.0, 10.0, 100.0]
        assert abs(cost[10.0] - cost[100.0]) / cost[100.0] < 1e-3
        costs = [cost[a] for a in sorted(cost)]
        assert all(b <= a * (1 + 1e-6) for a, b in zip(costs, costs[1:]))
        assert margin[100.0] <= margin[1.0]
        assert all(m >= -1e-6 for m in margin.values())

    def test_override_alphas(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        code, out = run(capsys, "sweep-alpha", "--config", "hovercraft", "--alphas", "5", "20",
                        "--out-dir", str(out_dir))
        assert code == EXIT_OK
        assert len(read_rows(out_dir / "hovercraft_alpha_sweep.csv")) == 3


class TestAudit:
    @pytest.fixture
    def stored(self, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        assert main(["simulate", "--config", "hovercraft", "--out-dir", str(out_dir)]) == EXIT_OK
        return out_dir

    def test_stored_run_passes(self, capsys, stored):
        capsys.readouterr()
        code, out = run(capsys, "audit", "--config", "hovercraft", "--out-dir", str(stored))
        assert code == EXIT_OK and "audit passed" in out

    def test_injected_violation(self, capsys, stored):
        path = stored / "hovercraft_trajectory.csv"
        rows = read_rows(path)
        rows[42][2] = "1.5"
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        capsys.readouterr()
        code, out = run(capsys, "audit", "--config", "hovercraft", "--out-dir", str(stored))
        assert code == EXIT_FAIL
        assert "VIOLATION v_upper_psi0" in out and "rows 41" in out
        assert "MISMATCH" in out

    def test_tampered_margin_column(self, capsys, stored):
        path = stored / "hovercraft_trajectory.csv"
        rows = read_rows(path)
        col = rows[0].index("v_lower_psi0")
        rows[7][col] = "5.0"
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        capsys.readouterr()
        code, out = run(capsys, "audit", "--config", "hovercraft", "--out-dir", str(stored))
        assert code == EXIT_FAIL and "MISMATCH logged v_lower_psi0" in out and "rows 6" in out

    def test_case2_pointing(self, capsys, fitted, tmp_path):
        out_dir = with_fits(fitted, tmp_path)
        assert main(["simulate", "--config", "spacecraft_case2", "--out-dir", str(out_dir)]) == EXIT_OK
        capsys.readouterr()
        code, out = run(capsys, "audit", "--config", "spacecraft_case2", "--out-dir", str(out_dir))
        assert code == EXIT_OK
        rows = read_rows(out_dir / "spacecraft_case2_trajectory.csv")
        col = rows[0].index("pointing_psi0")
        assert min(float(r[col]) for r in rows[1:]) >= 0.0

    def test_missing_trajectory(self, capsys, tmp_path):
        code, out = run(capsys, "audit", "--config", "hovercraft", "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE and "hovercraft_trajectory.csv" in out


class TestEchoAndBatch:
    def test_hovercraft_parameters(self, capsys):
        code, out = run(capsys, "echo-params", "--config", "hovercraft")
        assert code == EXIT_OK
        for line in ("model.v_max = 1.0", "model.u_max = 1.0", "simulation.x0 = [10.0, 0.0]",
                     "barriers[0].alpha = 10.0", "derived.basis_size = 3", "derived.R = [[1.0]]"):
            assert line in out

    def test_spacecraft_parameters(self, capsys):
        code, out = run(capsys, "echo-params", "--config", "spacecraft_case2")
        assert code == EXIT_OK
        for text in ("[1.814, -0.1185, 0.0275]", "model.u_max = 0.123", "model.h_max = 0.4",
                     "simulation.x0 = [0.312, -0.666, 0.606", "[-0.47, -0.19, 0.86]",
                     "barriers[0].theta_deg = 15.0", "barriers[0].alpha1 = 1.0", "barriers[0].alpha2 = 1.0",
                     "derived.basis_size = 147"):
            assert text in out
        _, out1 = run(capsys, "echo-params", "--config", "spacecraft_case1")
        assert "barriers[2].alpha = 10.0" in out1 and "barriers[2].hi = 0.4" in out1

    @pytest.mark.parametrize("jobs", ["1", "2"])
    def test_batch_isolates_outputs(self, capsys, tmp_path, jobs):
        code, out = run(capsys, "fit-value", "--config", "hovercraft", "--config", "hovercraft_sweep",
                        "--jobs", jobs, "--out-dir", str(tmp_path))
        assert code == EXIT_OK
        assert (tmp_path / "hovercraft" / "hovercraft.vf").is_file()
        assert (tmp_path / "hovercraft_sweep" / "hovercraft.vf").is_file()
        assert out.index("hovercraft:") < out.index("hovercraft_sweep:")

    def test_batch_reports_worst_exit(self, capsys, tmp_path):
        code, _ = run(capsys, "echo-params", "--config", "hovercraft", "--config", str(tmp_path / "x.yaml"),
                      "--out-dir", str(tmp_path))
        assert code == EXIT_USAGE

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["plot", "--config", "hovercraft"])
        assert info.value.code == 2
