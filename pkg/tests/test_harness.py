import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cellfree_maxmin.cli import main as cli_main
from cellfree_maxmin.harness import (
    ApgSettings,
    CdfSummary,
    ExperimentConfig,
    default_config,
    run_cdf,
    run_convergence,
    run_scaling,
    run_single_solve,
    run_verify_rate,
    trial_seed,
)

FAKE_CLOCK = lambda: 0.0  # noqa: E731 - deterministic time source for byte-identity runs


def tiny_config(kind, out_dir, **kw):
    base = dict(
        kind=kind,
        num_aps=6,
        group_sizes=(2, 2),
        trials=2,
        master_seed=3,
        out_dir=str(out_dir),
        apg=ApgSettings(max_iters=400),
        mc_draws=3000,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def config_without_outdir(path):
    doc = json.loads(path.read_text())
    doc.pop("out_dir")  # necessarily differs between two run directories
    return doc


def strip_wall_columns(path):
    """CSV content with wall-clock columns removed (the only nondeterministic
    bytes in any output)."""
    rows = read_csv(path)
    header = rows[0]
    keep = [i for i, name in enumerate(header)
            if not (name.endswith("_s") or name.endswith("wall_s") or name == "elapsed_s")]
    kept = [[r[i] for i in keep] for r in rows]
    # key/value summaries carry wall time as rows instead of columns
    if header == ["key", "value"]:
        kept = [r for r in rows if not r[0].endswith("_s")]
    return kept


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config("cdf", tmp_path)
        doc = cfg.to_json_dict()
        back = ExperimentConfig.from_json_dict(json.loads(json.dumps(doc)))
        assert back == cfg

    def test_defaults_per_kind(self):
        assert default_config("convergence").num_aps == 100
        assert default_config("convergence").group_sizes == (10,) * 4
        assert default_config("cdf").group_sizes == (10, 10)
        assert default_config("scaling").scaling_m_grid == (100, 150, 200)
        assert default_config("verify-rate").mc_draws == 200_000

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError):
            tiny_config("nope", tmp_path)
        with pytest.raises(ValueError):
            tiny_config("cdf", tmp_path, solver="annealing")
        with pytest.raises(ValueError):
            tiny_config("cdf", tmp_path, trials=0)

    def test_trial_seed_stability(self):
        a = trial_seed(7, 0)
        b = trial_seed(7, 1)
        assert a != b
        assert trial_seed(7, 0) == a


class TestCdfSummary:
    def test_monotone_normalized(self):
        s = CdfSummary.from_rates(np.array([0.3, 0.1, 0.7, 0.2]))
        assert np.all(np.diff(s.rates_nats) >= 0)
        assert np.all(np.diff(s.cdf) > 0)
        assert s.cdf[-1] == 1.0
        assert s.min == pytest.approx(0.1)

    def test_single_trial_step_count(self, tmp_path):
        cfg = tiny_config("cdf", tmp_path, trials=1)
        out = run_cdf(cfg)
        assert out["apg"].rates_nats.shape[0] == cfg.dims.num_users


class TestRunners:
    def test_convergence_outputs(self, tmp_path):
        cfg = tiny_config("convergence", tmp_path)
        summary = run_convergence(cfg)
        for name in ("resolved_config.json", "trace_apg.csv", "trace_bisection.csv",
                     "summary.csv"):
            assert os.path.exists(tmp_path / name)
        assert "abs_gap_nats" in summary
        assert summary["abs_gap_nats"] <= 1e-3

    def test_convergence_scalar_optimum(self, tmp_path):
        # single AP / group / user: both solvers must hit the 1-D optimum
        import numpy as np
        from cellfree_maxmin import (
            Dimensions, PhysicalConfig, build_rate_model, generate_instance, user_rate,
        )

        cfg = tiny_config("convergence", tmp_path, num_aps=1, group_sizes=(1,))
        summary = run_convergence(cfg)
        model = build_rate_model(
            generate_instance(Dimensions(1, 1, (1,)), PhysicalConfig(), cfg.master_seed)
        )
        grid = np.linspace(0.0, 1.0, 20001)
        best = max(user_rate(model, np.array([g]), 0, 0) for g in grid)
        assert summary["apg_min_rate_nats"] == pytest.approx(best, abs=1e-6)
        assert summary["bisection_t_star_nats"] == pytest.approx(best, abs=2e-4)

    def test_convergence_single_solver(self, tmp_path):
        cfg = tiny_config("convergence", tmp_path, solver="apg")
        summary = run_convergence(cfg)
        assert "bisection_t_star_nats" not in summary
        assert not os.path.exists(tmp_path / "trace_bisection.csv")

    def test_cdf_outputs(self, tmp_path):
        cfg = tiny_config("cdf", tmp_path, trials=3)
        out = run_cdf(cfg)
        for name in ("cdf_apg.csv", "cdf_epa.csv", "users_apg.csv", "users_epa.csv",
                     "trial_minrates.csv"):
            assert os.path.exists(tmp_path / name)
        rows = read_csv(tmp_path / "cdf_apg.csv")
        assert rows[0] == ["rate_nats", "rate_bits", "cdf"]
        cdf_vals = [float(r[2]) for r in rows[1:]]
        assert cdf_vals == sorted(cdf_vals) and cdf_vals[-1] == 1.0
        assert len(rows) - 1 == 3 * cfg.dims.num_users
        assert 0.0 <= out["dominance_fraction"] <= 1.0

    def test_cdf_parallel_matches_serial(self, tmp_path):
        serial = run_cdf(tiny_config("cdf", tmp_path / "a", trials=3))
        parallel = run_cdf(tiny_config("cdf", tmp_path / "b", trials=3, workers=2))
        np.testing.assert_array_equal(serial["apg"].rates_nats, parallel["apg"].rates_nats)
        a = (tmp_path / "a" / "users_apg.csv").read_text()
        b = (tmp_path / "b" / "users_apg.csv").read_text()
        assert a == b

    def test_scaling_outputs_and_validation(self, tmp_path):
        cfg = tiny_config("scaling", tmp_path, scaling_m_grid=(4, 6), scaling_fixed_iters=20)
        out = run_scaling(cfg)
        rows = read_csv(tmp_path / "scaling.csv")
        assert rows[0][0] == "m_aps"
        assert len(rows) == 3
        assert len(out["apg_wall_s"]) == 2
        with pytest.raises(ValueError):
            run_scaling(tiny_config("scaling", tmp_path, solver="apg"))

    def test_verify_rate_outputs(self, tmp_path):
        cfg = tiny_config("verify-rate", tmp_path, trials=2, mc_draws=40_000,
                          num_aps=4, group_sizes=(2, 2))
        out = run_verify_rate(cfg)
        rows = read_csv(tmp_path / "verify_rate.csv")
        assert rows[0][:4] == ["trial", "instance_seed", "group", "user"]
        assert len(rows) - 1 == 2 * cfg.dims.num_users
        assert out["all_pass"] in (True, False)

    def test_verify_rate_low_confidence_flag(self, tmp_path):
        cfg = tiny_config("verify-rate", tmp_path, trials=1, mc_draws=100,
                          num_aps=4, group_sizes=(2, 2))
        out = run_verify_rate(cfg)
        rows = read_csv(tmp_path / "verify_rate.csv")
        low_conf_col = rows[0].index("low_confidence")
        assert any(r[low_conf_col] == "true" for r in rows[1:])
        assert out["low_confidence"]

    def test_verify_rate_epa_scheme(self, tmp_path):
        cfg = tiny_config("verify-rate", tmp_path, trials=1, mc_draws=40_000,
                          num_aps=4, group_sizes=(2, 2), eta_scheme="epa")
        run_verify_rate(cfg)
        rows = read_csv(tmp_path / "verify_rate.csv")
        epa_col = rows[0].index("epa_consistent")
        assert all(r[epa_col] == "true" for r in rows[1:])

    def test_single_solve_outputs(self, tmp_path):
        cfg = tiny_config("single-solve", tmp_path)
        summary = run_single_solve(cfg)
        for name in ("instance.json", "solution_rates.csv", "summary.csv", "trace_apg.csv"):
            assert os.path.exists(tmp_path / name)
        assert summary["min_rate_nats"] > 0


class TestDeterminism:
    def test_byte_identical_with_injected_clock(self, tmp_path):
        for sub in ("r1", "r2"):
            cfg = tiny_config("convergence", tmp_path / sub)
            run_convergence(cfg, clock=FAKE_CLOCK)
        names = sorted(os.listdir(tmp_path / "r1"))
        assert names == sorted(os.listdir(tmp_path / "r2"))
        for name in names:
            if name == "resolved_config.json":
                assert config_without_outdir(tmp_path / "r1" / name) == \
                    config_without_outdir(tmp_path / "r2" / name)
                continue
            a = (tmp_path / "r1" / name).read_bytes()
            b = (tmp_path / "r2" / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"

    def test_real_clock_differs_only_in_wall_fields(self, tmp_path):
        for sub in ("r1", "r2"):
            run_convergence(tiny_config("convergence", tmp_path / sub))
        for name in sorted(os.listdir(tmp_path / "r1")):
            p1, p2 = tmp_path / "r1" / name, tmp_path / "r2" / name
            if name == "resolved_config.json":
                assert config_without_outdir(p1) == config_without_outdir(p2)
            else:
                assert strip_wall_columns(p1) == strip_wall_columns(p2)

    def test_cdf_byte_identical(self, tmp_path):
        # cdf outputs carry no wall-clock fields at all
        for sub in ("r1", "r2"):
            run_cdf(tiny_config("cdf", tmp_path / sub, trials=2))
        for name in sorted(os.listdir(tmp_path / "r1")):
            if name == "resolved_config.json":
                assert config_without_outdir(tmp_path / "r1" / name) == \
                    config_without_outdir(tmp_path / "r2" / name)
                continue
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


class TestCli:
    def test_emit_config(self, capsys):
        rc = cli_main(["cdf", "--emit-config", "--trials", "7", "--seed", "5"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["trials"] == 7 and doc["master_seed"] == 5

    def test_config_file_and_overrides(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"kind": "cdf", "trials": 9, "num_aps": 11}))
        rc = cli_main(["cdf", "--config", str(cfg_path), "--trials", "4", "--emit-config"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["num_aps"] == 11
        assert doc["trials"] == 4  # CLI flag beats file

    def test_kind_mismatch_fails(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"kind": "cdf"}))
        rc = cli_main(["scaling", "--config", str(cfg_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert json.loads(err)["experiment"] == "scaling"

    def test_subprocess_end_to_end(self, tmp_path):
        out = subprocess.run(
            [sys.executable, "-m", "cellfree_maxmin.cli", "single-solve",
             "--out", str(tmp_path / "run"), "--seed", "2"],
            capture_output=True, text=True,
        )
        assert out.returncode == 0, out.stderr
        assert (tmp_path / "run" / "solution_rates.csv").exists()

    def test_machine_readable_error(self):
        out = subprocess.run(
            [sys.executable, "-m", "cellfree_maxmin.cli", "scaling", "--solver", "apg"],
            capture_output=True, text=True,
        )
        assert out.returncode == 1
        assert json.loads(out.stderr)["error"]
