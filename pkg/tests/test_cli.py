"""End-to-end checks for the command line driver and its config plumbing.

Every subcommand is exercised through ``cli.main(argv)`` against a
temporary output directory, on deliberately coarse grids so the whole
file stays cheap.  Determinism is checked at the byte level: repeated
runs with the same flags must produce identical files.
"""

import json
import os

import numpy as np
import pytest

from halfbubble import cli
from halfbubble.config import RunConfig
from halfbubble.errors import DomainError, InputFormatError, ValidationFailure
from halfbubble.geometry import CurvaturePoint, save_curvature_file

# Coarse-but-honest settings shared by the subcommand tests.  h = 0.02
# gives a 50 x 50 solver grid, enough for every pipeline stage to run
# while keeping each invocation well under a second.
FAST = ["--seed", "1", "--h", "0.02", "--t-max", "30", "--r-max", "30"]


def run(out_dir, *argv):
    return cli.main([*FAST, "--out-dir", str(out_dir), *argv])


def read(path):
    return path.read_bytes()


# ----------------------------------------------------------------------
# RunConfig


class TestRunConfig:
    def test_json_roundtrip_is_byte_identical(self):
        cfg = RunConfig()
        text = cfg.to_json()
        again = RunConfig.from_dict(json.loads(text)).to_json()
        assert again == text

    def test_roundtrip_preserves_custom_fields(self):
        cfg = RunConfig(
            n=13,
            seed=7,
            h=1.0 / 64,
            delta_ladder=(0.001, 0.01, 0.1),
            mc_samples=2500,
            deg3_scale=2.5,
            rii_convention="per_index",
        )
        back = RunConfig.from_dict(json.loads(cfg.to_json()))
        assert back == cfg
        assert back.delta_ladder == (0.001, 0.01, 0.1)

    def test_grid_mapping(self):
        grid = RunConfig(h=1.0 / 96, t_max=40.0, r_max=48.0).grid()
        assert (grid.n_t, grid.n_r) == (96, 96)
        assert (grid.t_max, grid.r_max) == (40.0, 48.0)

    def test_from_dict_rejects_unknown_field(self):
        with pytest.raises(InputFormatError, match="unknown"):
            RunConfig.from_dict({"n": 11, "bogus": 3})

    def test_from_json_reports_syntax_location(self):
        with pytest.raises(InputFormatError, match="line"):
            RunConfig.from_json('{"n": 11,\n "seed": }\n')

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n": 4},
            {"h": 0.0},
            {"h": 0.2},
            {"tol_quad": 0.0},
            {"tol_sym": -1e-12},
            {"t_max": 4.0},
            {"mc_samples": 10},
            {"weyl_denominator": "bogus"},
            {"rii_convention": "bogus"},
            {"deg3_scale": -1.0},
            {"phi_bound_coeff": 0.0},
            {"eps_ladder": (0.1, 0.01)},
            {"eps_ladder": (0.5, 1.5)},
            {"delta_ladder": (0.0, 0.1)},
        ],
    )
    def test_invalid_settings_rejected(self, kwargs):
        with pytest.raises((ValidationFailure, DomainError, InputFormatError)):
            RunConfig(**kwargs)

    def test_empty_delta_ladder_allowed(self):
        assert RunConfig(delta_ladder=()).delta_ladder == ()


class TestConfigMerge:
    """Config file values load first, command line flags win."""

    def parse(self, argv):
        args = cli.build_parser().parse_args([*argv, "moments"])
        return cli.config_from_args(args)

    def test_flag_overrides_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(RunConfig(mc_samples=2500, seed=9).to_json())
        cfg = self.parse(["--config", str(path), "--mc-samples", "3000"])
        assert cfg.mc_samples == 3000
        assert cfg.seed == 9

    def test_ladder_flag_parsing(self):
        cfg = self.parse(["--eps-ladder", "1e-4,1e-3,1e-2"])
        assert cfg.eps_ladder == (1e-4, 1e-3, 1e-2)

    def test_defaults_without_file(self):
        assert self.parse([]) == RunConfig()


# ----------------------------------------------------------------------
# moments / verify


class TestMomentsCommand:
    def test_writes_table_and_identities(self, tmp_path):
        assert run(tmp_path, "moments") == 0
        rows = (tmp_path / "moments.csv").read_text().splitlines()
        assert rows[0] == "n,p,a,b,value,error"
        report = json.loads((tmp_path / "moment_identities.json").read_text())
        assert report["passed"] is True
        assert all(c["passed"] for c in report["checks"].values())

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_starved_quadrature_budget_is_exit_3(self, tmp_path):
        code = cli.main(
            ["--tol-quad", "1e-20", "--out-dir", str(tmp_path), "moments"]
        )
        assert code == 3


class TestVerifyCommand:
    def test_default_battery_is_green(self, tmp_path):
        assert cli.main(["--seed", "1", "--out-dir", str(tmp_path), "verify"]) == 0
        report = json.loads((tmp_path / "verify_report.json").read_text())
        assert report["passed"] is True
        assert set(report["suites"]) == {
            "bubble",
            "moments",
            "geometry",
            "solvability",
            "corrector",
        }
        assert all(s["passed"] for s in report["suites"].values())


# ----------------------------------------------------------------------
# solve-vq / phi


class TestSolveAndPhi:
    def test_solve_vq_writes_profiles_and_sidecars(self, tmp_path):
        assert run(tmp_path, "solve-vq") == 0
        report = json.loads((tmp_path / "solve_report.json").read_text())
        assert report["quarantined"] == {}
        for label in report["solved"]:
            csv = tmp_path / "profiles" / f"{label}.csv"
            side = json.loads(
                (tmp_path / "profiles" / f"{label}.json").read_text()
            )
            assert csv.read_text().splitlines()[0] == "t,r,psi"
            assert side["residual"] < 1e-8
            assert side["pairing"] < 0

    def test_phi_outputs_are_negative_on_battery(self, tmp_path):
        assert run(tmp_path, "phi") == 0
        rows = (tmp_path / "coefficients.csv").read_text().splitlines()
        assert rows[0].startswith("label,n,A,B,I2,I4,pairing,G2,G3,phi")
        phi_col = rows[0].split(",").index("phi")
        phis = [float(r.split(",")[phi_col]) for r in rows[1:]]
        assert len(phis) == 5
        assert all(p < 0 for p in phis)

    def test_thread_pool_output_is_byte_identical(self, tmp_path, monkeypatch):
        assert run(tmp_path / "serial", "phi") == 0
        monkeypatch.setenv("HALFBUBBLE_THREADS", "3")
        assert run(tmp_path / "pooled", "phi") == 0
        assert read(tmp_path / "serial" / "coefficients.csv") == read(
            tmp_path / "pooled" / "coefficients.csv"
        )

    def test_bad_thread_env_is_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HALFBUBBLE_THREADS", "many")
        assert run(tmp_path, "phi") == 2


# ----------------------------------------------------------------------
# pipeline / reduce / family


class TestPipeline:
    def test_repeated_runs_are_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run(tmp_path / sub, "pipeline", "--skip-slopes") == 0
        for name in (
            "coefficients.csv",
            "family.csv",
            "reduction.json",
            "pipeline_report.json",
            os.path.join("plots", "G_curves.csv"),
        ):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name), name

    def test_report_contents(self, tmp_path):
        assert run(tmp_path, "pipeline", "--skip-slopes") == 0
        report = json.loads((tmp_path / "pipeline_report.json").read_text())
        assert report["quarantined"] == {}
        assert report["q0"] in report["points"]
        reduction = json.loads((tmp_path / "reduction.json").read_text())
        assert reduction["q0"] == report["q0"]
        assert reduction["lambda0"] > 0
        assert len(reduction["family"]) == len(RunConfig().eps_ladder)
        lo, hi = reduction["bracket"]
        assert 0 < lo < reduction["lambda0"] < hi

    def test_flat_curvature_gives_no_admissible_point(self, tmp_path, capsys):
        k = 10
        flat = CurvaturePoint(
            label="flat-00",
            n=11,
            Rbar=np.zeros((k, k, k, k)),
            S=np.zeros((k, k)),
            D2=0.0,
            Rnnnn=0.0,
            Wbar2=0.0,
            gamma=0.9,
        )
        path = tmp_path / "flat.json"
        save_curvature_file(path, 11, [flat])
        code = run(
            tmp_path / "out", "--curvature", str(path), "pipeline", "--skip-slopes"
        )
        assert code == 2
        assert "no admissible point" in capsys.readouterr().err
        report = json.loads((tmp_path / "out" / "reduction.json").read_text())
        assert "error" in report
        family = (tmp_path / "out" / "family.csv").read_text().splitlines()
        assert family == ["eps,delta,peak,phi_bound"]

    def test_reduce_then_family_reuses_reduction(self, tmp_path):
        assert run(tmp_path, "phi") == 0
        assert run(tmp_path, "reduce") == 0
        reduction = json.loads((tmp_path / "reduction.json").read_text())
        assert run(tmp_path, "family") == 0
        rows = (tmp_path / "family.csv").read_text().splitlines()
        assert rows[0] == "eps,delta,peak,phi_bound"
        assert len(rows) - 1 == len(reduction["family"])
        first = rows[1].split(",")
        assert float(first[1]) == pytest.approx(
            reduction["family"][0]["delta"], rel=1e-12
        )


# ----------------------------------------------------------------------
# residual-slope


class TestResidualSlopeCommand:
    def test_omit_corrector_ladder_outputs(self, tmp_path):
        code = run(
            tmp_path,
            "--mc-samples",
            "2000",
            "residual-slope",
            "--omit-corrector",
        )
        assert code == 0
        ladder = (tmp_path / "plots" / "residual_ladder_battery-00.csv")
        assert ladder.read_text().splitlines()[0] == "delta,norm,std_error,eps,bound"
        summary = json.loads(
            (tmp_path / "residual_slope_battery-00.json").read_text()
        )
        assert summary["status"] == "ok"
        assert summary["slope"] == pytest.approx(2.0, abs=0.3)

    def test_short_ladder_rejected(self, tmp_path):
        # three rungs over half a decade cannot support a power law fit
        code = run(
            tmp_path,
            "--delta-ladder",
            "0.01,0.02,0.03",
            "residual-slope",
            "--omit-corrector",
        )
        assert code == 2


# ----------------------------------------------------------------------
# failure exit codes


class TestExitCodes:
    def test_unreadable_config_is_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{ not json")
        code = cli.main(["--config", str(bad), "moments"])
        assert code == 2
        assert "line" in capsys.readouterr().err

    def test_unknown_config_field_is_exit_2(self, tmp_path):
        unk = tmp_path / "unk.json"
        unk.write_text('{"n": 11, "bogus": 1}')
        assert cli.main(["--config", str(unk), "moments"]) == 2

    def test_blocked_output_directory_is_exit_4(self, tmp_path):
        wall = tmp_path / "wall"
        wall.write_text("occupied")
        code = cli.main(["--out-dir", str(wall / "sub"), "moments"])
        assert code == 4

    def test_curvature_dimension_mismatch_is_exit_2(self, tmp_path):
        k = 8
        point = CurvaturePoint(
            label="p",
            n=9,
            Rbar=np.zeros((k, k, k, k)),
            S=np.zeros((k, k)),
            D2=0.0,
            Rnnnn=0.0,
            Wbar2=0.0,
            gamma=0.5,
        )
        path = tmp_path / "dim.json"
        save_curvature_file(path, 9, [point])
        code = run(tmp_path / "out", "--curvature", str(path), "phi")
        assert code == 2
