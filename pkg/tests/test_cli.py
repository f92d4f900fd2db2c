"""Command-line front-end: config validation, reports, determinism."""

import configparser
import re

import numpy as np
import pytest

from pmopt import cli
from pmopt.errors import ConfigError


def _write_config(path, **sections):
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
    return str(path)


@pytest.fixture()
def fast_config(tmp_path):
    """Small model + tiny audits so CLI runs finish in seconds."""
    out = tmp_path / "out"
    return _write_config(
        tmp_path / "run.ini",
        model={"levels": "2"},
        optimize={"audit_samples": "50", "tol": "1e-7"},
        audit={"n_samples": "20", "point": "20.0, 8.0, 7.0", "delta": "0.0"},
        output={"directory": str(out)},
    ), out


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = _write_config(tmp_path / "bad.ini", model={"levles": "3"})
        assert cli.main(["solve", "--config", cfg]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path, capsys):
        cfg = _write_config(tmp_path / "bad.ini", solver={"tol": "1e-8"})
        assert cli.main(["solve", "--config", cfg]) == 2
        assert "unknown config section" in capsys.readouterr().err

    def test_malformed_file_rejected(self, tmp_path):
        bad = tmp_path / "broken.ini"
        bad.write_text("[model\nlevels = 3\n", encoding="utf-8")
        assert cli.main(["solve", "--config", str(bad)]) == 2

    def test_missing_file_rejected(self):
        assert cli.main(["solve", "--config", "/nonexistent/run.ini"]) == 2

    def test_mor_off_with_dictionary_contradiction(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path / "run.ini",
            model={"levels": "2"},
            mor={"enabled": "off", "dictionary": str(tmp_path / "d.npz")},
            output={"directory": str(tmp_path / "out")},
        )
        assert cli.main(["optimize", "--config", cfg]) == 2
        assert "contradicts" in capsys.readouterr().err

    def test_unknown_optimizer_rejected(self, tmp_path):
        cfg = _write_config(
            tmp_path / "run.ini",
            model={"levels": "2"},
            optimize={"optimizer": "newton"},
            output={"directory": str(tmp_path / "out")},
        )
        assert cli.main(["optimize", "--config", cfg]) == 2

    def test_lin_engine_only_pairs_with_mean_std_kinds(self, tmp_path):
        cfg = _write_config(
            tmp_path / "run.ini",
            model={"levels": "2"},
            optimize={"formulation": "wc1", "uq": "lin", "audit_samples": "10"},
            output={"directory": str(tmp_path / "out")},
        )
        assert cli.main(["optimize", "--config", cfg]) == 2

    def test_resolve_kind_normalization(self):
        assert cli._resolve_kind("uq_robust", "lin") == ("uq_lin", "lin")
        assert cli._resolve_kind("uq_lin", "sq") == ("uq_lin", "lin")
        assert cli._resolve_kind("uq_robust", "mc") == ("uq_robust", "mc")
        assert cli._resolve_kind("nominal", "sq") == ("nominal", "-")
        assert cli._resolve_kind("wc2", "mc") == ("wc2", "-")
        with pytest.raises(ConfigError):
            cli._resolve_kind("nominal", "lin")
        with pytest.raises(ConfigError):
            cli._resolve_kind("nominal", "quadrature")

    def test_config_hash_tracks_content(self):
        a = cli._read_config(None)
        b = cli._read_config(None)
        assert cli._config_hash(a) == cli._config_hash(b)
        b["model"]["levels"] = "5"
        assert cli._config_hash(a) != cli._config_hash(b)


class TestSolve:
    def test_reference_solve_prints_calibrated_output(self, fast_config, capsys):
        cfg, _ = fast_config
        assert cli.main(["solve", "--config", cfg]) == 0
        out = capsys.readouterr().out
        e0 = float(re.search(r"e0\(.*\) = (.*)", out).group(1))
        assert e0 == pytest.approx(30.37, abs=1e-9)
        grads = re.search(r"grad = \((.*)\)", out).group(1).split(",")
        assert len(grads) == 3 and all(float(g) != 0.0 for g in grads)

    def test_field_dump_written(self, fast_config, tmp_path, capsys):
        cfg, _ = fast_config
        field = tmp_path / "field.csv"
        assert cli.main(["solve", "--config", cfg, "--field", str(field)]) == 0
        lines = field.read_text(encoding="utf-8").strip().split("\n")
        assert lines[0] == "node,x,y,az"
        assert len(lines) > 100


class TestOptimize:
    def test_nominal_run_writes_reports(self, fast_config):
        cfg, out = fast_config
        assert cli.main(["optimize", "--config", cfg]) == 0

        text = (out / "results.csv").read_text(encoding="utf-8")
        lines = text.strip().split("\n")
        assert lines[0].startswith("# config sha256=")
        assert lines[1].startswith("# seeds mc=0 pso=0 audit=0")
        header = lines[2].split(",")
        assert header == ["kind", "uq", "mor", "optimizer", "delta", "p1", "p2",
                          "p3", "area", "e0", "failure_rate", "n_evaluations",
                          "n_iterations"]
        row = dict(zip(header, lines[3].split(",")))
        assert (row["kind"], row["uq"], row["mor"], row["optimizer"]) == \
            ("nominal", "-", "off", "sqp")
        assert float(row["e0"]) == pytest.approx(30.37, abs=1e-4)
        assert float(row["area"]) < 19.0 * 7.0
        assert 0.0 <= float(row["failure_rate"]) <= 1.0
        assert int(row["n_evaluations"]) > 0

        trace_lines = (out / "trace.csv").read_text(encoding="utf-8").strip().split("\n")
        assert trace_lines[2].split(",") == ["kind", "optimizer", "delta", "iter",
                                             "objective", "violation", "step"]
        assert len(trace_lines) > 3

        timing_lines = (out / "timings.csv").read_text(encoding="utf-8").strip().split("\n")
        assert timing_lines[2].split(",") == ["step", "offline_seconds",
                                              "online_seconds"]

        resolved = configparser.ConfigParser(interpolation=None)
        resolved.read(out / "config.resolved.ini")
        assert resolved["model"]["levels"] == "2"

        summary = (out / "summary.txt").read_text(encoding="utf-8")
        assert "config sha256:" in summary and "nominal" in summary

    def test_identical_config_reproduces_reports_byte_for_byte(self, fast_config):
        cfg, out = fast_config
        assert cli.main(["optimize", "--config", cfg]) == 0
        first_results = (out / "results.csv").read_bytes()
        first_trace = (out / "trace.csv").read_bytes()
        assert cli.main(["optimize", "--config", cfg]) == 0
        assert (out / "results.csv").read_bytes() == first_results
        assert (out / "trace.csv").read_bytes() == first_trace

    def test_seed_override_reaches_every_generator(self, fast_config):
        cfg, out = fast_config
        assert cli.main(["audit", "--config", cfg, "--seed", "7"]) == 0
        resolved = configparser.ConfigParser(interpolation=None)
        resolved.read(out / "config.resolved.ini")
        assert dict(resolved["seeds"]) == {"mc": "7", "pso": "7", "audit": "7"}


class TestSweepAndAudit:
    def test_sweep_csv_schema(self, tmp_path):
        out = tmp_path / "out"
        cfg = _write_config(
            tmp_path / "run.ini",
            model={"levels": "2"},
            optimize={"audit_samples": "30", "tol": "1e-7"},
            sweep={"formulation": "wc2", "deltas": "0.1, 0.0"},
            output={"directory": str(out)},
        )
        assert cli.main(["sweep", "--config", cfg]) == 0
        lines = (out / "sweep.csv").read_text(encoding="utf-8").strip().split("\n")
        assert lines[2] == "delta,kind,area,e0,failure_rate"
        rows = [line.split(",") for line in lines[3:]]
        assert [r[0] for r in rows] == ["0.1", "0.0"]
        assert all(r[1] == "wc2" for r in rows)
        assert float(rows[0][2]) >= float(rows[1][2]) - 1e-9

    def test_zero_scatter_audit_at_feasible_point(self, fast_config, capsys):
        cfg, out = fast_config
        assert cli.main(["audit", "--config", cfg]) == 0
        assert "0.00%" in capsys.readouterr().out
        lines = (out / "audit.csv").read_text(encoding="utf-8").strip().split("\n")
        header = lines[2].split(",")
        row = dict(zip(header, lines[3].split(",")))
        assert row["n_failures"] == "0"
        assert float(row["rate"]) == 0.0
        assert float(row["emf_min"]) > 30.37


class TestReducedWorkflow:
    def test_build_load_optimize_and_signature_guard(self, tmp_path, capsys):
        dict_path = tmp_path / "dict.npz"
        base = dict(
            model={"levels": "2"},
            mor={"dictionary": str(dict_path), "tol": "1e-3",
                 "grid": "3, 3, 3", "threads": "2"},
            optimize={"audit_samples": "40", "tol": "1e-7"},
        )
        cfg_build = _write_config(tmp_path / "build.ini", **base,
                                  output={"directory": str(tmp_path / "b")})
        assert cli.main(["rb-build", "--config", cfg_build]) == 0
        assert dict_path.exists()
        assert "sub-box models" in capsys.readouterr().out

        out_full = tmp_path / "full"
        out_red = tmp_path / "red"
        cfg_full = _write_config(tmp_path / "full.ini", model={"levels": "2"},
                                 optimize={"audit_samples": "40", "tol": "1e-7"},
                                 output={"directory": str(out_full)})
        assert cli.main(["optimize", "--config", cfg_full]) == 0
        assert cli.main(["optimize", "--config", cfg_full, "--mor",
                         str(dict_path), "--out", str(out_red)]) == 0

        def optimum(out_dir):
            lines = (out_dir / "results.csv").read_text(
                encoding="utf-8").strip().split("\n")
            row = dict(zip(lines[2].split(","), lines[3].split(",")))
            return np.array([float(row["p1"]), float(row["p2"]),
                             float(row["p3"])]), row["mor"]

        p_full, mor_full = optimum(out_full)
        p_red, mor_red = optimum(out_red)
        assert (mor_full, mor_red) == ("off", "on")
        assert np.linalg.norm(p_full - p_red, np.inf) <= 5e-2

        # a dictionary trained on a different refinement level is refused
        cfg_wrong = _write_config(
            tmp_path / "wrong.ini", model={"levels": "3"},
            mor={"enabled": "on", "dictionary": str(dict_path)},
            optimize={"audit_samples": "40", "tol": "1e-7"},
            output={"directory": str(tmp_path / "w")},
        )
        assert cli.main(["optimize", "--config", cfg_wrong]) == 2
        assert "different model" in capsys.readouterr().err


class TestVerify:
    def test_all_invariants_pass_on_small_model(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path / "run.ini",
            model={"levels": "2"},
            optimize={"tol": "1e-7"},
            output={"directory": str(tmp_path / "out")},
        )
        assert cli.main(["verify", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3  # no reduced-basis check with mor off
        assert "FAIL" not in out
        assert "all verification checks passed" in out
