"""End-to-end command line runs through the in-process entry point."""
import json
import struct

import numpy as np
import pytest

from insens4.cli import main
from insens4.reporting import FIELD_MAGIC


def _ini(tmp_path, text, name="cli.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear_out")
    code = main(["insensitize-linear", "--quick", "--out", str(out)])
    return code, out


class TestSubcommandsPass:
    @pytest.mark.parametrize("command", [
        "weights-check", "observability", "convergence", "selftest",
    ])
    def test_quick_run_green(self, tmp_path, command):
        assert main([command, "--quick", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "manifest.json").is_file()

    def test_linear_green(self, linear_run):
        code, out = linear_run
        assert code == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["all_passed"] is True
        names = {c["name"] for c in doc["checks"]}
        assert {"hum-converged", "null-condition"} <= names

    def test_semilinear_green(self, tmp_path):
        cfg = _ini(tmp_path, "[nonlinearity]\nkind = tanh\nscale = 0.1\n")
        out = tmp_path / "out"
        assert main(["insensitize-semilinear", "--quick", "--config", cfg,
                     "--out", str(out)]) == 0
        doc = json.loads((out / "manifest.json").read_text())
        by_name = {c["name"]: c for c in doc["checks"]}
        assert by_name["picard-converged"]["passed"]
        assert by_name["picard-converged"]["iterations"] >= 2
        assert by_name["ftc-identity"]["passed"]
        assert (out / "state_y.fld").is_file()

    def test_pass_lines_printed(self, tmp_path, capsys):
        assert main(["weights-check", "--quick", "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert any(l.startswith("PASS ") for l in lines)
        assert not any(l.startswith("FAIL ") for l in lines)
        assert lines[-1].startswith("weights-check: ok")


class TestArtifacts:
    def test_manifest_enumerates_everything(self, linear_run):
        code, out = linear_run
        doc = json.loads((out / "manifest.json").read_text())
        on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
        listed = {o["path"] for o in doc["outputs"]}
        assert listed == on_disk
        for entry in doc["outputs"]:
            assert (out / entry["path"]).stat().st_size == entry["bytes"]

    def test_expected_artifact_names(self, linear_run):
        _, out = linear_run
        names = {p.name for p in out.iterdir()}
        assert names == {"manifest.json", "hum_convergence.csv",
                         "control_summary.csv", "sensitivity.csv",
                         "control_v.fld", "costate_q0.fld", "seed_phi0.fld"}

    def test_control_dump_header(self, linear_run):
        _, out = linear_run
        raw = (out / "control_v.fld").read_bytes()
        magic, dim, n_cells, nt, pad, length = struct.unpack("<8sIIIIQ",
                                                             raw[:32])
        # quick caps: 32 cells (31 nodes), 64 steps
        assert magic == FIELD_MAGIC
        assert (dim, n_cells, nt, pad) == (1, 32, 64, 0)
        assert length == 64 * 31 * 8 == len(raw) - 32

    def test_static_dump_single_record(self, linear_run):
        _, out = linear_run
        raw = (out / "costate_q0.fld").read_bytes()
        assert struct.unpack("<8sIIIIQ", raw[:32])[3] == 1

    def test_summary_csv_parses(self, linear_run):
        _, out = linear_run
        header, row = (out / "control_summary.csv").read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert cells["variant"] == "exact"
        assert cells["converged"] == "true"
        assert float(cells["q0_norm"]) <= 1.01 * float(cells["epsilon"])


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["observability", "--quick", "--seed", "5",
                         "--out", str(out)]) == 0
            outs.append(out)
        for csv in ("ratio_samples.csv", "ratio_summary.csv"):
            assert (outs[0] / csv).read_bytes() == (outs[1] / csv).read_bytes()

    def test_seed_changes_samples(self, tmp_path):
        payloads = []
        for seed in ("5", "6"):
            out = tmp_path / seed
            assert main(["observability", "--quick", "--seed", seed,
                         "--out", str(out)]) == 0
            payloads.append((out / "ratio_samples.csv").read_bytes())
        assert payloads[0] != payloads[1]

    def test_seed_recorded(self, tmp_path):
        assert main(["observability", "--quick", "--seed", "7",
                     "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["seed"] == 7
        rows = (tmp_path / "ratio_samples.csv").read_text().splitlines()
        assert len(rows) - 1 == doc["config"]["sampling"]["samples"] == 8


class TestFailureModes:
    def test_inadmissible_s_exits_2(self, tmp_path, capsys):
        cfg = _ini(tmp_path, "[weights]\ns = 1e-9\n")
        out = tmp_path / "out"
        assert main(["weights-check", "--quick", "--config", cfg,
                     "--out", str(out)]) == 2
        err = capsys.readouterr().err
        assert "below the admissibility threshold" in err
        doc = json.loads((out / "manifest.json").read_text())
        chk = doc["checks"][0]
        assert chk["name"] == "s-admissible" and not chk["passed"]
        assert 0.0 < chk["threshold"] and chk["s"] == 1e-9
        table = (out / "weights_checks.csv").read_text()
        assert "s-admissible,false" in table

    def test_reaction_rejected_by_linear_command(self, tmp_path, capsys):
        cfg = _ini(tmp_path, "[nonlinearity]\nkind = tanh\n")
        assert main(["insensitize-linear", "--quick", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == 1
        assert "insensitize-semilinear" in capsys.readouterr().err

    def test_unknown_variant_exits_1(self, tmp_path):
        cfg = _ini(tmp_path, "[penalty]\nvariant = cubic\n")
        assert main(["insensitize-linear", "--quick", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == 1

    def test_quadratic_variant_exit_matches_manifest(self, tmp_path):
        # the relaxed penalty is not required to satisfy the null check;
        # the exit code just has to tell the truth about it
        cfg = _ini(tmp_path, "[penalty]\nvariant = quadratic\n")
        out = tmp_path / "out"
        code = main(["insensitize-linear", "--quick", "--config", cfg,
                     "--out", str(out)])
        doc = json.loads((out / "manifest.json").read_text())
        assert code == (0 if doc["all_passed"] else 2)
        summary = (out / "control_summary.csv").read_text().splitlines()[1]
        assert summary.split(",")[0] == "quadratic"

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["selftest", "--config", str(tmp_path / "none.ini"),
                     "--out", str(tmp_path)]) == 1
        assert "config" in capsys.readouterr().err

    def test_bad_seed_exits_1(self, tmp_path):
        assert main(["selftest", "--seed", "-3",
                     "--out", str(tmp_path)]) == 1

    def test_usage_errors_exit_1(self, capsys):
        assert main(["selftest", "--turbo"]) == 1
        assert main(["bogus-command"]) == 1
        assert main([]) == 1
        capsys.readouterr()

    def test_help_exits_0(self, capsys):
        assert main(["--help"]) == 0
        assert "COMMAND" in capsys.readouterr().out
