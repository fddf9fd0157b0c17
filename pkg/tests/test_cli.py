import csv
import json

import pytest

from droopsafe import cli
from droopsafe.config import example_path, read_structured


def write_config(tmp_path, **sections):
    data = read_structured(example_path())
    data["network"] = str(example_path().parent / data["network"])
    for key, val in sections.items():
        if isinstance(val, dict) and isinstance(data.get(key), dict):
            data[key].update(val)
        else:
            data[key] = val
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def header_fields(line):
    return dict(kv.split("=") for kv in line.lstrip("# ").split() if "=" in kv)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(out)]) == cli.EXIT_OK
    return out


class TestPowerflow:
    def test_example(self, tmp_path, capsys):
        assert cli.main(["powerflow", "--out", str(tmp_path)]) == 0
        eq = json.loads((tmp_path / "equilibrium.json").read_text())
        assert eq["residual"] < 1e-8
        assert eq["header"]["seed"] == 0 and len(eq["header"]["config_hash"]) == 16

    def test_missing_network_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, network="no_such_network.json")
        assert cli.main(["powerflow", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "no_such_network.json" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["powerflow", "--config", str(tmp_path / "x.json")]) == 2

    def test_overloaded_network_fails(self, tmp_path, capsys):
        net = {"buses": [{"id": 0, "kind": "inverter"}, {"id": 1, "kind": "inverter", "P": -50.0}],
               "lines": [{"from": 0, "to": 1, "r": 0.05, "x": 0.1}]}
        cfg = write_config(tmp_path, network=net)
        assert cli.main(["powerflow", "--config", str(cfg), "--out", str(tmp_path)]) == 1


class TestSynth:
    def test_outputs(self, synth_dir):
        certs = sorted((synth_dir / "certificates").glob("*.json"))
        assert len(certs) == 4
        report = json.loads((synth_dir / "verification.json").read_text())
        assert report["passed"]
        assert all(r["passed"] and r["unsafe_passed"] for r in report["inverters"])

    def test_degree_zero_not_found(self, tmp_path, capsys):
        cfg = write_config(tmp_path, synthesis={"degree": 0})
        assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "round" in capsys.readouterr().err

    def test_inverter_index_out_of_range(self, synth_dir, capsys):
        assert cli.main(["bounds", "--out", str(synth_dir), "--inverter", "9"]) == 2


class TestBounds:
    def test_grid_dimensions_and_header(self, synth_dir, example_cfg):
        assert cli.main(["bounds", "--out", str(synth_dir), "--inverter", "2", "--seed", "5"]) == 0
        lines = (synth_dir / "bounds" / "inverter_2.csv").read_text().splitlines()
        meta = header_fields(lines[0])
        assert meta["seed"] == "5" and len(meta["config_hash"]) == 16
        rows = list(csv.DictReader(lines[1:]))
        b = example_cfg.bounds
        combos = {(r["beta"], r["gamma"]) for r in rows}
        assert len(rows) == len(combos) * b.points[0] * b.points[1]
        assert len({r["w"] for r in rows}) == b.points[0]
        assert len({r["v"] for r in rows}) == b.points[1]

    def test_override_single_combo(self, synth_dir):
        args = ["bounds", "--out", str(synth_dir), "--inverter", "1", "--beta", "0.5",
                "--gamma", "10"]
        assert cli.main(args) == 0
        lines = (synth_dir / "bounds" / "inverter_1.csv").read_text().splitlines()
        rows = list(csv.DictReader(lines[1:]))
        assert {(r["beta"], r["gamma"]) for r in rows} == {("0.5", "10.0")}

    def test_requires_synthesis(self, tmp_path, capsys):
        assert cli.main(["bounds", "--out", str(tmp_path)]) == 2


class TestSimulate:
    def test_filter_on_and_off(self, synth_dir):
        for flag in ("on", "off"):
            assert cli.main(["simulate", "nominal", "--filter", flag, "--out", str(synth_dir)]) == 0
            summary = json.loads((synth_dir / "sim" / f"nominal_{flag}.summary.json").read_text())
            assert summary["filter_on"] == (flag == "on")

    def test_unknown_scenario(self, synth_dir, capsys):
        assert cli.main(["simulate", "storm", "--out", str(synth_dir)]) == 2

    def test_header_carries_seed(self, synth_dir):
        cli.main(["simulate", "nominal", "--seed", "42", "--out", str(synth_dir)])
        first = (synth_dir / "sim" / "nominal_on.csv").read_text().splitlines()[0]
        assert header_fields(first)["seed"] == "42"

    def test_sweep(self, synth_dir):
        assert cli.main(["sweep", "--runs", "3", "--out", str(synth_dir)]) == 0
        summary = json.loads((synth_dir / "sweep" / "summary.json").read_text())
        assert summary["runs"] == 3 and summary["on"]["violation_runs"] == 0

    def test_sweep_rejects_zero_runs(self, synth_dir):
        assert cli.main(["sweep", "--runs", "0", "--out", str(synth_dir)]) == 2


class TestExportPlots:
    def test_scripts_written(self, synth_dir):
        cli.main(["bounds", "--out", str(synth_dir), "--inverter", "2"])
        cli.main(["simulate", "nominal", "--out", str(synth_dir)])
        assert cli.main(["export-plots", "--out", str(synth_dir)]) == 0
        scripts = sorted(p.name for p in (synth_dir / "plots").glob("*.gp"))
        assert "bounds_2.gp" in scripts and "sim_nominal_on.gp" in scripts
        text = (synth_dir / "plots" / "bounds_2.gp").read_text()
        assert text.startswith("# droopsafe") and "config_hash=" in text

    def test_nothing_to_plot(self, tmp_path, capsys):
        assert cli.main(["export-plots", "--out", str(tmp_path)]) == 2
