import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from qlinksim import montecarlo
from qlinksim.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args, **kwargs):
    return runner.invoke(main, list(args), catch_exceptions=False, **kwargs)


def read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    assert lines[0].startswith("# manifest: ")
    manifest = json.loads(lines[0][len("# manifest: "):])
    header = lines[1].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    return manifest, header, rows


class TestAnalyticCommand:
    def test_capacity(self, runner):
        res = invoke(runner, "analytic", "--quantity", "capacity", "--eta", "0.5")
        assert res.exit_code == 0
        assert "1.0" in res.output

    def test_capacity_json(self, runner):
        res = invoke(runner, "analytic", "--quantity", "capacity", "--eta", "0.5",
                     "--json")
        payload = json.loads(res.output.splitlines()[0])
        assert payload["value"] == 1.0
        assert payload["parameters"] == {"eta": 0.5}

    def test_trials_infinite_memory(self, runner):
        res = invoke(runner, "analytic", "--quantity", "trials-inf-mem",
                     "--p", "0.5", "--m", "2", "--json")
        value = json.loads(res.output.splitlines()[0])["value"]
        assert value == pytest.approx(8 / 3, rel=1e-9)

    def test_no_memory_log_magnitude(self, runner):
        res = invoke(runner, "analytic", "--quantity", "trials-no-mem",
                     "--p", "0.16237", "--m", "100", "--json")
        payload = json.loads(res.output.splitlines()[0])
        assert payload["log10"] == pytest.approx(78.9, abs=0.1)

    def test_pmf_table_csv(self, runner):
        res = invoke(runner, "analytic", "--quantity", "pmf", "--p", "0.5",
                     "--m", "2", "--n", "5", "--csv")
        lines = res.output.strip().splitlines()
        assert lines[0].startswith("# manifest: ")
        assert lines[1] == "n,pmf"
        assert float(lines[2].split(",")[1]) == pytest.approx(0.25)

    def test_parallel_requires_supported_cutoff(self, runner):
        res = runner.invoke(main, ["analytic", "--quantity", "parallel",
                                   "--p", "0.5", "--m", "2", "--n-paths", "2",
                                   "--cutoff", "3"])
        assert res.exit_code == 2
        assert "cutoff" in res.output

    def test_missing_parameter_is_usage_error(self, runner):
        res = runner.invoke(main, ["analytic", "--quantity", "rate", "--p", "0.5"])
        assert res.exit_code == 2
        assert "--m" in res.output

    def test_domain_violation_names_precondition(self, runner):
        res = runner.invoke(main, ["analytic", "--quantity", "fraction",
                                   "--p", "0.5", "--n", "5", "--n-star", "1"])
        assert res.exit_code == 2
        assert "n_star" in res.output

    def test_min_trials(self, runner):
        res = invoke(runner, "analytic", "--quantity", "min-trials",
                     "--p", "0.5", "--fraction", "0.75", "--json")
        assert json.loads(res.output.splitlines()[0])["value"] == 2


class TestSimulateCommand:
    def test_chain_no_memory_mean(self, runner):
        res = invoke(runner, "simulate", "--topology", "chain", "--m", "2",
                     "--p", "0.5", "--cutoff", "0", "--replicas", "40000",
                     "--seed", "5", "--json")
        row = json.loads(res.output.splitlines()[-1])
        assert abs(row["mean"] - 4.0) < 4 * row["std_error"]
        assert row["replicas"] == 40000

    def test_csv_output_has_manifest_comment(self, runner):
        res = invoke(runner, "simulate", "--topology", "chain", "--m", "1",
                     "--p", "0.5", "--cutoff", "inf", "--replicas", "1000")
        lines = res.output.strip().splitlines()
        assert lines[0].startswith("# manifest: ")
        manifest = json.loads(lines[0][len("# manifest: "):])
        assert manifest["seed"] == 1234
        assert "version" in manifest
        header = lines[1].split(",")
        assert "mean" in header and "std_error" in header

    def test_pyramid_named_endpoints(self, runner):
        res = invoke(runner, "simulate", "--topology", "pyramid", "--layers", "3",
                     "--p", "0.5", "--cutoff", "2", "--measure", "N-ab",
                     "--a", "bottom-center", "--b", "apex",
                     "--replicas", "2000", "--json")
        row = json.loads(res.output.splitlines()[-1])
        assert row["mean"] > 1.0

    def test_bottom_position_selector_requires_pyramid(self, runner):
        res = runner.invoke(main, ["simulate", "--topology", "chain", "--m", "2",
                                   "--p", "0.5", "--measure", "N-ab",
                                   "--a", "apex", "--b", "1"])
        assert res.exit_code == 2

    def test_link_count_requires_trials(self, runner):
        res = runner.invoke(main, ["simulate", "--topology", "chain", "--m", "3",
                                   "--p", "0.5", "--measure", "L"])
        assert res.exit_code == 2
        assert "--trials" in res.output

    def test_length_parameterization(self, runner):
        res = invoke(runner, "simulate", "--topology", "chain", "--m", "1",
                     "--length-km", "22", "--cutoff", "inf",
                     "--replicas", "30000", "--seed", "6", "--json")
        row = json.loads(res.output.splitlines()[-1])
        assert abs(row["mean"] - math.exp(1.0)) < 4 * row["std_error"]

    def test_samples_and_edge_dump(self, runner, tmp_path):
        samples = tmp_path / "samples.csv"
        edges = tmp_path / "net.edges"
        invoke(runner, "simulate", "--topology", "pyramid", "--layers", "3",
               "--p", "0.25", "--cutoff", "1", "--trials", "4",
               "--measure", "L", "--replicas", "64", "--seed", "9",
               "--samples-csv", str(samples), "--dump-edges", str(edges))
        rows = samples.read_text().strip().splitlines()
        assert rows[0] == "replica,seed,value"
        assert len(rows) == 65
        from qlinksim import topology as topo
        t, model = topo.load_edge_list(edges)
        assert t.edge_count == 9
        assert model.probabilities == (0.25,) * 9

    def test_edge_file_round_trip(self, runner, tmp_path):
        net = tmp_path / "net.edges"
        net.write_text("nodes 3\n0 1 p=0.9\n1 2 p=0.9\n")
        res = invoke(runner, "simulate", "--topology", "file",
                     "--edge-file", str(net), "--cutoff", "inf",
                     "--replicas", "500", "--seed", "2", "--json")
        assert json.loads(res.output.splitlines()[-1])["edges"] == 2

    def test_heterogeneous_probability_file(self, runner, tmp_path):
        net = tmp_path / "net.edges"
        net.write_text("nodes 3\n0 1 p=0.9\n1 2 p=0.4\n")
        res = invoke(runner, "simulate", "--topology", "file",
                     "--edge-file", str(net), "--cutoff", "0",
                     "--replicas", "20000", "--seed", "3", "--json")
        row = json.loads(res.output.splitlines()[-1])
        assert abs(row["mean"] - 1.0 / 0.36) < 4 * row["std_error"]

    def test_trial_cap_maps_to_exit_3(self, runner, monkeypatch):
        monkeypatch.setattr(montecarlo, "TRIAL_CAP", 20)
        res = runner.invoke(main, ["simulate", "--topology", "chain", "--m", "6",
                                   "--p", "0.05", "--cutoff", "0",
                                   "--replicas", "32"])
        assert res.exit_code == 3
        assert "abort" in res.output

    def test_determinism_across_worker_counts(self, runner):
        outputs = set()
        for workers in ("1", "4"):
            res = invoke(runner, "simulate", "--topology", "chain", "--m", "2",
                         "--p", "0.4", "--cutoff", "2", "--replicas", "20000",
                         "--seed", "77", "--workers", workers, "--json")
            row = json.loads(res.output.splitlines()[-1])
            outputs.add((row["mean"], row["std_error"]))
        assert len(outputs) == 1

    def test_workers_env_var(self, runner):
        res = invoke(runner, "simulate", "--topology", "chain", "--m", "1",
                     "--p", "0.9", "--cutoff", "0", "--replicas", "500",
                     "--seed", "1", "--json", env={"QLINKSIM_WORKERS": "3"})
        assert res.exit_code == 0


class TestConfigFile:
    def test_config_supplies_defaults(self, runner, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("replicas = 640\nseed = 11  # fixed\n")
        res = invoke(runner, "--config", str(cfg), "simulate",
                     "--topology", "chain", "--m", "1", "--p", "0.5",
                     "--cutoff", "0", "--json")
        row = json.loads(res.output.splitlines()[-1])
        assert row["replicas"] == 640
        assert row["seed"] == 11

    def test_explicit_flag_beats_config(self, runner, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("replicas = 640\n")
        res = invoke(runner, "--config", str(cfg), "simulate",
                     "--topology", "chain", "--m", "1", "--p", "0.5",
                     "--cutoff", "0", "--replicas", "320", "--json")
        assert json.loads(res.output.splitlines()[-1])["replicas"] == 320

    def test_malformed_config_rejected(self, runner, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("replicas 640\n")
        res = runner.invoke(main, ["--config", str(cfg), "analytic",
                                   "--quantity", "capacity", "--eta", "0.5"])
        assert res.exit_code == 2


class TestTableCommands:
    def test_table2_contract_and_values(self, runner, tmp_path):
        res = invoke(runner, "table2", "--out", str(tmp_path))
        assert res.exit_code == 0
        manifest, header, rows = read_csv(tmp_path / "table2.csv")
        assert header == ["M", "L_min_km"]
        got = {int(r["M"]): float(r["L_min_km"]) for r in rows}
        assert got[2] == 63.0 and got[5] == 45.0 and got[10] == 42.0
        assert manifest["command"] == "table2"
        side = json.loads((tmp_path / "table2.manifest.json").read_text())
        assert side["status"] == "ok"
        assert side["points"]

    def test_table1_contract(self, runner, tmp_path):
        res = invoke(runner, "table1", "--p", "0.8", "--m", "2",
                     "--replicas", "4000", "--seed", "31", "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "table1.csv")
        assert header == ["p", "M", "n_star_min"]
        assert len(rows) == 1
        assert int(rows[0]["n_star_min"]) <= 4

    def test_table3_semi_analytic_contract(self, runner, tmp_path):
        res = invoke(runner, "table3", "--method", "semi-analytic",
                     "--lattice", "triangular", "--cutoff", "0", "--cutoff", "2",
                     "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "table3.csv")
        assert header == ["lattice", "n_star", "p_crit", "std_error"]
        got = {int(r["n_star"]): float(r["p_crit"]) for r in rows}
        assert got[0] == pytest.approx(0.347, abs=0.001)
        assert got[2] == pytest.approx(0.151, abs=0.003)

    def test_rerun_reproduces_numbers(self, runner, tmp_path):
        args = ["table1", "--p", "0.8", "--m", "2", "--replicas", "2000",
                "--seed", "31"]
        a = invoke(runner, *args, "--out", str(tmp_path / "a"))
        b = invoke(runner, *args, "--out", str(tmp_path / "b"))
        assert a.exit_code == b.exit_code == 0
        csv_a = (tmp_path / "a" / "table1.csv").read_text()
        csv_b = (tmp_path / "b" / "table1.csv").read_text()
        assert csv_a == csv_b


class TestFigureCommands:
    def test_fig3_dataset_and_plot(self, runner, tmp_path):
        res = invoke(runner, "fig3", "--m", "2", "--l-min", "20", "--l-max", "80",
                     "--l-step", "10", "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "fig3.csv")
        assert header == ["series", "L_km", "value"]
        series = {r["series"] for r in rows}
        assert series == {"capacity", "M=2"}
        assert (tmp_path / "fig3.png").stat().st_size > 0
        assert (tmp_path / "fig3.manifest.json").exists()

    def test_fig5_endpoints_are_analytic(self, runner, tmp_path):
        res = invoke(runner, "fig5", "--m", "10", "--trials", "6",
                     "--cutoff", "0", "--cutoff", "inf", "--p-step", "0.25",
                     "--replicas", "100", "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "fig5.csv")
        assert header == ["M", "n", "n_star", "p", "mean_fraction", "std_error"]
        for r in rows:
            if r["n_star"] == "0":
                assert float(r["mean_fraction"]) == pytest.approx(float(r["p"]))
                assert float(r["std_error"]) == 0.0
        assert (tmp_path / "fig5.png").stat().st_size > 0

    def test_fig1b_small_grid(self, runner, tmp_path):
        res = invoke(runner, "fig1b", "--m", "2", "--ell-min", "10",
                     "--ell-max", "20", "--ell-step", "10", "--cutoff", "0",
                     "--cutoff", "inf", "--replicas", "100",
                     "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "fig1b.csv")
        assert header == ["M", "n_star", "ell_km", "p", "mean_trials",
                         "std_error", "mean_time_s"]
        assert len(rows) == 4
        for r in rows:
            assert float(r["mean_trials"]) >= 1.0
            assert float(r["mean_time_s"]) > 0
        assert (tmp_path / "fig1b.png").stat().st_size > 0

    def test_fig4_small_grid(self, runner, tmp_path):
        res = invoke(runner, "fig4", "--layers-max", "3", "--layers-c", "3",
                     "--layers-d", "3", "--cutoff-d", "2", "--cutoff-d", "inf",
                     "--replicas", "400", "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "fig4.csv")
        assert header == ["panel", "n_layers", "position", "n_star",
                         "mean_trials", "std_error", "replicas"]
        panels = {r["panel"] for r in rows}
        assert panels == {"b", "c", "d"}
        assert (tmp_path / "fig4.png").stat().st_size > 0

    def test_fig6_contract(self, runner, tmp_path):
        res = invoke(runner, "fig6", "--lattice", "square", "--cutoff", "0",
                     "--scale", "64", "--replicas", "8", "--seed", "606",
                     "--out", str(tmp_path))
        assert res.exit_code == 0
        _, header, rows = read_csv(tmp_path / "fig6.csv")
        assert header == ["lattice", "n_star", "p", "mean_fraction",
                         "std_error", "replicas"]
        assert len(rows) > 40
        assert (tmp_path / "fig6.png").stat().st_size > 0


def test_version_flag(runner):
    res = invoke(runner, "--version")
    assert res.exit_code == 0
