from __future__ import annotations

from pathlib import Path

from typer.testing import CliRunner

from src.turbine_twin.cli import app

runner = CliRunner()


def test_train_before_ingest_is_a_usage_error(tmp_path: Path) -> None:
    result = runner.invoke(app, ["--work-dir", str(tmp_path / "work"), "train"])

    assert result.exit_code == 2
    assert "error=usage" in result.output
    assert "ingest" in result.output


def test_replay_help_lists_options() -> None:
    result = runner.invoke(app, ["replay", "--help"])

    assert result.exit_code == 0
    assert "--kind" in result.output


def test_simulate_then_ingest_short_scenario(tmp_path: Path) -> None:
    out_dir = tmp_path / "sim"
    work = ["--work-dir", str(tmp_path / "work")]

    simulated = runner.invoke(
        app, [*work, "simulate", "-s", "sensor-outage", "--days", "1", "-o", str(out_dir)]
    )

    assert simulated.exit_code == 0, simulated.output
    assert "[TWIN] scenario=sensor-outage frames=1440" in simulated.output
    assert (out_dir / "ground_truth.csv").exists()

    ingested = runner.invoke(app, [*work, "ingest", str(out_dir / "scada.csv")])

    assert ingested.exit_code == 1
    assert "error=insufficient-data" in ingested.output


def test_unknown_scenario_fails(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["--work-dir", str(tmp_path / "work"), "simulate", "-s", "hurricane"]
    )

    assert result.exit_code == 1
    assert "error=scenario" in result.output
