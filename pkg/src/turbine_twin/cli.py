from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Annotated, Iterator, List, Optional

import typer

from .config import get_settings, load_twin_config
from .errors import ArtifactError, TwinError
from .service import TwinService
from .synth_scada import scenario_names

app = typer.Typer(help="Diagnostic digital twin for wind turbine SCADA data")


class ModelKind(str, Enum):
    dense = "dense"
    lstm = "lstm"


KindOption = Annotated[ModelKind, typer.Option("--kind", help="Normal behaviour model family")]


@dataclass(slots=True)
class CliOptions:
    config_path: Optional[Path] = None
    work_dir: Optional[Path] = None


def _fail(exc: TwinError, code: int) -> None:
    typer.echo(f"error={exc.kind} message={json.dumps(str(exc), ensure_ascii=False)}", err=True)
    raise typer.Exit(code=code)


@contextmanager
def _reported_errors() -> Iterator[None]:
    try:
        yield
    except ArtifactError as exc:
        _fail(exc, 2)
    except TwinError as exc:
        _fail(exc, 1)


def _service(ctx: typer.Context) -> TwinService:
    options: CliOptions = ctx.obj or CliOptions()
    config = load_twin_config(options.config_path) if options.config_path else None
    return TwinService(config=config, work_dir=options.work_dir)


@app.callback()
def main(
    ctx: typer.Context,
    config: Annotated[
        Optional[Path],
        typer.Option("--config", "-c", exists=True, readable=True, help="Twin config JSON"),
    ] = None,
    work_dir: Annotated[
        Optional[Path],
        typer.Option("--work-dir", help="Artifact directory (default TWIN_DATA_DIR/work)"),
    ] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    ctx.obj = CliOptions(config_path=config, work_dir=work_dir)


@app.command()
def simulate(
    ctx: typer.Context,
    scenario: Annotated[
        str,
        typer.Option(
            "--scenario",
            "-s",
            help=f"Scenario name ({', '.join(scenario_names())}) or a scenario JSON file",
        ),
    ] = "paper-analogue",
    out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory")] = None,
    days: Annotated[
        Optional[float], typer.Option("--days", help="Cut the scenario to this many days")
    ] = None,
    raw_hz: Annotated[
        Optional[float],
        typer.Option("--raw-hz", help="Emit sub-minute raw samples at this rate instead"),
    ] = None,
) -> None:
    with _reported_errors():
        service = _service(ctx)
        result = service.simulate(scenario, out or service.settings.data_dir, days, raw_hz)
    typer.echo(f"[TWIN] scenario={result.scenario} frames={result.frames}")
    typer.echo(f"[TWIN] scada csv: {result.csv_path}")
    typer.echo(f"[TWIN] ground truth: {result.truth_path}")


@app.command()
def ingest(
    ctx: typer.Context,
    csv_path: Annotated[
        Path, typer.Argument(exists=True, readable=True, help="SCADA CSV to ingest")
    ],
) -> None:
    with _reported_errors():
        result = _service(ctx).ingest(csv_path)
    typer.echo(
        f"[TWIN] frames={result.frames} train={result.train_samples} test={result.test_frames}"
    )
    typer.echo(f"[TWIN] mask: {json.dumps(result.mask_counts)}")


@app.command()
def train(
    ctx: typer.Context,
    kind: KindOption = ModelKind.dense,
    channel: Annotated[
        Optional[List[str]],
        typer.Option("--channel", help="Train only these channels (repeatable)"),
    ] = None,
) -> None:
    with _reported_errors():
        result = _service(ctx).train(kind.value, channel)
    for name, path in result.models.items():
        typer.echo(f"[TWIN] {name}: holdout_mae={result.holdout_mae[name]:.5f} -> {path}")


@app.command()
def calibrate(ctx: typer.Context, kind: KindOption = ModelKind.dense) -> None:
    with _reported_errors():
        result = _service(ctx).calibrate(kind.value)
    for name in result.thresholds.channels:
        typer.echo(
            f"[TWIN] {name}: D_ER={result.thresholds.settle(name):.6g}"
            f" D={result.thresholds.limit(name):.6g}"
        )
    if result.shap_path is not None:
        typer.echo(f"[TWIN] shap thresholds: {result.shap_path}")


@app.command()
def replay(
    ctx: typer.Context,
    kind: KindOption = ModelKind.dense,
    dispatch: Annotated[
        bool, typer.Option("--dispatch/--no-dispatch", help="Send alerts to the sinks")
    ] = True,
) -> None:
    with _reported_errors():
        outcome = _service(ctx).replay(kind.value, dispatch=dispatch)
    counts = outcome.result.summary["event_counts"]
    typer.echo(f"[TWIN] events: {json.dumps(counts)}")
    typer.echo(
        f"[TWIN] incidents={len(outcome.result.incidents)} alerts={len(outcome.alerts)}"
        f" dispatched={outcome.dispatched}"
    )
    typer.echo(f"[TWIN] event log: {outcome.events_path}")
    typer.echo(f"[TWIN] summary: {outcome.summary_path}")


@app.command()
def follow(
    ctx: typer.Context,
    path: Annotated[Path, typer.Argument(exists=True, readable=True, help="Growing SCADA CSV")],
    kind: KindOption = ModelKind.dense,
    poll_interval: Annotated[float, typer.Option("--poll-interval", min=0.0)] = 1.0,
    once: Annotated[
        bool, typer.Option("--once", help="Drain the file, flush the open minute and exit")
    ] = False,
    max_idle_polls: Annotated[
        Optional[int], typer.Option("--max-idle-polls", min=1, help="Stop after idle polls")
    ] = None,
) -> None:
    typer.echo(f"[TWIN] following {path}")
    with _reported_errors():
        result = _service(ctx).follow(
            path,
            kind.value,
            poll_interval=poll_interval,
            stop_at_eof=once,
            max_idle_polls=max_idle_polls,
        )
    typer.echo(
        f"[TWIN] frames={result.frames} events={len(result.events)} alerts={result.dispatched}"
    )


@app.command()
def diagnose(ctx: typer.Context) -> None:
    with _reported_errors():
        written = _service(ctx).diagnose()
    for path in written:
        typer.echo(f"[TWIN] wrote {path}")


@app.command()
def report(ctx: typer.Context, kind: KindOption = ModelKind.dense) -> None:
    with _reported_errors():
        service = _service(ctx)
        html_path = service.report(kind.value)
        summary = json.loads(
            (service.layout.replay_dir(kind.value) / "summary.json").read_text(encoding="utf-8")
        )
    typer.echo(f"[TWIN] events: {json.dumps(summary['event_counts'])}")
    for incident in summary["incidents"]:
        typer.echo(
            f"[TWIN] {incident['key']} channel={incident['channel']}"
            f" lead_minutes={incident['lead_minutes']}"
            f" p={incident['coincidence_probability']}"
        )
    typer.echo(f"[TWIN] html report: {html_path}")


@app.command()
def serve(
    host: Annotated[str, typer.Option()] = "127.0.0.1",
    port: Annotated[int, typer.Option()] = 8000,
) -> None:
    from uvicorn import run

    from .api import build_app

    typer.echo(f"[TWIN] starting API on http://{host}:{port}")
    run(build_app(), host=host, port=port)
