from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from . import storage
from .alerting import AlertPayload, SinkConfig, dispatch_alert
from .anomaly_detector import (
    ALERTABLE_KINDS,
    MEASUREMENT_ANOMALY,
    AnomalyEvent,
    DetectorState,
    ReplayResult,
    ThresholdSet,
    calibrate_thresholds,
    incident_key,
    step,
)
from .anomaly_detector import replay as replay_series
from .config import TwinConfig, get_settings, load_twin_config
from .diagnosis import (
    DiagnosisThresholds,
    attribution_table,
    calibrate_shap_thresholds,
    diagnose_episodes,
    diagnose_frame,
    episode_attributions,
)
from .errors import ArtifactError, ConfigurationError, DeliveryError, StreamError
from .nom_training import (
    DENSE,
    MODEL_KINDS,
    NomModel,
    load_model,
    model_filename,
    save_model,
    train_dense_nom,
    train_lstm_nom,
)
from .report_builder import (
    plot_attributions,
    plot_residuals,
    read_json_lines,
    write_html_report,
    write_json_lines,
    write_json_report,
)
from .scada_ingest import (
    TIMESTAMP_COLUMN,
    CsvRowParser,
    MinuteAccumulator,
    NormalizationParams,
    OperatingMask,
    Partition,
    ScadaFrame,
    ScadaSeries,
    average_to_minutes,
    build_mask,
    endogenous_ids,
    fit_normalization,
    format_timestamps,
    parse_csv,
    parse_timestamp,
    split_train_test,
    write_csv,
)
from .synth_scada import (
    emit_raw_samples,
    generate,
    get_scenario,
    load_scenario,
    shortened,
    write_ground_truth,
)

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ArtifactLayout:
    """File artifacts of one turbine's pipeline, rooted at the work directory."""

    root: Path

    @property
    def ingest_dir(self) -> Path:
        return self.root / "ingest"

    @property
    def series_csv(self) -> Path:
        return self.ingest_dir / "series.csv"

    @property
    def mask_csv(self) -> Path:
        return self.ingest_dir / "mask.csv"

    @property
    def split_json(self) -> Path:
        return self.ingest_dir / "split.json"

    @property
    def normalization_json(self) -> Path:
        return self.ingest_dir / "normalization.json"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    def model_path(self, channel: str, kind: str) -> Path:
        return self.models_dir / model_filename(channel, kind)

    def thresholds_path(self, kind: str) -> Path:
        return self.root / "thresholds" / f"{kind}.json"

    @property
    def shap_path(self) -> Path:
        return self.root / "thresholds" / "shap.json"

    def replay_dir(self, kind: str) -> Path:
        return self.root / "replay" / kind

    @property
    def diagnosis_dir(self) -> Path:
        return self.root / "diagnosis"

    @property
    def follow_dir(self) -> Path:
        return self.root / "follow"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"{path} not found; run `{producer}` first")
    return path


@dataclass(slots=True)
class SimulationResult:
    scenario: str
    frames: int
    csv_path: Path
    truth_path: Path
    spec_path: Path


@dataclass(slots=True)
class IngestResult:
    frames: int
    train_samples: int
    test_frames: int
    mask_counts: Dict[str, int]
    artifacts: List[Path] = field(default_factory=list)


@dataclass(slots=True)
class TrainResult:
    kind: str
    models: Dict[str, Path]
    holdout_mae: Dict[str, float]


@dataclass(slots=True)
class CalibrationResult:
    kind: str
    thresholds: ThresholdSet
    thresholds_path: Path
    shap_path: Optional[Path] = None


@dataclass(slots=True)
class ReplayOutcome:
    kind: str
    result: ReplayResult
    events_path: Path
    summary_path: Path
    alerts_path: Path
    alerts: List[AlertPayload]
    dispatched: int
    plots: List[Path]


@dataclass(slots=True)
class FollowResult:
    frames: int
    lines_consumed: int
    events: List[AnomalyEvent]
    dispatched: int


class _LineTail:
    """Yields complete appended data lines; a trailing partial line waits for the next poll."""

    def __init__(
        self, path: Path, skip: int, on_skip: Optional[Callable[[str], None]] = None
    ) -> None:
        self._handle = path.open("r", encoding="utf-8", newline="")
        self._skip = skip
        self._on_skip = on_skip
        self.header: Optional[str] = None
        self.lines_read = 0

    def poll(self) -> List[Tuple[int, str]]:
        lines: List[Tuple[int, str]] = []
        while True:
            position = self._handle.tell()
            line = self._handle.readline()
            if not line:
                break
            if not line.endswith("\n"):
                self._handle.seek(position)
                break
            text = line.rstrip("\r\n")
            if self.header is None:
                self.header = text
                continue
            index = self.lines_read
            self.lines_read += 1
            if self._skip:
                self._skip -= 1
                if self._on_skip is not None:
                    self._on_skip(text)
                continue
            lines.append((index, text))
        return lines

    def close(self) -> None:
        self._handle.close()


class TwinService:
    def __init__(
        self,
        config: Optional[TwinConfig] = None,
        work_dir: Optional[Path] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.settings = get_settings()
        self.config = config or load_twin_config()
        self.layout = ArtifactLayout(Path(work_dir or self.settings.work_dir))
        self.sinks = tuple(self._resolve_sink(sink) for sink in self.config.sinks)
        self._sleep = sleep

    def _resolve_sink(self, sink: SinkConfig) -> SinkConfig:
        if sink.kind == "file" and sink.path and not Path(sink.path).is_absolute():
            return replace(sink, path=str(self.layout.root / sink.path))
        return sink

    @staticmethod
    def _check_kind(kind: str) -> str:
        if kind not in MODEL_KINDS:
            raise ConfigurationError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
        return kind

    def simulate(
        self,
        scenario: Union[str, Path],
        out_dir: Path,
        days: Optional[float] = None,
        raw_rate_hz: Optional[float] = None,
    ) -> SimulationResult:
        source = Path(str(scenario))
        spec = load_scenario(source) if source.suffix == ".json" else get_scenario(str(scenario))
        if days is not None:
            spec = shortened(spec, days)
        series, truth = generate(spec)
        output = series if raw_rate_hz is None else emit_raw_samples(series, raw_rate_hz)

        out_dir = Path(out_dir)
        csv_path = write_csv(output, out_dir / "scada.csv")
        truth_path = write_ground_truth(truth, out_dir / "ground_truth.csv")
        spec_path = out_dir / "scenario.json"
        spec_path.write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")
        LOGGER.info("[Simulate] scenario=%s frames=%s -> %s", spec.name, len(output), csv_path)
        return SimulationResult(spec.name, len(output), csv_path, truth_path, spec_path)

    def ingest(self, csv_path: Path) -> IngestResult:
        series = average_to_minutes(parse_csv(csv_path, self.config.channels))
        mask = build_mask(series, self.config.reheat_minutes, self.config.status)
        train, test = split_train_test(
            series, mask, self.config.train_fraction, self.config.min_train_samples
        )
        params = fit_normalization(train)

        layout = self.layout
        write_csv(series, layout.series_csv)
        mask.to_frame().to_csv(layout.mask_csv, index=False)
        boundary = test.series.timestamps[0] if len(test) else None
        write_json_report(
            {
                "source": str(csv_path),
                "frames": len(series),
                "train_fraction": self.config.train_fraction,
                "train_samples": len(train),
                "test_frames": len(test),
                "test_start": format_timestamps(pd.DatetimeIndex([boundary]))[0]
                if boundary is not None
                else None,
                "mask_counts": mask.counts(),
            },
            layout.split_json,
        )
        write_json_report(params.to_dict(), layout.normalization_json)
        return IngestResult(
            frames=len(series),
            train_samples=len(train),
            test_frames=len(test),
            mask_counts=mask.counts(),
            artifacts=[
                layout.series_csv,
                layout.mask_csv,
                layout.split_json,
                layout.normalization_json,
            ],
        )

    def _load_ingest(self) -> Tuple[ScadaSeries, OperatingMask, NormalizationParams]:
        layout = self.layout
        for path in (
            layout.series_csv,
            layout.mask_csv,
            layout.split_json,
            layout.normalization_json,
        ):
            _require(path, "ingest")
        series = parse_csv(layout.series_csv, self.config.channels)
        mask = OperatingMask.from_frame(pd.read_csv(layout.mask_csv, dtype=str))
        if len(mask) != len(series):
            raise ArtifactError(f"{layout.mask_csv} does not match {layout.series_csv}")
        payload = json.loads(layout.normalization_json.read_text(encoding="utf-8"))
        return series, mask, NormalizationParams.from_dict(payload)

    def _train_partition(self, series: ScadaSeries, mask: OperatingMask) -> Partition:
        train, _ = split_train_test(
            series, mask, self.config.train_fraction, self.config.min_train_samples
        )
        return train

    def train(self, kind: str = DENSE, channels: Optional[Sequence[str]] = None) -> TrainResult:
        self._check_kind(kind)
        series, mask, params = self._load_ingest()
        train = self._train_partition(series, mask)
        trainer = train_dense_nom if kind == DENSE else train_lstm_nom
        targets = list(channels or endogenous_ids(self.config.channels))

        paths: Dict[str, Path] = {}
        holdout: Dict[str, float] = {}
        for channel in targets:
            if not self.config.channel(channel).is_endogenous:
                raise ConfigurationError(f"{channel!r} is exogenous and has no model")
            model = trainer(train, channel, self.config.training, params)
            paths[channel] = save_model(model, self.layout.model_path(channel, kind))
            holdout[channel] = model.fingerprint.holdout_mae
        return TrainResult(kind, paths, holdout)

    def _load_models(self, kind: str) -> Dict[str, NomModel]:
        models: Dict[str, NomModel] = {}
        for channel in endogenous_ids(self.config.channels):
            path = self.layout.model_path(channel, kind)
            if path.exists():
                models[channel] = load_model(path)
        if not models:
            raise ArtifactError(
                f"no {kind} models in {self.layout.models_dir}; run `train --kind {kind}` first"
            )
        return models

    def _load_thresholds(self, kind: str) -> ThresholdSet:
        path = _require(self.layout.thresholds_path(kind), f"calibrate --kind {kind}")
        return ThresholdSet.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def _load_diagnosis_thresholds(self) -> Optional[DiagnosisThresholds]:
        path = self.layout.shap_path
        if not path.exists():
            return None
        return DiagnosisThresholds.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def calibrate(self, kind: str = DENSE) -> CalibrationResult:
        self._check_kind(kind)
        models = self._load_models(kind)
        series, mask, _ = self._load_ingest()
        train = self._train_partition(series, mask)
        thresholds = calibrate_thresholds(models, train, safety_factor=self.config.safety_factor)
        path = write_json_report(thresholds.to_dict(), self.layout.thresholds_path(kind))
        outcome = CalibrationResult(kind, thresholds, path)
        if kind != DENSE:
            return outcome

        options = self.config.diagnosis
        calibrations = []
        for channel, model in models.items():
            calibration = calibrate_shap_thresholds(
                model,
                train,
                samples=options.samples,
                factor=options.shap_factor,
                background_size=options.background_size,
                seed=options.seed,
            )
            calibrations.append(calibration)
            table = pd.DataFrame(
                calibration.sample_contributions, columns=list(model.input_channels)
            )
            table.insert(0, TIMESTAMP_COLUMN, format_timestamps(calibration.sample_times))
            self.layout.diagnosis_dir.mkdir(parents=True, exist_ok=True)
            table.to_csv(self.layout.diagnosis_dir / f"{channel}_train.csv", index=False)
        shap = DiagnosisThresholds.from_calibrations(
            calibrations, options.dominance_fraction, options.shap_factor
        )
        outcome.shap_path = write_json_report(shap.to_dict(), self.layout.shap_path)
        return outcome

    def replay(self, kind: str = DENSE, dispatch: bool = True) -> ReplayOutcome:
        self._check_kind(kind)
        models = self._load_models(kind)
        thresholds = self._load_thresholds(kind)
        series, mask, _ = self._load_ingest()

        result = replay_series(series, models, thresholds, mask, self.config.detector)
        shap = self._load_diagnosis_thresholds() if kind == DENSE else None
        if shap is not None:
            diagnosed = diagnose_episodes(result.events, series, models, shap)
            LOGGER.info("[Replay] diagnosed %s episodes", diagnosed)

        out_dir = self.layout.replay_dir(kind)
        rows = [event.to_dict() for event in result.events]
        events_path = write_json_lines(rows, out_dir / "events.jsonl")

        openers: List[Tuple[str, AnomalyEvent]] = []
        for incident in result.incidents:
            first = next(
                event
                for event in result.events
                if event.kind == incident.kind and event.timestamp == incident.start
            )
            openers.append((incident.key, first))
        payloads = [self._payload(event) for _, event in openers]
        alerts_path = write_json_lines(
            [payload.to_dict() for payload in payloads], out_dir / "alerts.jsonl"
        )

        summary = {
            "farm": self.config.farm,
            "turbine": self.config.turbine,
            "model_kind": kind,
            "frames": len(series),
            "alerts": len(payloads),
            **result.summary,
        }
        summary_path = write_json_report(summary, out_dir / "summary.json")
        limits = {channel: thresholds.limit(channel) for channel in thresholds.channels}
        plots = plot_residuals(series.timestamps, result.residuals, limits, out_dir / "plots")

        storage.clear_events(self.config.turbine, kind)
        storage.record_events(self.config.turbine, kind, rows)
        dispatched = 0
        if dispatch:
            for (key, event), payload in zip(openers, payloads):
                dispatched += self._send(key, payload)
        return ReplayOutcome(
            kind, result, events_path, summary_path, alerts_path, payloads, dispatched, plots
        )

    def _payload(self, event: AnomalyEvent) -> AlertPayload:
        channel = self.config.channel(event.channel)
        narrative = event.diagnosis.narrative if event.diagnosis is not None else ""
        return AlertPayload(
            farm=self.config.farm,
            turbine=self.config.turbine,
            component=channel.component,
            signal_type=channel.signal_type,
            sensor=channel.id,
            timestamp=event.to_dict()["timestamp"],
            kind=event.kind,
            diagnosis=narrative,
            coincidence_probability=event.coincidence_probability,
        )

    def _send(self, key: str, payload: AlertPayload) -> bool:
        """Dispatches once per incident key; a repeat after restart is skipped."""

        turbine = self.config.turbine
        if storage.alert_exists(turbine, key):
            LOGGER.info("[Alert] %s already dispatched, skipping", key)
            return False
        try:
            delivery = dispatch_alert(payload, self.sinks, sleep=self._sleep).to_dict()
        except DeliveryError as exc:
            LOGGER.error("[Alert] %s", exc)
            delivery = exc.report.to_dict()
        storage.record_alert(turbine, key, payload.to_dict(), delivery)
        return True

    def follow(
        self,
        watch_path: Path,
        kind: str = DENSE,
        poll_interval: float = 1.0,
        stop_at_eof: bool = False,
        max_idle_polls: Optional[int] = None,
        checkpoint_frames: int = 1440,
    ) -> FollowResult:
        """Tails ``watch_path`` (ingest CSV format) and runs the detector on each new minute.

        The cursor (data lines fully applied plus the detector state) is persisted at every
        checkpoint, so a restarted follower resumes where the last checkpoint left off.
        ``stop_at_eof`` flushes the open minute and returns once the file is drained.
        """

        self._check_kind(kind)
        watch_path = _require(Path(watch_path), "simulate").resolve()
        models = self._load_models(kind)
        thresholds = self._load_thresholds(kind)
        shap = self._load_diagnosis_thresholds() if kind == DENSE else None
        turbine, source = self.config.turbine, str(watch_path)

        cursor = storage.load_cursor(turbine)
        if cursor and cursor["source"] == source and cursor["state"]:
            state = DetectorState.from_dict(cursor["state"], self.config.detector)
            committed = int(cursor["lines_consumed"])
            LOGGER.info("[Follow] resuming %s after %s lines", source, committed)
        else:
            history = max(model.context_length for model in models.values())
            state = DetectorState.initial(
                [channel.id for channel in self.config.channels],
                self.config.detector,
                history if history > 1 else 0,
            )
            committed = 0

        parser: Optional[CsvRowParser] = None

        def row_parser() -> CsvRowParser:
            nonlocal parser
            if parser is None:
                assert tail.header is not None
                parser = CsvRowParser(tail.header, self.config.channels)
            return parser

        # consumed lines still set the status codes that blank cells carry forward
        tail = _LineTail(watch_path, committed, lambda text: row_parser().remember_codes(text))
        accumulator = MinuteAccumulator(self.config.channels)
        last_raw: Optional[pd.Timestamp] = None
        pending: List[AnomalyEvent] = []
        produced: List[AnomalyEvent] = []
        frames = dispatched = idle = 0

        def apply(frame: ScadaFrame) -> None:
            nonlocal frames, dispatched
            _, events = step(state, frame, models, thresholds)
            frames += 1
            for event in events:
                model = models.get(event.channel)
                if (
                    shap is not None
                    and model is not None
                    and event.kind == MEASUREMENT_ANOMALY
                    and event.opens_episode
                ):
                    event.diagnosis = diagnose_frame(event, frame, model, shap)
                if event.kind in ALERTABLE_KINDS and event.opens_incident:
                    key = incident_key(event.kind, event.incident_start)
                    dispatched += self._send(key, self._payload(event))
            pending.extend(events)

        def checkpoint() -> None:
            if pending:
                rows = [event.to_dict() for event in pending]
                storage.record_events(turbine, kind, rows)
                self.layout.follow_dir.mkdir(parents=True, exist_ok=True)
                with (self.layout.follow_dir / "events.jsonl").open("a", encoding="utf-8") as fh:
                    for row in rows:
                        fh.write(json.dumps(row, ensure_ascii=False) + "\n")
                produced.extend(pending)
                pending.clear()
            last = state.last_timestamp
            stamp = format_timestamps(pd.DatetimeIndex([last]))[0] if last is not None else None
            storage.save_cursor(turbine, source, stamp, committed, state.to_dict())

        try:
            while True:
                batch = tail.poll()
                if tail.header is not None:
                    row_parser()
                for index, line in batch:
                    if not line.strip():
                        continue
                    frame = row_parser().parse(line, index + 2)
                    if last_raw is not None and frame.timestamp <= last_raw:
                        raise StreamError(
                            f"timestamp {frame.timestamp} does not follow {last_raw}",
                            line=index + 2,
                        )
                    if state.last_timestamp is not None and frame.timestamp.floor(
                        "min"
                    ) <= state.last_timestamp:
                        raise StreamError(
                            f"timestamp {frame.timestamp} falls in an applied minute",
                            line=index + 2,
                        )
                    last_raw = frame.timestamp
                    emitted = accumulator.add(frame)
                    if emitted is not None:
                        apply(emitted)
                        committed = index
                        if frames % checkpoint_frames == 0:
                            checkpoint()
                if batch:
                    idle = 0
                    checkpoint()
                    continue
                if stop_at_eof:
                    emitted = accumulator.flush()
                    if emitted is not None:
                        apply(emitted)
                        committed = tail.lines_read
                    checkpoint()
                    break
                idle += 1
                if max_idle_polls is not None and idle >= max_idle_polls:
                    break
                self._sleep(poll_interval)
        finally:
            tail.close()
        LOGGER.info(
            "[Follow] frames=%s events=%s alerts=%s", frames, len(produced), dispatched
        )
        return FollowResult(frames, committed, produced, dispatched)

    def diagnose(self) -> List[Path]:
        """Training-sample and anomaly-time SHAP tables plus plots per dense model."""

        models = self._load_models(DENSE)
        shap = self._load_diagnosis_thresholds()
        if shap is None:
            raise ArtifactError(f"{self.layout.shap_path} not found; run `calibrate` first")
        events_path = _require(self.layout.replay_dir(DENSE) / "events.jsonl", "replay")
        series, _, _ = self._load_ingest()
        rows = read_json_lines(events_path)
        events = [
            AnomalyEvent(parse_timestamp(row["timestamp"]), row["channel"], row["kind"])
            for row in rows
        ]

        out_dir = self.layout.diagnosis_dir
        written: List[Path] = []
        for channel, model in models.items():
            train_csv = out_dir / f"{channel}_train.csv"
            if train_csv.exists():
                written += plot_attributions(
                    pd.read_csv(train_csv),
                    out_dir / f"{channel}_train.png",
                    f"{channel}: training samples",
                )
            stamps, vectors = episode_attributions(
                events, series, model, shap.backgrounds[channel]
            )
            if vectors:
                written += plot_attributions(
                    attribution_table(stamps, vectors),
                    out_dir / f"{channel}_anomaly.png",
                    f"{channel}: flagged timesteps",
                )

        diagnosed = [row for row in rows if row.get("diagnosis")]
        written.append(
            write_json_report(
                {"limits": shap.limits, "diagnosed_episodes": diagnosed},
                out_dir / "summary.json",
            )
        )
        return written

    def report(self, kind: str = DENSE) -> Path:
        self._check_kind(kind)
        out_dir = self.layout.replay_dir(kind)
        summary_path = _require(out_dir / "summary.json", f"replay --kind {kind}")
        summary: Mapping[str, object] = json.loads(summary_path.read_text(encoding="utf-8"))
        events = read_json_lines(out_dir / "events.jsonl")
        plots = sorted(path.relative_to(out_dir).as_posix() for path in out_dir.glob("plots/*.png"))
        return write_html_report(
            summary,
            events,
            out_dir / "report.html",
            turbine=self.config.turbine,
            plots=plots,
            templates_dir=self.settings.templates_dir,
        )
