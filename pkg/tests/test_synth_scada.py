import json
from pathlib import Path
from dataclasses import replace

import numpy as np
import pytest

from src.turbine_twin.errors import ScenarioError
from src.turbine_twin.synth_scada import (
    FAULT,
    SENSOR_DROPOUT,
    STATUS_FAULT,
    STATUS_OPERATING,
    STATUS_PLANNED_STOP,
    THERMAL_DRIFT,
    AmbientProcess,
    InjectedEvent,
    PlannedStop,
    ScenarioSpec,
    WindProcess,
    ambient_temperature,
    generate,
    get_scenario,
    load_scenario,
    scenario_names,
    shortened,
    validate_scenario,
    wind_speed,
    write_ground_truth,
)


def _spec(**overrides):
    base = ScenarioSpec(
        name="unit",
        seed=5,
        duration_days=2.0,
        planned_stops=(PlannedStop(100, 30),),
        events=(
            InjectedEvent("trip", FAULT, 600, 20),
            InjectedEvent("oil-dropout", SENSOR_DROPOUT, 900, 15, channel="gearbox_oil_temp"),
            InjectedEvent(
                "rotor-drift",
                THERMAL_DRIFT,
                1200,
                120,
                channel="generator_rotor_temp",
                ramp_per_hour=3.0,
            ),
        ),
    )
    return replace(base, **overrides)


def test_generation_is_deterministic() -> None:
    first, _ = generate(_spec())
    second, _ = generate(_spec())
    other, _ = generate(_spec(seed=6))

    np.testing.assert_array_equal(first.values, second.values)
    assert first.timestamps.equals(second.timestamps)
    assert not np.allclose(np.nan_to_num(first.values), np.nan_to_num(other.values))


def test_stops_and_faults_set_status_and_cool_components() -> None:
    series, truth = generate(_spec())
    oil = series.column("gearbox_oil_temp")
    rpm = series.column("rotor_rpm")

    assert len(series) == 2880
    assert (series.status_code[100:130] == STATUS_PLANNED_STOP).all()
    assert (series.status_code[600:620] == STATUS_FAULT).all()
    assert series.status_code[99] == STATUS_OPERATING
    assert series.status_code[620] == STATUS_OPERATING
    assert (rpm[100:130] == 0.0).all() and (rpm[600:620] == 0.0).all()
    assert oil[129] < oil[100]
    assert truth.labels[100] == "planned-stop-0"
    assert truth.labels[610] == "trip"
    assert truth.labels[0] == ""


def test_dropout_blanks_one_channel() -> None:
    series, truth = generate(_spec())
    oil = series.column("gearbox_oil_temp")

    assert np.isnan(oil[900:915]).all()
    assert not np.isnan(oil[899]) and not np.isnan(oil[915])
    assert np.isfinite(np.delete(series.values, series.index_of("gearbox_oil_temp"), axis=1)).all()
    assert truth.labels[905] == "oil-dropout"


def test_drift_ramps_on_top_of_the_clean_signal() -> None:
    drifted, truth = generate(_spec())
    clean, _ = generate(_spec(events=_spec().events[:2]))
    column = drifted.index_of("generator_rotor_temp")

    offset = drifted.values[:, column] - clean.values[:, column]

    assert offset[1199] == 0.0
    assert offset[1200] == pytest.approx(0.0)
    assert offset[1260] == pytest.approx(3.0)
    assert offset[1319] == pytest.approx(3.0 * 119 / 60)
    assert offset[1320] == 0.0
    assert truth.event_start("rotor-drift") == drifted.timestamps[1200]


def test_linked_drift_must_end_at_its_fault() -> None:
    events = (
        InjectedEvent("trip", FAULT, 600, 20),
        InjectedEvent(
            "lead", THERMAL_DRIFT, 400, 200, channel="generator_rotor_temp", linked_fault="trip"
        ),
    )
    validate_scenario(_spec(planned_stops=(), events=events))

    late = (events[0], replace(events[1], start_minute=450))
    with pytest.raises(ScenarioError):
        validate_scenario(_spec(planned_stops=(), events=late))

    dangling = (replace(events[1], linked_fault="missing"),)
    with pytest.raises(ScenarioError):
        validate_scenario(_spec(planned_stops=(), events=dangling))


@pytest.mark.parametrize(
    "overrides",
    [
        {"duration_days": 0.0},
        {"planned_stops": (PlannedStop(590, 20),)},
        {"events": (InjectedEvent("x", "explosion", 10, 5),)},
        {"events": (InjectedEvent("x", FAULT, 2870, 30),)},
        {"events": (InjectedEvent("x", SENSOR_DROPOUT, 10, 5, channel="nacelle_temp"),)},
        {"events": (InjectedEvent("x", FAULT, 10, 5), InjectedEvent("x", FAULT, 50, 5))},
        {"thermal": {}},
    ],
)
def test_invalid_scenarios_are_rejected(overrides) -> None:
    with pytest.raises(ScenarioError):
        generate(_spec(**overrides))


def test_library_scenarios_validate() -> None:
    assert "paper-analogue" in scenario_names()
    for name in scenario_names():
        validate_scenario(get_scenario(name))
    with pytest.raises(ScenarioError):
        get_scenario("no-such-scenario")

    analogue = get_scenario("paper-analogue")
    drift, fault = analogue.events
    assert drift.linked_fault == fault.id
    assert fault.start_minute - drift.start_minute == 468


def test_shortened_drops_what_no_longer_fits() -> None:
    analogue = get_scenario("paper-analogue")

    cut = shortened(analogue, 30.0)

    assert cut.minutes == 30 * 1440
    assert cut.events == ()
    assert len(cut.planned_stops) == 2
    validate_scenario(cut)


def test_scenario_file_round_trip(tmp_path: Path) -> None:
    spec = _spec()
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(spec.to_dict()), encoding="utf-8")

    assert load_scenario(path) == spec

    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(broken)
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"name": "x", "wind": {"gusts": 3}}), encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(unknown)


def test_ground_truth_csv(tmp_path: Path) -> None:
    _, truth = generate(_spec())

    path = write_ground_truth(truth, tmp_path / "truth" / "ground_truth.csv")

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "timestamp,events"
    assert lines[1].startswith("2021-01-01T00:00:00Z")
    assert len(lines) == 2881


def test_wind_and_ambient_stay_within_their_bounds() -> None:
    rng = np.random.default_rng(0)
    gale = WindProcess(mean=24.0, std=6.0)

    wind = wind_speed(gale, rng.standard_normal(20000))
    air = ambient_temperature(
        AmbientProcess(), np.arange(20000) % 1440, 3.0 * rng.standard_normal(20000)
    )

    assert wind.min() >= 0.0 and wind.max() == gale.cut_out
    assert air.min() >= 8.0 - 3.0 - 2.0 and air.max() <= 8.0 + 3.0 + 2.0

    series, _ = generate(_spec(wind=gale, planned_stops=(), events=()))
    assert series.column("rotor_rpm").max() <= 16.0 * 1.0 + 5 * 0.05


def _zero_noise(spec: ScenarioSpec) -> ScenarioSpec:
    thermal = {name: replace(c, noise_std=0.0) for name, c in spec.thermal.items()}
    return replace(spec, thermal=thermal, rpm_noise_std=0.0)


def test_temperatures_relax_exponentially_after_a_stop() -> None:
    spec = _zero_noise(
        ScenarioSpec(
            name="calm",
            duration_days=3.0,
            wind=WindProcess(std=0.0),
            ambient=AmbientProcess(daily_amplitude=0.0, std=0.0),
            planned_stops=(PlannedStop(0, 60),),
        )
    )
    series, _ = generate(spec)
    rotor = spec.thermal["generator_rotor_temp"]
    rpm = 16.0 * (9.0 - 3.0) / (12.0 - 3.0)
    cold = rotor.coupling * 8.0
    hot = rotor.steady_state(rpm, 8.0)

    minutes = np.arange(60, len(series))
    expected = hot + (cold - hot) * np.exp(-(minutes - 60) / rotor.time_constant_minutes)

    column = series.column("generator_rotor_temp")
    np.testing.assert_allclose(column[:61], cold, atol=1e-9)
    np.testing.assert_allclose(column[60:], expected, atol=1e-9)
    np.testing.assert_allclose(series.column("rotor_rpm")[60:], rpm, atol=1e-9)


def test_larger_rotor_gain_runs_hotter_everywhere() -> None:
    spec = _zero_noise(ScenarioSpec(name="gain", seed=4, duration_days=2.0))
    thermal = dict(spec.thermal)
    rotor = thermal["generator_rotor_temp"]
    thermal["generator_rotor_temp"] = replace(rotor, gain=rotor.gain + 0.5)

    cool, _ = generate(spec)
    warm, _ = generate(replace(spec, thermal=thermal))

    column = "generator_rotor_temp"
    assert (warm.column(column) > cool.column(column)).all()
    np.testing.assert_array_equal(warm.column("gearbox_oil_temp"), cool.column("gearbox_oil_temp"))


def _block_mean_se(blocks: np.ndarray) -> float:
    centred = blocks - blocks.mean()
    lag = float(np.dot(centred[1:], centred[:-1]) / np.dot(centred, centred))
    lag = min(max(lag, 0.0), 0.9)
    return float(blocks.std(ddof=1) / np.sqrt(len(blocks)) * np.sqrt((1 + lag) / (1 - lag)))


def test_clean_run_is_stationary() -> None:
    series, _ = generate(ScenarioSpec(name="steady", seed=3, duration_days=120.0))

    for channel in ("gearbox_oil_temp", "generator_rotor_temp", "ambient_temp"):
        daily = series.column(channel).reshape(120, 1440).mean(axis=1)
        first, second = daily[:60], daily[60:]
        spread = np.hypot(_block_mean_se(first), _block_mean_se(second))
        assert abs(first.mean() - second.mean()) < 3.0 * spread, channel


def test_sensor_noise_is_clipped() -> None:
    noisy = ScenarioSpec(name="noisy", seed=9, duration_days=5.0, noise_clip=2.0)

    measured, _ = generate(noisy)
    exact, _ = generate(_zero_noise(noisy))

    for name, coefficients in noisy.thermal.items():
        deviation = np.abs(measured.column(name) - exact.column(name))
        assert deviation.max() <= 2.0 * coefficients.noise_std + 1e-12
        assert deviation.max() > 1.9 * coefficients.noise_std
