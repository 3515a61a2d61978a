"""Scenario files.

Scenarios are TOML. Every section is optional and unknown keys are errors.
Pressures are written in kPa and converted to Pa while parsing; everything
else is SI. See ``configs/`` for one commented example per subcommand.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import ProbeSettings, ShapeLockTimings
from .errors import ConfigError
from .interconnect import FullState, InputProfile
from .lugre import LuGreParams
from .model import RobotParams

KPA = 1e3


@dataclass(frozen=True)
class Phase:
    duration: float
    tension: tuple[float, ...] | None = None  # N, reached at the end of the ramp
    ramp: float | None = None  # s, defaults to the whole phase
    pressure: float | None = None  # Pa, held for the phase
    tau_ext: tuple[float, ...] | None = None  # N m, held for the phase


@dataclass(frozen=True)
class AnalysisConfig:
    mode: str = "stiffness"
    grid: tuple[float, ...] = tuple(float(k) * 5 * KPA for k in range(17))
    lock_pressure: float = 30 * KPA
    bend_target: float = math.pi / 3
    stiffness_pressure: float = 30 * KPA
    tip_force: float = 0.01
    probe_torque: float | None = None
    with_probe: bool = False
    probe: ProbeSettings = ProbeSettings()
    timings: ShapeLockTimings = ShapeLockTimings()


@dataclass(frozen=True)
class ScenarioConfig:
    robot: RobotParams = RobotParams()
    friction: LuGreParams = LuGreParams()
    phases: tuple[Phase, ...] = ()
    initial: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]] | None = None
    dt: float = 1e-4
    t_span: tuple[float, float] | None = None
    analysis: AnalysisConfig = AnalysisConfig()
    out_dir: str = "out"

    def initial_state(self) -> FullState:
        if self.initial is None:
            return FullState.zeros(self.robot.n)
        return FullState(*(np.array(b, dtype=float) for b in self.initial))

    def resolved_t_span(self) -> tuple[float, float]:
        if self.t_span is not None:
            return self.t_span
        total = sum(ph.duration for ph in self.phases)
        return (0.0, total if total > 0 else 1.0)

    def input_profile(self) -> InputProfile:
        n, m = self.robot.n, self.robot.m
        tension = [(0.0, np.zeros(m))]
        pressure = [(0.0, 0.0)]
        torque = [(0.0, np.zeros(n))]
        t = 0.0
        for ph in self.phases:
            if ph.tension is not None:
                ramp = ph.duration if ph.ramp is None else ph.ramp
                if t > tension[-1][0]:
                    tension.append((t, tension[-1][1]))
                tension.append((t + ramp, np.array(ph.tension, dtype=float)))
            if ph.pressure is not None:
                _set_held(pressure, t, ph.pressure)
            _set_held(torque, t, np.zeros(n) if ph.tau_ext is None else np.array(ph.tau_ext, dtype=float))
            t += ph.duration
        return InputProfile.build(n, m, tension=tension, pressure=pressure, tau_ext=torque)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _set_held(schedule: list, t: float, value):
    if schedule[-1][0] == t:
        schedule[-1] = (t, value)
    else:
        schedule.append((t, value))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


_ROBOT_KEYS = {f.name for f in dataclasses.fields(RobotParams)}
_FRICTION_KEYS = {f.name for f in dataclasses.fields(LuGreParams)}
_PROBE_KEYS = {f.name for f in dataclasses.fields(ProbeSettings)}
_TIMING_KEYS = {f.name for f in dataclasses.fields(ShapeLockTimings)}
_TOP_KEYS = {"robot", "friction", "phase", "initial", "integrator", "analysis", "output"}
_PHASE_KEYS = {"duration", "tension", "ramp", "pressure", "tau_ext"}
_ANALYSIS_KEYS = {
    "mode", "grid", "lock_pressure", "bend_target_deg", "stiffness_pressure", "tip_force",
    "probe_torque", "with_probe", "probe", "timings",
}


def _reject_unknown(section: str, table: dict, allowed: set):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key {section}.{extra[0]} (allowed: {', '.join(sorted(allowed))})")


def _number(where: str, value, *, minimum=None, strict=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where} must be finite")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{where} must be {op} {minimum:g}, got {value:g}")
    return value


def _vector(where: str, value, length: int | None = None, *, minimum=None) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{where} must be an array")
    out = tuple(_number(f"{where}[{i}]", x, minimum=minimum) for i, x in enumerate(value))
    if length is not None and len(out) != length:
        raise ConfigError(f"{where} must have {length} entries, got {len(out)}")
    return out


def _build(where: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario; an empty document gives all defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    _reject_unknown("<top level>", doc, _TOP_KEYS)

    robot_tbl = doc.get("robot", {})
    _reject_unknown("robot", robot_tbl, _ROBOT_KEYS)
    robot_kw = {}
    for key, val in robot_tbl.items():
        if key in ("n", "m"):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"robot.{key} must be an integer")
            robot_kw[key] = val
        elif key == "routing":
            if not isinstance(val, list):
                raise ConfigError("robot.routing must be an array of rows")
            robot_kw[key] = tuple(_vector(f"robot.routing[{i}]", row) for i, row in enumerate(val))
        else:
            robot_kw[key] = _number(f"robot.{key}", val)
    robot = _build("robot", RobotParams, robot_kw)

    fric_tbl = doc.get("friction", {})
    _reject_unknown("friction", fric_tbl, _FRICTION_KEYS)
    friction = _build("friction", LuGreParams, {k: _number(f"friction.{k}", v) for k, v in fric_tbl.items()})

    phases = []
    raw_phases = doc.get("phase", [])
    if not isinstance(raw_phases, list):
        raise ConfigError("phases are written as [[phase]] tables")
    for i, ph in enumerate(raw_phases):
        where = f"phase[{i}]"
        _reject_unknown(where, ph, _PHASE_KEYS)
        if "duration" not in ph:
            raise ConfigError(f"{where}.duration is required")
        kw = {"duration": _number(f"{where}.duration", ph["duration"], minimum=0, strict=True)}
        if "tension" in ph:
            tension = _vector(f"{where}.tension", ph["tension"], robot.m)
            if any(x < 0 for x in tension):
                raise ConfigError(f"{where}.tension: tendon tensions must be non-negative, got {list(tension)}")
            kw["tension"] = tension
        if "ramp" in ph:
            kw["ramp"] = _number(f"{where}.ramp", ph["ramp"], minimum=0, strict=True)
            if kw["ramp"] > kw["duration"]:
                raise ConfigError(f"{where}.ramp must not exceed {where}.duration")
        if "pressure" in ph:
            kw["pressure"] = KPA * _number(f"{where}.pressure", ph["pressure"], minimum=0)
        if "tau_ext" in ph:
            kw["tau_ext"] = _vector(f"{where}.tau_ext", ph["tau_ext"], robot.n)
        phases.append(Phase(**kw))

    initial = None
    if "initial" in doc:
        init = doc["initial"]
        _reject_unknown("initial", init, {"q", "p", "z"})
        zeros = (0.0,) * robot.n
        initial = tuple(
            _vector(f"initial.{k}", init[k], robot.n) if k in init else zeros for k in ("q", "p", "z")
        )

    integ = doc.get("integrator", {})
    _reject_unknown("integrator", integ, {"dt", "t_span"})
    dt = _number("integrator.dt", integ.get("dt", 1e-4), minimum=0, strict=True)
    t_span = None
    if "t_span" in integ:
        t_span = _vector("integrator.t_span", integ["t_span"], 2)
        if not t_span[1] > t_span[0]:
            raise ConfigError("integrator.t_span must be increasing")

    analysis = _parse_analysis(doc.get("analysis", {}))

    out = doc.get("output", {})
    _reject_unknown("output", out, {"dir"})
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir must be a string")

    return ScenarioConfig(
        robot=robot, friction=friction, phases=tuple(phases), initial=initial, dt=dt,
        t_span=t_span, analysis=analysis, out_dir=out_dir,
    )


def _parse_analysis(tbl: dict) -> AnalysisConfig:
    _reject_unknown("analysis", tbl, _ANALYSIS_KEYS)
    kw = {}
    if "mode" in tbl:
        if tbl["mode"] not in ("stiffness", "shape-lock"):
            raise ConfigError("analysis.mode must be 'stiffness' or 'shape-lock'")
        kw["mode"] = tbl["mode"]
    if "grid" in tbl:
        grid = _vector("analysis.grid", tbl["grid"], minimum=0)
        if not grid:
            raise ConfigError("analysis.grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("analysis.grid must be strictly ascending")
        kw["grid"] = tuple(KPA * g for g in grid)
    for key in ("lock_pressure", "stiffness_pressure"):
        if key in tbl:
            kw[key] = KPA * _number(f"analysis.{key}", tbl[key], minimum=0)
    if "bend_target_deg" in tbl:
        kw["bend_target"] = math.radians(_number("analysis.bend_target_deg", tbl["bend_target_deg"]))
    if "tip_force" in tbl:
        kw["tip_force"] = _number("analysis.tip_force", tbl["tip_force"], minimum=0, strict=True)
    if "probe_torque" in tbl:
        kw["probe_torque"] = _number("analysis.probe_torque", tbl["probe_torque"], minimum=0, strict=True)
    if "with_probe" in tbl:
        if not isinstance(tbl["with_probe"], bool):
            raise ConfigError("analysis.with_probe must be true or false")
        kw["with_probe"] = tbl["with_probe"]
    if "probe" in tbl:
        _reject_unknown("analysis.probe", tbl["probe"], _PROBE_KEYS)
        probe_kw = {}
        for k, v in tbl["probe"].items():
            val = _number(f"analysis.probe.{k}", v, minimum=0)
            probe_kw[k] = int(val) if k == "ramp_steps" else val
        kw["probe"] = _build("analysis.probe", ProbeSettings, probe_kw)
    if "timings" in tbl:
        _reject_unknown("analysis.timings", tbl["timings"], _TIMING_KEYS)
        tim_kw = {}
        for k, v in tbl["timings"].items():
            if k == "engage_unloaded":
                if not isinstance(v, bool):
                    raise ConfigError("analysis.timings.engage_unloaded must be true or false")
                tim_kw[k] = v
            elif k == "ramp_points":
                tim_kw[k] = int(_number(f"analysis.timings.{k}", v, minimum=2))
            else:
                tim_kw[k] = _number(f"analysis.timings.{k}", v, minimum=0)
        kw["timings"] = _build("analysis.timings", ShapeLockTimings, tim_kw)
    return AnalysisConfig(**kw)
