"""Run configuration: flat ``section.key = value`` text with HARTREE_ overrides.

Every key has a declared type and default.  Parsing validates each value
and the cross-field constraints the numerical modules rely on, so a bad
configuration fails at load with ``config-invalid`` rather than deep
inside a run.  ``serialize`` writes every key in schema order and is a
fixed point of ``parse``.
"""

import math
import os
from dataclasses import dataclass, field

from .errors import HartreeError

MODULE = "cli-io"
ENV_PREFIX = "HARTREE_"

INITIAL_KINDS = ("W", "wpm", "file")

# key -> (type, default); list types hold floats
SCHEMA = {
    "grid.d": (int, 5),
    "grid.r_min": (float, 1e-3),
    "grid.r_max": (float, 1000.0),
    "grid.n": (int, 1024),
    "grid.grading": (str, "geometric"),
    "physics.k": (int, 3),
    "physics.a": (float, 1.0),
    "physics.t0": (str, "auto"),
    "physics.virial_radii": (list, (10.0,)),
    "integrator.dt": (float, 1e-4),
    "integrator.T": (float, 1.0),
    "integrator.cadence": (int, 100),
    "integrator.direction": (int, 1),
    "initial.kind": (str, "W"),
    "initial.amplitude": (float, 1.0),
    "initial.theta": (float, 0.0),
    "initial.mu": (float, 1.0),
    "initial.file": (str, ""),
    "spectrum.oracles": (str, "block,pencil,sqrt"),
    "evolve.modulate": (bool, True),
    "evolve.decompose": (bool, False),
    "construct.evolve": (bool, False),
    "output.dir": (str, "out"),
    "run.seed": (int, 0),
    "run.threads": (int, 0),
}


def _convert(key: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        if kind is list:
            items = [t for t in text.replace(" ", "").split(",") if t]
            return tuple(float(t) for t in items)
        return text
    except ValueError:
        raise HartreeError(MODULE, "config-invalid", f"{key}: cannot read {text!r} as {kind.__name__}") from None


def _format(kind, value) -> str:
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    if kind is list:
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = dict(self.values)
        for key, text in overrides.items():
            if key not in SCHEMA:
                raise HartreeError(MODULE, "config-invalid", f"unknown key {key}")
            kind = SCHEMA[key][0]
            merged[key] = _convert(key, kind, text) if isinstance(text, str) and kind is not str else text
        cfg = RunConfig(merged)
        cfg.validate()
        return cfg

    def t0(self, e0: float) -> float:
        return 2.0 / e0 if self.values["physics.t0"] == "auto" else float(self.values["physics.t0"])

    def validate(self) -> None:
        v = self.values
        problems = []
        if v["grid.d"] < 5:
            problems.append("grid.d must be >= 5")
        if not 0 < v["grid.r_min"] < v["grid.r_max"]:
            problems.append("need 0 < grid.r_min < grid.r_max")
        if v["grid.n"] < 16:
            problems.append("grid.n must be >= 16")
        if v["grid.grading"] not in ("geometric", "uniform"):
            problems.append("grid.grading must be geometric or uniform")
        if v["physics.k"] < 1:
            problems.append("physics.k must be >= 1")
        if v["physics.t0"] != "auto":
            try:
                if not float(v["physics.t0"]) > 0:
                    problems.append("physics.t0 must be positive or auto")
            except ValueError:
                problems.append("physics.t0 must be a number or auto")
        if not v["physics.virial_radii"]:
            problems.append("physics.virial_radii is empty")
        for R in v["physics.virial_radii"]:
            if not v["grid.r_min"] < R <= 0.5 * v["grid.r_max"]:
                problems.append(f"virial radius {R} outside (r_min, r_max/2]")
        if not v["integrator.dt"] > 0:
            problems.append("integrator.dt must be positive")
        if not v["integrator.T"] >= v["integrator.dt"]:
            problems.append("integrator.T must be at least integrator.dt")
        if v["integrator.cadence"] < 1:
            problems.append("integrator.cadence must be >= 1")
        if v["integrator.direction"] not in (1, -1):
            problems.append("integrator.direction must be 1 or -1")
        if v["initial.kind"] not in INITIAL_KINDS:
            problems.append(f"initial.kind must be one of {', '.join(INITIAL_KINDS)}")
        if v["initial.kind"] == "file" and not v["initial.file"]:
            problems.append("initial.kind = file needs initial.file")
        if v["initial.kind"] == "wpm" and abs(v["physics.a"]) == 0:
            problems.append("initial.kind = wpm needs nonzero physics.a")
        if not v["initial.mu"] > 0:
            problems.append("initial.mu must be positive")
        bad = set(v["spectrum.oracles"].split(",")) - {"block", "pencil", "sqrt"}
        if bad or not v["spectrum.oracles"]:
            problems.append("spectrum.oracles must be a subset of block,pencil,sqrt")
        if not 0 <= v["run.seed"] < 2 ** 64:
            problems.append("run.seed must be an unsigned 64-bit integer")
        if v["run.threads"] < 0:
            problems.append("run.threads must be >= 0")
        if problems:
            raise HartreeError(MODULE, "config-invalid", "; ".join(problems))


def parse(text: str) -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HartreeError(MODULE, "config-invalid", f"line {lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise HartreeError(MODULE, "config-invalid", f"line {lineno}: unknown key {key}")
        if key in overrides:
            raise HartreeError(MODULE, "config-invalid", f"line {lineno}: duplicate key {key}")
        overrides[key] = value
    return RunConfig().with_overrides(overrides)


def serialize(config: RunConfig) -> str:
    return "".join(f"{key} = {_format(kind, config.values[key])}\n" for key, (kind, _) in SCHEMA.items())


def env_key(key: str) -> str:
    """grid.r_min -> HARTREE_GRID_R_MIN."""
    return ENV_PREFIX + key.replace(".", "_").upper()


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    known = {env_key(k): k for k in SCHEMA}
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            if name not in known:
                raise HartreeError(MODULE, "config-invalid", f"unknown environment override {name}")
            out[known[name]] = value
    return out


def load(path: str | None = None, environ=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then HARTREE_ variables, then explicit overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = parse(fh.read())
        except OSError as exc:
            raise HartreeError(MODULE, "config-invalid", f"cannot read {path}: {exc.strerror}") from None
    cfg = cfg.with_overrides(env_overrides(environ))
    return cfg.with_overrides(overrides or {})
