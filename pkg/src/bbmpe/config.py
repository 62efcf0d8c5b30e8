"""Experiment configuration files: INI-style sections of ``key = value`` lines.

Example::

    [experiment]
    module = speed
    seed = 7
    out = results/speed

    [environment]
    preset = sinusoidal
    offset = 0.5
    amplitude = 0.25

    [offspring]
    preset = binary

    [speed]
    tol = 1e-6
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .environment import PeriodicRate
from .errors import ConfigError
from .offspring import OffspringLaw

MODULES = ("spectral", "speed", "simulate", "spine", "pde", "validate")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {"module": (str, "validate"), "seed": (int, 0), "out": (str, "results"), "threads": (int, 1)},
    "environment": {
        "preset": (str, "constant"), "value": (float, 0.5), "offset": (float, 0.5), "amplitude": (float, 0.25),
        "phase": (float, 0.0), "n": (int, 1024), "samples": (_floats, ()),
    },
    "offspring": {"preset": (str, "binary"), "probs": (_floats, ()), "b": (float, 3.5), "support": (int, 64)},
    "spectral": {"lambda": (float, 1.0), "n_grid": (int, 512)},
    "speed": {"tol": (float, 1e-6), "n_grid": (int, 512)},
    "simulate": {
        "start_x": (float, 0.0), "horizon": (float, 2.0), "dt": (float, 1.0), "max_particles": (int, 2_000_000),
        "n_replicates": (int, 1), "barrier_x": (_optional_float, None), "barrier_lambda": (_optional_float, None),
        "refine": (int, 8), "lambda": (_optional_float, None),
    },
    "spine": {
        "lambda": (_optional_float, None), "x0": (float, 0.0), "horizon": (float, 10.0), "dt": (float, 1e-3),
        "n_paths": (int, 100), "checkpoints": (_floats, ()),
    },
    "pde": {
        "T": (float, 40.0), "dt": (float, 1e-3), "points_per_unit": (int, 40), "initial": (str, "heaviside"),
        "lambda": (_optional_float, None), "record_step": (float, 0.25),
    },
    "validate": {"criteria": (_ints, tuple(range(1, 15)))},
}


def _emit_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed configuration. Each section is a plain ``dict`` of typed values, defaults filled in."""

    sections: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {}
        for name, keys in SCHEMA.items():
            given = dict(self.sections.get(name, {}))
            unknown = set(given) - set(keys)
            if unknown:
                raise ConfigError(f"unknown key in [{name}]", key=sorted(unknown)[0])
            full[name] = {k: given.get(k, default) for k, (_, default) in keys.items()}
        extra = set(self.sections) - set(SCHEMA)
        if extra:
            raise ConfigError(f"unknown section [{sorted(extra)[0]}]")
        object.__setattr__(self, "sections", full)
        if full["experiment"]["module"] not in MODULES:
            raise ConfigError(f"module must be one of {MODULES}", key="experiment.module")
        if not 0 <= full["experiment"]["seed"] < 2**64:
            raise ConfigError("seed must be a 64-bit non-negative integer", key="experiment.seed")

    def __getitem__(self, name) -> dict:
        return self.sections[name]

    @property
    def module(self) -> str:
        return self.sections["experiment"]["module"]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    def replace(self, section: str, **values) -> "ExperimentConfig":
        new = {k: dict(v) for k, v in self.sections.items()}
        new[section].update(values)
        return ExperimentConfig(new)

    def emit(self) -> str:
        lines = []
        for name, values in self.sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_emit_value(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.emit().encode()).hexdigest()

    def environment(self) -> PeriodicRate:
        e = self.sections["environment"]
        preset = e["preset"]
        try:
            if preset == "constant":
                return PeriodicRate.constant(e["value"])
            if preset == "sinusoidal":
                return PeriodicRate.sinusoidal(e["offset"], e["amplitude"], e["n"], e["phase"])
            if preset == "samples":
                return PeriodicRate(np.array(e["samples"]), label="samples")
        except ValueError as exc:
            raise ConfigError(str(exc), key="environment") from None
        raise ConfigError(f"unknown environment preset {preset!r}", key="environment.preset")

    def offspring(self) -> OffspringLaw:
        o = self.sections["offspring"]
        preset = o["preset"]
        try:
            if preset == "binary":
                return OffspringLaw.binary()
            if preset == "probs":
                return OffspringLaw.from_probs(o["probs"])
            if preset == "log_tail":
                return OffspringLaw.log_tail(o["b"], o["support"])
        except ValueError as exc:
            raise ConfigError(str(exc), key="offspring.probs") from None
        raise ConfigError(f"unknown offspring preset {preset!r}", key="offspring.preset")


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and "=" in line:
            if line.split("=", 1)[0].strip() == key:
                return i
    return None


def parse(text: str) -> ExperimentConfig:
    """Parse configuration text. Errors name the offending key and line."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc.message.splitlines()[0]}",
                          line=getattr(exc, "lineno", None)) from None
    sections = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]", line=_line_of(text, name, None))
        out = {}
        for key, raw in cp.items(name):
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key in [{name}]", key=f"{name}.{key}", line=_line_of(text, name, key))
            conv = SCHEMA[name][key][0]
            try:
                out[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"cannot parse value {raw!r}", key=f"{name}.{key}",
                                  line=_line_of(text, name, key)) from None
        sections[name] = out
    try:
        return ExperimentConfig(sections)
    except ConfigError as exc:
        if exc.key and exc.line is None and "." in exc.key:
            sec, k = exc.key.split(".", 1)
            raise ConfigError(exc.base_message, key=exc.key, line=_line_of(text, sec, k)) from None
        raise


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse(fh.read())
