"""Run configuration: one flat ``key = value`` file for every command.

Keys are ``section.field``, e.g. ``match.T_init = 0.65`` or ``synth.grid = 256x256``.
Blank lines and ``#`` comments are ignored; unknown keys are an error.
Precedence is command-line flag > config file > built-in default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .matching import MatchConfig
from .synth import SynthConfig

FOREST_FORMATS = ("json-tree", "newick-attr")
MASK_FORMATS = ("text", "binary")


@dataclass
class OutputConfig:
    forest_format: str = "json-tree"
    mask_format: str = "text"
    window: tuple | None = None  # inclusive (first, last) frame for track metrics

    def __post_init__(self):
        if self.forest_format not in FOREST_FORMATS:
            raise ConfigError(f"forest_format must be one of {FOREST_FORMATS}")
        if self.mask_format not in MASK_FORMATS:
            raise ConfigError(f"mask_format must be one of {MASK_FORMATS}")
        if self.window is not None:
            a, b = self.window
            if a > b:
                raise ConfigError("window start must not exceed its end")


@dataclass
class RunConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_text(self) -> str:
        """Every effective setting, in the same syntax the parser reads."""
        lines = []
        for section in ("match", "synth", "output"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name} = {format_value(getattr(obj, f.name), f.name)}")
        return "\n".join(lines) + "\n"


def parse_window(text: str) -> tuple[int, int]:
    """``"A:B"`` -> ``(A, B)``, both inclusive."""
    try:
        a, b = text.split(":")
        out = (int(a), int(b))
    except ValueError:
        raise ConfigError(f"window must look like A:B, got {text!r}") from None
    if out[0] > out[1]:
        raise ConfigError(f"window start exceeds end in {text!r}")
    return out


def format_value(val, name: str = "") -> str:
    if name == "window" and val is not None:
        return f"{val[0]}:{val[1]}"
    if isinstance(val, bool):
        return "true" if val else "false"
    if val is None:
        return "none"
    if isinstance(val, tuple):
        if len(val) == 2 and all(isinstance(v, int) for v in val):
            return f"{val[0]}x{val[1]}"
        return ",".join(str(v) for v in val)
    return str(val)


def _convert(key: str, raw: str, default, name: str):
    raw = raw.strip()
    try:
        if name == "window":
            return None if raw.lower() in ("", "none") else parse_window(raw)
        if name == "grid":
            parts = raw.lower().replace(",", "x").split("x")
            if len(parts) != 2:
                raise ValueError
            return (int(parts[0]), int(parts[1]))
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


_SECTIONS = {"match": MatchConfig, "synth": SynthConfig, "output": OutputConfig}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from config-file text plus ``{"section.field": value}`` overrides.

    Override values may be strings (parsed like file values) or already typed.
    """
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    defaults = {s: {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
                    for f in dataclasses.fields(cls)} for s, cls in _SECTIONS.items()}

    def put(key, raw, where):
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in defaults[section]:
            raise ConfigError(f"{where}: unknown key {key!r}")
        default = defaults[section][name]
        values[section][name] = _convert(key, raw, default, name) if isinstance(raw, str) else raw

    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = line.split("=", 1)
        put(key.strip(), raw, f"line {n}")
    for key, raw in (overrides or {}).items():
        if raw is not None:
            put(key, raw, "override")

    try:
        return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})
    except TypeError as exc:  # pragma: no cover - guarded by the key check above
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    text = Path(path).read_text() if path is not None else ""
    return parse_config(text, overrides)
