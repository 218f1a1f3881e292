"""Scenario configuration: TOML file, environment overrides, ``KEY=VALUE`` overrides.

Precedence, lowest first: built-in defaults, config file, ``SLICECHAIN_*``
environment variables, command-line overrides. Nested fields use dotted
keys (``consensus.service``, ``consensus.net.latency_max``); in environment
variable names the dot becomes a double underscore, e.g.
``SLICECHAIN_CONSENSUS__BATCH_SIZE=20``.
"""

from __future__ import annotations

import re
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ordering import OrdererConfig
from .sim import NetworkModel
from .workload import ScenarioConfig

ENV_PREFIX = "SLICECHAIN_"

_SECTIONS = {
    "": ScenarioConfig,
    "consensus": OrdererConfig,
    "consensus.net": NetworkModel,
}


class ConfigError(Exception):
    """Invalid configuration; ``where`` is ``path:line`` when known."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def known_keys() -> list[str]:
    keys = []
    for prefix, cls in _SECTIONS.items():
        for f in fields(cls):
            dotted = f"{prefix}.{f.name}" if prefix else f.name
            if dotted not in _SECTIONS:
                keys.append(dotted)
    return keys


def parse_value(text: str) -> Any:
    """Interpret an override value: a TOML literal, a comma list, or a bare string."""
    text = text.strip()
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        pass
    if "," in text:
        return [parse_value(part) for part in text.split(",")]
    return text


def set_dotted(data: dict, key: str, value: Any) -> None:
    if key not in known_keys():
        raise ConfigError(f"unknown setting {key!r}")
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{part!r} is not a table")
    node[parts[-1]] = value


def _flatten(data: Mapping, prefix: str = "") -> Iterable[tuple[str, Any]]:
    for k, v in data.items():
        dotted = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict) and dotted in _SECTIONS:
            yield from _flatten(v, dotted)
        else:
            yield dotted, v


def _key_lines(text: str) -> dict[str, int]:
    """Map dotted keys to the line that sets them (for diagnostics)."""
    lines: dict[str, int] = {}
    table = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.\s]+?)\s*\]$", line)
        if m:
            table = m.group(1).replace(" ", "")
            lines.setdefault(table, lineno)
            continue
        m = re.match(r"^([A-Za-z0-9_.]+)\s*=", line)
        if m:
            lines[f"{table}.{m.group(1)}" if table else m.group(1)] = lineno
    return lines


def load_file(path: str | Path) -> tuple[dict, dict[str, int]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", str(path)) from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc}", f"{path}:{line}" if line else str(path)) from None
    lines = _key_lines(text)
    valid = set(known_keys())
    for dotted, _ in _flatten(data):
        if dotted not in valid:
            where = f"{path}:{lines[dotted]}" if dotted in lines else str(path)
            raise ConfigError(f"unknown setting {dotted!r}", where)
    return data, lines


def env_overrides(environ: Mapping[str, str]) -> list[tuple[str, str]]:
    out = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((key, environ[name]))
    return out


def build_config(
    path: str | Path | None = None,
    overrides: Iterable[tuple[str, Any]] = (),
    environ: Mapping[str, str] | None = None,
) -> ScenarioConfig:
    """Assemble and validate a ScenarioConfig; raises ConfigError on any problem."""
    data: dict = {}
    lines: dict[str, int] = {}
    if path is not None:
        data, lines = load_file(path)
    for key, raw in env_overrides(environ or {}):
        try:
            set_dotted(data, key, parse_value(raw))
        except ConfigError as exc:
            raise ConfigError(str(exc), f"env {ENV_PREFIX}{key.upper().replace('.', '__')}") from None
    for key, value in overrides:
        try:
            set_dotted(data, key, parse_value(value) if isinstance(value, str) else value)
        except ConfigError as exc:
            raise ConfigError(str(exc), f"--set {key}") from None
    try:
        return ScenarioConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), _blame(str(exc), path, lines)) from None


def _blame(message: str, path, lines: dict[str, int]) -> str | None:
    if path is None:
        return None
    for key in sorted(lines, key=len, reverse=True):
        if key.split(".")[-1] in message:
            return f"{path}:{lines[key]}"
    return str(path)


def render_toml(cfg: ScenarioConfig) -> str:
    """Serialize a config back to the file format (every field, explicit)."""
    d = cfg.to_dict()

    def fmt(v: Any) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if v is None:
            raise ValueError("TOML has no null")
        return repr(v)

    out = []
    consensus = d.pop("consensus")
    net = consensus.pop("net")
    out += [f"{k} = {fmt(v)}" for k, v in d.items()]
    out += ["", "[consensus]"]
    out += [f"{k} = {fmt(v)}" for k, v in consensus.items() if v is not None]
    out += ["", "[consensus.net]"]
    out += [f"{k} = {fmt(v)}" for k, v in net.items()]
    return "\n".join(out) + "\n"
