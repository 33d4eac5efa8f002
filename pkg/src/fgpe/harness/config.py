"""Scenario documents: TOML in, TOML out.

Every dataclass field of :class:`~fgpe.sim.Scenario` maps to a key of the same
name; nested specs are tables and lists of specs are arrays of tables.  Poses
are written ``[x, y, theta]``, points ``[x, y]``.  TOML has no null, so an
optional field that is switched off is spelled ``"none"``.  Omitted keys keep
their defaults and unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import re
import types
import typing
from enum import Enum

import tomli
import tomli_w

from fgpe.geometry import Point2, Pose2
from fgpe.sim import Scenario, ValidationError
from fgpe.pursuit import FgpeConfig

__all__ = ["ParseError", "ValidationError", "parse_scenario", "serialize_scenario", "load_scenario"]

NONE = "none"

# derived fields the scenario keeps in sync itself
_SKIP = {(FgpeConfig, "weights")}


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}" if line else message)
        self.message = message
        self.line = line
        self.column = column


class _UnknownKey(Exception):
    def __init__(self, path: str):
        self.path = path


def parse_scenario(text: str) -> Scenario:
    """Build a scenario from a TOML document; raises ParseError or ValidationError."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"\(at line (\d+), column (\d+)\)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
        raise ParseError(str(exc).split(" (at line")[0], line, col) from None
    try:
        return _decode(doc, Scenario, "")
    except _UnknownKey as exc:
        line, col = _locate(text, exc.path)
        raise ParseError(f"unknown key '{exc.path}'", line, col) from None


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def serialize_scenario(sc: Scenario) -> str:
    """Every field written out explicitly, so the document does not depend on defaults."""
    return tomli_w.dumps(_encode(sc))


def _locate(text: str, path: str) -> tuple[int, int]:
    key = path.rsplit(".", 1)[-1]
    pat = re.compile(rf"^(\s*)({re.escape(key)})\s*=|^\s*\[+\s*([\w.]*\.)?({re.escape(key)})\s*\]")
    for n, line in enumerate(text.splitlines(), 1):
        m = pat.search(line)
        if m:
            return n, (m.start(2) if m.group(2) else m.start(4)) + 1
    return 0, 0


# ------------------------------------------------------------------ codec


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _fields(cls):
    return [f for f in dataclasses.fields(cls) if (cls, f.name) not in _SKIP]


def _encode(value):
    if value is None:
        return NONE
    if isinstance(value, Pose2):
        return [float(value.x), float(value.y), float(value.theta)]
    if isinstance(value, Point2):
        return [float(value.x), float(value.y)]
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value):
        return {f.name: _encode(getattr(value, f.name)) for f in _fields(type(value))}
    if isinstance(value, (tuple, list)):
        return [_encode(v) for v in value]
    if isinstance(value, float):
        return float(value)
    return value


def _type_error(path: str, expected: str, raw) -> ValidationError:
    return ValidationError(f"{path or 'document'} must be {expected}, got {raw!r}")


def _decode(raw, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        if raw == NONE and len(inner) < len(args):
            return None
        return _decode(raw, inner[0], path)
    if hint is bool:
        if not isinstance(raw, bool):
            raise _type_error(path, "true or false", raw)
        return raw
    if hint is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise _type_error(path, "an integer", raw)
        return raw
    if hint is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise _type_error(path, "a number", raw)
        return float(raw)
    if hint is str:
        if not isinstance(raw, str):
            raise _type_error(path, "a string", raw)
        return raw
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(raw)
        except ValueError:
            allowed = ", ".join(m.value for m in hint)
            raise _type_error(path, f"one of {{{allowed}}}", raw) from None
    if hint in (Pose2, Point2):
        n = 3 if hint is Pose2 else 2
        ok = isinstance(raw, list) and len(raw) in ((2, 3) if hint is Pose2 else (2,))
        if not ok or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
            raise _type_error(path, f"a list of {n} numbers", raw)
        try:
            return hint(*map(float, raw))
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    if origin is tuple:
        if not isinstance(raw, list):
            raise _type_error(path, "a list", raw)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_decode(v, args[0], f"{path}[{i}]") for i, v in enumerate(raw))
        if len(raw) != len(args):
            raise _type_error(path, f"a list of {len(args)} values", raw)
        return tuple(_decode(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(raw, args)))
    if dataclasses.is_dataclass(hint):
        if not isinstance(raw, dict):
            raise _type_error(path, "a table", raw)
        hints = _hints(hint)
        names = {f.name for f in _fields(hint)}
        for k in raw:
            if k not in names:
                raise _UnknownKey(f"{path}.{k}" if path else k)
        kw = {k: _decode(v, hints[k], f"{path}.{k}" if path else k) for k, v in raw.items()}
        try:
            return hint(**kw)
        except ValidationError:
            raise
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"{path or 'scenario'}: {exc}") from None
    raise TypeError(f"no codec for {hint!r} at {path}")
