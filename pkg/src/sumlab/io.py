"""Byte-deterministic CSV output, manifests and ``key=value`` config files."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

TIMESTAMP_FIELD = "timestamp"


class ConfigError(ValueError):
    """A config file or flag combination could not be used."""


def fmt(value) -> str:
    """Shortest round-trip text for a float; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool,)):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        return str(value)


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(files: dict) -> None:
    """Write ``{path: text}``; callers build every file before calling this."""
    for path, text in files.items():
        atomic_write(path, text)


def manifest_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "__dict__"):
        return vars(obj)
    return str(obj)


def read_manifest(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def manifests_equal(a, b) -> bool:
    """Compare manifest records while ignoring the timestamp field."""

    def strip(recs):
        return [{k: v for k, v in r.items() if k != TIMESTAMP_FIELD} for r in recs]

    return strip(read_manifest(a)) == strip(read_manifest(b))


def parse_config_text(text: str, known: dict, source: str = "config") -> dict:
    """Parse ``key = value`` lines; ``known`` maps keys to converters.

    Blank lines and ``#`` comments are skipped.  Errors name the line.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if value == "":
            out[key] = None
            continue
        try:
            out[key] = known[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r} ({exc})") from None
    return out


def config_text(values: dict) -> str:
    return "".join(f"{k}={fmt(v)}\n" for k, v in sorted(values.items()))
