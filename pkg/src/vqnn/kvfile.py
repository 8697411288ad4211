"""Plain-text ``key=value`` files (calibration, checkpoint sidecars, CLI config)."""
from __future__ import annotations

import os
from typing import Mapping


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def write_kv(path: str | os.PathLike, values: Mapping[str, object], header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k}={format_value(v)}" for k, v in values.items()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())
