"""Run configuration files, append-only metrics CSVs, and PGM export."""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ConfigError


class Config:
    """Dotted-key configuration: ``section.key = value`` lines, ``#`` comments.

    Typed accessors record every resolved value (including defaults) so a run
    can log its full effective configuration; unknown keys are rejected
    against the command's declared key set.
    """

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(values or {})
        self.resolved: dict[str, str] = {}

    @classmethod
    def parse(cls, text: str) -> "Config":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if not key or "." not in key:
                raise ConfigError(f"line {lineno}: key {key!r} must be dotted (section.key)")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key}")
            values[key] = val
        return cls(values)

    @classmethod
    def load(cls, path: str) -> "Config":
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read())

    def require_known(self, allowed) -> None:
        unknown = set(self.values) - set(allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def _get(self, key: str, default, cast):
        if key in self.values:
            raw = self.values[key]
            try:
                val = cast(raw)
            except ValueError as e:
                raise ConfigError(f"config key {key}: cannot parse {raw!r}") from e
        else:
            val = default
        self.resolved[key] = str(val)
        return val

    def get_int(self, key: str, default: int) -> int:
        return self._get(key, default, int)

    def get_float(self, key: str, default: float) -> float:
        return self._get(key, default, float)

    def get_str(self, key: str, default: str) -> str:
        return self._get(key, default, str)

    def get_bool(self, key: str, default: bool) -> bool:
        def cast(raw: str) -> bool:
            low = raw.lower()
            if low in ("1", "true", "yes"):
                return True
            if low in ("0", "false", "no"):
                return False
            raise ValueError(raw)

        return self._get(key, default, cast)

    def dump_resolved(self) -> str:
        lines = [f"{k} = {v}" for k, v in sorted(self.resolved.items())]
        return "\n".join(lines) + "\n"


class MetricsLog:
    """Append-only CSV with a fixed column set; rejects non-finite numbers."""

    def __init__(self, path: str, columns: list[str]):
        self.path = path
        self.columns = list(columns)
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w", encoding="utf-8") as f:
                f.write(",".join(self.columns) + "\n")

    def append(self, row: dict) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise ConfigError(f"metrics row missing columns {sorted(missing)}")
        cells = []
        for col in self.columns:
            val = row[col]
            if isinstance(val, (int, np.integer)):
                cells.append(str(int(val)))
            elif isinstance(val, (float, np.floating)):
                if not math.isfinite(float(val)):
                    raise ConfigError(f"metrics column {col} is not finite: {val}")
                cells.append(repr(float(val)))
            else:
                cells.append(str(val))
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(",".join(cells) + "\n")


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary P5 export of a 2D u8 image."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ConfigError(f"PGM export needs a 2D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0 if img.max() <= 1.5 else img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM file")
    w, h = (int(tok) for tok in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
