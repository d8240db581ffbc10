"""Human-readable key-value configuration files.

One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
skipped. Values stay strings until a typed getter coerces them.
"""

from __future__ import annotations

from pathlib import Path

from .errors import InputError


class Config:
    def __init__(self, values: dict[str, str], source: str = "<memory>") -> None:
        self.values = values
        self.source = source

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default=None) -> str:
        return self.values.get(key, default)

    def _require(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        raise InputError(f"{self.source}: missing required key {key!r}")

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self._require(key, default)
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise InputError(f"{self.source}: key {key!r} is not an integer: {raw!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self._require(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise InputError(f"{self.source}: key {key!r} is not a number: {raw!r}") from None

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        raw = self._require(key, default)
        if isinstance(raw, bool):
            return raw
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{self.source}: key {key!r} is not a boolean: {raw!r}")

    def get_floats(self, key: str, default=None) -> tuple[float, ...]:
        raw = self._require(key, default)
        if isinstance(raw, tuple):
            return raw
        try:
            return tuple(float(v) for v in str(raw).replace(",", " ").split())
        except ValueError:
            raise InputError(f"{self.source}: key {key!r} is not a number list: {raw!r}") from None


def parse_config_text(text: str, source: str = "<memory>") -> Config:
    values: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InputError(f"{source}:{line_no}: expected 'key = value', got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise InputError(f"{source}:{line_no}: empty key")
        values[key] = value.strip()
    return Config(values, source)


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
