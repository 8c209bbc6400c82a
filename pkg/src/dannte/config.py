"""Flat ``key = value`` run configuration.

Training keys are the :class:`~dannte.training.TrainConfig` field names
(``lambda`` is accepted for ``lam``). Generator keys carry a ``data.``
prefix (``data.delta = 2.5``). Blank lines and ``#`` comments are ignored;
unknown keys and unparsable values are errors naming the line.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .data import ShiftConfig
from .errors import DataError
from .training import TrainConfig

ALIASES = {"lambda": "lam", "batch-size": "batch_size", "lr": "learning_rate"}
DATA_PREFIX = "data."


def _types(cls) -> dict[str, type]:
    default = cls()
    return {f.name: type(getattr(default, f.name)) for f in fields(cls)}


def parse_value(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(text: str, origin: str = "<config>") -> tuple[dict, dict]:
    """Return ``(train_overrides, data_overrides)`` as typed dictionaries."""
    train_t, data_t = _types(TrainConfig), _types(ShiftConfig)
    train, data = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{origin}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith(DATA_PREFIX):
            name, table, out = key[len(DATA_PREFIX):], data_t, data
        else:
            name, table, out = ALIASES.get(key, key), train_t, train
        if name not in table:
            raise DataError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            out[name] = parse_value(raw, table[name])
        except ValueError as exc:
            raise DataError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
    return train, data


def load_config(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such config file")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def build(train_overrides: dict, data_overrides: dict) -> tuple[TrainConfig, ShiftConfig]:
    return replace(TrainConfig(), **train_overrides), replace(ShiftConfig(), **data_overrides)


def dump(cfg: TrainConfig, shift: ShiftConfig | None = None) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    if shift is not None:
        lines += [f"{DATA_PREFIX}{f.name} = {getattr(shift, f.name)}" for f in fields(shift)]
    return "\n".join(lines) + "\n"
