"""SFLD1 / SCOF1 binary files, flat key=value configs and small ASCII sidecars."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

import numpy as np

from .errors import ConfigError


class FormatError(OSError):
    """Malformed or unreadable data file."""


def _parse_header(line: bytes, magic: str) -> dict[str, str]:
    parts = line.decode("ascii").split()
    if not parts or parts[0] != magic:
        raise FormatError(f"expected {magic} header, got {line[:40]!r}")
    return dict(p.split("=", 1) for p in parts[1:])


def _write(path, header: str, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read(path, magic: str) -> tuple[dict[str, str], np.ndarray]:
    try:
        with open(path, "rb") as fh:
            head = _parse_header(fh.readline(), magic)
            data = np.frombuffer(fh.read(), dtype="<f8")
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return head, data


def write_fields(path, fields: np.ndarray, K: int) -> None:
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    if fields.shape[1] != 2 * K * K:
        raise ValueError(f"fields have {fields.shape[1]} points, grid K={K} needs {2 * K * K}")
    _write(path, f"SFLD1 K={K} T={fields.shape[0]} layout=theta-major dtype=f64le", fields)


def read_fields(path) -> tuple[np.ndarray, int]:
    """Return ``(fields[T, 2K^2], K)``."""
    head, data = _read(path, "SFLD1")
    K, T = int(head["K"]), int(head["T"])
    if data.size != T * 2 * K * K:
        raise FormatError(f"{path}: expected {T * 2 * K * K} values, found {data.size}")
    return data.reshape(T, 2 * K * K).copy(), K


def write_coeffs(path, coeffs: np.ndarray, L: int) -> None:
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if coeffs.shape[1] != (L + 1) ** 2:
        raise ValueError(f"coefficient rows have length {coeffs.shape[1]}, L={L} needs {(L + 1) ** 2}")
    _write(path, f"SCOF1 L={L} T={coeffs.shape[0]} dtype=f64le", coeffs)


def read_coeffs(path) -> tuple[np.ndarray, int]:
    head, data = _read(path, "SCOF1")
    L, T = int(head["L"]), int(head["T"])
    if data.size != T * (L + 1) ** 2:
        raise FormatError(f"{path}: expected {T * (L + 1) ** 2} values, found {data.size}")
    return data.reshape(T, (L + 1) ** 2).copy(), L


def write_sidecar(path, **values) -> None:
    """ASCII ``key=value`` lines; arrays are written comma-separated with full precision."""
    lines = []
    for k, v in values.items():
        if isinstance(v, (np.ndarray, list, tuple)):
            v = ",".join(repr(float(x)) for x in np.ravel(v))
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"{path}:{n}: duplicate key {k!r}")
        out[k] = v
    return out


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Literal:
        if value not in typing.get_args(tp):
            raise ConfigError(f"{key}: {value!r} not in {typing.get_args(tp)}")
        return value
    if origin in (tuple, list):
        (inner, *_) = typing.get_args(tp)
        return tuple(_coerce(v.strip(), inner, key) for v in value.split(",") if v.strip())
    try:
        if tp is bool:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {tp.__name__}") from exc
    return value


def load_dataclass(cls, path=None, values: dict[str, str] | None = None):
    """Instantiate ``cls`` from a flat key=value file; unknown keys raise ConfigError."""
    kv = dict(values or {})
    if path is not None:
        kv = {**read_kv(path), **kv}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(kv) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in kv.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_dataclass(obj, path) -> None:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    Path(path).write_text("\n".join(lines) + "\n")
