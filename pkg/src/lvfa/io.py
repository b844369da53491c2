"""Spec-file loading and deterministic serialization."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import fields, is_dataclass
from pathlib import Path

import numpy as np

from .model import SupportSet, SystemSpec, make_spec

__all__ = ["SpecFileError", "load_spec_file", "spec_from_dict", "dumps", "atomic_write", "bundled_spec", "BUNDLED"]

SPEC_DIR = Path(__file__).parent / "specs"
BUNDLED = sorted(p.stem for p in SPEC_DIR.glob("*.json"))


class SpecFileError(ValueError):
    pass


def spec_from_dict(doc: dict, window=None, samples=None) -> tuple[SystemSpec, dict]:
    """Build a spec from a decoded spec document; returns ``(spec, extras)``.

    ``extras`` carries the optional ``witness`` and ``tolerances`` entries.
    """
    for key in ("a", "b"):
        if key not in doc:
            raise SpecFileError(f"missing field {key!r}")
    a, b = doc["a"], doc["b"]
    n = int(doc.get("n", len(a)))
    if len(a) != n or len(b) != n or any(len(row) != n for row in b):
        raise SpecFileError(f"array shapes do not match n={n}")
    win = window if window is not None else doc.get("window", (-200.0, 200.0))
    spec = make_spec(a, b, win, samples if samples is not None else doc.get("samples", 40001), doc.get("bounds"))
    extras = {"witness": doc.get("witness"), "tolerances": doc.get("tolerances") or {}, "name": doc.get("name")}
    return spec, extras


def load_spec_file(path, window=None, samples=None):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecFileError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SpecFileError(f"{path}: top level must be an object")
    return spec_from_dict(doc, window, samples)


def bundled_spec(name: str, window=None, samples=None):
    """One of the example systems shipped with the package (see ``BUNDLED``)."""
    path = SPEC_DIR / f"{name}.json"
    if not path.exists():
        raise KeyError(f"no bundled spec {name!r}; available: {BUNDLED}")
    return load_spec_file(path, window, samples)


# -- deterministic JSON ---------------------------------------------------------


def _plain(obj):
    if isinstance(obj, SupportSet):
        return obj.label()
    if hasattr(obj, "to_json"):
        return _plain(obj.to_json())
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _encode(x, indent, level) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        s = format(x, ".17g")
        if "e" not in s and "." not in s:
            s += ".0"
        return s
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=True)
    if isinstance(x, list):
        if not x:
            return "[]"
        if all(not isinstance(v, (list, dict)) for v in x):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in x) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in x) + "\n" + end + "]"
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [pad + json.dumps(k) + ": " + _encode(x[k], indent, level + 1) for k in sorted(x)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON with sorted keys and floats printed with 17 significant digits."""
    return _encode(_plain(obj), indent, 0) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
