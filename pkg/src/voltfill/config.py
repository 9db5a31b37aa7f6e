"""Flat key=value config files, scenario/solver construction from them,
and the JSONL run log written by the command-line tools."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from .dmatrix import DataDriven, FixedPlacement, RandomSampling
from .mc import SolverConfig


class ConfigError(ValueError):
    """Malformed config file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def read_kv(text):
    """Parse flat `key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        out[key] = value.strip()
    return out


_REQUIRED = object()


def _take(kv, key, default=_REQUIRED, convert=str):
    if key not in kv:
        if default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return convert(kv.pop(key))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def _reject_leftovers(kv):
    if kv:
        raise ConfigError(f"unknown keys: {', '.join(sorted(kv))}")


def _code(value):
    value = value.strip().upper()
    if value not in ("0", "P", "M"):
        raise ValueError("must be one of 0, P, M")
    return value


def scenario_from_config(text):
    """Build an observation scenario from a config file body.

    kind = random     -> random quantity sampling (fraction = ...)
    kind = datadriven -> per-category sensing codes (solar/large/small)
    kind = fixed      -> explicit bus list (buses = 1,4,9 ...)
    """
    kv = read_kv(text)
    kind = _take(kv, "kind").lower()
    noise = _take(kv, "noise_pct", 1.0, float)
    pseudo = _take(kv, "pseudo_pct", 10.0, float)
    if kind == "random":
        scn = RandomSampling(fraction=_take(kv, "fraction", convert=float),
                             noise_pct=noise, pseudo_pct=pseudo)
    elif kind == "datadriven":
        scn = DataDriven(solar=_take(kv, "solar", "M", _code),
                         large=_take(kv, "large", "M", _code),
                         small=_take(kv, "small", "0", _code),
                         coverage_solar=_take(kv, "coverage_solar", 1.0, float),
                         coverage_large=_take(kv, "coverage_large", 1.0, float),
                         coverage_small=_take(kv, "coverage_small", 1.0, float),
                         noise_pct=noise, pseudo_pct=pseudo)
    elif kind == "fixed":
        buses = _take(kv, "buses",
                      convert=lambda s: tuple(int(t) for t in s.split(",")))
        scn = FixedPlacement(buses=buses, loss=_take(kv, "loss", 0.0, float),
                             noise_pct=noise, pseudo_pct=pseudo)
    else:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    _reject_leftovers(kv)
    return scn


def solver_from_config(text):
    """Build a SolverConfig from a config file body; delta accepts the
    literal 'auto' for the noise-calibrated default."""
    kv = read_kv(text)

    def _delta(raw):
        if raw.lower() == "auto":
            return None
        return float(raw)

    weights = {}
    for tag in ("ohm", "vlin", "vmag", "slack"):
        key = f"weight_{tag}"
        if key in kv:
            weights[tag] = _take(kv, key, convert=float)

    def _bool(raw):
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")

    cfg = SolverConfig(
        delta=_take(kv, "delta", None, _delta),
        weights=weights or None,
        residual_norm=_take(kv, "residual_norm", "l1", str).lower(),
        rho=_take(kv, "rho", 1.0, float),
        max_iter=_take(kv, "max_iter", 5000, int),
        tol_primal=_take(kv, "tol_primal", 1e-6, float),
        tol_dual=_take(kv, "tol_dual", 1e-6, float),
        standardize=_take(kv, "standardize", False, _bool),
    )
    _reject_leftovers(kv)
    return cfg


def config_digest(texts):
    """sha256 over the concatenated config bodies (order-sensitive)."""
    h = hashlib.sha256()
    for text in texts:
        h.update(text.encode())
        h.update(b"\x00")
    return h.hexdigest()


def append_run_log(path, command, digest, outputs, extra=None):
    """Append one JSON line describing a finished run."""
    record = {
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "command": command,
        "config_sha256": digest,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        record.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")
    return record
