"""File formats: pulse JSON, ECD parameter JSON, metrics / trace / Wigner CSV.

Every file carries the toolkit version and the hash of the config that
produced it: CSVs in a leading ``#`` comment line, JSON files under ``meta``.
Floats are written with 17 significant digits so they round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import PulseSet

SIG17 = "{:.17g}"


class FormatError(ValueError):
    """Malformed artifact file; the message names the field or byte offset."""


def header_line(config_hash: str | None) -> str:
    return f"# qrlfd {__version__} config_hash={config_hash or 'none'}"


def _meta(config_hash):
    return {"version": __version__, "config_hash": config_hash or "none"}


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    return SIG17.format(x)


# --- pulses ------------------------------------------------------------------------

def pulses_to_json(pulses: PulseSet, config_hash: str | None = None) -> str:
    # hand-rolled so every float gets 17 significant digits regardless of json defaults
    chans = ",\n".join(
        '    {"label": %s, "values": [%s]}' % (json.dumps(label), ", ".join(SIG17.format(v) for v in row))
        for label, row in zip(pulses.labels, pulses.values)
    )
    meta = json.dumps(_meta(config_hash))
    return '{\n  "meta": %s,\n  "dt_ns": %s,\n  "channels": [\n%s\n  ]\n}\n' % (meta, SIG17.format(pulses.dt), chans)


def save_pulses(path, pulses: PulseSet, config_hash: str | None = None) -> None:
    Path(path).write_text(pulses_to_json(pulses, config_hash))


def _parse_json(text: str, where: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{where}: malformed JSON at byte offset {len(text[: e.pos].encode())} "
                          f"(line {e.lineno}, column {e.colno}): {e.msg}") from None


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise FormatError(f"{where}: field {key!r} has the wrong type ({type(val).__name__})")
    return val


def pulses_from_json(text: str, where: str = "<string>") -> PulseSet:
    doc = _parse_json(text, where)
    dt = _require(doc, "dt_ns", where, (int, float))
    chans = _require(doc, "channels", where, list)
    if not chans:
        raise FormatError(f"{where}: field 'channels' is empty")
    labels, rows = [], []
    for k, ch in enumerate(chans):
        labels.append(str(_require(ch, "label", f"{where}: channels[{k}]", str)))
        vals = _require(ch, "values", f"{where}: channels[{k}]", list)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            raise FormatError(f"{where}: channels[{k}].values must hold numbers")
        rows.append(vals)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise FormatError(f"{where}: channel length mismatch, lengths {[len(r) for r in rows]}")
    if dt <= 0:
        raise FormatError(f"{where}: field 'dt_ns' must be positive")
    return PulseSet(float(dt), tuple(labels), np.array(rows, dtype=float))


def load_pulses(path) -> PulseSet:
    return pulses_from_json(Path(path).read_text(), str(path))


# --- ECD parameters --------------------------------------------------------------------

def save_ecd_params(path, params, config_hash: str | None = None) -> None:
    body = {k: [float(SIG17.format(v)) for v in vals] for k, vals in params.as_dict().items()}
    Path(path).write_text(json.dumps({"meta": _meta(config_hash), "depth": params.depth, **body}, indent=1))


def load_ecd_params(path):
    from .env import EcdCircuitParams

    doc = _parse_json(Path(path).read_text(), str(path))
    arrays = [_require(doc, k, str(path), list) for k in ("beta_re", "beta_im", "phi", "theta")]
    try:
        return EcdCircuitParams(*arrays)
    except Exception as e:  # depth mismatch between arrays
        raise FormatError(f"{path}: {e}") from None


# --- CSV ------------------------------------------------------------------------------

def rows_to_csv(rows: list[dict], columns: list[str], config_hash: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(header_line(config_hash) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_num(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns: list[str], config_hash: str | None = None) -> None:
    Path(path).write_text(rows_to_csv(rows, columns, config_hash))


def read_csv(path) -> list[dict]:
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    reader = csv.DictReader(lines)
    return [{k: float(v) for k, v in row.items()} for row in reader]


def write_wigner_csv(path, xs, ps, w, config_hash: str | None = None) -> None:
    """One (x, p, W) row per grid point; ``w[i, j]`` belongs to (xs[j], ps[i])."""
    rows = [{"x": x, "p": p, "W": w[i, j]} for i, p in enumerate(ps) for j, x in enumerate(xs)]
    write_csv(path, rows, ["x", "p", "W"], config_hash)


def write_json(path, doc: dict, config_hash: str | None = None) -> None:
    Path(path).write_text(json.dumps({"meta": _meta(config_hash), **doc}, indent=1, sort_keys=True))
