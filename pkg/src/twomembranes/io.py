"""CSV/JSON serialization of fields, masks and solution pairs.

A field file lists the non-Exterior nodes in row-major lattice order as
``x[,y],value`` under a one-line header; values use 17 significant digits, so
reading a file back reproduces the doubles bit for bit. The JSON sidecar
``<stem>.meta.json`` records the domain needed to rebuild the lattice.
"""

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import Field, build_domain

__all__ = [
    "write_field", "read_field", "write_mask", "read_mask", "sidecar_path",
    "write_pair", "read_pair", "dump_json",
]


def _fmt(x):
    return f"{x:.17g}"


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def dump_json(obj, path):
    """Write JSON with sorted keys and a trailing newline (stable bytes for equal inputs)."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    Path(path).write_text(text)


def _header(dim, column):
    return (["x"] if dim == 1 else ["x", "y"]) + [column]


def _write_rows(path, dom, values, column, fmt):
    act = dom.active
    pts = dom.points[act]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_header(dom.dim, column))
        for p, val in zip(pts, values[act]):
            wr.writerow([_fmt(c) for c in p] + [fmt(val)])
    meta = dom.metadata()
    meta["column"] = column
    dump_json(meta, sidecar_path(path))


def write_field(field, path, column="value"):
    _write_rows(path, field.domain, field.flat, column, _fmt)


def write_mask(domain, mask, path, column="contact"):
    flat = np.asarray(mask, dtype=bool).ravel()
    _write_rows(path, domain, flat, column, lambda b: "1" if b else "0")


def _read_rows(path):
    path = Path(path)
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise ConfigurationError(f"missing metadata sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    try:
        dom = build_domain(int(meta["dim"]), meta["shape"], int(meta["n"]), int(meta["width"]))
    except KeyError as exc:
        raise ConfigurationError(f"{meta_path}: missing key {exc}") from None
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:dom.dim] != _header(dom.dim, "")[:dom.dim]:
        raise ConfigurationError(f"{path}: unexpected header {rows[:1]}")
    body = rows[1:]
    act = dom.active
    if len(body) != act.size:
        raise ConfigurationError(
            f"{path}: expected {act.size} rows for the recorded domain, found {len(body)}")
    data = np.array([[float(c) for c in r] for r in body]) if body else np.zeros((0, dom.dim + 1))
    if not np.allclose(data[:, :dom.dim], dom.points[act], rtol=0, atol=1e-12):
        raise ConfigurationError(f"{path}: node coordinates do not match the recorded domain")
    return dom, data[:, dom.dim]


def read_field(path):
    dom, vals = _read_rows(path)
    flat = np.full(dom.size, np.nan)
    flat[dom.active] = vals
    return Field(dom, flat)


def read_mask(path):
    dom, vals = _read_rows(path)
    flat = np.zeros(dom.size, dtype=bool)
    flat[dom.active] = vals != 0
    return dom, flat.reshape(dom.lattice_shape)


def write_pair(pair, out_dir, report=None):
    """u.csv, v.csv, contact.csv (+ sidecars) and, if given, report.json."""
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    dom = pair.u.domain
    write_field(pair.u, out / "u.csv", "u")
    write_field(pair.v, out / "v.csv", "v")
    write_mask(dom, pair.contact_mask, out / "contact.csv")
    if report is not None:
        dump_json(report, out / "report.json")


def read_pair(fields_dir):
    """(u, v, contact_mask) as written by write_pair."""
    d = Path(fields_dir)
    for name in ("u.csv", "v.csv", "contact.csv"):
        if not (d / name).exists():
            raise ConfigurationError(f"{d}: missing {name}")
    u = read_field(d / "u.csv")
    v = read_field(d / "v.csv")
    dom, mask = read_mask(d / "contact.csv")
    if v.domain.metadata() != u.domain.metadata() or dom.metadata() != u.domain.metadata():
        raise ConfigurationError(f"{d}: fields were written on different domains")
    return u, v, mask
