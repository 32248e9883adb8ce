"""Matrix files and CSV tables.

Matrix file layout (little endian): the 6-byte magic ``LRMAT1``, rows and
columns as unsigned 64-bit integers, then the entries as float64 in
column-major order.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import LatredError

MAGIC = b"LRMAT1"
_HEADER = struct.Struct("<6sQQ")


def write_matrix(path, M) -> None:
    M = np.asarray(M, dtype="<f8")
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols))
        fh.write(np.asfortranarray(M).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LatredError(f"{path}: truncated matrix header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise LatredError(f"{path}: not an LRMAT1 file")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise LatredError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return flat.reshape((rows, cols), order="F").astype(float)


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"c{j}" for j in range(M.shape[1])])
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> None:
    """RFC 4180 CSV with a fixed header row; ``rows`` are dicts, missing keys stay empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


LOADDEFL_HEADER = ["increment", "load_factor", "deflection", "max_damage", "newton_iters",
                   "control_bar", "n_c", "n_f", "cg_iterations", "corrections"]
METRICS_HEADER = ["record", "increment", "newton_iter", "system", "cg_iter", "residual",
                  "unaugmented_iterations", "direct", "pre_residual", "post_residual", "krylov_iterations"]


def history_rows(history):
    for r in history.records:
        yield dict(increment=r.increment, load_factor=r.load_factor, deflection=r.deflection,
                   max_damage=float(r.state.d.max()), newton_iters=r.newton_iters,
                   control_bar=r.control_bar, n_c=r.n_c, n_f=r.n_f,
                   cg_iterations=r.cg_iterations, corrections=r.corrections)


def metrics_rows(history):
    for m in history.metrics:
        for j, res in enumerate(m["residual_history"]):
            yield dict(record="cg", increment=m["increment"], newton_iter=m["newton_iter"],
                       system=m["system"], cg_iter=j, residual=res,
                       unaugmented_iterations=m.get("unaugmented_iterations") if j == 0 else None,
                       direct=m.get("direct") if j == 0 else None)
    for c in history.corrections:
        yield dict(record="correction", increment=c.increment, newton_iter=c.newton_iter,
                   residual=c.reduced_residual, pre_residual=c.pre_residual,
                   post_residual=c.post_residual, krylov_iterations=c.krylov_iterations)


def write_history(out_dir, history) -> None:
    out = Path(out_dir)
    write_table(out / "loaddefl.csv", LOADDEFL_HEADER, history_rows(history))
    write_table(out / "metrics.csv", METRICS_HEADER, metrics_rows(history))


def read_loaddefl(path):
    rows = read_table(path)
    return (np.array([float(r["load_factor"]) for r in rows]),
            np.array([float(r["deflection"]) for r in rows]), rows)
