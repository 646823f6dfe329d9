"""File formats: long-format CSV datasets, summary tables, draw containers.

All human-facing outputs are CSV with 17-significant-digit floats, which
round-trip float64 exactly.  Posterior draws are persisted in a versioned
binary container (magic bytes, semantic version, JSON header, little-endian
float64 records) because draw sets are large.  Writes go through a
write-temp-then-rename helper so readers never observe partial files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import FunctionalDataset, ModelState, SubjectRecord
from .sampler import ChainFailure, PosteriorDraws

__all__ = [
    "FormatError",
    "VersionError",
    "HashMismatchError",
    "load_dataset",
    "save_dataset",
    "dataset_hash",
    "write_draws",
    "read_draws",
    "write_summary",
    "write_report_rows",
    "atomic_write_text",
]

MAGIC = b"FFACDRW\x00"
FORMAT_VERSION = (1, 0)

# per-draw fields in serialization order; shapes derive from the dim header
_STATE_FIELDS = (
    "Theta", "Lambda", "Gamma", "eta", "Sigma_diag", "H_diag", "phi2",
    "beta", "omega", "rho1", "rho2", "delta1", "delta2", "tau1", "tau2",
    "a11", "a12", "a21", "a22",
)


class FormatError(ValueError):
    """Malformed input file."""


class VersionError(RuntimeError):
    """Draw container written by an incompatible format version."""


class HashMismatchError(RuntimeError):
    """Dataset content does not match the digest recorded at fit time."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write a text file via a temp file + rename in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------------------
# long-format dataset CSV


def load_dataset(path) -> FunctionalDataset:
    """Read a long-format CSV: header subject,s,t,value[,x1..xd].

    Assembles the union grid across subjects; absent cells are masked as
    missing.  Raises FormatError (with the offending line number) for
    duplicate (subject, s, t) keys, covariates varying within a subject, or
    non-numeric fields.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:4] != ["subject", "s", "t", "value"]:
            raise FormatError(
                f"{path}: header must start with subject,s,t,value, got {header[:4]}")
        x_cols = header[4:]
        for j, name in enumerate(x_cols, start=1):
            if name != f"x{j}":
                raise FormatError(f"{path}: covariate columns must be x1..xd, got {name!r}")
        d = len(x_cols)

        cells: dict[str, dict[tuple[float, float], float]] = {}
        covars: dict[str, tuple] = {}
        order: list[str] = []
        s_vals: set[float] = set()
        t_vals: set[float] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4 + d:
                raise FormatError(f"{path}:{lineno}: expected {4 + d} fields, got {len(row)}")
            sid = row[0].strip()
            try:
                s = float(row[1])
                t = float(row[2])
                value = float(row[3])
                x = tuple(float(c) for c in row[4:])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if sid not in cells:
                cells[sid] = {}
                covars[sid] = x
                order.append(sid)
            elif covars[sid] != x:
                raise FormatError(
                    f"{path}:{lineno}: covariates vary within subject {sid!r}")
            if (s, t) in cells[sid]:
                raise FormatError(
                    f"{path}:{lineno}: duplicate key ({sid!r}, {_fmt(s)}, {_fmt(t)})")
            cells[sid][(s, t)] = value
            s_vals.add(s)
            t_vals.add(t)

    if not order:
        raise FormatError(f"{path}: no data rows")
    s_grid = np.array(sorted(s_vals))
    t_grid = np.array(sorted(t_vals))
    s_index = {v: i for i, v in enumerate(s_grid)}
    t_index = {v: i for i, v in enumerate(t_grid)}
    subjects = []
    for sid in order:
        y = np.zeros((s_grid.size, t_grid.size))
        mask = np.zeros((s_grid.size, t_grid.size), dtype=bool)
        for (s, t), value in cells[sid].items():
            y[s_index[s], t_index[t]] = value
            mask[s_index[s], t_index[t]] = True
        subjects.append(SubjectRecord(y=y, mask=mask, x=np.array(covars[sid]),
                                      subject_id=sid))
    return FunctionalDataset(subjects=subjects, s_grid=s_grid, t_grid=t_grid, d=d)


def save_dataset(data: FunctionalDataset, path) -> None:
    """Write the canonical long-format CSV (observed cells only, sorted)."""
    lines = []
    header = ["subject", "s", "t", "value"] + [f"x{j + 1}" for j in range(data.d)]
    lines.append(",".join(header))
    for rec in data.subjects:
        xs = [_fmt(v) for v in rec.x]
        for i, s in enumerate(data.s_grid):
            for j, t in enumerate(data.t_grid):
                if rec.mask[i, j]:
                    lines.append(",".join(
                        [rec.subject_id, _fmt(s), _fmt(t), _fmt(rec.y[i, j])] + xs))
    atomic_write_text(path, "\n".join(lines) + "\n")


def dataset_hash(data: FunctionalDataset) -> str:
    """Content digest of grids, ids, covariates and observed cells."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.s_grid).tobytes())
    h.update(np.ascontiguousarray(data.t_grid).tobytes())
    for rec in data.subjects:
        h.update(rec.subject_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(np.ascontiguousarray(rec.x).tobytes())
        h.update(np.ascontiguousarray(rec.mask).tobytes())
        h.update(np.ascontiguousarray(np.where(rec.mask, rec.y, 0.0)).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# draw container


def _field_shapes(dims: dict) -> dict[str, tuple[int, ...]]:
    p1, p2, q1, q2 = dims["p1"], dims["p2"], dims["q1"], dims["q2"]
    n, d = dims["n"], dims["d"]
    return {
        "Theta": (n, p1, p2), "Lambda": (p1, q1), "Gamma": (p2, q2),
        "eta": (n, q1, q2), "Sigma_diag": (p1 * p2,), "H_diag": (q1 * q2,),
        "phi2": (), "beta": (d, q1 * q2), "omega": (d, q1 * q2),
        "rho1": (p1, q1), "rho2": (p2, q2), "delta1": (q1,), "delta2": (q2,),
        "tau1": (q1,), "tau2": (q2,), "a11": (), "a12": (), "a21": (), "a22": (),
    }


def write_draws(path, draws: PosteriorDraws, meta: dict) -> None:
    """Persist draws to the versioned binary container.

    ``meta`` must at least identify the model: basis configs, grids, chain
    configuration, seed, and the dataset hash; it is stored verbatim in the
    JSON header.
    """
    if not draws.states:
        raise ValueError("cannot persist an empty draw set")
    first = draws.states[0]
    p1, p2, q1, q2 = first.dims
    dims = {"p1": p1, "p2": p2, "q1": q1, "q2": q2, "n": first.n, "d": first.d}
    header = {
        "format": "funfactor-draws",
        "version": list(FORMAT_VERSION),
        "dims": dims,
        "n_draws": len(draws.states),
        "acceptance_rates": draws.acceptance_rates,
        "failures": [vars(f) for f in draws.failures],
        "meta": meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    shapes = _field_shapes(dims)

    parts = [MAGIC, struct.pack("<HHI", *FORMAT_VERSION, len(hbytes)), hbytes]
    for state, ll, cid in zip(draws.states, draws.log_likelihoods, draws.chain_ids):
        parts.append(struct.pack("<Id", int(cid), float(ll)))
        for name in _STATE_FIELDS:
            val = getattr(state, name)
            arr = np.asarray(val, dtype="<f8")
            if arr.shape != shapes[name]:
                raise ValueError(f"draw field {name} has shape {arr.shape}, "
                                 f"expected {shapes[name]}")
            parts.append(arr.tobytes(order="C"))
    _atomic_write_bytes(path, b"".join(parts))


def read_draws(path) -> tuple[PosteriorDraws, dict]:
    """Load a draw container; raises VersionError on major-version mismatch."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a draw container (bad magic)")
    off = len(MAGIC)
    major, minor, hlen = struct.unpack_from("<HHI", blob, off)
    off += struct.calcsize("<HHI")
    if major != FORMAT_VERSION[0]:
        raise VersionError(
            f"{path}: container version {major}.{minor} incompatible with "
            f"{FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}")
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    dims = header["dims"]
    shapes = _field_shapes(dims)

    states = []
    logliks = []
    chain_ids = []
    for _ in range(header["n_draws"]):
        cid, ll = struct.unpack_from("<Id", blob, off)
        off += struct.calcsize("<Id")
        fields = {}
        for name in _STATE_FIELDS:
            shape = shapes[name]
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
            off += count * 8
            fields[name] = float(arr[0]) if shape == () else arr.reshape(shape)
        states.append(ModelState(**fields))
        logliks.append(ll)
        chain_ids.append(cid)
    if off != len(blob):
        raise FormatError(f"{path}: trailing bytes after last draw")
    draws = PosteriorDraws(
        states=states,
        log_likelihoods=np.asarray(logliks),
        chain_ids=np.asarray(chain_ids, dtype=int),
        acceptance_rates=header.get("acceptance_rates", {}),
        failures=[ChainFailure(**f) for f in header.get("failures", [])],
    )
    return draws, header


# ---------------------------------------------------------------------------
# summary and report CSV emission


def _write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            c if isinstance(c, str) else _fmt(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary(bundle, out_dir) -> list[Path]:
    """Emit one CSV per summary object; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    s, t = bundle.s_points, bundle.t_points

    mb = bundle.mean_surface
    rows = [(s[i], t[j], mb.center[i, j], mb.lower[i, j], mb.upper[i, j])
            for i in range(s.size) for j in range(t.size)]
    p = out / "mean_surface.csv"
    _write_csv(p, ["s", "t", "center", "lower", "upper"], rows)
    written.append(p)

    G4 = bundle.kernel_mean.reshaped()
    rows = [(s[a], t[b], s[c], t[e], G4[a, b, c, e])
            for a in range(s.size) for b in range(t.size)
            for c in range(s.size) for e in range(t.size)]
    p = out / "kernel.csv"
    _write_csv(p, ["s", "t", "s2", "t2", "value"], rows)
    written.append(p)

    for name, marg, pts in (("k_s.csv", bundle.ks_mean, s),
                            ("k_t.csv", bundle.kt_mean, t)):
        rows = [(pts[i], pts[j], marg.matrix[i, j])
                for i in range(pts.size) for j in range(pts.size)]
        p = out / name
        _write_csv(p, ["u", "u2", "value"], rows)
        written.append(p)

    rows = []
    for axis, eig in (("S", bundle.eigen_s), ("T", bundle.eigen_t)):
        for j in range(eig.eigenvalues_mean.size):
            rows.append((axis, str(j + 1), eig.eigenvalues_mean[j],
                         eig.eigenvalues_q10[j], eig.eigenvalues_q90[j],
                         eig.fve_mean[j]))
    p = out / "eigenvalues.csv"
    _write_csv(p, ["axis", "component", "mean", "q10", "q90", "fve"], rows)
    written.append(p)

    rows = []
    for axis, eig, pts in (("S", bundle.eigen_s, s), ("T", bundle.eigen_t, t)):
        for j, band in enumerate(eig.bands):
            for i in range(pts.size):
                rows.append((axis, str(j + 1), pts[i], band.center[i],
                             band.lower[i], band.upper[i]))
    p = out / "eigenfunctions.csv"
    _write_csv(p, ["axis", "component", "point", "center", "lower", "upper"], rows)
    written.append(p)
    return written


def write_report_rows(rows, path) -> None:
    """Benchmark report CSV: one row per (case, n, quantity, estimator)."""
    _write_csv(path, ["case", "n", "quantity", "estimator", "median", "q10", "q90"],
               [(str(r["case"]), str(r["n"]), r["quantity"], r["estimator"],
                 r["median"], r["q10"], r["q90"]) for r in rows])
