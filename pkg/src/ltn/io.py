"""File formats, run directories, checkpoints and posterior-draw persistence.

Formats
-------
OTU table
    TSV, UTF-8.  Header row: a sample-ID column name followed by the OTU
    labels; each following row: sample ID then integer counts.
Covariates / groups
    TSV with a sample-ID first column and one named column per variable.
Draws
    ``<name>.csv``: header ``iteration,<col1>,...``, one row per saved draw,
    numbers written with 17 significant digits.
Checkpoint
    ``checkpoint.json``: format version, iteration, RNG bit-generator state and
    every array of the sampler state as hex-float strings (lossless);
    ``checkpoint_draws.npz`` holds the draws collected so far (float64).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .phylo import OtuTable

__all__ = [
    "FORMAT_VERSION",
    "PosteriorDraws",
    "read_otu_table",
    "write_otu_table",
    "read_table",
    "read_covariates",
    "read_numeric_table",
    "write_numeric_table",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_draws",
    "read_draws",
    "save_checkpoint",
    "load_checkpoint",
    "write_manifest",
    "run_lock",
    "file_sha256",
    "array_sha256",
]

FORMAT_VERSION = 1
CHECKPOINT = "checkpoint.json"
CHECKPOINT_DRAWS = "checkpoint_draws.npz"


@dataclass
class PosteriorDraws:
    """Saved draws of a chain.

    ``arrays[name]`` has the iteration axis first; ``iteration`` holds the
    1-based sweep index of each saved draw.
    """

    iteration: np.ndarray
    arrays: dict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __len__(self):
        return len(self.iteration)

    def __eq__(self, other):
        if not isinstance(other, PosteriorDraws):
            return NotImplemented
        return (
            np.array_equal(self.iteration, other.iteration)
            and self.arrays.keys() == other.arrays.keys()
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )


# -- tables -------------------------------------------------------------------


def read_table(path):
    """Read a TSV with a header row and sample IDs in the first column.

    Returns ``(sample_ids, column_names, rows)`` with ``rows`` as lists of
    strings.  Ragged rows raise :class:`FormatError` naming the line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        cols = [h.strip() for h in header[1:]]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                )
            ids.append(row[0].strip())
            rows.append([x.strip() for x in row[1:]])
    return ids, cols, rows


def read_otu_table(path) -> OtuTable:
    ids, cols, rows = read_table(path)
    counts = np.empty((len(rows), len(cols)), dtype=np.int64)
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            try:
                v = float(x)
            except ValueError:
                raise FormatError(f"{path}: line {i + 2}: non-numeric count {x!r}") from None
            if v != int(v):
                raise FormatError(f"{path}: line {i + 2}: non-integer count {x!r}")
            counts[i, j] = int(v)
    try:
        return OtuTable(counts, tuple(ids), tuple(cols))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_otu_table(path, table: OtuTable, id_column="sample"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow([id_column, *table.labels])
        for sid, row in zip(table.sample_ids, table.counts):
            w.writerow([sid, *map(int, row)])


def read_numeric_table(path):
    """Nonnegative real matrix (counts or compositions) from a TSV.

    Returns ``(sample_ids, column_names, values)``.
    """
    ids, cols, rows = read_table(path)
    try:
        values = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise FormatError(f"{path}: entries must be finite and nonnegative")
    if len(set(cols)) != len(cols):
        raise FormatError(f"{path}: duplicate column names")
    return ids, cols, values


def write_numeric_table(path, sample_ids, header, values, id_column="sample"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow([id_column, *header])
        for sid, row in zip(sample_ids, np.asarray(values, dtype=float)):
            w.writerow([sid, *(_fmt(x) for x in row)])


def read_covariates(path, columns=None, sample_ids=None):
    """Numeric covariate matrix from a TSV.

    Parameters
    ----------
    columns : list of str, optional
        Columns to keep, in order; a missing name raises :class:`ValidationError`.
    sample_ids : sequence of str, optional
        Reorder rows to this sample order; unknown or missing IDs are errors.

    Returns
    -------
    values : ndarray, shape (n, q)
    names : list of str
    """
    ids, cols, rows = read_table(path)
    if columns is not None:
        missing = [c for c in columns if c not in cols]
        if missing:
            raise ValidationError(f"{path}: covariate column(s) not found: {missing}")
        pick = [cols.index(c) for c in columns]
    else:
        pick = list(range(len(cols)))
    try:
        values = np.array([[float(r[j]) for j in pick] for r in rows], dtype=float).reshape(len(rows), len(pick))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if sample_ids is not None:
        pos = {s: i for i, s in enumerate(ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing:
            raise ValidationError(f"{path}: no row for sample(s) {missing[:5]}")
        values = values[[pos[s] for s in sample_ids]]
    return values, [cols[j] for j in pick]


# -- draws --------------------------------------------------------------------


def _fmt(x):
    return repr(float(x)) if x == 0 or not np.isfinite(x) else f"{x:.17g}"


def write_matrix_csv(path, rows, header=None, index=None, index_name="iteration"):
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(([index_name] if index is not None else []) + list(header))
        for i, row in enumerate(rows):
            lead = [int(index[i])] if index is not None else []
            w.writerow(lead + [_fmt(x) for x in row])


def read_matrix_csv(path, index=False):
    """Read a numeric CSV; a non-numeric first row is treated as a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = None
    try:
        [float(x) for x in rows[0]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if index:
        return data[:, 0].astype(np.int64), data[:, 1:], (header[1:] if header else None)
    return data, header


def write_draws(directory, draws: PosteriorDraws, names=None):
    """One CSV per array; multi-dimensional draws are flattened row-major."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in names or draws.arrays:
        arr = np.asarray(draws.arrays[name], dtype=float)
        flat = arr.reshape(arr.shape[0], -1)
        shape = arr.shape[1:]
        header = [name + "".join(f"[{i}]" for i in ix) for ix in np.ndindex(*shape)] if shape else [name]
        write_matrix_csv(directory / f"{name}.csv", flat, header=header, index=draws.iteration)
    with open(directory / "draws_meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format_version": FORMAT_VERSION,
                "shapes": {k: list(np.shape(v)[1:]) for k, v in draws.arrays.items() if not names or k in names},
            },
            fh,
            indent=2,
        )


def read_draws(directory) -> PosteriorDraws:
    directory = Path(directory)
    with open(directory / "draws_meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{directory}: unsupported draws format {meta.get('format_version')}")
    arrays, iteration = {}, None
    for name, shape in meta["shapes"].items():
        it, data, _ = read_matrix_csv(directory / f"{name}.csv", index=True)
        arrays[name] = data.reshape((data.shape[0], *shape))
        iteration = it
    return PosteriorDraws(iteration=iteration, arrays=arrays)


# -- checkpoints --------------------------------------------------------------


def _hex_array(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "hex": [float(x).hex() for x in a.ravel()]}


def _unhex_array(obj):
    return np.array([float.fromhex(x) for x in obj["hex"]], dtype=float).reshape(obj["shape"])


def save_checkpoint(directory, iteration, state: dict, rng, draws: dict, extra=None):
    """Write the sampler state after ``iteration`` completed sweeps.

    ``state`` maps names to arrays or floats, ``draws`` maps names to lists
    of already-saved draws.  Files are written to temporaries and renamed so
    an interrupted write never clobbers the previous checkpoint.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "iteration": int(iteration),
        "rng": rng.bit_generator.state,
        "state": {k: _hex_array(v) for k, v in state.items()},
        "extra": extra or {},
    }
    tmp = directory / (CHECKPOINT + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    tmpd = directory / (CHECKPOINT_DRAWS + ".tmp.npz")
    np.savez(tmpd, **{k: np.asarray(v, dtype=float) for k, v in draws.items()})
    os.replace(tmpd, directory / CHECKPOINT_DRAWS)
    os.replace(tmp, directory / CHECKPOINT)


def load_checkpoint(directory):
    """Return ``(iteration, state, rng, draws, extra)`` from a run directory."""
    directory = Path(directory)
    path = directory / CHECKPOINT
    if not path.exists():
        raise FormatError(f"{directory}: no checkpoint to resume from")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: checkpoint format {payload.get('format_version')} != supported {FORMAT_VERSION}"
        )
    state = {k: _unhex_array(v) for k, v in payload["state"].items()}
    bg = getattr(np.random, payload["rng"]["bit_generator"])()
    bg.state = payload["rng"]
    rng = np.random.Generator(bg)
    with np.load(directory / CHECKPOINT_DRAWS) as z:
        draws = {k: [row for row in z[k]] for k in z.files}
    return payload["iteration"], state, rng, draws, payload["extra"]


# -- manifests and locking ----------------------------------------------------


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_sha256(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def write_manifest(directory, config: dict, tree=None, inputs=None, extra=None):
    """Write ``manifest.json``: config echo, input hashes, node map, timestamps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config,
        "inputs": inputs or {},
    }
    if tree is not None:
        manifest["tree"] = {"newick": tree.to_newick(), "nodes": tree.node_table()}
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


@contextmanager
def run_lock(directory):
    """Advisory single-writer lock on a run directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(f"{directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)
