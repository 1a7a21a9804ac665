"""Persistence: columnar binary frames, CSV, JSON manifests and hashes.

Frame file layout (all little-endian):
    magic   8 bytes  b"DBMLAB01"
    ncols   uint64
    nframes uint64
    beta    float64
    dt      float64
    seed    uint64
    labels  int64[ncols]
    frames  nframes x (1 + ncols) float64, each row = time then values
"""

import csv
import hashlib
import json
import os
import struct

import numpy as np

from .dbm import Trajectory
from .errors import IntegrityError

MAGIC = b"DBMLAB01"
_HEADER = struct.Struct("<8sQQddQ")


def write_frames(path, times, values, labels=None, beta=0.0, dt=0.0, seed=0):
    times = np.asarray(times, dtype="<f8")
    values = np.atleast_2d(np.asarray(values, dtype="<f8"))
    if values.shape[0] != times.size:
        raise ValueError("need one row of values per time")
    ncols = values.shape[1]
    labels = np.arange(1, ncols + 1) if labels is None else np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, ncols, times.size, float(beta), float(dt), int(seed)))
        fh.write(labels.astype("<i8").tobytes())
        fh.write(np.column_stack([times, values]).astype("<f8").tobytes())


def read_frames(path):
    """Returns dict(times, values, labels, beta, dt, seed)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated header")
    magic, ncols, nframes, beta, dt, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path}: not a frame file")
    off = _HEADER.size
    need = off + 8 * ncols + 8 * nframes * (ncols + 1)
    if len(raw) != need:
        raise IntegrityError(f"{path}: expected {need} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, "<i8", ncols, off).astype(int)
    data = np.frombuffer(raw, "<f8", nframes * (ncols + 1), off + 8 * ncols).reshape(nframes, ncols + 1)
    return {"times": data[:, 0].copy(), "values": data[:, 1:].copy(), "labels": labels,
            "beta": beta, "dt": dt, "seed": seed}


def save_trajectory(traj, path):
    write_frames(path, traj.times, traj.positions, traj.labels, traj.beta, traj.dt, traj.seed)


def load_trajectory(path, ordered=True):
    d = read_frames(path)
    return Trajectory(d["times"], d["values"], d["labels"], d["beta"], d["dt"], d["seed"],
                      ordered=ordered)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_json(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def verify_files(root, hashes):
    """Raise IntegrityError unless every listed file exists with its recorded sha256."""
    for rel, digest in sorted(hashes.items()):
        p = os.path.join(root, rel)
        if not os.path.exists(p):
            raise IntegrityError(f"missing data file {rel}")
        if sha256_file(p) != digest:
            raise IntegrityError(f"hash mismatch for {rel}")
