"""Run manifests and the EMF1 binary container.

Every output file embeds the manifest digest of the run that produced it,
so artifacts are traceable and reruns of the same manifest are
byte-identical (no timestamps enter any output).

EMF1 layout (all integers little-endian):
  bytes 0..3   magic "EMF1"
  byte  4      container version (1)
  byte  5      record type: 1 = matrix, 2 = path
  byte  6      symmetry flag: 0 = real symmetric, 1 = complex hermitian
  byte  7      reserved (0)
  bytes 8..47  manifest digest, 40 ascii hex chars (zeros when absent)
  matrix record:  uint64 n, then n*n row-major float64 (complex128 when
                  the symmetry flag is 1)
  path record:    uint64 times count, uint64 n, then the times as float64,
                  then count*n row-major float64 eigenvalue rows
"""

import csv
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__

MAGIC = b"EMF1"
CONTAINER_VERSION = 1
RECORD_MATRIX = 1
RECORD_PATH = 2
CSV_SCHEMA = "emf-csv-1"


def content_hash(data):
    """Hash bytes the way git hashes a blob: sha1 over a length header."""
    if isinstance(data, str):
        data = data.encode()
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Provenance record for one CLI run."""

    command: str
    config_path: str
    base_seed: int
    version: str
    config_hash: str
    out_dir: str

    @staticmethod
    def create(command, config_path, base_seed, out_dir):
        if config_path:
            with open(config_path, "rb") as fh:
                cfg_hash = content_hash(fh.read())
        else:
            cfg_hash = content_hash(b"")
        return RunManifest(
            command=command,
            config_path=str(config_path) if config_path else "",
            base_seed=int(base_seed),
            version=__version__,
            config_hash=cfg_hash,
            out_dir=str(out_dir),
        )

    @property
    def digest(self):
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(payload).hexdigest()

    def to_json(self):
        body = dict(asdict(self), digest=self.digest)
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _header(record_type, symmetry_flag, manifest_hash):
    digest = (manifest_hash or "0" * 40).encode()
    if len(digest) != 40:
        raise ValueError("manifest hash must be 40 hex characters")
    return MAGIC + bytes([CONTAINER_VERSION, record_type,
                          symmetry_flag, 0]) + digest


def _parse_header(blob):
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise ValueError("not an EMF1 container")
    version, record_type, symmetry_flag = blob[4], blob[5], blob[6]
    if version != CONTAINER_VERSION:
        raise ValueError(f"unsupported container version {version}")
    digest = blob[8:48].decode()
    return record_type, symmetry_flag, digest, blob[48:]


def write_matrix(path, entries, symmetry="symmetric", manifest_hash=None):
    """Write one square matrix record."""
    hermitian = symmetry == "hermitian"
    dtype = "<c16" if hermitian else "<f8"
    a = np.ascontiguousarray(entries, dtype=dtype)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix record must be square")
    blob = _header(RECORD_MATRIX, int(hermitian), manifest_hash)
    blob += struct.pack("<Q", a.shape[0])
    blob += a.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(blob)


def read_matrix(path):
    """Read a matrix record; returns (entries, symmetry, manifest_digest)."""
    with open(path, "rb") as fh:
        record_type, flag, digest, body = _parse_header(fh.read())
    if record_type != RECORD_MATRIX:
        raise ValueError("container does not hold a matrix record")
    (n,) = struct.unpack_from("<Q", body)
    dtype = np.dtype("<c16") if flag else np.dtype("<f8")
    need = 8 + n * n * dtype.itemsize
    if len(body) < need:
        raise ValueError("truncated matrix record")
    entries = np.frombuffer(body[8:need], dtype=dtype).reshape(n, n).copy()
    return entries, ("hermitian" if flag else "symmetric"), digest


def write_path(path, times, values, manifest_hash=None):
    """Write an eigenvalue-path record: times and per-time value rows."""
    t = np.ascontiguousarray(times, dtype="<f8")
    v = np.ascontiguousarray(values, dtype="<f8")
    if t.ndim != 1 or v.ndim != 2 or v.shape[0] != t.shape[0]:
        raise ValueError("path record needs times (m,) and values (m, n)")
    blob = _header(RECORD_PATH, 0, manifest_hash)
    blob += struct.pack("<QQ", t.shape[0], v.shape[1])
    blob += t.tobytes(order="C") + v.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(blob)


def read_path(path):
    """Read a path record; returns (times, values, manifest_digest)."""
    with open(path, "rb") as fh:
        record_type, _, digest, body = _parse_header(fh.read())
    if record_type != RECORD_PATH:
        raise ValueError("container does not hold a path record")
    count, n = struct.unpack_from("<QQ", body)
    off = 16
    need = off + (count + count * n) * 8
    if len(body) < need:
        raise ValueError("truncated path record")
    times = np.frombuffer(body[off:off + count * 8], dtype="<f8").copy()
    off += count * 8
    values = np.frombuffer(body[off:need], dtype="<f8").reshape(count, n).copy()
    return times, values, digest


def write_csv(path, rows, fieldnames=None, manifest_hash=None):
    """Write rows of dicts as CSV with schema and manifest comment lines."""
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    buf.write(f"# manifest: {manifest_hash or '0' * 40}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(row.get(k)) for k in fieldnames})
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _csv_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_json(path, payload, manifest_hash=None):
    """Write a JSON report embedding the manifest digest, deterministically."""
    body = dict(payload)
    body["manifest"] = manifest_hash or "0" * 40
    with open(path, "w") as fh:
        fh.write(json.dumps(body, sort_keys=True, indent=2,
                            default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"cannot serialize {type(obj).__name__}")
