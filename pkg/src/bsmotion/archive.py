"""Binary archives for grids and surfaces, dataset manifests and OBJ frames.

Archive layout (all little-endian)::

    b"BSMA" | uint32 version | uint64 header length | header JSON | float32 payload

The header lists the named arrays and their shapes; the payload is their
row-major float32 data concatenated in that order.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .sampling import MeshSequence

__all__ = [
    "MAGIC",
    "VERSION",
    "KINDS",
    "DEFAULT_NORMALIZATION",
    "ArchiveError",
    "Archive",
    "ManifestEntry",
    "DatasetManifest",
    "write_archive",
    "read_archive",
    "read_obj",
    "write_obj",
    "load_manifest",
    "write_manifest",
    "load_mesh_sequence",
    "normalize_mesh",
]

MAGIC = b"BSMA"
VERSION = 1
KINDS = ("trajectory", "controls", "surface", "embedding")
DEFAULT_NORMALIZATION = (-0.9, 0.9)
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPE = np.dtype("<f4")


class ArchiveError(ValueError):
    pass


class Archive(NamedTuple):
    kind: str
    payload: object
    metadata: dict


def _as_arrays(payload):
    if isinstance(payload, dict):
        return {str(k): np.asarray(v) for k, v in payload.items()}, False
    return {"data": np.asarray(payload)}, True


def write_archive(kind, payload, metadata, path):
    """Write ``payload`` (an array, or a dict of named arrays) atomically.

    Values are stored as float32; the file appears under ``path`` only once
    fully written.
    """
    if kind not in KINDS:
        raise ArchiveError(f"unknown archive kind {kind!r}; expected one of {KINDS}")
    arrays, _ = _as_arrays(payload)
    if not arrays:
        raise ArchiveError("payload is empty")
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"payload array {name!r} has non-finite values")
    primary = next(iter(arrays.values()))
    header = {
        "kind": kind,
        "dtype": "float32",
        "byteorder": "little",
        "shape": list(primary.shape),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
        "metadata": dict(metadata or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
            fh.write(header_bytes)
            for arr in arrays.values():
                fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_archive(path, strict=False):
    """Validate and decode an archive; ``strict`` also rejects non-finite values."""
    data = Path(path).read_bytes()
    if len(data) < _PREAMBLE.size or data[:4] != MAGIC:
        raise ArchiveError(f"{path}: bad magic, not a BSMA archive")
    _, version, hlen = _PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    start = _PREAMBLE.size
    if len(data) < start + hlen:
        raise ArchiveError(
            f"{path}: truncated header, expected {start + hlen} bytes, got {len(data)}"
        )
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: corrupt header JSON") from exc
    kind = header.get("kind")
    if kind not in KINDS:
        raise ArchiveError(f"{path}: unknown archive kind {kind!r}")
    specs = header.get("arrays") or []
    if not specs or list(specs[0]["shape"]) != list(header.get("shape", [])):
        raise ArchiveError(f"{path}: header shape disagrees with array table")
    sizes = [int(np.prod(s["shape"], dtype=np.int64)) for s in specs]
    expected = start + hlen + _DTYPE.itemsize * sum(sizes)
    if len(data) != expected:
        raise ArchiveError(
            f"{path}: payload size mismatch, expected {expected} bytes, got {len(data)}"
        )
    offset = start + hlen
    arrays = {}
    for spec, size in zip(specs, sizes):
        arr = np.frombuffer(data, dtype=_DTYPE, count=size, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += size * _DTYPE.itemsize
    if strict:
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ArchiveError(f"{path}: array {name!r} has non-finite values")
    payload = arrays["data"] if list(arrays) == ["data"] else arrays
    return Archive(kind, payload, header.get("metadata", {}))


# OBJ frames ---------------------------------------------------------------

def read_obj(path):
    """Vertices, triangulated faces (0-based) and vertex normals if aligned."""
    verts, normals, faces = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    V = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    N = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    return V, F, (N if len(N) == len(V) and len(N) else None)


def write_obj(path, vertices, faces):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# Manifests ----------------------------------------------------------------

@dataclass
class ManifestEntry:
    sequence_id: str
    paths: list
    frames: int | None = None
    vertex_count: int | None = None
    format: str = "obj"
    captions: list = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def to_json(self):
        out = {"id": self.sequence_id, "paths": [str(p) for p in self.paths],
               "format": self.format}
        if self.frames is not None:
            out["frames"] = self.frames
        if self.vertex_count is not None:
            out["vertex_count"] = self.vertex_count
        if self.captions:
            out["captions"] = list(self.captions)
        return out


@dataclass
class DatasetManifest:
    entries: list
    normalization: tuple | None = DEFAULT_NORMALIZATION
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    norm = doc.get("normalization", list(DEFAULT_NORMALIZATION))
    entries = []
    for raw in doc.get("sequences", []):
        if "id" not in raw or "paths" not in raw:
            raise ArchiveError(f"manifest entry missing 'id' or 'paths': {raw}")
        fmt = raw.get("format", "obj")
        if fmt not in ("obj", "packed"):
            raise ArchiveError(f"unknown sequence format {fmt!r}")
        entries.append(ManifestEntry(
            sequence_id=str(raw["id"]),
            paths=list(raw["paths"]),
            frames=raw.get("frames"),
            vertex_count=raw.get("vertex_count"),
            format=fmt,
            captions=list(raw.get("captions", [])),
            root=root,
        ))
    return DatasetManifest(entries, tuple(norm) if norm else None, root)


def write_manifest(path, entries, normalization=DEFAULT_NORMALIZATION):
    doc = {
        "normalization": list(normalization) if normalization else None,
        "sequences": [e.to_json() for e in entries],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


def normalize_mesh(base, deltas, box=DEFAULT_NORMALIZATION):
    """Uniformly scale and center ``base`` into the cube ``box``; scale deltas alike."""
    lo, hi = float(box[0]), float(box[1])
    bmin, bmax = base.min(axis=0), base.max(axis=0)
    center = 0.5 * (bmin + bmax)
    half = 0.5 * float(np.max(bmax - bmin))
    scale = (hi - lo) / 2.0 / half if half > 0 else 1.0
    target_center = 0.5 * (lo + hi)
    return (base - center) * scale + target_center, deltas * scale, scale


def _load_packed(entry):
    with np.load(entry.resolve(entry.paths[0])) as npz:
        frames = np.asarray(npz["vertices"], dtype=np.float64)
        faces = np.asarray(npz["faces"], dtype=np.int64)
        normals = npz["vertex_normals"] if "vertex_normals" in npz.files else None
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise ArchiveError(f"{entry.sequence_id}: packed vertices must be (T, n, 3)")
    return frames, faces, normals


def _load_obj_frames(entry):
    frames = []
    faces0 = normals0 = None
    for i, p in enumerate(entry.paths):
        V, F, N = read_obj(entry.resolve(p))
        if i == 0:
            faces0, normals0 = F, N
        else:
            if len(V) != len(frames[0]):
                raise ArchiveError(
                    f"{entry.sequence_id}: frame {i} has {len(V)} vertices, "
                    f"frame 0 has {len(frames[0])} (topology changes are unsupported)"
                )
            if not np.array_equal(F, faces0):
                raise ArchiveError(
                    f"{entry.sequence_id}: frame {i} connectivity differs from frame 0 "
                    "(topology changes are unsupported)"
                )
        frames.append(V)
    return np.stack(frames), faces0, normals0


def load_mesh_sequence(entry, normalization=None):
    """Load a manifest entry as ``V0`` plus displacements ``V_t - V0``.

    ``normalization`` is a ``(lo, hi)`` box to fit the initial shape into, or
    ``None`` to keep model units.
    """
    if not entry.paths:
        raise ArchiveError(f"{entry.sequence_id}: no frame paths")
    try:
        if entry.format == "packed":
            frames, faces, normals = _load_packed(entry)
        else:
            frames, faces, normals = _load_obj_frames(entry)
    except OSError as exc:
        raise ArchiveError(f"{entry.sequence_id}: {exc}") from exc
    if entry.frames is not None and entry.frames != len(frames):
        raise ArchiveError(
            f"{entry.sequence_id}: manifest says {entry.frames} frames, found {len(frames)}"
        )
    if entry.vertex_count is not None and entry.vertex_count != frames.shape[1]:
        raise ArchiveError(
            f"{entry.sequence_id}: manifest says {entry.vertex_count} vertices, "
            f"found {frames.shape[1]}"
        )
    base = frames[0]
    deltas = frames - base
    if normalization is not None:
        base, deltas, _ = normalize_mesh(base, deltas, normalization)
    return MeshSequence(base, faces, deltas, vertex_normals=normals,
                        sequence_id=entry.sequence_id)
