"""Binary tensor files and the JSON manifest that indexes them.

Tensor file layout (all integers little-endian):

    bytes 0-3   magic b"MASF"
    bytes 4-5   format version, u16 (currently 1)
    byte  6     dtype code, u8 (0 = float32 little-endian)
    byte  7     rank, u8
    next 4*rank dims, u32 each
    payload     row-major values

Feature maps are rank 3 (channels, height, width).  Rank-4 files hold a
batch of maps (n, channels, height, width); a manifest entry addresses one
row of such a chunk with {"path": ..., "index": i} instead of a bare path,
which keeps large exports from producing one file per sample per layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptArtifact,
    MalformedManifest,
    MissingTensor,
    NonFiniteTensor,
    OutOfRange,
    ShapeMismatch,
    VersionMismatch,
)

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "LayerSpec",
    "SampleEntry",
    "Manifest",
    "FeatureRecord",
    "write_tensor",
    "read_tensor",
    "read_tensor_header",
    "read_manifest",
    "write_manifest",
    "stream_records",
]

MAGIC = b"MASF"
FORMAT_VERSION = 1
_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sHBB")


def write_tensor(path, array: np.ndarray) -> None:
    """Write a rank-1..4 float array as a float32 tensor file."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if not 1 <= arr.ndim <= 4:
        raise ShapeMismatch(f"tensor rank must be 1..4, got {arr.ndim}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, _DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_header(fh, path) -> tuple[int, ...]:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise CorruptArtifact(f"{path}: truncated header")
    magic, version, dtype, rank = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CorruptArtifact(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported tensor version {version}")
    if dtype != _DTYPE_F32:
        raise CorruptArtifact(f"{path}: unsupported dtype code {dtype}")
    if not 1 <= rank <= 4:
        raise CorruptArtifact(f"{path}: unsupported rank {rank}")
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise CorruptArtifact(f"{path}: truncated dims")
    return struct.unpack(f"<{rank}I", raw)


def read_tensor_header(path) -> tuple[int, ...]:
    """Dimensions of a tensor file, reading only its header bytes."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def read_tensor(path) -> np.ndarray:
    """Read a tensor file back as a float32 array (bit-exact round trip)."""
    path = Path(path)
    with open(path, "rb") as fh:
        dims = _read_header(fh, path)
        count = int(np.prod(dims))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise CorruptArtifact(f"{path}: truncated payload")
        extra = fh.read(1)
        if extra:
            raise CorruptArtifact(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims)


@dataclass(frozen=True)
class LayerSpec:
    """Descriptor of one monitored layer's feature-map geometry."""

    id: int
    name: str
    channels: int
    height: int
    width: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class TensorRef:
    """Reference to one sample's map for one layer: a file, or a chunk row."""

    path: str
    index: int | None = None


@dataclass
class SampleEntry:
    id: str
    tensors: dict[int, TensorRef]
    y: int | None = None
    y_hat: int | None = None


@dataclass
class Manifest:
    dataset: str
    k: int
    layers: list[LayerSpec]
    samples: list[SampleEntry]
    root: Path = field(default_factory=Path)

    def layer_ids(self) -> list[int]:
        return [l.id for l in self.layers]

    def subset(self, sample_ids) -> "Manifest":
        wanted = set(sample_ids)
        return Manifest(
            dataset=self.dataset,
            k=self.k,
            layers=self.layers,
            samples=[s for s in self.samples if s.id in wanted],
            root=self.root,
        )

    def by_class(self) -> dict[int, list[SampleEntry]]:
        out: dict[int, list[SampleEntry]] = {}
        for s in self.samples:
            if s.y is not None:
                out.setdefault(s.y, []).append(s)
        return out


@dataclass
class FeatureRecord:
    """One sample's feature maps, ordered like the manifest's layer list."""

    sample_id: str
    layers: list[np.ndarray]
    y: int | None = None
    y_hat: int | None = None


def _parse_ref(raw, sid: str) -> TensorRef:
    if isinstance(raw, str):
        return TensorRef(raw)
    if isinstance(raw, dict) and isinstance(raw.get("path"), str):
        idx = raw.get("index")
        if not isinstance(idx, int) or idx < 0:
            raise MalformedManifest(f"sample {sid}: chunk index must be a non-negative int")
        return TensorRef(raw["path"], idx)
    raise MalformedManifest(f"sample {sid}: tensor reference must be a path or {{path,index}}")


def read_manifest(path, check_tensors: bool = True) -> Manifest:
    """Parse and validate a manifest file.

    With check_tensors (the default) every referenced tensor file must exist
    and its header dims must agree with the layer descriptor; only headers
    are read, not payloads.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest(f"{path}: top level must be an object")
    try:
        dataset = doc["dataset"]
        k = doc["k"]
        layers_raw = doc["layers"]
        samples_raw = doc["samples"]
    except KeyError as exc:
        raise MalformedManifest(f"{path}: missing field {exc}") from exc
    if not isinstance(k, int) or k < 1:
        raise MalformedManifest(f"{path}: class count k must be a positive integer")

    layers = []
    for lr in layers_raw:
        try:
            layers.append(
                LayerSpec(
                    id=int(lr["id"]),
                    name=str(lr["name"]),
                    channels=int(lr["channels"]),
                    height=int(lr["height"]),
                    width=int(lr["width"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest(f"{path}: bad layer entry {lr!r}") from exc
        if min(layers[-1].shape) < 1:
            raise MalformedManifest(f"{path}: layer {layers[-1].id} has empty dims")
    ids = [l.id for l in layers]
    if len(set(ids)) != len(ids) or not ids:
        raise MalformedManifest(f"{path}: layer ids must be unique and non-empty")

    samples = []
    seen = set()
    for sr in samples_raw:
        sid = str(sr.get("id"))
        if sid in seen:
            raise MalformedManifest(f"{path}: duplicate sample id {sid}")
        seen.add(sid)
        tensors_raw = sr.get("tensors")
        if not isinstance(tensors_raw, dict):
            raise MalformedManifest(f"{path}: sample {sid} lacks a tensors map")
        tensors = {}
        for key, raw in tensors_raw.items():
            tensors[int(key)] = _parse_ref(raw, sid)
        if set(tensors) != set(ids):
            raise MalformedManifest(f"{path}: sample {sid} does not cover every layer")
        y = sr.get("y")
        y_hat = sr.get("y_hat")
        for label, fname in ((y, "y"), (y_hat, "y_hat")):
            if label is not None and (not isinstance(label, int) or not 0 <= label < k):
                raise MalformedManifest(f"{path}: sample {sid} {fname}={label!r} outside [0, {k})")
        samples.append(SampleEntry(id=sid, tensors=tensors, y=y, y_hat=y_hat))

    manifest = Manifest(dataset=str(dataset), k=k, layers=layers, samples=samples, root=path.parent)
    if check_tensors:
        _check_tensor_refs(manifest)
    return manifest


def _check_tensor_refs(manifest: Manifest) -> None:
    spec_by_id = {l.id: l for l in manifest.layers}
    dim_cache: dict[str, tuple[int, ...]] = {}
    for s in manifest.samples:
        for lid, ref in s.tensors.items():
            if ref.path not in dim_cache:
                full = manifest.root / ref.path
                if not full.is_file():
                    raise MissingTensor(f"sample {s.id}: missing tensor file {full}")
                dim_cache[ref.path] = read_tensor_header(full)
            dims = dim_cache[ref.path]
            want = spec_by_id[lid].shape
            if ref.index is None:
                ok = dims == want
            else:
                ok = len(dims) == 4 and dims[1:] == want and ref.index < dims[0]
            if not ok:
                raise ShapeMismatch(
                    f"sample {s.id} layer {lid}: file dims {dims} do not match "
                    f"layer shape {want} (index={ref.index})"
                )


def write_manifest(manifest: Manifest, path) -> None:
    doc = {
        "dataset": manifest.dataset,
        "k": manifest.k,
        "layers": [
            {"id": l.id, "name": l.name, "channels": l.channels, "height": l.height, "width": l.width}
            for l in manifest.layers
        ],
        "samples": [
            {
                "id": s.id,
                "tensors": {
                    str(lid): (ref.path if ref.index is None else {"path": ref.path, "index": ref.index})
                    for lid, ref in s.tensors.items()
                },
                **({"y": s.y} if s.y is not None else {}),
                **({"y_hat": s.y_hat} if s.y_hat is not None else {}),
            }
            for s in manifest.samples
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


class _ChunkCache:
    """Keeps the most recently used rank-4 chunk arrays in memory."""

    def __init__(self, capacity: int = 8) -> None:
        self.capacity = capacity
        self._store: dict[str, np.ndarray] = {}

    def get(self, root: Path, ref: TensorRef) -> np.ndarray:
        arr = self._store.get(ref.path)
        if arr is None:
            arr = read_tensor(root / ref.path)
            if len(self._store) >= self.capacity:
                self._store.pop(next(iter(self._store)))
            self._store[ref.path] = arr
        if ref.index is not None:
            if arr.ndim != 4 or ref.index >= arr.shape[0]:
                raise ShapeMismatch(f"{ref.path}: chunk index {ref.index} out of range")
            return arr[ref.index]
        return arr


def stream_records(manifest: Manifest, class_filter=None, quarantine: bool = False, on_skip=None):
    """Yield FeatureRecords in manifest order.

    class_filter restricts to samples with a matching true label.  Records
    with non-finite values raise NonFiniteTensor unless quarantine is set,
    in which case they are skipped and reported through on_skip(sample_id).
    """
    wanted = None if class_filter is None else set(np.atleast_1d(class_filter).tolist())
    spec_by_id = {l.id: l for l in manifest.layers}
    cache = _ChunkCache()
    for s in manifest.samples:
        if wanted is not None and s.y not in wanted:
            continue
        maps = []
        bad = False
        for layer in manifest.layers:
            arr = cache.get(manifest.root, s.tensors[layer.id])
            if arr.shape != spec_by_id[layer.id].shape:
                raise ShapeMismatch(
                    f"sample {s.id} layer {layer.id}: got {arr.shape}, want {layer.shape}"
                )
            if not np.all(np.isfinite(arr)):
                if quarantine:
                    bad = True
                    break
                raise NonFiniteTensor(f"sample {s.id} layer {layer.id} has non-finite values")
            maps.append(arr)
        if bad:
            if on_skip is not None:
                on_skip(s.id)
            continue
        yield FeatureRecord(sample_id=s.id, layers=maps, y=s.y, y_hat=s.y_hat)
