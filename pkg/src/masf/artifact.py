"""Binary serialization of calibrated detectors.

File layout (integers little-endian):

    bytes 0-7   magic b"MASFCAL1"
    bytes 8-9   container version, u16 (currently 1)
    u32         length of the UTF-8 JSON header
    ...         JSON header: scheme, split mode, classes, monitored layers,
                channel masks, tracker configuration, counts
    u32         record count
    records     one per stored table / parameter block

Record layout:

    u8   kind   0 channel table, 1 layer table, 2 final table,
                3 deviation bands, 4 mahalanobis mean, 5 mahalanobis precision
    i32  class id    (-1 when not class-specific)
    i32  layer id    (-1 for final tables)
    i32  channel id  (-1 when not channel-specific)
    u64  n_total     (0 for parameter blocks)
    u8   tails_used
    u32  n_points
    then n_points pairs of f64: (percentile, value) for tables,
    (q05, q95) for deviation bands, (index, value) for parameter blocks.

Floats are written verbatim, so save/load round-trips are bit-exact and two
calibrations from identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptArtifact, VersionMismatch
from .pipeline import CalibratedDetector
from .quantiles import QuantileTable, TableBank
from .reductions import parse_scheme
from .tensor_io import LayerSpec

__all__ = ["save_detector", "load_detector", "detector_to_bytes", "detector_from_bytes"]

_MAGIC = b"MASFCAL1"
_VERSION = 1
_KIND_CHANNEL = 0
_KIND_LAYER = 1
_KIND_FINAL = 2
_KIND_DEV = 3
_KIND_MEAN = 4
_KIND_PRECISION = 5
_REC_HEAD = struct.Struct("<BiiiQBI")


def _pack_record(kind, class_id, layer_id, channel_id, n_total, tails, pairs) -> bytes:
    pairs = np.ascontiguousarray(pairs, dtype="<f8")
    head = _REC_HEAD.pack(kind, class_id, layer_id, channel_id, n_total, int(tails), pairs.shape[0])
    return head + pairs.tobytes()


def _table_pairs(table: QuantileTable) -> np.ndarray:
    return np.column_stack([table.percentiles, table.values])


def detector_to_bytes(det: CalibratedDetector) -> bytes:
    header = {
        "version": _VERSION,
        "scheme": det.scheme.name,
        "classes": list(det.class_ids),
        "layers": [
            {"id": l.id, "name": l.name, "channels": l.channels, "height": l.height, "width": l.width}
            for l in det.layers
        ],
        "masks": {str(lid): np.asarray(mask).tolist() for lid, mask in det.masks.items()},
        "meta": det.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<H", _VERSION), struct.pack("<I", len(blob)), blob]

    records: list[bytes] = []
    for c in det.class_ids:
        for spec in det.layers:
            key = (c, spec.id)
            if key in det.channel_banks:
                bank = det.channel_banks[key]
                for pos, table in enumerate(bank.to_tables()):
                    channel = int(det.masks[spec.id][pos])
                    records.append(
                        _pack_record(
                            _KIND_CHANNEL, c, spec.id, channel,
                            table.n_total, table.tails_used, _table_pairs(table),
                        )
                    )
            if key in det.dev_bands:
                lo, hi = det.dev_bands[key]
                records.append(
                    _pack_record(_KIND_DEV, c, spec.id, -1, 0, 0, np.column_stack([lo, hi]))
                )
            if key in det.mahal_means:
                mu = det.mahal_means[key]
                idx = np.arange(mu.size, dtype=np.float64)
                records.append(
                    _pack_record(_KIND_MEAN, c, spec.id, -1, 0, 0, np.column_stack([idx, mu]))
                )
            if key in det.mahal_precisions:
                prec = np.asarray(det.mahal_precisions[key]).ravel()
                idx = np.arange(prec.size, dtype=np.float64)
                records.append(
                    _pack_record(_KIND_PRECISION, c, spec.id, -1, 0, 0, np.column_stack([idx, prec]))
                )
            table = det.layer_tables[key]
            records.append(
                _pack_record(
                    _KIND_LAYER, c, spec.id, -1, table.n_total, table.tails_used, _table_pairs(table)
                )
            )
        table = det.final_tables[c]
        records.append(
            _pack_record(_KIND_FINAL, c, -1, -1, table.n_total, table.tails_used, _table_pairs(table))
        )
    for spec in det.layers:
        if spec.id in det.mahal_precisions:
            prec = np.asarray(det.mahal_precisions[spec.id]).ravel()
            idx = np.arange(prec.size, dtype=np.float64)
            records.append(
                _pack_record(_KIND_PRECISION, -1, spec.id, -1, 0, 0, np.column_stack([idx, prec]))
            )

    chunks.append(struct.pack("<I", len(records)))
    chunks.extend(records)
    return b"".join(chunks)


def save_detector(det: CalibratedDetector, path) -> None:
    Path(path).write_bytes(detector_to_bytes(det))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptArtifact("truncated detector artifact")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def detector_from_bytes(data: bytes) -> CalibratedDetector:
    r = _Reader(data)
    if r.take(8) != _MAGIC:
        raise CorruptArtifact("bad detector magic")
    (version,) = struct.unpack("<H", r.take(2))
    if version != _VERSION:
        raise VersionMismatch(f"unsupported detector version {version}")
    (hlen,) = struct.unpack("<I", r.take(4))
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
        scheme = parse_scheme(header["scheme"])
        class_ids = tuple(int(c) for c in header["classes"])
        layers = [
            LayerSpec(
                id=int(l["id"]), name=str(l["name"]), channels=int(l["channels"]),
                height=int(l["height"]), width=int(l["width"]),
            )
            for l in header["layers"]
        ]
        masks = {int(k): np.asarray(v, dtype=np.int64) for k, v in header["masks"].items()}
        meta = header.get("meta", {})
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CorruptArtifact(f"bad detector header: {exc}") from exc

    (n_records,) = struct.unpack("<I", r.take(4))
    channel_tables: dict[tuple[int, int], list[QuantileTable]] = {}
    det = CalibratedDetector(
        scheme=scheme, layers=layers, masks=masks, class_ids=class_ids,
        layer_tables={}, final_tables={}, meta=meta,
    )
    for _ in range(n_records):
        kind, c, lid, channel, n_total, tails, n_points = _REC_HEAD.unpack(r.take(_REC_HEAD.size))
        pairs = np.frombuffer(r.take(16 * n_points), dtype="<f8").reshape(n_points, 2)
        if kind == _KIND_CHANNEL:
            table = QuantileTable(pairs[:, 0].copy(), pairs[:, 1].copy(), n_total, bool(tails))
            channel_tables.setdefault((c, lid), []).append(table)
        elif kind == _KIND_LAYER:
            det.layer_tables[(c, lid)] = QuantileTable(
                pairs[:, 0].copy(), pairs[:, 1].copy(), n_total, bool(tails)
            )
        elif kind == _KIND_FINAL:
            det.final_tables[c] = QuantileTable(
                pairs[:, 0].copy(), pairs[:, 1].copy(), n_total, bool(tails)
            )
        elif kind == _KIND_DEV:
            det.dev_bands[(c, lid)] = (pairs[:, 0].copy(), pairs[:, 1].copy())
        elif kind == _KIND_MEAN:
            det.mahal_means[(c, lid)] = pairs[:, 1].copy()
        elif kind == _KIND_PRECISION:
            d = int(round(np.sqrt(n_points)))
            if d * d != n_points:
                raise CorruptArtifact("precision block is not square")
            matrix = pairs[:, 1].copy().reshape(d, d)
            det.mahal_precisions[lid if c == -1 else (c, lid)] = matrix
        else:
            raise CorruptArtifact(f"unknown record kind {kind}")
    if r.pos != len(data):
        raise CorruptArtifact("trailing bytes after last record")

    for key, tables in channel_tables.items():
        det.channel_banks[key] = TableBank.from_tables(tables)
    missing = [
        (c, l.id) for c in class_ids for l in layers if (c, l.id) not in det.layer_tables
    ]
    if missing or any(c not in det.final_tables for c in class_ids):
        raise CorruptArtifact("artifact lacks required layer or final tables")
    return det


def load_detector(path) -> CalibratedDetector:
    return detector_from_bytes(Path(path).read_bytes())
