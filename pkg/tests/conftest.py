"""Shared fixtures: tiny hand-built corpora and brute-force eCDF oracles."""

import numpy as np
import pytest

from masf.tensor_io import (
    LayerSpec,
    Manifest,
    SampleEntry,
    TensorRef,
    write_manifest,
    write_tensor,
)


def make_corpus(root, layer_shapes, samples, dataset="unit", k=None):
    """Write per-sample tensor files plus a manifest under ``root``.

    samples: list of (sample_id, [array per layer], y, y_hat) tuples.
    Returns the manifest path.
    """
    root.mkdir(parents=True, exist_ok=True)
    (root / "tensors").mkdir(exist_ok=True)
    layers = [
        LayerSpec(id=i, name=f"layer{i}", channels=c, height=h, width=w)
        for i, (c, h, w) in enumerate(layer_shapes)
    ]
    entries = []
    for sid, arrays, y, y_hat in samples:
        refs = {}
        for spec, arr in zip(layers, arrays):
            rel = f"tensors/{sid}_l{spec.id}.t"
            write_tensor(root / rel, np.asarray(arr, dtype=np.float32))
            refs[spec.id] = TensorRef(rel)
        entries.append(SampleEntry(id=sid, tensors=refs, y=y, y_hat=y_hat))
    ys = {s[2] for s in samples if s[2] is not None}
    manifest = Manifest(
        dataset=dataset,
        k=k if k is not None else (max(ys) + 1 if ys else 1),
        layers=layers,
        samples=entries,
        root=root,
    )
    path = root / "manifest.json"
    write_manifest(manifest, path)
    return path


def ecdf_left(x, data):
    """Brute-force add-one left tail (#{s <= x} + 1) / (n + 1)."""
    data = np.asarray(data, dtype=np.float64)
    return (np.sum(data <= x) + 1.0) / (data.size + 1.0)


def ecdf_right(x, data):
    """Brute-force add-one right tail (#{s >= x} + 1) / (n + 1)."""
    data = np.asarray(data, dtype=np.float64)
    return (np.sum(data >= x) + 1.0) / (data.size + 1.0)


@pytest.fixture
def corpus_factory(tmp_path):
    def build(layer_shapes, samples, **kw):
        return make_corpus(tmp_path / "corpus", layer_shapes, samples, **kw)

    return build
