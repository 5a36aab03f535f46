"""Synthetic activation corpora for tests, demos and calibration drills.

Each class draws every channel of every layer from its own Gaussian whose
mean and scale are fixed by the corpus seed, so two runs with the same
seeds produce byte-identical tensor files.  Out-of-distribution variants
perturb a deterministic subset of channels, either across the whole
spatial map or at one random pixel per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OutOfRange
from .tensor_io import LayerSpec, Manifest, SampleEntry, TensorRef, write_manifest, write_tensor

__all__ = ["SyntheticSpec", "ShiftSpec", "generate"]

SHIFT_PATTERNS = ("global", "single-pixel")


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and distribution parameters for one synthetic corpus."""

    classes: int
    layer_shapes: tuple
    seed: int = 0
    dataset: str = "synthetic"

    def __post_init__(self) -> None:
        if self.classes < 1:
            raise OutOfRange("classes must be >= 1")
        if not self.layer_shapes:
            raise OutOfRange("layer_shapes must be non-empty")
        shapes = []
        for shape in self.layer_shapes:
            c, h, w = (int(v) for v in shape)
            if min(c, h, w) < 1:
                raise OutOfRange("layer dims must be positive")
            shapes.append((c, h, w))
        object.__setattr__(self, "layer_shapes", tuple(shapes))

    def layers(self) -> list[LayerSpec]:
        return [
            LayerSpec(id=i, name=f"layer{i}", channels=c, height=h, width=w)
            for i, (c, h, w) in enumerate(self.layer_shapes)
        ]

    def class_params(self):
        """Per (class, layer) channel means and scales, fixed by the seed."""
        rng = np.random.default_rng([int(self.seed), 7])
        means, scales = [], []
        for c, _, _ in self.layer_shapes:
            means.append(rng.normal(0.0, 1.0, size=(self.classes, c)))
            scales.append(rng.uniform(0.8, 1.25, size=(self.classes, c)))
        return means, scales


@dataclass(frozen=True)
class ShiftSpec:
    """Perturbation applied to generated samples to fake distribution shift."""

    fraction: float
    magnitude: float
    pattern: str = "global"
    layer_ids: tuple = field(default=None)

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise OutOfRange("shift fraction must lie in (0, 1]")
        # magnitude 0 is a legal no-signal control
        if self.magnitude < 0.0:
            raise OutOfRange("shift magnitude must be non-negative")
        if self.pattern not in SHIFT_PATTERNS:
            raise OutOfRange(f"pattern must be one of {SHIFT_PATTERNS}")
        if self.layer_ids is not None:
            object.__setattr__(self, "layer_ids", tuple(int(i) for i in self.layer_ids))

    def channel_subset(self, corpus_seed: int, layer_id: int, channels: int) -> np.ndarray:
        count = max(1, int(round(self.fraction * channels)))
        rng = np.random.default_rng([int(corpus_seed), 101, int(layer_id)])
        return np.sort(rng.choice(channels, size=count, replace=False))


def generate(
    spec: SyntheticSpec,
    n_per_class: int,
    out_dir,
    seed: int = 0,
    shift: ShiftSpec = None,
    labeled: bool = True,
    with_predictions: bool = False,
    chunk: int = 256,
) -> Path:
    """Write a corpus under out_dir and return the manifest path.

    Samples of class c are drawn in a fixed per-class stream seeded by
    (seed, c); the shift, when given, re-uses the class streams but adds
    the perturbation, so shifted and clean corpora differ only where the
    shift touches.  Unlabeled corpora still cycle through class
    generators but record no label.
    """
    if n_per_class < 1:
        raise OutOfRange("n_per_class must be >= 1")
    if chunk < 1:
        raise OutOfRange("chunk must be >= 1")
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    means, scales = spec.class_params()
    layers = spec.layers()
    shifted_channels = {}
    if shift is not None:
        wanted = set(shift.layer_ids) if shift.layer_ids is not None else None
        for spec_l in layers:
            if wanted is not None and spec_l.id not in wanted:
                continue
            shifted_channels[spec_l.id] = shift.channel_subset(
                spec.seed, spec_l.id, spec_l.channels
            )

    total = n_per_class * spec.classes
    streams = [np.random.default_rng([int(seed), c]) for c in range(spec.classes)]
    # separate pixel streams keep class streams identical between a clean
    # corpus and its shifted twin under the same seed
    pixel_streams = {lid: np.random.default_rng([int(seed), 202, lid]) for lid in shifted_channels}
    samples = []
    buffers = {l.id: [] for l in layers}
    refs = {l.id: [] for l in layers}
    chunk_no = {l.id: 0 for l in layers}

    def flush(layer_id: int) -> None:
        buf = buffers[layer_id]
        if not buf:
            return
        rel = f"tensors/L{layer_id:03d}_{chunk_no[layer_id]:05d}.masft"
        write_tensor(out_dir / rel, np.stack(buf).astype(np.float32))
        for i in range(len(buf)):
            refs[layer_id].append(TensorRef(rel, i))
        buf.clear()
        chunk_no[layer_id] += 1

    for idx in range(total):
        cls = idx % spec.classes
        rng = streams[cls]
        for li, spec_l in enumerate(layers):
            c, h, w = spec_l.shape
            maps = means[li][cls][:, None, None] + scales[li][cls][
                :, None, None
            ] * rng.standard_normal((c, h, w))
            if spec_l.id in shifted_channels:
                chans = shifted_channels[spec_l.id]
                bump = shift.magnitude * scales[li][cls][chans]
                if shift.pattern == "global":
                    maps[chans] += bump[:, None, None]
                else:
                    pix = pixel_streams[spec_l.id]
                    py = pix.integers(0, h, size=chans.size)
                    px = pix.integers(0, w, size=chans.size)
                    maps[chans, py, px] += bump
            buffers[spec_l.id].append(maps)
            if len(buffers[spec_l.id]) >= chunk:
                flush(spec_l.id)
        samples.append((f"s{idx:06d}", cls))

    for spec_l in layers:
        flush(spec_l.id)

    entries = []
    for pos, (sid, cls) in enumerate(samples):
        entries.append(
            SampleEntry(
                id=sid,
                tensors={l.id: refs[l.id][pos] for l in layers},
                y=cls if labeled else None,
                y_hat=cls if with_predictions else None,
            )
        )

    manifest = Manifest(
        dataset=spec.dataset,
        k=spec.classes,
        layers=layers,
        samples=entries,
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
