/** Runs a model over a dataset and writes its intermediate activations as a
 * tensor corpus the detection engine can calibrate on and score.
 *
 * Capture point: each selected layer's own output, after any activation
 * fused into that layer but before a separate following activation layer.
 * Set capture to "after-activation" to move the point past a directly
 * attached nonlinearity layer instead.  Inference runs through predict(),
 * so dropout is inactive and normalization layers use their moving
 * statistics; the model must not be mid-training.
 *
 * Activations are written exactly as computed, cast to float32: rank-4
 * feature maps are relaid out from batch-last-channel to per-sample
 * (channels, height, width), dense vectors become (features, 1, 1) maps.
 */

import * as fs from "fs";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";

import { CaptureMode, discoverCapturePoints } from "./capture";
import { BadConfig, ShapeDriftBetweenSamples } from "./errors";
import {
  LayerDescriptor,
  ManifestDoc,
  SampleDescriptor,
  TensorRef,
  writeManifest,
  writeTensor,
} from "./tensorfile";

export interface ExportConfig {
  model: tf.LayersModel;
  /** One batch tensor, or several to export in sequence. */
  inputs: tf.Tensor | tf.Tensor[];
  outDir: string;
  /** Class count recorded in the manifest; labels must stay below it. */
  classCount: number;
  /** True labels in sample order; omit for an unlabeled corpus. */
  labels?: number[];
  dataset?: string;
  /** Layer names to capture; default is every convolution and dense output. */
  layerNames?: string[];
  capture?: CaptureMode;
  /** Record the model head's argmax for each sample as y_hat. */
  withPredictions?: boolean;
  /** Forward-pass batch size. */
  batchSize?: number;
  /** Samples per tensor file; 1 writes one rank-3 file per sample. */
  chunkSize?: number;
}

/** Accumulates one layer's per-sample maps into chunked tensor files. */
class LayerFiles {
  private pending: Float32Array[] = [];
  private chunkIndex = 0;

  constructor(
    private readonly outDir: string,
    private readonly layerId: number,
    private readonly dims: number[],
    private readonly chunkSize: number,
  ) {}

  private tag(n: number, width: number): string {
    return String(n).padStart(width, "0");
  }

  add(sampleIndex: number, values: Float32Array): TensorRef {
    const lid = this.tag(this.layerId, 3);
    if (this.chunkSize === 1) {
      const rel = path.join("tensors", `L${lid}_s${this.tag(sampleIndex, 6)}.masft`);
      writeTensor(path.join(this.outDir, rel), this.dims, values);
      return rel;
    }
    const ref = {
      path: path.join("tensors", `L${lid}_${this.tag(this.chunkIndex, 5)}.masft`),
      index: this.pending.length,
    };
    this.pending.push(values);
    if (this.pending.length === this.chunkSize) {
      this.flush();
    }
    return ref;
  }

  flush(): void {
    if (this.pending.length === 0) {
      return;
    }
    const ref = path.join("tensors", `L${this.tag(this.layerId, 3)}_${this.tag(this.chunkIndex, 5)}.masft`);
    const per = this.dims.reduce((a, b) => a * b, 1);
    const stacked = new Float32Array(per * this.pending.length);
    this.pending.forEach((v, i) => stacked.set(v, i * per));
    writeTensor(path.join(this.outDir, ref), [this.pending.length, ...this.dims], stacked);
    this.pending = [];
    this.chunkIndex += 1;
  }
}

/** Per-sample (channels, height, width) view of one captured batch output. */
function toSampleMaps(batch: tf.Tensor): { dims: number[]; flat: Float32Array } {
  let laidOut: tf.Tensor;
  if (batch.rank === 4) {
    laidOut = tf.transpose(batch, [0, 3, 1, 2]); // NHWC -> NCHW
  } else if (batch.rank === 3) {
    laidOut = tf.transpose(batch, [0, 2, 1]); // (n, steps, c) -> (n, c, steps)
  } else if (batch.rank === 2) {
    laidOut = batch;
  } else {
    throw new BadConfig(`cannot export a rank-${batch.rank} activation`);
  }
  const dims = laidOut.shape.slice(1);
  while (dims.length < 3) {
    dims.push(1);
  }
  return { dims, flat: laidOut.dataSync() as Float32Array };
}

function validateConfig(config: ExportConfig, batches: tf.Tensor[], total: number): void {
  if (!Number.isInteger(config.classCount) || config.classCount < 1) {
    throw new BadConfig(`classCount must be a positive integer, got ${config.classCount}`);
  }
  const batchSize = config.batchSize ?? 32;
  const chunkSize = config.chunkSize ?? 256;
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new BadConfig(`batchSize must be a positive integer, got ${batchSize}`);
  }
  if (!Number.isInteger(chunkSize) || chunkSize < 1) {
    throw new BadConfig(`chunkSize must be a positive integer, got ${chunkSize}`);
  }
  if (batches.length === 0 || total === 0) {
    throw new BadConfig("inputs hold no samples");
  }
  if (config.labels) {
    if (config.labels.length !== total) {
      throw new BadConfig(`got ${config.labels.length} labels for ${total} samples`);
    }
    for (const y of config.labels) {
      if (!Number.isInteger(y) || y < 0 || y >= config.classCount) {
        throw new BadConfig(`label ${y} outside [0, ${config.classCount})`);
      }
    }
  }
  if (config.withPredictions && config.model.outputs.length !== 1) {
    throw new BadConfig("prediction capture needs a single-output model");
  }
}

/** Export activations for every sample and return the manifest path. */
export function exportActivations(config: ExportConfig): string {
  const batches = Array.isArray(config.inputs) ? config.inputs : [config.inputs];
  const total = batches.reduce((n, b) => n + b.shape[0], 0);
  validateConfig(config, batches, total);

  const model = config.model;
  const points = discoverCapturePoints(model, config.layerNames, config.capture ?? "layer-op");
  const outputs = points.map(p => p.tensor);
  let headIndex = -1;
  if (config.withPredictions) {
    const head = model.outputs[0];
    headIndex = outputs.findIndex(t => t.id === head.id);
    if (headIndex < 0) {
      headIndex = outputs.length;
      outputs.push(head);
    }
  }
  const probe = tf.model({ inputs: model.inputs, outputs });

  fs.mkdirSync(path.join(config.outDir, "tensors"), { recursive: true });
  const chunkSize = config.chunkSize ?? 256;
  const writers: LayerFiles[] = [];
  const layerDims: number[][] = [];
  const samples: SampleDescriptor[] = [];
  let sampleIndex = 0;

  for (const batch of batches) {
    const refsPerPoint: TensorRef[][] = [];
    let predicted: Int32Array | null = null;
    tf.tidy(() => {
      const raw = probe.predict(batch, { batchSize: config.batchSize ?? 32 });
      const outs = Array.isArray(raw) ? raw : [raw];
      points.forEach((point, pi) => {
        const { dims, flat } = toSampleMaps(outs[pi]);
        if (layerDims[pi] === undefined) {
          layerDims[pi] = dims;
          writers[pi] = new LayerFiles(config.outDir, pi, dims, chunkSize);
        } else if (layerDims[pi].join("x") !== dims.join("x")) {
          throw new ShapeDriftBetweenSamples(
            `layer ${point.name}: sample dims changed from ` +
              `(${layerDims[pi]}) to (${dims}) within one export`,
          );
        }
        const per = dims.reduce((a, b) => a * b, 1);
        const refs: TensorRef[] = [];
        for (let i = 0; i < batch.shape[0]; i++) {
          refs.push(writers[pi].add(sampleIndex + i, flat.slice(i * per, (i + 1) * per)));
        }
        refsPerPoint.push(refs);
      });
      if (headIndex >= 0) {
        const head = outs[headIndex];
        if (head.rank !== 2) {
          throw new BadConfig(`prediction capture needs a rank-2 head, got rank ${head.rank}`);
        }
        predicted = tf.argMax(head, -1).dataSync() as Int32Array;
      }
    });

    for (let i = 0; i < batch.shape[0]; i++) {
      const entry: SampleDescriptor = {
        id: `s${String(sampleIndex + i).padStart(6, "0")}`,
        tensors: {},
      };
      points.forEach((_, pi) => {
        entry.tensors[String(pi)] = refsPerPoint[pi][i];
      });
      if (config.labels) {
        entry.y = config.labels[sampleIndex + i];
      }
      if (predicted) {
        const yHat = predicted[i];
        if (yHat >= config.classCount) {
          throw new BadConfig(
            `model predicted class ${yHat} but classCount is ${config.classCount}`,
          );
        }
        entry.y_hat = yHat;
      }
      samples.push(entry);
    }
    sampleIndex += batch.shape[0];
  }
  writers.forEach(w => w.flush());

  const layers: LayerDescriptor[] = points.map((point, pi) => ({
    id: pi,
    name: point.name,
    channels: layerDims[pi][0],
    height: layerDims[pi][1],
    width: layerDims[pi][2],
  }));
  const doc: ManifestDoc = {
    dataset: config.dataset ?? "export",
    k: config.classCount,
    layers,
    samples,
  };
  const manifestPath = path.join(config.outDir, "manifest.json");
  writeManifest(doc, manifestPath);
  return manifestPath;
}
