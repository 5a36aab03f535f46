/** Capture-point discovery on a layers model.
 *
 * Points are listed in the model's layer order, which the framework derives
 * from the forward topology, so the manifest layer ids follow forward
 * execution order and are stable across runs on the same model.
 */

import * as tf from "@tensorflow/tfjs";

import { LayerDiscoveryFailed } from "./errors";

export type CaptureMode = "layer-op" | "after-activation";

export interface CapturePoint {
  /** Layer whose output tensor is recorded. */
  layer: tf.layers.Layer;
  tensor: tf.SymbolicTensor;
  name: string;
}

const ACTIVATION_CLASSES = new Set([
  "Activation",
  "ReLU",
  "LeakyReLU",
  "ELU",
  "ThresholdedReLU",
  "Softmax",
  "PReLU",
]);

function capturedByDefault(layer: tf.layers.Layer): boolean {
  const cls = layer.getClassName();
  return cls.includes("Conv") || cls === "Dense";
}

function outputOf(layer: tf.layers.Layer): tf.SymbolicTensor {
  const out = layer.output;
  if (Array.isArray(out)) {
    throw new LayerDiscoveryFailed(`layer ${layer.name} has multiple output tensors`);
  }
  return out;
}

/** Map from a symbolic tensor id to the layers that consume it. */
function consumerIndex(model: tf.LayersModel): Map<number, tf.layers.Layer[]> {
  const index = new Map<number, tf.layers.Layer[]>();
  for (const layer of model.layers) {
    for (const node of layer.inboundNodes) {
      for (const input of node.inputTensors) {
        const seen = index.get(input.id) ?? [];
        seen.push(layer);
        index.set(input.id, seen);
      }
    }
  }
  return index;
}

export function discoverCapturePoints(
  model: tf.LayersModel,
  layerNames?: string[],
  mode: CaptureMode = "layer-op",
): CapturePoint[] {
  let candidates: tf.layers.Layer[];
  if (layerNames && layerNames.length > 0) {
    const byName = new Map(model.layers.map(l => [l.name, l]));
    for (const name of layerNames) {
      if (!byName.has(name)) {
        throw new LayerDiscoveryFailed(
          `model has no layer named ${name} (available: ${model.layers.map(l => l.name).join(", ")})`,
        );
      }
    }
    const wanted = new Set(layerNames);
    candidates = model.layers.filter(l => wanted.has(l.name));
  } else {
    candidates = model.layers.filter(capturedByDefault);
  }
  if (candidates.length === 0) {
    throw new LayerDiscoveryFailed(
      `no convolution or dense outputs found among layers: ${model.layers.map(l => l.getClassName()).join(", ")}`,
    );
  }

  const consumers = mode === "after-activation" ? consumerIndex(model) : null;
  return candidates.map(layer => {
    let tensor = outputOf(layer);
    let name = layer.name;
    if (consumers) {
      // follow the output into a separate nonlinearity when it is the sole consumer
      const next = consumers.get(tensor.id) ?? [];
      if (next.length === 1 && ACTIVATION_CLASSES.has(next[0].getClassName())) {
        tensor = outputOf(next[0]);
        name = next[0].name;
      }
    }
    return { layer, tensor, name };
  });
}
