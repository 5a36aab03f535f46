/** File-system persistence for layers models.
 *
 * The bundled runtime only ships browser IO routes, so these handlers map
 * the standard model.json + binary weight shard layout onto plain files.
 */

import * as fs from "fs";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";

import { BadConfig } from "./errors";

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save({
    save: async artifacts => {
      if (artifacts.weightData == null) {
        throw new BadConfig("model has no weight data to save");
      }
      const parts = Array.isArray(artifacts.weightData)
        ? artifacts.weightData
        : [artifacts.weightData];
      fs.writeFileSync(path.join(dir, "weights.bin"), Buffer.concat(parts.map(p => Buffer.from(p))));
      const doc = {
        format: "layers-model",
        generatedBy: "masf-exporter",
        modelTopology: artifacts.modelTopology,
        weightsManifest: [{ paths: ["weights.bin"], weights: artifacts.weightSpecs }],
      };
      fs.writeFileSync(path.join(dir, "model.json"), JSON.stringify(doc));
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: "JSON" as const } };
    },
  });
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  const file = path.join(dir, "model.json");
  let doc: any;
  try {
    doc = JSON.parse(fs.readFileSync(file, "utf8"));
  } catch (err) {
    throw new BadConfig(`${file}: ${(err as Error).message}`);
  }
  const groups: any[] = doc.weightsManifest ?? [];
  const specs = groups.flatMap(g => g.weights);
  const shards = groups
    .flatMap(g => g.paths as string[])
    .map(p => fs.readFileSync(path.join(dir, p)));
  const joined = Buffer.concat(shards);
  const weightData = joined.buffer.slice(joined.byteOffset, joined.byteOffset + joined.byteLength);
  return tf.loadLayersModel({
    load: async () => ({ modelTopology: doc.modelTopology, weightSpecs: specs, weightData }),
  });
}
