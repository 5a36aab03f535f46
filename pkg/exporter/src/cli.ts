/** Command-line front end: load a saved model, run a dataset through it,
 * and write the activation corpus.
 *
 *     masf-export --model-dir model/ --inputs batch.masft \
 *         --out-dir corpus/ --class-count 10 --labels labels.txt
 */

import * as fs from "fs";

import * as tf from "@tensorflow/tfjs";
import yargs from "yargs";

import { BadConfig, ExportError } from "./errors";
import { exportActivations } from "./export";
import { loadModel } from "./modelio";
import { readTensor } from "./tensorfile";

function readLabels(file: string): number[] {
  const lines = fs
    .readFileSync(file, "utf8")
    .split("\n")
    .map(l => l.trim())
    .filter(l => l.length > 0);
  return lines.map(l => {
    const y = Number(l);
    if (!Number.isInteger(y)) {
      throw new BadConfig(`${file}: label ${JSON.stringify(l)} is not an integer`);
    }
    return y;
  });
}

export async function main(argv: string[]): Promise<number> {
  const args = yargs(argv)
    .scriptName("masf-export")
    .usage("$0 --model-dir DIR --inputs FILE --out-dir DIR --class-count K [options]")
    .option("model-dir", { type: "string", demandOption: true, describe: "saved layers model" })
    .option("inputs", { type: "string", demandOption: true, describe: "input batch tensor file" })
    .option("out-dir", { type: "string", demandOption: true, describe: "corpus output directory" })
    .option("class-count", { type: "number", demandOption: true, describe: "manifest class count" })
    .option("labels", { type: "string", describe: "true labels, one integer per line" })
    .option("layers", { type: "string", describe: "comma-separated layer names to capture" })
    .option("after-activation", {
      type: "boolean",
      default: false,
      describe: "capture past a separate following activation layer",
    })
    .option("with-predictions", { type: "boolean", default: false })
    .option("batch-size", { type: "number", default: 32 })
    .option("chunk-size", { type: "number", default: 256 })
    .option("dataset", { type: "string", default: "export" })
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      throw err ?? new BadConfig(msg);
    })
    .parseSync();

  const model = await loadModel(args["model-dir"]);
  const { dims, values } = readTensor(args.inputs);
  const inputs = tf.tensor(values, dims, "float32");
  const manifestPath = exportActivations({
    model,
    inputs,
    outDir: args["out-dir"],
    classCount: args["class-count"],
    labels: args.labels ? readLabels(args.labels) : undefined,
    dataset: args.dataset,
    layerNames: args.layers ? args.layers.split(",").map(s => s.trim()) : undefined,
    capture: args["after-activation"] ? "after-activation" : "layer-op",
    withPredictions: args["with-predictions"],
    batchSize: args["batch-size"],
    chunkSize: args["chunk-size"],
  });
  console.log(manifestPath);
  return 0;
}

/* istanbul ignore next */
if (require.main === module) {
  main(process.argv.slice(2)).catch(err => {
    const label = err instanceof ExportError ? err.name : "error";
    console.error(`masf-export: ${label}: ${(err as Error).message}`);
    process.exitCode = 1;
  });
}
