import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import * as tf from "@tensorflow/tfjs";
import { afterAll, describe, expect, it } from "vitest";

import { main } from "../src/cli";
import { loadModel, saveModel } from "../src/modelio";
import { writeTensor } from "../src/tensorfile";
import { engineValidateManifest, ulpDiff32 } from "./engine";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "masfexp-cli-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function buildModel(): tf.LayersModel {
  return tf.sequential({
    layers: [
      tf.layers.conv2d({
        inputShape: [8, 8, 1],
        filters: 4,
        kernelSize: 3,
        activation: "relu",
        name: "c1",
        kernelInitializer: tf.initializers.glorotUniform({ seed: 21 }),
      }),
      tf.layers.flatten({ name: "flat" }),
      tf.layers.dense({
        units: 3,
        name: "head",
        kernelInitializer: tf.initializers.glorotUniform({ seed: 22 }),
      }),
    ],
  });
}

describe("model persistence", () => {
  it("round trips a model through disk", async () => {
    const model = buildModel();
    const dir = path.join(tmp, "model-rt");
    await saveModel(model, dir);
    const back = await loadModel(dir);

    const x = tf.randomNormal([4, 8, 8, 1], 0, 1, "float32", 23);
    const want = (model.predict(x) as tf.Tensor).dataSync();
    const got = (back.predict(x) as tf.Tensor).dataSync();
    expect(got.length).toBe(want.length);
    for (let i = 0; i < want.length; i++) {
      expect(ulpDiff32(got[i], want[i])).toBeLessThanOrEqual(1);
    }
  });
});

describe("command line", () => {
  it("exports from files on disk and the engine accepts the corpus", async () => {
    const modelDir = path.join(tmp, "model-cli");
    await saveModel(buildModel(), modelDir);

    const x = tf.randomNormal([6, 8, 8, 1], 0, 1, "float32", 24);
    const inputsFile = path.join(tmp, "inputs.masft");
    writeTensor(inputsFile, x.shape, x.dataSync() as Float32Array);
    const labelsFile = path.join(tmp, "labels.txt");
    fs.writeFileSync(labelsFile, "0\n1\n2\n0\n1\n2\n");

    const outDir = path.join(tmp, "corpus");
    const status = await main([
      "--model-dir", modelDir,
      "--inputs", inputsFile,
      "--out-dir", outDir,
      "--class-count", "3",
      "--labels", labelsFile,
      "--with-predictions",
      "--chunk-size", "4",
      "--dataset", "cli-smoke",
    ]);
    expect(status).toBe(0);

    const manifest = path.join(outDir, "manifest.json");
    const doc = JSON.parse(fs.readFileSync(manifest, "utf8"));
    expect(doc.dataset).toBe("cli-smoke");
    expect(doc.k).toBe(3);
    expect(doc.samples).toHaveLength(6);
    expect(doc.samples[2].y).toBe(2);
    expect(doc.samples.every((s: any) => Number.isInteger(s.y_hat))).toBe(true);
    engineValidateManifest(manifest);
  });

  it("restricts capture to named layers", async () => {
    const modelDir = path.join(tmp, "model-cli2");
    await saveModel(buildModel(), modelDir);
    const x = tf.randomNormal([3, 8, 8, 1], 0, 1, "float32", 25);
    const inputsFile = path.join(tmp, "inputs2.masft");
    writeTensor(inputsFile, x.shape, x.dataSync() as Float32Array);

    const outDir = path.join(tmp, "corpus2");
    const status = await main([
      "--model-dir", modelDir,
      "--inputs", inputsFile,
      "--out-dir", outDir,
      "--class-count", "3",
      "--layers", "head",
    ]);
    expect(status).toBe(0);
    const doc = JSON.parse(fs.readFileSync(path.join(outDir, "manifest.json"), "utf8"));
    expect(doc.layers.map((l: any) => l.name)).toEqual(["head"]);
  });

  it("rejects unknown flags, missing options, and bad label files", async () => {
    await expect(main(["--nope"])).rejects.toThrow();
    await expect(main([])).rejects.toThrow();

    const modelDir = path.join(tmp, "model-cli3");
    await saveModel(buildModel(), modelDir);
    const x = tf.randomNormal([2, 8, 8, 1], 0, 1, "float32", 26);
    const inputsFile = path.join(tmp, "inputs3.masft");
    writeTensor(inputsFile, x.shape, x.dataSync() as Float32Array);
    const badLabels = path.join(tmp, "labels-bad.txt");
    fs.writeFileSync(badLabels, "0\nponies\n");
    await expect(
      main([
        "--model-dir", modelDir,
        "--inputs", inputsFile,
        "--out-dir", path.join(tmp, "corpus3"),
        "--class-count", "3",
        "--labels", badLabels,
      ]),
    ).rejects.toThrow(/not an integer/);
  });
});
