export { CaptureMode, CapturePoint, discoverCapturePoints } from "./capture";
export {
  BadConfig,
  CorruptTensorFile,
  ExportError,
  LayerDiscoveryFailed,
  ShapeDriftBetweenSamples,
} from "./errors";
export { ExportConfig, exportActivations } from "./export";
export { loadModel, saveModel } from "./modelio";
export {
  FORMAT_VERSION,
  LayerDescriptor,
  MAGIC,
  ManifestDoc,
  SampleDescriptor,
  TensorRef,
  encodeTensor,
  readTensor,
  writeManifest,
  writeTensor,
} from "./tensorfile";
