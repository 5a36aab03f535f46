/** Error taxonomy for the activation exporter. */

export class ExportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** No capturable layer matched the filter, or a named layer does not exist. */
export class LayerDiscoveryFailed extends ExportError {}

/** A captured layer changed its per-sample dims partway through the export. */
export class ShapeDriftBetweenSamples extends ExportError {}

/** A config value is malformed or inconsistent with the model or dataset. */
export class BadConfig extends ExportError {}

/** A tensor or manifest file on disk is not in the expected format. */
export class CorruptTensorFile extends ExportError {}
