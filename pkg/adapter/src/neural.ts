// Sentence-embedding scorer. The encoder is loaded lazily on the first
// score request so that startup and the protocol handshake stay fast, and so
// that mock mode never touches model assets at all.

import type * as use from "@tensorflow-models/universal-sentence-encoder";

export const DEFAULT_MODEL = "universal-sentence-encoder";

export class SentenceScorer {
  private model: use.UniversalSentenceEncoder | null = null;

  constructor(
    private readonly modelName: string,
    private readonly device: string,
  ) {}

  /** Load the encoder once; later calls are no-ops. */
  async init(): Promise<void> {
    if (this.model !== null) {
      return;
    }
    const tf = await import("@tensorflow/tfjs");
    const encoder = await import("@tensorflow-models/universal-sentence-encoder");
    if (this.device) {
      await tf.setBackend(this.device);
      await tf.ready();
    }
    // Any name other than the default is taken as an explicit model URL or
    // local path, which is the only way to run without network access.
    this.model =
      this.modelName === DEFAULT_MODEL
        ? await encoder.load()
        : await encoder.load({ modelUrl: this.modelName });
  }

  /**
   * Encode both strings and fold their cosine similarity into [0, 1] via
   * (1 + cos) / 2, clamping for float fuzz at the ends.
   */
  async score(caption: string, visual: string): Promise<number> {
    await this.init();
    const embeddings = await this.model!.embed([caption, visual]);
    const vectors = embeddings.arraySync();
    embeddings.dispose();
    const cos = cosineSimilarity(vectors[0], vectors[1]);
    return Math.min(1, Math.max(0, (1 + cos) / 2));
  }
}

/** Plain cosine over two equal-length vectors; 0 when either has zero norm. */
export function cosineSimilarity(vec1: number[], vec2: number[]): number {
  if (vec1.length !== vec2.length || vec1.length === 0) {
    throw new Error("cosineSimilarity needs two equal-length, non-empty vectors");
  }
  let dot = 0;
  let norm1 = 0;
  let norm2 = 0;
  for (let i = 0; i < vec1.length; i++) {
    dot += vec1[i] * vec2[i];
    norm1 += vec1[i] * vec1[i];
    norm2 += vec2[i] * vec2[i];
  }
  if (norm1 === 0 || norm2 === 0) {
    return 0;
  }
  return dot / (Math.sqrt(norm1) * Math.sqrt(norm2));
}
