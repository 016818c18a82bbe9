/**
 * A character-bigram language model with a trainable low-rank adapter.
 *
 * The base table is frozen (it doubles as the reference model) and the
 * adapter starts at exactly zero, so the initial policy equals the
 * reference. Tiny on purpose: the point is exercising the preference
 * objective end to end on a CPU, not modeling language.
 */

// printable ASCII plus an out-of-range bucket and a start-of-sequence context
export const OTHER = 0;
export const BOS = 96;
export const VOCAB = 97;

export function encodeChar(ch: string): number {
  const code = ch.charCodeAt(0);
  return code >= 32 && code < 127 ? code - 31 : OTHER;
}

export function encode(text: string): number[] {
  const out = new Array<number>(text.length);
  for (let i = 0; i < text.length; i++) out[i] = encodeChar(text[i]);
  return out;
}

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface AdapterConfig {
  rank: number;
  initScale: number;
  seed: number;
}

/** One (context, target) step whose log-probability enters the objective. */
export interface Transition {
  ctx: number;
  target: number;
}

export class BigramAdapterModel {
  readonly rank: number;
  /** Down projection, VOCAB x rank, small random init. */
  readonly a: Float64Array;
  /** Up projection, rank x VOCAB, zero init so the adapter starts inert. */
  readonly b: Float64Array;

  constructor(adapter: AdapterConfig) {
    if (!Number.isInteger(adapter.rank) || adapter.rank < 1) {
      throw new RangeError(`adapter rank must be a positive integer, got ${adapter.rank}`);
    }
    this.rank = adapter.rank;
    this.a = new Float64Array(VOCAB * this.rank);
    this.b = new Float64Array(this.rank * VOCAB);
    const rng = mulberry32(adapter.seed);
    for (let i = 0; i < this.a.length; i++) {
      // Box-Muller; one draw per weight is plenty here
      const u = Math.max(rng(), 1e-12);
      const v = rng();
      this.a[i] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v) * adapter.initScale;
    }
  }

  /** Adapter logits for one context row: A[ctx, :] . B (base row is zero). */
  rowLogits(ctx: number): Float64Array {
    const logits = new Float64Array(VOCAB);
    const offset = ctx * this.rank;
    for (let r = 0; r < this.rank; r++) {
      const scale = this.a[offset + r];
      if (scale === 0) continue;
      const bRow = r * VOCAB;
      for (let j = 0; j < VOCAB; j++) {
        logits[j] += scale * this.b[bRow + j];
      }
    }
    return logits;
  }

  rowLogProbs(ctx: number): Float64Array {
    const logits = this.rowLogits(ctx);
    let max = -Infinity;
    for (let j = 0; j < VOCAB; j++) max = Math.max(max, logits[j]);
    let sum = 0;
    for (let j = 0; j < VOCAB; j++) sum += Math.exp(logits[j] - max);
    const logZ = max + Math.log(sum);
    const out = new Float64Array(VOCAB);
    for (let j = 0; j < VOCAB; j++) out[j] = logits[j] - logZ;
    return out;
  }

  sequenceLogprob(transitions: Transition[]): number {
    let total = 0;
    for (const { ctx, target } of transitions) {
      total += this.rowLogProbs(ctx)[target];
    }
    return total;
  }
}

/** The frozen reference: zero logits everywhere, i.e. uniform transitions. */
export function referenceLogprob(transitions: Transition[]): number {
  return -transitions.length * Math.log(VOCAB);
}

/**
 * Completion transitions conditioned on the prompt. Context runs
 * BOS -> prompt -> completion; only completion positions are scored. When
 * the pair overflows maxSeqLen the prompt is truncated from the left, and
 * a completion that alone exceeds the budget loses its tail; both cases
 * call warn once.
 */
export function completionTransitions(
  prompt: string,
  completion: string,
  maxSeqLen: number,
  warn: (message: string) => void
): Transition[] {
  if (maxSeqLen < 2) {
    throw new RangeError(`maxSeqLen must be at least 2, got ${maxSeqLen}`);
  }
  let promptPart = prompt;
  let completionPart = completion;
  if (completionPart.length > maxSeqLen - 1) {
    warn(
      `completion of ${completionPart.length} chars exceeds maxSeqLen=${maxSeqLen}; tail dropped`
    );
    completionPart = completionPart.slice(0, maxSeqLen - 1);
    promptPart = promptPart.slice(promptPart.length - 1);
  } else if (promptPart.length + completionPart.length > maxSeqLen) {
    const keep = maxSeqLen - completionPart.length;
    warn(
      `sequence of ${promptPart.length + completionPart.length} chars exceeds ` +
        `maxSeqLen=${maxSeqLen}; prompt truncated from the left to ${keep} chars`
    );
    promptPart = promptPart.slice(promptPart.length - keep);
  }
  const context = [BOS, ...encode(promptPart)];
  const targets = encode(completionPart);
  const transitions: Transition[] = [];
  let ctx = context[context.length - 1];
  for (const target of targets) {
    transitions.push({ ctx, target });
    ctx = target;
  }
  return transitions;
}
