/**
 * Preference-optimization loop: frozen uniform reference, low-rank adapter
 * policy, Adam with linear warmup, per-step loss and reward-margin logging.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import type { DPOConfig } from "./config.js";
import type { PreferenceRecord } from "./data.js";
import { dLossDMargin } from "./loss.js";
import {
  BigramAdapterModel,
  Transition,
  VOCAB,
  completionTransitions,
  referenceLogprob,
} from "./model.js";

export interface StepMetric {
  step: number;
  loss: number;
  margin: number;
}

export interface TrainResult {
  model: BigramAdapterModel;
  metrics: StepMetric[];
  /** Margin logged at the very first step, before any update. */
  initialMargin: number;
  /** Mean margin over the final epoch's steps. */
  finalEpochMeanMargin: number;
}

interface PreparedPair {
  chosen: Transition[];
  rejected: Transition[];
  refChosen: number;
  refRejected: number;
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

function shuffled(n: number, rng: () => number): number[] {
  const order = Array.from({ length: n }, (_, i) => i);
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  return order;
}

class Adam {
  private readonly m: Float64Array;
  private readonly v: Float64Array;
  private t = 0;

  constructor(size: number) {
    this.m = new Float64Array(size);
    this.v = new Float64Array(size);
  }

  step(params: Float64Array, grads: Float64Array, lr: number): void {
    this.t += 1;
    const b1 = 0.9;
    const b2 = 0.999;
    const correction1 = 1 - Math.pow(b1, this.t);
    const correction2 = 1 - Math.pow(b2, this.t);
    for (let i = 0; i < params.length; i++) {
      const g = grads[i];
      this.m[i] = b1 * this.m[i] + (1 - b1) * g;
      this.v[i] = b2 * this.v[i] + (1 - b2) * g * g;
      const mHat = this.m[i] / correction1;
      const vHat = this.v[i] / correction2;
      params[i] -= (lr * mHat) / (Math.sqrt(vHat) + 1e-8);
    }
  }
}

export function trainDpo(
  records: PreferenceRecord[],
  config: DPOConfig,
  warn: (message: string) => void = () => {}
): TrainResult {
  if (records.length === 0) {
    throw new RangeError("cannot train on zero records");
  }
  const pairs: PreparedPair[] = records.map((record) => {
    const chosen = completionTransitions(
      record.prompt, record.chosen, config.maxSeqLen, warn
    );
    const rejected = completionTransitions(
      record.prompt, record.rejected, config.maxSeqLen, warn
    );
    return {
      chosen,
      rejected,
      refChosen: referenceLogprob(chosen),
      refRejected: referenceLogprob(rejected),
    };
  });

  const model = new BigramAdapterModel(config.adapter);
  const adamA = new Adam(model.a.length);
  const adamB = new Adam(model.b.length);

  const stepsPerEpoch = Math.ceil(records.length / config.batchSize);
  const totalSteps = config.epochs * stepsPerEpoch;
  const warmupSteps = Math.ceil(config.warmupRatio * totalSteps);
  const rng = mulberry32(config.adapter.seed ^ 0x5bd1e995);

  const metrics: StepMetric[] = [];
  let step = 0;
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    const order = shuffled(records.length, rng);
    for (let start = 0; start < records.length; start += config.batchSize) {
      const batch = order.slice(start, start + config.batchSize);

      // forward, with row softmaxes cached across the whole batch
      const probsByCtx = new Map<number, Float64Array>();
      const rowProbs = (ctx: number): Float64Array => {
        let cached = probsByCtx.get(ctx);
        if (cached === undefined) {
          const logProbs = model.rowLogProbs(ctx);
          cached = new Float64Array(VOCAB);
          for (let j = 0; j < VOCAB; j++) cached[j] = Math.exp(logProbs[j]);
          probsByCtx.set(ctx, cached);
        }
        return cached;
      };
      const seqLogprob = (transitions: Transition[]): number => {
        let total = 0;
        for (const { ctx, target } of transitions) {
          total += Math.log(rowProbs(ctx)[target]);
        }
        return total;
      };

      let lossSum = 0;
      let marginSum = 0;
      const dLogits = new Map<number, Float64Array>();
      const bump = (transitions: Transition[], upstream: number): void => {
        // d(sum logsoftmax)/d(logits row) = onehot(target) - softmax(row)
        for (const { ctx, target } of transitions) {
          let row = dLogits.get(ctx);
          if (row === undefined) {
            row = new Float64Array(VOCAB);
            dLogits.set(ctx, row);
          }
          const probs = rowProbs(ctx);
          for (let j = 0; j < VOCAB; j++) row[j] -= upstream * probs[j];
          row[target] += upstream;
        }
      };

      for (const index of batch) {
        const pair = pairs[index];
        const polChosen = seqLogprob(pair.chosen);
        const polRejected = seqLogprob(pair.rejected);
        const margin =
          config.beta *
          (polChosen - pair.refChosen - (polRejected - pair.refRejected));
        marginSum += margin;
        lossSum += margin > -30 ? Math.log1p(Math.exp(-margin)) : -margin;
        const upstream = (dLossDMargin(margin) * config.beta) / batch.length;
        bump(pair.chosen, upstream);
        bump(pair.rejected, -upstream);
      }

      metrics.push({
        step,
        loss: lossSum / batch.length,
        margin: marginSum / batch.length,
      });

      // pull the row gradients through the low-rank factors
      const gradA = new Float64Array(model.a.length);
      const gradB = new Float64Array(model.b.length);
      for (const [ctx, row] of dLogits) {
        const aOffset = ctx * model.rank;
        for (let r = 0; r < model.rank; r++) {
          const bRow = r * VOCAB;
          let dot = 0;
          for (let j = 0; j < VOCAB; j++) {
            dot += row[j] * model.b[bRow + j];
            gradB[bRow + j] += model.a[aOffset + r] * row[j];
          }
          gradA[aOffset + r] += dot;
        }
      }

      step += 1;
      const lr =
        warmupSteps > 0 && step <= warmupSteps
          ? (config.learningRate * step) / warmupSteps
          : config.learningRate;
      adamA.step(model.a, gradA, lr);
      adamB.step(model.b, gradB, lr);
    }
  }

  const finalEpoch = metrics.slice(-stepsPerEpoch);
  return {
    model,
    metrics,
    initialMargin: metrics[0].margin,
    finalEpochMeanMargin:
      finalEpoch.reduce((sum, m) => sum + m.margin, 0) / finalEpoch.length,
  };
}

/** Write metrics JSONL and the adapter checkpoint under outDir. */
export function exportRun(
  result: TrainResult,
  config: DPOConfig,
  outDir: string
): { checkpointPath: string; metricsPath: string } {
  mkdirSync(outDir, { recursive: true });
  const metricsPath = join(outDir, "metrics.jsonl");
  const lines = result.metrics
    .map((m) => JSON.stringify({ step: m.step, loss: m.loss, margin: m.margin }))
    .join("\n");
  writeFileSync(metricsPath, lines + "\n", "utf-8");

  const checkpointPath = join(outDir, "checkpoint.json");
  writeFileSync(
    checkpointPath,
    JSON.stringify({
      modelId: config.modelId,
      vocab: VOCAB,
      rank: result.model.rank,
      a: Array.from(result.model.a),
      b: Array.from(result.model.b),
      config,
    }),
    "utf-8"
  );
  return { checkpointPath, metricsPath };
}
