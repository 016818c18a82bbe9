/**
 * Training configuration with sensible defaults at toy scale.
 */

import { readFileSync } from "node:fs";
import type { AdapterConfig } from "./model.js";

export interface DPOConfig {
  beta: number;
  learningRate: number;
  epochs: number;
  warmupRatio: number;
  batchSize: number;
  maxSeqLen: number;
  modelId: string;
  adapter: AdapterConfig;
}

export class ConfigError extends Error {}

export function defaultConfig(): DPOConfig {
  return {
    beta: 0.1,
    learningRate: 5e-5,
    epochs: 3,
    warmupRatio: 0.1,
    batchSize: 8,
    maxSeqLen: 1024,
    modelId: "char-bigram-97",
    adapter: { rank: 4, initScale: 0.02, seed: 0 },
  };
}

const KNOWN_KEYS = new Set([
  "beta", "learningRate", "epochs", "warmupRatio", "batchSize",
  "maxSeqLen", "modelId", "adapter",
]);
const KNOWN_ADAPTER_KEYS = new Set(["rank", "initScale", "seed"]);

export function validateConfig(config: DPOConfig): DPOConfig {
  if (!(config.beta > 0) || !Number.isFinite(config.beta)) {
    throw new ConfigError(`beta must be a positive number, got ${config.beta}`);
  }
  if (!(config.learningRate > 0) || !Number.isFinite(config.learningRate)) {
    throw new ConfigError(`learningRate must be positive, got ${config.learningRate}`);
  }
  if (!Number.isInteger(config.epochs) || config.epochs < 1) {
    throw new ConfigError(`epochs must be an integer >= 1, got ${config.epochs}`);
  }
  if (!(config.warmupRatio >= 0 && config.warmupRatio < 1)) {
    throw new ConfigError(`warmupRatio must be in [0, 1), got ${config.warmupRatio}`);
  }
  if (!Number.isInteger(config.batchSize) || config.batchSize < 1) {
    throw new ConfigError(`batchSize must be an integer >= 1, got ${config.batchSize}`);
  }
  if (!Number.isInteger(config.maxSeqLen) || config.maxSeqLen < 2) {
    throw new ConfigError(`maxSeqLen must be an integer >= 2, got ${config.maxSeqLen}`);
  }
  if (!Number.isInteger(config.adapter.rank) || config.adapter.rank < 1) {
    throw new ConfigError(`adapter.rank must be an integer >= 1, got ${config.adapter.rank}`);
  }
  return config;
}

/** Merge a JSON config file over the defaults; unknown keys are rejected. */
export function loadConfig(path?: string): DPOConfig {
  const config = defaultConfig();
  if (path === undefined) return config;
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, "utf-8"));
  } catch (error) {
    if ((error as NodeJS.ErrnoException).code === "ENOENT") {
      throw new ConfigError(`config file not found: ${path}`);
    }
    throw new ConfigError(`cannot parse config file ${path}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ConfigError("config root must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  for (const key of Object.keys(obj)) {
    if (!KNOWN_KEYS.has(key)) {
      throw new ConfigError(`unknown config key "${key}"`);
    }
  }
  if (obj.adapter !== undefined) {
    if (typeof obj.adapter !== "object" || obj.adapter === null) {
      throw new ConfigError("adapter must be an object");
    }
    for (const key of Object.keys(obj.adapter)) {
      if (!KNOWN_ADAPTER_KEYS.has(key)) {
        throw new ConfigError(`unknown adapter key "${key}"`);
      }
    }
    config.adapter = { ...config.adapter, ...(obj.adapter as Partial<AdapterConfig>) };
    delete obj.adapter;
  }
  Object.assign(config, obj);
  return validateConfig(config);
}
