/**
 * Preference-record input. The JSONL schema here is the contract with the
 * dataset-construction pipelines; files they emit are consumed unmodified.
 */

import { readFileSync } from "node:fs";

export interface PreferenceRecord {
  v: number;
  kind: "judge" | "generator";
  queryId: string;
  prompt: string;
  chosen: string;
  rejected: string;
  meta: Record<string, unknown>;
}

export class DataError extends Error {}

function requireString(
  raw: Record<string, unknown>,
  field: string,
  line: number
): string {
  const value = raw[field];
  if (typeof value !== "string" || value.length === 0) {
    throw new DataError(`line ${line}: field "${field}" must be a non-empty string`);
  }
  return value;
}

export function parsePreferenceLine(text: string, line: number): PreferenceRecord {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new DataError(`line ${line}: not valid JSON`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new DataError(`line ${line}: record must be a JSON object`);
  }
  const obj = raw as Record<string, unknown>;
  if (obj.v !== 1) {
    throw new DataError(`line ${line}: unsupported schema version ${String(obj.v)}`);
  }
  const kind = obj.kind;
  if (kind !== "judge" && kind !== "generator") {
    throw new DataError(`line ${line}: kind must be "judge" or "generator"`);
  }
  const record: PreferenceRecord = {
    v: 1,
    kind,
    queryId: requireString(obj, "query_id", line),
    prompt: requireString(obj, "prompt", line),
    chosen: requireString(obj, "chosen", line),
    rejected: requireString(obj, "rejected", line),
    meta:
      typeof obj.meta === "object" && obj.meta !== null
        ? (obj.meta as Record<string, unknown>)
        : {},
  };
  if (record.chosen === record.rejected) {
    throw new DataError(`line ${line}: chosen and rejected are identical`);
  }
  return record;
}

/** Load a preference JSONL file; fails before any model is constructed. */
export function readPreferenceFile(path: string): PreferenceRecord[] {
  const body = readFileSync(path, "utf-8");
  const records: PreferenceRecord[] = [];
  const lines = body.split("\n");
  for (let i = 0; i < lines.length; i++) {
    if (lines[i].trim() === "") continue;
    records.push(parsePreferenceLine(lines[i], i + 1));
  }
  if (records.length === 0) {
    throw new DataError(`no training records in ${path}`);
  }
  return records;
}
