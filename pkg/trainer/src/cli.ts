#!/usr/bin/env node
/**
 * train-dpo: preference optimization over a judge or generator DPO file.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { ConfigError, loadConfig } from "./config.js";
import { DataError, readPreferenceFile } from "./data.js";
import { exportRun, trainDpo } from "./train.js";

export async function run(argv: string[]): Promise<number> {
  try {
    const args = await yargs(argv)
      .scriptName("train-dpo")
      .option("data", {
        type: "string",
        demandOption: true,
        describe: "preference JSONL produced by the dataset pipelines",
      })
      .option("config", {
        type: "string",
        describe: "JSON training config; defaults apply when omitted",
      })
      .option("out", {
        type: "string",
        demandOption: true,
        describe: "output directory for checkpoint.json and metrics.jsonl",
      })
      .strict()
      .exitProcess(false)
      .help()
      .parse();
    const config = loadConfig(args.config);
    const records = readPreferenceFile(args.data);
    const result = trainDpo(records, config, (message) =>
      console.warn(`warning: ${message}`)
    );
    const { checkpointPath, metricsPath } = exportRun(result, config, args.out);
    const last = result.metrics[result.metrics.length - 1];
    console.log(
      `trained on ${records.length} records for ${result.metrics.length} steps`
    );
    console.log(
      `margin ${result.initialMargin.toFixed(4)} -> ` +
        `${result.finalEpochMeanMargin.toFixed(4)} (final-epoch mean), ` +
        `last loss ${last.loss.toFixed(4)}`
    );
    console.log(`checkpoint: ${checkpointPath}`);
    console.log(`metrics: ${metricsPath}`);
    return 0;
  } catch (error) {
    if (error instanceof ConfigError || error instanceof DataError) {
      console.error(`error: ${error.message}`);
      return 2;
    }
    if ((error as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(error as Error).message}`);
      return 2;
    }
    if ((error as Error).name === "YError") {
      console.error(`error: ${(error as Error).message}`);
      return 2;
    }
    throw error;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("train-dpo")) {
  run(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
