#!/usr/bin/env node
/** molingest: CSV of SMILES pairs -> pair-dataset JSON. */

import { readFileSync, writeFileSync } from "node:fs";

import { ingest, IngestOptions } from "./ingest.js";

const USAGE = `usage: molingest --csv IN.csv --out OUT.json [options]
  --smiles1-col NAME   column of the first SMILES (default: smiles1)
  --smiles2-col NAME   column of the second SMILES (default: smiles2)
  --target-col NAME    column of the target value (default: y)
  --task KIND          regression | classification (default: regression)
  --log-target         natural-log transform of the target`;

function parseArgs(argv: string[]) {
  const flags = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const name = arg.slice(2);
    if (name === "log-target" || name === "help") {
      flags.set(name, true);
    } else {
      const value = argv[++i];
      if (value === undefined) throw new Error(`flag --${name} needs a value`);
      flags.set(name, value);
    }
  }
  return flags;
}

export function main(argv: string[]): number {
  let flags: Map<string, string | boolean>;
  try {
    flags = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    console.error(USAGE);
    return 2;
  }
  if (flags.get("help")) {
    console.log(USAGE);
    return 0;
  }
  const csvPath = flags.get("csv");
  const outPath = flags.get("out");
  if (typeof csvPath !== "string" || typeof outPath !== "string") {
    console.error("error: --csv and --out are required");
    console.error(USAGE);
    return 2;
  }
  const task = (flags.get("task") as string) ?? "regression";
  if (task !== "regression" && task !== "classification") {
    console.error(`error: unknown task ${task}`);
    return 2;
  }
  const opts: IngestOptions = {
    smiles1Col: (flags.get("smiles1-col") as string) ?? "smiles1",
    smiles2Col: (flags.get("smiles2-col") as string) ?? "smiles2",
    targetCol: (flags.get("target-col") as string) ?? "y",
    task,
    logTarget: flags.get("log-target") === true,
  };
  let text: string;
  try {
    text = readFileSync(csvPath, "utf-8");
  } catch (err) {
    console.error(`error: cannot read ${csvPath}: ${(err as Error).message}`);
    return 2;
  }
  try {
    const { doc, summary } = ingest(text, opts);
    writeFileSync(outPath, JSON.stringify(doc));
    for (const r of summary.rejections) {
      console.error(`rejected row ${r.row}: ${r.reason}`);
    }
    console.log(
      `kept=${summary.kept} rejected=${summary.rejected} graphs=${summary.graphs} ` +
        `scaffold_classes=${summary.scaffoldClasses}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
