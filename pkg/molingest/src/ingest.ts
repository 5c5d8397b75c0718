/**
 * CSV-of-SMILES-pairs to pair-dataset JSON.
 *
 * Each row contributes one pair; rows whose SMILES cannot be parsed are
 * rejected with a logged reason rather than aborting the batch. Duplicate
 * rows stay distinct samples. Graphs are deduplicated by SMILES string, and
 * every graph carries its Murcko scaffold class for OOD splitting.
 */

import { readTable } from "./csv.js";
import {
  EDGE_FEATURE_WIDTH,
  FeaturizedGraph,
  featurizationHeader,
  featurize,
  NODE_FEATURE_WIDTH,
} from "./featurize.js";
import { ScaffoldIndex } from "./scaffold.js";
import { parseSmiles, SmilesError } from "./smiles.js";

export interface IngestOptions {
  smiles1Col: string;
  smiles2Col: string;
  targetCol: string;
  task: "regression" | "classification";
  logTarget: boolean;
}

export interface Rejection {
  row: number;
  reason: string;
}

export interface IngestSummary {
  kept: number;
  rejected: number;
  rejections: Rejection[];
  graphs: number;
  scaffoldClasses: number;
}

interface GraphRecord extends FeaturizedGraph {
  scaffold: number;
}

export function ingest(csvText: string, opts: IngestOptions): { doc: object; summary: IngestSummary } {
  const table = readTable(csvText);
  const cols = new Map(table.header.map((name, i) => [name, i]));
  for (const col of [opts.smiles1Col, opts.smiles2Col, opts.targetCol]) {
    if (!cols.has(col)) {
      throw new Error(`missing column ${JSON.stringify(col)}; found ${JSON.stringify(table.header)}`);
    }
  }
  const scaffolds = new ScaffoldIndex();
  const graphs = new Map<string, GraphRecord>();
  const graphIds = new Map<string, string>();
  const pairs: { g1: string; g2: string; y: number; id: string }[] = [];
  const rejections: Rejection[] = [];

  const internGraph = (smiles: string): string => {
    let gid = graphIds.get(smiles);
    if (gid !== undefined) return gid;
    const mol = parseSmiles(smiles);
    const record: GraphRecord = { ...featurize(mol), scaffold: scaffolds.classOf(mol) };
    gid = `m${graphIds.size}`;
    graphIds.set(smiles, gid);
    graphs.set(gid, record);
    return gid;
  };

  table.rows.forEach((row, rowIdx) => {
    const s1 = row[cols.get(opts.smiles1Col)!]?.trim();
    const s2 = row[cols.get(opts.smiles2Col)!]?.trim();
    const rawY = row[cols.get(opts.targetCol)!]?.trim();
    try {
      if (!s1 || !s2) throw new SmilesError("empty SMILES field");
      let y = Number(rawY);
      if (!Number.isFinite(y)) throw new Error(`bad target ${JSON.stringify(rawY)}`);
      if (opts.task === "classification" && y !== 0 && y !== 1) {
        throw new Error(`classification target ${y} not in {0, 1}`);
      }
      if (opts.logTarget) {
        if (y <= 0) throw new Error("log transform needs a positive target");
        y = Math.log(y);
      }
      const g1 = internGraph(s1);
      const g2 = internGraph(s2);
      pairs.push({ g1, g2, y, id: `r${rowIdx}` });
    } catch (err) {
      const reason = err instanceof SmilesError ? `parse: ${err.message}` : String((err as Error).message);
      rejections.push({ row: rowIdx, reason });
    }
  });

  const doc = {
    feature_width: NODE_FEATURE_WIDTH,
    edge_feature_width: EDGE_FEATURE_WIDTH,
    task: opts.task,
    graphs: Object.fromEntries(
      [...graphs.entries()].map(([gid, g]) => [
        gid,
        { n: g.n, x: g.x, edges: g.edges, edge_x: g.edges.length ? g.edge_x : null, scaffold: g.scaffold },
      ]),
    ),
    pairs,
    featurization: featurizationHeader(),
  };
  return {
    doc,
    summary: {
      kept: pairs.length,
      rejected: rejections.length,
      rejections,
      graphs: graphs.size,
      scaffoldClasses: scaffolds.size,
    },
  };
}
