export { parseSmiles, SmilesError } from "./smiles.js";
export type { Atom, Bond, BondType, Molecule } from "./smiles.js";
export {
  BOND_TYPES,
  EDGE_FEATURE_WIDTH,
  ELEMENT_VOCAB,
  featurizationHeader,
  featurize,
  NODE_FEATURE_WIDTH,
} from "./featurize.js";
export { ACYCLIC, murckoScaffold, ScaffoldIndex, scaffoldKey } from "./scaffold.js";
export { ingest } from "./ingest.js";
export type { IngestOptions, IngestSummary } from "./ingest.js";
export { parseCsv, readTable } from "./csv.js";
