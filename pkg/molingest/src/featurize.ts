/**
 * Atom and bond featurization for heavy-atom molecular graphs.
 *
 * Node features (width 23):
 *   element one-hot over [B,C,N,O,F,P,S,Cl,Br,I,other]  (11)
 *   degree one-hot 0..5, capped                          (6)
 *   formal charge                                        (1)
 *   aromaticity flag                                     (1)
 *   hybridization one-hot [sp,sp2,sp3,other]             (4)
 * Bond features (width 4): one-hot [single,double,triple,aromatic].
 * Hybridization is inferred structurally: aromatic -> sp2; any triple or
 * two double bonds -> sp; any double bond -> sp2; else sp3.
 */

import { BondType, Molecule } from "./smiles.js";

export const ELEMENT_VOCAB = ["B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"];
export const MAX_DEGREE = 5;
export const HYBRIDIZATIONS = ["sp", "sp2", "sp3", "other"];
export const BOND_TYPES: BondType[] = ["single", "double", "triple", "aromatic"];
export const NODE_FEATURE_WIDTH = ELEMENT_VOCAB.length + 1 + (MAX_DEGREE + 1) + 1 + 1 + HYBRIDIZATIONS.length;
export const EDGE_FEATURE_WIDTH = BOND_TYPES.length;

export interface FeaturizedGraph {
  n: number;
  x: number[][];
  edges: number[][];
  edge_x: number[][];
}

function hybridization(mol: Molecule, atomIdx: number): string {
  const atom = mol.atoms[atomIdx];
  if (atom.aromatic) return "sp2";
  let doubles = 0;
  let triples = 0;
  for (const bond of mol.bonds) {
    if (bond.a !== atomIdx && bond.b !== atomIdx) continue;
    if (bond.type === "double") doubles++;
    if (bond.type === "triple") triples++;
  }
  if (triples > 0 || doubles >= 2) return "sp";
  if (doubles === 1) return "sp2";
  return "sp3";
}

export function featurize(mol: Molecule): FeaturizedGraph {
  const degree = new Array<number>(mol.atoms.length).fill(0);
  for (const bond of mol.bonds) {
    degree[bond.a]++;
    degree[bond.b]++;
  }
  const x: number[][] = mol.atoms.map((atom, i) => {
    const row = new Array<number>(NODE_FEATURE_WIDTH).fill(0);
    const e = ELEMENT_VOCAB.indexOf(atom.symbol);
    row[e >= 0 ? e : ELEMENT_VOCAB.length] = 1;
    let off = ELEMENT_VOCAB.length + 1;
    row[off + Math.min(degree[i], MAX_DEGREE)] = 1;
    off += MAX_DEGREE + 1;
    row[off] = atom.charge;
    row[off + 1] = atom.aromatic ? 1 : 0;
    off += 2;
    row[off + HYBRIDIZATIONS.indexOf(hybridization(mol, i))] = 1;
    return row;
  });
  const edges = mol.bonds.map((b) => [b.a, b.b]);
  const edge_x = mol.bonds.map((b) => {
    const row = new Array<number>(EDGE_FEATURE_WIDTH).fill(0);
    row[BOND_TYPES.indexOf(b.type)] = 1;
    return row;
  });
  return { n: mol.atoms.length, x, edges, edge_x };
}

/** Featurization header embedded in emitted datasets (self-description). */
export function featurizationHeader() {
  return {
    node_features: {
      element_one_hot: [...ELEMENT_VOCAB, "other"],
      degree_one_hot_max: MAX_DEGREE,
      formal_charge: "scalar",
      aromatic_flag: "0/1",
      hybridization_one_hot: HYBRIDIZATIONS,
      width: NODE_FEATURE_WIDTH,
    },
    edge_features: { bond_type_one_hot: BOND_TYPES, width: EDGE_FEATURE_WIDTH },
  };
}
