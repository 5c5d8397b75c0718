/**
 * Murcko scaffolds: ring systems plus the linkers connecting them.
 *
 * The scaffold is obtained by repeatedly deleting terminal atoms (degree
 * <= 1); what survives is exactly the union of rings and ring-ring linker
 * paths. Scaffolds are keyed by a Weisfeiler-Lehman style canonical hash
 * over (element, aromatic) atom labels and bond types, so isomorphic
 * scaffolds always share a class. Acyclic molecules have an empty scaffold
 * and form their own dedicated class.
 */

import { createHash } from "node:crypto";

import { Molecule } from "./smiles.js";

export const ACYCLIC = "acyclic";

export function murckoScaffold(mol: Molecule): Molecule {
  const alive = new Array<boolean>(mol.atoms.length).fill(true);
  for (;;) {
    const degree = new Array<number>(mol.atoms.length).fill(0);
    for (const b of mol.bonds) {
      if (alive[b.a] && alive[b.b]) {
        degree[b.a]++;
        degree[b.b]++;
      }
    }
    let removed = false;
    for (let i = 0; i < mol.atoms.length; i++) {
      if (alive[i] && degree[i] <= 1) {
        alive[i] = false;
        removed = true;
      }
    }
    if (!removed) break;
  }
  const remap = new Map<number, number>();
  const atoms = [];
  for (let i = 0; i < mol.atoms.length; i++) {
    if (alive[i]) {
      remap.set(i, atoms.length);
      atoms.push(mol.atoms[i]);
    }
  }
  const bonds = mol.bonds
    .filter((b) => alive[b.a] && alive[b.b])
    .map((b) => ({ a: remap.get(b.a)!, b: remap.get(b.b)!, type: b.type }));
  return { atoms, bonds };
}

/** Isomorphism-invariant hash of a molecule (WL label refinement). */
export function scaffoldKey(scaffold: Molecule): string {
  if (scaffold.atoms.length === 0) return ACYCLIC;
  const n = scaffold.atoms.length;
  const neighbors: [number, string][][] = Array.from({ length: n }, () => []);
  for (const b of scaffold.bonds) {
    neighbors[b.a].push([b.b, b.type]);
    neighbors[b.b].push([b.a, b.type]);
  }
  let labels = scaffold.atoms.map((a) => `${a.symbol}${a.aromatic ? "~" : ""}${a.charge}`);
  for (let round = 0; round < n; round++) {
    labels = labels.map((own, i) => {
      const env = neighbors[i].map(([j, t]) => `${t}:${labels[j]}`).sort();
      return createHash("sha256").update(`${own}|${env.join(",")}`).digest("hex").slice(0, 16);
    });
  }
  const sorted = [...labels].sort();
  return createHash("sha256").update(sorted.join("+")).digest("hex").slice(0, 32);
}

/** Assigns dense integer class ids; the acyclic class is always id 0. */
export class ScaffoldIndex {
  private ids = new Map<string, number>([[ACYCLIC, 0]]);

  classOf(mol: Molecule): number {
    const key = scaffoldKey(murckoScaffold(mol));
    let id = this.ids.get(key);
    if (id === undefined) {
      id = this.ids.size;
      this.ids.set(key, id);
    }
    return id;
  }

  get size(): number {
    return this.ids.size;
  }
}
