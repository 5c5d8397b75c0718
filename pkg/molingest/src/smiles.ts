/**
 * Minimal SMILES parser for heavy-atom molecular graphs.
 *
 * Supports the organic subset (B C N O P S F Cl Br I), aromatic lowercase
 * forms, bracket atoms with isotope/charge/H-count/chirality, branches, ring
 * closures (including %nn), bond symbols - = # : and directional / \ (read
 * as single bonds; stereo is not modeled), and dot-separated components
 * (kept as disconnected parts of one graph). Explicit [H] atoms are not
 * supported; hydrogens are implicit throughout.
 */

export type BondType = "single" | "double" | "triple" | "aromatic";

export interface Atom {
  symbol: string;
  aromatic: boolean;
  charge: number;
}

export interface Bond {
  a: number;
  b: number;
  type: BondType;
}

export interface Molecule {
  atoms: Atom[];
  bonds: Bond[];
}

export class SmilesError extends Error {}

const ORGANIC_TWO = ["Cl", "Br"];
const ORGANIC_ONE = ["B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC_ORGANIC = ["b", "c", "n", "o", "p", "s"];

const BOND_CHARS: Record<string, BondType> = {
  "-": "single",
  "=": "double",
  "#": "triple",
  ":": "aromatic",
  "/": "single",
  "\\": "single",
};

function parseBracketAtom(body: string): Atom {
  // [isotope? symbol chirality? Hcount? charge? class?]
  let i = 0;
  while (i < body.length && body[i] >= "0" && body[i] <= "9") i++; // isotope
  const rest = body.slice(i);
  const m = rest.match(/^([A-Z][a-z]?|[a-z])/);
  if (!m) throw new SmilesError(`bad bracket atom [${body}]`);
  let symbol = m[1];
  const aromatic = symbol === symbol.toLowerCase();
  if (aromatic) symbol = symbol.toUpperCase();
  if (symbol === "H") throw new SmilesError("explicit hydrogen atoms are not supported");
  let tail = rest.slice(m[1].length);
  tail = tail.replace(/^@{1,2}/, ""); // chirality markers ignored
  const hm = tail.match(/^H(\d*)/);
  if (hm) tail = tail.slice(hm[0].length);
  let charge = 0;
  const cm = tail.match(/^([+-])(\d+)?([+-]*)/);
  if (cm) {
    const sign = cm[1] === "+" ? 1 : -1;
    if (cm[2]) charge = sign * parseInt(cm[2], 10);
    else charge = sign * (1 + cm[3].length);
    tail = tail.slice(cm[0].length);
  }
  tail = tail.replace(/^:\d+/, ""); // atom class ignored
  if (tail.length) throw new SmilesError(`unsupported bracket content [${body}]`);
  return { symbol, aromatic, charge };
}

export function parseSmiles(smiles: string): Molecule {
  const s = smiles.trim();
  if (!s) throw new SmilesError("empty SMILES");
  const atoms: Atom[] = [];
  const bonds: Bond[] = [];
  const bondKeys = new Set<string>();
  const stack: number[] = [];
  const ringOpen = new Map<string, { atom: number; bond: BondType | null }>();
  let prev: number | null = null;
  let pendingBond: BondType | null = null;

  const addBond = (a: number, b: number, explicit: BondType | null) => {
    if (a === b) throw new SmilesError("ring bond to self");
    const key = a < b ? `${a}-${b}` : `${b}-${a}`;
    if (bondKeys.has(key)) throw new SmilesError("duplicate bond");
    bondKeys.add(key);
    let type = explicit;
    if (type === null) {
      type = atoms[a].aromatic && atoms[b].aromatic ? "aromatic" : "single";
    }
    bonds.push({ a, b, type });
  };

  const addAtom = (atom: Atom) => {
    atoms.push(atom);
    const idx = atoms.length - 1;
    if (prev !== null) addBond(prev, idx, pendingBond);
    pendingBond = null;
    prev = idx;
  };

  const closeRing = (label: string) => {
    const open = ringOpen.get(label);
    if (open === undefined) {
      if (prev === null) throw new SmilesError("ring closure before any atom");
      ringOpen.set(label, { atom: prev, bond: pendingBond });
      pendingBond = null;
    } else {
      if (prev === null) throw new SmilesError("dangling ring closure");
      addBond(open.atom, prev, pendingBond ?? open.bond);
      ringOpen.delete(label);
      pendingBond = null;
    }
  };

  let i = 0;
  while (i < s.length) {
    const ch = s[i];
    if (ch === "(") {
      if (prev === null) throw new SmilesError("branch before any atom");
      stack.push(prev);
      i++;
    } else if (ch === ")") {
      const back = stack.pop();
      if (back === undefined) throw new SmilesError("unbalanced parenthesis");
      prev = back;
      i++;
    } else if (ch === "[") {
      const end = s.indexOf("]", i);
      if (end < 0) throw new SmilesError("unterminated bracket atom");
      addAtom(parseBracketAtom(s.slice(i + 1, end)));
      i = end + 1;
    } else if (ch in BOND_CHARS) {
      pendingBond = BOND_CHARS[ch];
      i++;
    } else if (ch === ".") {
      if (pendingBond !== null) throw new SmilesError("bond before dot");
      prev = null;
      i++;
    } else if (ch === "%") {
      const label = s.slice(i + 1, i + 3);
      if (!/^\d\d$/.test(label)) throw new SmilesError("bad %nn ring label");
      closeRing(label);
      i += 3;
    } else if (ch >= "0" && ch <= "9") {
      closeRing(ch);
      i++;
    } else if (ORGANIC_TWO.includes(s.slice(i, i + 2))) {
      addAtom({ symbol: s.slice(i, i + 2), aromatic: false, charge: 0 });
      i += 2;
    } else if (ORGANIC_ONE.includes(ch)) {
      addAtom({ symbol: ch, aromatic: false, charge: 0 });
      i++;
    } else if (AROMATIC_ORGANIC.includes(ch)) {
      addAtom({ symbol: ch.toUpperCase(), aromatic: true, charge: 0 });
      i++;
    } else {
      throw new SmilesError(`unexpected character ${JSON.stringify(ch)} at ${i}`);
    }
  }
  if (stack.length) throw new SmilesError("unbalanced parenthesis");
  if (ringOpen.size) throw new SmilesError("unclosed ring bond");
  if (pendingBond !== null) throw new SmilesError("trailing bond symbol");
  if (atoms.length === 0) throw new SmilesError("no atoms");
  return { atoms, bonds };
}
