import { describe, expect, it } from "vitest";

import { ACYCLIC, murckoScaffold, ScaffoldIndex, scaffoldKey } from "../src/scaffold.js";
import { parseSmiles } from "../src/smiles.js";

describe("murckoScaffold", () => {
  it("strips side chains down to the ring system", () => {
    const toluene = murckoScaffold(parseSmiles("Cc1ccccc1"));
    expect(toluene.atoms).toHaveLength(6);
    expect(toluene.bonds).toHaveLength(6);
  });

  it("keeps ring-ring linkers", () => {
    const biphenylmethane = murckoScaffold(parseSmiles("c1ccccc1Cc1ccccc1"));
    expect(biphenylmethane.atoms).toHaveLength(13); // two rings + CH2 linker
  });

  it("reduces acyclic molecules to nothing", () => {
    expect(murckoScaffold(parseSmiles("CCCCO")).atoms).toHaveLength(0);
  });
});

describe("scaffold classes", () => {
  it("gives ethylbenzene and toluene the same class", () => {
    const index = new ScaffoldIndex();
    const toluene = index.classOf(parseSmiles("Cc1ccccc1"));
    const ethylbenzene = index.classOf(parseSmiles("CCc1ccccc1"));
    const benzene = index.classOf(parseSmiles("c1ccccc1"));
    expect(ethylbenzene).toBe(toluene);
    expect(benzene).toBe(toluene);
  });

  it("separates different ring systems", () => {
    const index = new ScaffoldIndex();
    const benzene = index.classOf(parseSmiles("c1ccccc1"));
    const cyclohexane = index.classOf(parseSmiles("C1CCCCC1"));
    const pyridine = index.classOf(parseSmiles("c1ccncc1"));
    expect(new Set([benzene, cyclohexane, pyridine]).size).toBe(3);
  });

  it("groups acyclic molecules into the dedicated class 0", () => {
    const index = new ScaffoldIndex();
    expect(index.classOf(parseSmiles("CCO"))).toBe(0);
    expect(index.classOf(parseSmiles("CCCC"))).toBe(0);
  });

  it("is deterministic across calls", () => {
    const a = scaffoldKey(murckoScaffold(parseSmiles("Cc1ccccc1")));
    const b = scaffoldKey(murckoScaffold(parseSmiles("c1ccccc1C")));
    expect(a).toBe(b);
    expect(scaffoldKey(murckoScaffold(parseSmiles("CC")))).toBe(ACYCLIC);
  });

  it("is invariant to atom ordering in the input", () => {
    // naphthalene written two different ways
    const a = scaffoldKey(murckoScaffold(parseSmiles("c1ccc2ccccc2c1")));
    const b = scaffoldKey(murckoScaffold(parseSmiles("c1ccc2c(c1)cccc2")));
    expect(a).toBe(b);
  });
});
