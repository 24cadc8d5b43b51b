"""Regenerate the test fixtures under tests/data.

Needs RDKit, which is only used here and never imported by the package.

    python scripts/make_fixtures.py --qm9 tests/data/micro_qm9.csv --esol tests/data/ESOL.csv

Writes qm9_500.csv / qm9_500.sdf (heavy-atom SMILES order preserved, MMFF
relaxed conformers with explicit hydrogens, aromatic bonds as order 4) and
esol.csv (smiles,logS).
"""
import argparse
import csv
from pathlib import Path

from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem

RDLogger.DisableLog("rdApp.*")


def embed(smiles, seed):
    mol = Chem.MolFromSmiles(smiles)
    if mol is None:
        return None
    molh = Chem.AddHs(mol)
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(molh, params) != 0:
        return None
    if AllChem.MMFFHasAllMoleculeParams(molh):
        AllChem.MMFFOptimizeMolecule(molh, maxIters=2000)
    return molh


def make_qm9(src, out_dir, count, seed):
    rows = list(csv.DictReader(open(src)))
    kept = []
    for row in rows:
        smi = row["smiles"]
        if "." in smi:
            continue
        molh = embed(smi, seed)
        if molh is None:
            continue
        molh.SetProp("_Name", row["mol_id"])
        kept.append((row, molh))
        if len(kept) == count:
            break
    with open(out_dir / "qm9_500.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "homo", "lumo", "gap"])
        for row, _ in kept:
            w.writerow([row["smiles"], row["homo"], row["lumo"], row["gap"]])
    with open(out_dir / "qm9_500.sdf", "w") as fh:
        for _, molh in kept:
            fh.write(Chem.MolToMolBlock(molh, kekulize=False))
            fh.write("$$$$\n")
    print(f"qm9: {len(kept)} molecules")


def make_esol(src, out_dir):
    rows = list(csv.DictReader(open(src)))
    with open(out_dir / "esol.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "logS"])
        for row in rows:
            w.writerow([row["smiles"], row["measured log solubility in mols per litre"]])
    print(f"esol: {len(rows)} molecules")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--qm9", required=True)
    ap.add_argument("--esol", required=True)
    ap.add_argument("--out", default="tests/data")
    ap.add_argument("--count", type=int, default=500)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    make_qm9(args.qm9, out, args.count, args.seed)
    make_esol(args.esol, out)


if __name__ == "__main__":
    main()
