"""Readers and writers for CSV datasets, XYZ frames and SDF (V2000) records."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..exceptions import (
    CountMismatch,
    DataError,
    HeaderMismatch,
    MalformedLine,
    TruncatedRecord,
    UnsupportedVersion,
)
from .graph import BondOrder, MoleculeGraph, build_molecule
from .smiles import parse_smiles

log = logging.getLogger(__name__)


# --- CSV datasets ------------------------------------------------------------

@dataclass
class Dataset:
    """Molecules with an ``n x k`` target matrix; missing targets are NaN."""

    molecules: list[MoleculeGraph]
    targets: np.ndarray
    task_names: list[str]
    skipped: int = 0
    rows: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.molecules)

    def __getitem__(self, i):
        return self.molecules[i], self.targets[i]

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.targets)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset(
            molecules=[self.molecules[i] for i in idx],
            targets=self.targets[idx] if len(idx) else self.targets[:0],
            task_names=list(self.task_names),
            skipped=0,
            rows=[self.rows[i] for i in idx] if self.rows else [],
        )


def _parse_float(cell: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    return float(cell)


def read_dataset(path) -> Dataset:
    """Read ``smiles,<t1>,...,<tk>`` rows.

    Rows whose SMILES fail to parse are skipped and counted; row order is
    otherwise preserved.  Empty target cells become NaN (masked in losses).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "smiles":
            raise HeaderMismatch(f"{path}: first column must be 'smiles', got {header[:1]}")
        tasks = [h.strip() for h in header[1:]]
        mols, ys, rows = [], [], []
        skipped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(header):
                raise HeaderMismatch(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                y = [_parse_float(c) for c in row[1:]]
            except ValueError as exc:
                raise MalformedLine(f"{path}:{lineno}: non-numeric target ({exc})") from None
            try:
                mol = parse_smiles(row[0], name=f"row{lineno - 1}")
            except DataError as exc:
                log.debug("skipping %s:%d: %s", path, lineno, exc)
                skipped += 1
                continue
            mols.append(mol)
            ys.append(y)
            rows.append(lineno - 2)
    if skipped:
        log.warning("%s: skipped %d unparsable SMILES", path, skipped)
    targets = np.array(ys, dtype=np.float64).reshape(len(ys), len(tasks))
    return Dataset(mols, targets, tasks, skipped, rows)


# --- XYZ ---------------------------------------------------------------------

@dataclass
class XYZFrame:
    elements: list[str]
    coordinates: np.ndarray
    comment: str = ""


def _format_xyz(elements, coords, comment) -> str:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if len(elements) != len(coords):
        raise CountMismatch(f"{len(elements)} elements but {len(coords)} coordinate rows")
    if "\n" in comment:
        raise MalformedLine("XYZ comment must be a single line")
    lines = [str(len(elements)), comment]
    for el, (x, y, z) in zip(elements, coords):
        lines.append(f"{el} {x:.10f} {y:.10f} {z:.10f}")
    return "\n".join(lines) + "\n"


def write_xyz(path, elements: Sequence[str], coords, comment: str = "") -> None:
    Path(path).write_text(_format_xyz(elements, coords, comment))


def write_xyz_frames(path, frames: Iterable[XYZFrame]) -> None:
    Path(path).write_text("".join(_format_xyz(f.elements, f.coordinates, f.comment) for f in frames))


def read_xyz_frames(path) -> list[XYZFrame]:
    lines = Path(path).read_text().splitlines()
    frames = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            count = int(lines[i].strip())
        except ValueError:
            raise MalformedLine(f"{path}:{i + 1}: expected atom count, got {lines[i]!r}") from None
        if i + 1 >= len(lines):
            raise CountMismatch(f"{path}: frame at line {i + 1} has no comment line")
        comment = lines[i + 1]
        body = []
        j = i + 2
        while j < len(lines):
            parts = lines[j].split()
            if len(parts) == 1 and parts[0].lstrip("-").isdigit():
                break  # next frame
            if not parts:
                j += 1
                break
            body.append((j, parts))
            j += 1
        if len(body) != count:
            raise CountMismatch(f"{path}: frame at line {i + 1} declares {count} atoms, found {len(body)}")
        elements, coords = [], []
        for lineno, parts in body:
            if len(parts) < 4:
                raise MalformedLine(f"{path}:{lineno + 1}: expected 'El x y z'")
            try:
                coords.append([float(v) for v in parts[1:4]])
            except ValueError:
                raise MalformedLine(f"{path}:{lineno + 1}: bad coordinate") from None
            elements.append(parts[0])
        frames.append(XYZFrame(elements, np.array(coords, dtype=np.float64).reshape(count, 3), comment))
        i = j
    return frames


def read_xyz(path) -> XYZFrame:
    """Read a single-frame XYZ file (the first frame of a trajectory)."""
    frames = read_xyz_frames(path)
    if not frames:
        raise MalformedLine(f"{path}: no XYZ frame found")
    return frames[0]


# --- SDF (V2000) -------------------------------------------------------------

_CHARGE_CODES = {0: 0, 1: 3, 2: 2, 3: 1, 4: 0, 5: -1, 6: -2, 7: -3}


def _parse_molblock(lines: list[str], start: int, path) -> MoleculeGraph:
    if len(lines) < 4:
        raise TruncatedRecord(f"{path}: record at line {start + 1} has no counts line")
    name = lines[0].strip()
    counts = lines[3]
    if "V3000" in counts:
        raise UnsupportedVersion(f"{path}: V3000 record at line {start + 1}")
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except ValueError:
        raise MalformedLine(f"{path}:{start + 4}: bad counts line {counts!r}") from None
    if len(lines) < 4 + n_atoms:
        raise TruncatedRecord(f"{path}: record at line {start + 1} ends inside the atom block")
    elements, coords, charges = [], [], []
    for k in range(n_atoms):
        line = lines[4 + k]
        try:
            x, y, z = float(line[0:10]), float(line[10:20]), float(line[20:30])
            el = line[31:34].strip()
            code = int(line[36:39]) if line[36:39].strip() else 0
        except ValueError:
            raise MalformedLine(f"{path}:{start + 5 + k}: bad atom line") from None
        elements.append(el)
        coords.append((x, y, z))
        charges.append(_CHARGE_CODES.get(code, 0))
    bond_block = lines[4 + n_atoms: 4 + n_atoms + n_bonds]
    if len(bond_block) < n_bonds or any(ln.startswith("M  END") for ln in bond_block):
        raise TruncatedRecord(f"{path}: record at line {start + 1} ends inside the bond block")
    heavy = [i for i, el in enumerate(elements) if el != "H"]
    if n_bonds == 0 and len(heavy) > 1:
        raise TruncatedRecord(f"{path}: record at line {start + 1} has {len(heavy)} heavy atoms but no bonds")
    raw_bonds = []
    for k, line in enumerate(bond_block):
        try:
            a, b, order = int(line[0:3]) - 1, int(line[3:6]) - 1, int(line[6:9])
        except ValueError:
            raise MalformedLine(f"{path}:{start + 5 + n_atoms + k}: bad bond line") from None
        raw_bonds.append((a, b, order))
    for line in lines[4 + n_atoms + n_bonds:]:
        if line.startswith("M  CHG"):
            parts = line.split()
            for j in range(int(parts[2])):
                charges[int(parts[3 + 2 * j]) - 1] = int(parts[4 + 2 * j])

    remap = {old: new for new, old in enumerate(heavy)}
    hcount = [0] * len(heavy)
    aromatic = [False] * len(heavy)
    bonds = []
    for a, b, order in raw_bonds:
        ha, hb = elements[a] == "H", elements[b] == "H"
        if ha and hb:
            continue
        if ha or hb:
            hcount[remap[b if ha else a]] += 1
            continue
        if order not in (1, 2, 3, 4):
            raise MalformedLine(f"{path}: unsupported bond order {order}")
        bo = BondOrder(order - 1)
        if bo == BondOrder.AROMATIC:
            aromatic[remap[a]] = aromatic[remap[b]] = True
        bonds.append((remap[a], remap[b], bo))
    return build_molecule(
        [elements[i] for i in heavy],
        bonds,
        charges=[charges[i] for i in heavy],
        hydrogens=hcount,
        aromatic=aromatic,
        conformation=np.array([coords[i] for i in heavy], dtype=np.float64).reshape(len(heavy), 3),
        name=name,
    )


def read_sdf(path) -> list[MoleculeGraph]:
    """Read every record of a V2000 SDF file.

    Hydrogens are folded into implicit counts and the heavy-atom coordinates
    become ``reference_conformation``.
    """
    lines = Path(path).read_text().splitlines()
    out = []
    start = 0
    block: list[str] = []
    for i, line in enumerate(lines):
        if line.startswith("$$$$"):
            out.append(_parse_molblock(block, start, path))
            block = []
            start = i + 1
        else:
            block.append(line)
    if any(ln.strip() for ln in block):
        if not any(ln.startswith("M  END") for ln in block):
            raise TruncatedRecord(f"{path}: final record at line {start + 1} is incomplete")
        out.append(_parse_molblock(block, start, path))
    return out


def write_sdf(path, molecules: Sequence[MoleculeGraph], coords: Sequence[np.ndarray] | None = None) -> None:
    """Write heavy-atom V2000 records (implicit hydrogens are not expanded)."""
    chunks = []
    for k, mol in enumerate(molecules):
        xyz = coords[k] if coords is not None else mol.reference_conformation
        if xyz is None:
            xyz = np.zeros((mol.num_atoms, 3))
        lines = [mol.name or f"mol{k}", "  hamforge", ""]
        lines.append(f"{mol.num_atoms:3d}{mol.num_bonds:3d}  0  0  0  0  0  0  0  0999 V2000")
        inv = {v: c for c, v in _CHARGE_CODES.items() if c != 4}
        for atom, (x, y, z) in zip(mol.atoms, np.asarray(xyz)):
            code = inv.get(atom.formal_charge, 0)
            lines.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {atom.element:<3} 0{code:3d}  0  0  0  0  0  0  0  0  0  0")
        for b in mol.bonds:
            lines.append(f"{b.begin + 1:3d}{b.end + 1:3d}{int(b.order) + 1:3d}  0")
        lines.append("M  END")
        lines.append("$$$$")
        chunks.append("\n".join(lines) + "\n")
    Path(path).write_text("".join(chunks))
