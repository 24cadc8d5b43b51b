"""Attributed molecular graphs.

Hydrogens are never nodes: every heavy atom carries an implicit hydrogen
count.  Atom indices follow the order in which atoms were written (SMILES
first appearance, or the atom block order of an SDF record).
"""
from __future__ import annotations

import dataclasses
import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elements import atomic_weight


class Hybridization(enum.IntEnum):
    SP = 0
    SP2 = 1
    SP3 = 2
    SP3D = 3
    SP3D2 = 4
    OTHER = 5


class Chirality(enum.IntEnum):
    NONE = 0
    CW = 1
    CCW = 2


class BondOrder(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def valence_contribution(self) -> float:
        return (1.0, 2.0, 3.0, 1.5)[self]


class BondStereo(enum.IntEnum):
    NONE = 0
    ANY = 1
    Z = 2
    E = 3


@dataclass(frozen=True)
class Atom:
    element: str
    relative_mass: float
    degree: int = 0
    formal_charge: int = 0
    is_aromatic: bool = False
    num_hydrogens: int = 0
    hybridization: Hybridization = Hybridization.SP3
    chirality: Chirality = Chirality.NONE
    radical_electrons: int = 0


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE
    is_conjugated: bool = False
    in_ring: bool = False
    stereo: BondStereo = BondStereo.NONE

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)

    def other(self, idx: int) -> int:
        if idx == self.begin:
            return self.end
        if idx == self.end:
            return self.begin
        raise ValueError(f"atom {idx} is not an endpoint of {self.endpoints}")


@dataclass(frozen=True)
class MoleculeGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    smiles_order: tuple[int, ...]
    atom_features: np.ndarray = field(repr=False, compare=False)
    bond_features: np.ndarray = field(repr=False, compare=False)
    reference_conformation: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    name: str = ""
    smiles: str = ""

    def __post_init__(self):
        n = len(self.atoms)
        if sorted(self.smiles_order) != list(range(n)):
            raise ValueError("smiles_order must be a permutation of atom indices")
        for b in self.bonds:
            if b.begin == b.end or not (0 <= b.begin < n and 0 <= b.end < n):
                raise ValueError(f"invalid bond endpoints {b.endpoints}")
        adj: dict[int, dict[int, int]] = {i: {} for i in range(n)}
        for k, b in enumerate(self.bonds):
            adj[b.begin][b.end] = k
            adj[b.end][b.begin] = k
        object.__setattr__(self, "_adj", adj)
        for arr in (self.atom_features, self.bond_features, self.reference_conformation):
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    @property
    def masses(self) -> np.ndarray:
        return np.array([a.relative_mass for a in self.atoms], dtype=np.float64)

    @property
    def elements(self) -> list[str]:
        return [a.element for a in self.atoms]

    def neighbors(self, idx: int) -> list[int]:
        return sorted(self._adj[idx])

    def bond_between(self, i: int, j: int) -> Optional[Bond]:
        k = self._adj[i].get(j)
        return None if k is None else self.bonds[k]

    def bond_index(self, i: int, j: int) -> Optional[int]:
        return self._adj[i].get(j)

    def adjacency(self) -> np.ndarray:
        """Unweighted 0/1 adjacency (bond existence regardless of type)."""
        n = self.num_atoms
        a = np.zeros((n, n))
        for b in self.bonds:
            a[b.begin, b.end] = a[b.end, b.begin] = 1.0
        return a

    def with_conformation(self, coords) -> "MoleculeGraph":
        coords = np.array(coords, dtype=np.float64).reshape(self.num_atoms, 3)
        return dataclasses.replace(self, reference_conformation=coords)

    def permuted(self, perm: Sequence[int]) -> "MoleculeGraph":
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``.

        The SMILES order is carried along, so the relabelled molecule still
        lists atoms in the same written sequence.
        """
        perm = list(perm)
        n = self.num_atoms
        if sorted(perm) != list(range(n)):
            raise ValueError("perm must be a permutation")
        inv = [0] * n
        for new, old in enumerate(perm):
            inv[old] = new
        atoms = tuple(self.atoms[old] for old in perm)
        bonds = tuple(dataclasses.replace(b, begin=inv[b.begin], end=inv[b.end]) for b in self.bonds)
        conf = None
        if self.reference_conformation is not None:
            conf = np.array(self.reference_conformation[perm])
        return MoleculeGraph(
            atoms=atoms,
            bonds=bonds,
            smiles_order=tuple(inv[i] for i in self.smiles_order),
            atom_features=np.array(self.atom_features[perm]),
            bond_features=np.array(self.bond_features),
            reference_conformation=conf,
            name=self.name,
            smiles=self.smiles,
        )


def _ring_bonds(n: int, edges: list[tuple[int, int]]) -> list[bool]:
    """A bond lies on a ring iff its endpoints stay connected without it."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (i, j) in enumerate(edges):
        adj[i].append((j, k))
        adj[j].append((i, k))
    flags = []
    for k, (i, j) in enumerate(edges):
        seen = {i}
        queue = deque([i])
        found = False
        while queue and not found:
            u = queue.popleft()
            for v, kk in adj[u]:
                if kk == k or v in seen:
                    continue
                if v == j:
                    found = True
                    break
                seen.add(v)
                queue.append(v)
        flags.append(found)
    return flags


_LONE_PAIR_SLOTS = {"N": 1, "O": 2, "S": 2}


def _hybridization(element, orders, num_h, n_neighbors):
    n_triple = sum(o == BondOrder.TRIPLE for o in orders)
    n_double = sum(o == BondOrder.DOUBLE for o in orders)
    if n_triple or n_double >= 2:
        return Hybridization.SP
    if n_double or any(o == BondOrder.AROMATIC for o in orders):
        return Hybridization.SP2
    total = n_neighbors + num_h
    if total == 0:
        return Hybridization.OTHER
    if total == 5:
        return Hybridization.SP3D
    if total >= 6:
        return Hybridization.SP3D2
    return Hybridization.SP3


def build_molecule(
    elements: Sequence[str],
    bonds: Sequence[tuple[int, int, BondOrder]],
    *,
    charges: Sequence[int] = (),
    hydrogens: Sequence[int] = (),
    aromatic: Sequence[bool] = (),
    chirality: Sequence[Chirality] = (),
    stereo: Optional[dict[int, BondStereo]] = None,
    smiles_order: Optional[Sequence[int]] = None,
    conformation=None,
    name: str = "",
    smiles: str = "",
) -> MoleculeGraph:
    """Assemble a featurized :class:`MoleculeGraph` from raw per-atom data.

    Ring membership, conjugation and hybridization are perceived here so
    that every reader produces the same derived fields.
    """
    from .featurize import featurize_atoms, featurize_bonds

    n = len(elements)
    charges = list(charges) or [0] * n
    hydrogens = list(hydrogens) or [0] * n
    aromatic = list(aromatic) or [False] * n
    chirality = list(chirality) or [Chirality.NONE] * n
    stereo = stereo or {}

    edges = [(i, j) for i, j, _ in bonds]
    ring = _ring_bonds(n, edges)
    # a bond between aromatic atoms that is not on a ring (biaryl link) is single
    bonds = [
        (i, j, BondOrder.SINGLE if o == BondOrder.AROMATIC and not ring[k] else o)
        for k, (i, j, o) in enumerate(bonds)
    ]
    orders_at: list[list[BondOrder]] = [[] for _ in range(n)]
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j, o in bonds:
        orders_at[i].append(o)
        orders_at[j].append(o)
        nbrs[i].append(j)
        nbrs[j].append(i)

    unsaturated = [any(o != BondOrder.SINGLE for o in orders_at[i]) for i in range(n)]
    # saturated N/O/S with a lone pair next to a pi system donate into it
    donor = [
        not unsaturated[i]
        and elements[i] in ("N", "O", "S")
        and charges[i] <= 0
        and len(nbrs[i]) + hydrogens[i] <= (4 - _LONE_PAIR_SLOTS[elements[i]])
        and any(unsaturated[k] for k in nbrs[i])
        for i in range(n)
    ]
    conj = []
    for i, j, o in bonds:
        if o == BondOrder.AROMATIC:
            conj.append(True)
        elif o == BondOrder.SINGLE:
            conj.append(
                (unsaturated[i] and unsaturated[j])
                or (donor[i] and unsaturated[j])
                or (donor[j] and unsaturated[i])
            )
        else:
            # a multiple bond is conjugated when a neighbouring single bond
            # leads to another unsaturated or donor atom
            conj.append(
                any(unsaturated[k] or donor[k] for k in nbrs[i] if k != j)
                or any(unsaturated[k] or donor[k] for k in nbrs[j] if k != i)
            )

    atoms = []
    for i, el in enumerate(elements):
        h = int(min(max(hydrogens[i], 0), 4))
        atoms.append(
            Atom(
                element=el,
                relative_mass=atomic_weight(el),
                degree=len(nbrs[i]),
                formal_charge=int(charges[i]),
                is_aromatic=bool(aromatic[i]),
                num_hydrogens=h,
                hybridization=(
                    Hybridization.SP2 if donor[i] else _hybridization(el, orders_at[i], h, len(nbrs[i]))
                ),
                chirality=Chirality(chirality[i]),
            )
        )
    bond_objs = [
        Bond(
            begin=i,
            end=j,
            order=BondOrder(o),
            is_conjugated=conj[k],
            in_ring=ring[k],
            stereo=stereo.get(k, BondStereo.NONE),
        )
        for k, (i, j, o) in enumerate(bonds)
    ]
    if smiles_order is None:
        smiles_order = range(n)
    conf = None if conformation is None else np.asarray(conformation, dtype=np.float64).reshape(n, 3)
    return MoleculeGraph(
        atoms=tuple(atoms),
        bonds=tuple(bond_objs),
        smiles_order=tuple(int(i) for i in smiles_order),
        atom_features=featurize_atoms(atoms),
        bond_features=featurize_bonds(bond_objs),
        reference_conformation=conf,
        name=name,
        smiles=smiles,
    )
