"""Collate molecules into padded (engine) and flat (message passing) layouts.

Padded arrays have shape ``(B, N, ...)`` with ``N`` the largest molecule in
the batch; padding atoms carry mass 1, zero features and are masked out of
every interaction.  Flat arrays stack the real atoms of all molecules; row
``a`` of a flat array is padded slot ``flat_index[a]`` of the
``(B * N, ...)`` reshaped padded array.
"""
from __future__ import annotations

from functools import cached_property
from typing import Sequence

import numpy as np

from .chem.featurize import ATOM_FEATURE_DIM, BOND_FEATURE_DIM
from .chem.graph import MoleculeGraph

MASS_SCALE = 50.0


def normalized_adjacency(adj: np.ndarray, self_loops: float | np.ndarray = 1.0) -> np.ndarray:
    """``D^-1/2 (A + c I) D^-1/2`` with a guard for zero-degree rows."""
    a = np.asarray(adj, dtype=np.float64)
    n = a.shape[-1]
    a = a + np.asarray(self_loops)[..., None, None] * np.eye(n)
    deg = a.sum(-1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return a * dinv[..., :, None] * dinv[..., None, :]


def hop_weights(mol: MoleculeGraph, k: int) -> np.ndarray:
    """``Ã^k`` for the simple (bond-type agnostic) adjacency with self-loops."""
    at = normalized_adjacency(mol.adjacency(), 1.0)
    return np.linalg.matrix_power(at, k)


class GraphBatch:
    def __init__(self, molecules: Sequence[MoleculeGraph], coords: Sequence[np.ndarray] | None = None):
        mols = list(molecules)
        if not mols:
            raise ValueError("empty batch")
        self.molecules = mols
        self.B = len(mols)
        self.n_atoms = np.array([m.num_atoms for m in mols], dtype=np.intp)
        self.N = int(self.n_atoms.max())
        B, N = self.B, self.N

        self.atom_mask = np.arange(N)[None, :] < self.n_atoms[:, None]
        self.X = np.zeros((B, N, ATOM_FEATURE_DIM))
        self.masses = np.ones((B, N))
        self.order = np.tile(np.arange(N), (B, 1))
        self.position = np.tile(np.arange(N), (B, 1))
        send, recv, efeat, rev = [], [], [], []
        mol_index, flat_index = [], []
        offset = 0
        for b, m in enumerate(mols):
            n = m.num_atoms
            self.X[b, :n] = m.atom_features
            self.masses[b, :n] = m.masses / MASS_SCALE
            self.order[b, :n] = m.smiles_order
            self.position[b, np.asarray(m.smiles_order, dtype=np.intp)] = np.arange(n)
            mol_index.extend([b] * n)
            flat_index.extend(b * N + np.arange(n))
            for k, bond in enumerate(m.bonds):
                e = len(send)
                # directed copies i->j and j->i are adjacent; rev links them
                send += [offset + bond.begin, offset + bond.end]
                recv += [offset + bond.end, offset + bond.begin]
                efeat += [m.bond_features[k], m.bond_features[k]]
                rev += [e + 1, e]
            offset += n
        self.num_flat = offset
        self.mol_index = np.array(mol_index, dtype=np.intp)
        self.flat_index = np.array(flat_index, dtype=np.intp)
        self.send = np.array(send, dtype=np.intp)
        self.recv = np.array(recv, dtype=np.intp)
        self.reverse_edge = np.array(rev, dtype=np.intp)
        self.edge_features = np.array(efeat, dtype=np.float64).reshape(len(send), BOND_FEATURE_DIM)
        self.X_flat = self.X.reshape(B * N, -1)[self.flat_index]
        # padded (B*N*N) slot of each directed edge, receiver-major
        loc_recv = self.flat_index[self.recv] if len(recv) else np.zeros(0, dtype=np.intp)
        loc_send = self.flat_index[self.send] if len(send) else np.zeros(0, dtype=np.intp)
        self.edge_slot = (loc_recv // N) * N * N + (loc_recv % N) * N + (loc_send % N)
        self.edge_mol = loc_recv // N
        self.num_bonds = np.array([m.num_bonds for m in mols], dtype=np.intp)
        self.has_neighbors = np.zeros(self.num_flat, dtype=bool)
        self.has_neighbors[self.recv] = True

        self.ref = None
        if coords is None and all(m.reference_conformation is not None for m in mols):
            coords = [m.reference_conformation for m in mols]
        if coords is not None:
            self.ref = np.zeros((B, N, 3))
            for b, c in enumerate(coords):
                self.ref[b, : self.n_atoms[b]] = np.asarray(c, dtype=np.float64).reshape(-1, 3)

    @cached_property
    def pair_mask(self) -> np.ndarray:
        """(B, N, N) True for distinct real atoms i != j."""
        m = self.atom_mask[:, :, None] & self.atom_mask[:, None, :]
        return m & ~np.eye(self.N, dtype=bool)[None]

    @cached_property
    def simple_adjacency(self) -> np.ndarray:
        a = np.zeros((self.B, self.N, self.N))
        for b, m in enumerate(self.molecules):
            a[b, : m.num_atoms, : m.num_atoms] = m.adjacency()
        return a

    def hop_weights(self, k: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_hop_cache", {})
        if k not in cache:
            w = np.zeros((self.B, self.N, self.N))
            for b, m in enumerate(self.molecules):
                n = m.num_atoms
                w[b, :n, :n] = hop_weights(m, k)
            cache[k] = w
        return cache[k]

    @property
    def mass_weights(self) -> np.ndarray:
        """Masses with padding zeroed."""
        return np.where(self.atom_mask, self.masses, 0.0)

    def to_flat(self, padded: np.ndarray) -> np.ndarray:
        return padded.reshape((self.B * self.N,) + padded.shape[2:])[self.flat_index]

    def split_padded(self, padded: np.ndarray) -> list[np.ndarray]:
        return [np.asarray(padded[b, : self.n_atoms[b]]) for b in range(self.B)]
