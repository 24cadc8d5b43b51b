"""Fixed-width atom (39) and bond (10) feature vectors.

Atom layout, in order::

    element one-hot   B C N O F Si P S Cl As Se Br Te I At other   16
    degree one-hot    0..5 (5 means five or more)                   6
    formal charge                                                  1
    radical electrons                                              1
    hybridization     SP SP2 SP3 SP3D SP3D2 OTHER                  6
    aromatic                                                       1
    hydrogen count    0..4                                         5
    chiral center                                                  1
    chirality type    CW CCW                                       2

Bond layout: order one-hot (single, double, triple, aromatic), conjugated,
in ring, stereo one-hot (none, any, Z, E).

Checkpoints depend on this layout; do not reorder.
"""
from __future__ import annotations

import numpy as np

from .graph import BondStereo, Chirality

ATOM_ELEMENTS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "As", "Se", "Br", "Te", "I", "At")
ATOM_FEATURE_DIM = 39
BOND_FEATURE_DIM = 10

# name -> (start, width)
ATOM_SLOTS = {
    "element": (0, 16),
    "degree": (16, 6),
    "formal_charge": (22, 1),
    "radical": (23, 1),
    "hybridization": (24, 6),
    "aromatic": (30, 1),
    "num_hydrogens": (31, 5),
    "chiral": (36, 1),
    "chirality_type": (37, 2),
}
BOND_SLOTS = {
    "order": (0, 4),
    "conjugated": (4, 1),
    "in_ring": (5, 1),
    "stereo": (6, 4),
}


def atom_vector(atom) -> np.ndarray:
    v = np.zeros(ATOM_FEATURE_DIM)
    try:
        v[ATOM_ELEMENTS.index(atom.element)] = 1.0
    except ValueError:
        v[15] = 1.0
    v[16 + min(atom.degree, 5)] = 1.0
    v[22] = atom.formal_charge
    v[23] = atom.radical_electrons
    v[24 + int(atom.hybridization)] = 1.0
    v[30] = float(atom.is_aromatic)
    v[31 + min(max(atom.num_hydrogens, 0), 4)] = 1.0
    if atom.chirality != Chirality.NONE:
        v[36] = 1.0
        v[37 if atom.chirality == Chirality.CW else 38] = 1.0
    return v


def bond_vector(bond) -> np.ndarray:
    v = np.zeros(BOND_FEATURE_DIM)
    v[int(bond.order)] = 1.0
    v[4] = float(bond.is_conjugated)
    v[5] = float(bond.in_ring)
    v[6 + int(BondStereo(bond.stereo))] = 1.0
    return v


def featurize_atoms(atoms) -> np.ndarray:
    if not atoms:
        return np.zeros((0, ATOM_FEATURE_DIM))
    return np.stack([atom_vector(a) for a in atoms])


def featurize_bonds(bonds) -> np.ndarray:
    if not bonds:
        return np.zeros((0, BOND_FEATURE_DIM))
    return np.stack([bond_vector(b) for b in bonds])


def featurize(mol):
    """Return ``(atom_features, bond_features)`` for a molecule."""
    return featurize_atoms(mol.atoms), featurize_bonds(mol.bonds)
