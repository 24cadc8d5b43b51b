"""Molecule parsing, featurization and file formats."""
from .featurize import ATOM_FEATURE_DIM, BOND_FEATURE_DIM, featurize
from .graph import (
    Atom,
    Bond,
    BondOrder,
    BondStereo,
    Chirality,
    Hybridization,
    MoleculeGraph,
    build_molecule,
)
from .io import (
    Dataset,
    XYZFrame,
    read_dataset,
    read_sdf,
    read_xyz,
    read_xyz_frames,
    write_sdf,
    write_xyz,
    write_xyz_frames,
)
from .smiles import parse_smiles

__all__ = [
    "ATOM_FEATURE_DIM", "BOND_FEATURE_DIM", "Atom", "Bond", "BondOrder", "BondStereo",
    "Chirality", "Dataset", "Hybridization", "MoleculeGraph", "XYZFrame", "build_molecule",
    "featurize", "parse_smiles", "read_dataset", "read_sdf", "read_xyz", "read_xyz_frames",
    "write_sdf", "write_xyz", "write_xyz_frames",
]
