//! Molecular graphs: SMILES parsing, directed-edge featurization, scaffolds
//! and labelled dataset ingestion.

mod dataset;
mod featurize;
mod molecule;
mod scaffold;
mod smiles;

use thiserror::Error;

pub use dataset::{read_dataset, read_dataset_from, write_dataset, Dataset, MoleculeRecord};
pub use featurize::{
    atom_features, featurize, featurize_with, DirectedEdge, DirectedEdgeGraph, FeaturizeOptions,
    ATOM_FEATURE_DIM, BOND_FEATURE_DIM, ELEMENT_ALPHABET,
};
pub use molecule::{Atom, Bond, BondOrder, Molecule};
pub use scaffold::{canonical_key, murcko_scaffold, scaffold_atoms, scaffold_molecule, Scaffold};
pub use smiles::{parse_smiles, SmilesError};

#[derive(Debug, Error)]
pub enum ChemError {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error("element '{symbol}' is outside the feature alphabet ({allowed}, other only in permissive mode)")]
    UnsupportedElement { symbol: String, allowed: String },
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
