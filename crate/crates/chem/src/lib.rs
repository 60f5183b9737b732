//! SMILES parsing, valence validation, canonical SMILES and hashed-path
//! fingerprints.
//!
//! The fingerprint is a 2048-bit hashed linear-path scheme (paths of up to
//! seven bonds) used as a stand-in for MACCS keys.

mod canon;
mod element;
mod error;
mod fingerprint;
mod mol;
mod parser;

pub use canon::canonicalize;
pub use element::Element;
pub use error::{ChemError, SmilesError, SmilesErrorKind};
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, FINGERPRINT_BITS, MAX_PATH_BONDS};
pub use mol::{Atom, Bond, BondOrder, MoleculeGraph, RingClosure};
pub use parser::{parse_bytes, parse_smiles};

/// Parses and checks valence.
pub fn validate(mol: &MoleculeGraph) -> bool {
    mol.validate()
}

/// Canonical form of a SMILES string, if it parses and passes the valence check.
pub fn canonical_smiles(s: &str) -> Result<String, ChemError> {
    canonicalize(&parse_smiles(s)?)
}

/// True when `s` parses and passes the valence check.
pub fn is_valid_smiles(s: &str) -> bool {
    parse_smiles(s).map(|m| m.validate()).unwrap_or(false)
}

/// Tanimoto similarity of two SMILES strings; `None` if either fails to parse.
pub fn smiles_similarity(a: &str, b: &str) -> Option<f64> {
    let fa = fingerprint(&parse_smiles(a).ok()?);
    let fb = fingerprint(&parse_smiles(b).ok()?);
    Some(tanimoto(&fa, &fb))
}
