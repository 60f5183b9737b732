//! Hashed linear-path fingerprints and Tanimoto similarity.

use crate::mol::MoleculeGraph;

pub const FINGERPRINT_BITS: usize = 2048;
pub const MAX_PATH_BONDS: usize = 7;

/// Fixed-length bit vector of hashed atom paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    pub max_path: usize,
}

impl Fingerprint {
    fn empty(max_path: usize) -> Self {
        Self {
            words: vec![0; FINGERPRINT_BITS / 64],
            max_path,
        }
    }

    fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn len(&self) -> usize {
        FINGERPRINT_BITS
    }

    pub fn is_empty(&self) -> bool {
        self.count_ones() == 0
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn on_bits(&self) -> Vec<usize> {
        (0..FINGERPRINT_BITS).filter(|&b| self.get(b)).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn atom_label(mol: &MoleculeGraph, i: usize) -> String {
    let a = &mol.atoms[i];
    let sym = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    if a.charge == 0 {
        sym
    } else {
        format!("{sym}{:+}", a.charge)
    }
}

/// Path string with the direction chosen so both traversals give one key.
fn path_key(labels: &[String], atoms: &[usize], bonds: &[u8]) -> String {
    let forward: Vec<String> = render(labels, atoms.iter().copied(), bonds.iter().copied());
    let backward: Vec<String> = render(labels, atoms.iter().rev().copied(), bonds.iter().rev().copied());
    let f = forward.concat();
    let b = backward.concat();
    if f <= b {
        f
    } else {
        b
    }
}

fn render(
    labels: &[String],
    atoms: impl Iterator<Item = usize>,
    mut bonds: impl Iterator<Item = u8>,
) -> Vec<String> {
    let mut parts = Vec::new();
    for (k, a) in atoms.enumerate() {
        if k > 0 {
            parts.push(match bonds.next() {
                Some(1) => "-".into(),
                Some(2) => "=".into(),
                Some(3) => "#".into(),
                _ => ":".into(),
            });
        }
        parts.push(format!("[{}]", labels[a]));
    }
    parts
}

/// Sets one bit per distinct simple path of 0..=7 bonds.
pub fn fingerprint(mol: &MoleculeGraph) -> Fingerprint {
    let mut fp = Fingerprint::empty(MAX_PATH_BONDS);
    let labels: Vec<String> = (0..mol.atoms.len()).map(|i| atom_label(mol, i)).collect();
    let adj = mol.adjacency();
    let mut atoms = Vec::with_capacity(MAX_PATH_BONDS + 1);
    let mut bonds = Vec::with_capacity(MAX_PATH_BONDS);
    let mut on_path = vec![false; mol.atoms.len()];
    for start in 0..mol.atoms.len() {
        walk(mol, &adj, &labels, start, &mut atoms, &mut bonds, &mut on_path, &mut fp);
    }
    fp
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mol: &MoleculeGraph,
    adj: &[Vec<usize>],
    labels: &[String],
    atom: usize,
    atoms: &mut Vec<usize>,
    bonds: &mut Vec<u8>,
    on_path: &mut [bool],
    fp: &mut Fingerprint,
) {
    atoms.push(atom);
    on_path[atom] = true;
    let key = path_key(labels, atoms, bonds);
    fp.set((fnv1a(key.as_bytes()) % FINGERPRINT_BITS as u64) as usize);
    if bonds.len() < MAX_PATH_BONDS {
        for &b in &adj[atom] {
            let next = mol.bonds[b].other(atom);
            if on_path[next] {
                continue;
            }
            bonds.push(mol.bonds[b].order.code());
            walk(mol, adj, labels, next, atoms, bonds, on_path, fp);
            bonds.pop();
        }
    }
    on_path[atom] = false;
    atoms.pop();
}

/// `|a ∧ b| / |a ∨ b|`, defined as 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        1.0
    } else {
        f64::from(both) / f64::from(either)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_smiles;

    fn fp(s: &str) -> Fingerprint {
        fingerprint(&parse_smiles(s).unwrap())
    }

    #[test]
    fn self_similarity_is_one() {
        for s in ["C", "CCO", "c1ccccc1O", "CCCCCCOC1=NSN=C1C2=CCCN(C2)C"] {
            let f = fp(s);
            assert_eq!(tanimoto(&f, &f), 1.0);
        }
    }

    #[test]
    fn methane_and_water_share_nothing() {
        let (c, o) = (fp("C"), fp("O"));
        assert_eq!(c.count_ones(), 1);
        assert_eq!(o.count_ones(), 1);
        assert_ne!(c.on_bits(), o.on_bits());
        assert_eq!(tanimoto(&c, &o), 0.0);
    }

    #[test]
    fn order_invariant() {
        assert_eq!(fp("CCO"), fp("OCC"));
        assert_eq!(fp("c1ccccc1Cl"), fp("Clc1ccccc1"));
    }

    #[test]
    fn related_molecules_are_closer() {
        let base = fp("CCCCO");
        assert!(tanimoto(&base, &fp("CCCCCO")) > tanimoto(&base, &fp("c1ccncc1")));
    }

    #[test]
    fn empty_fingerprints_are_identical() {
        let e = Fingerprint::empty(MAX_PATH_BONDS);
        assert_eq!(tanimoto(&e, &e), 1.0);
        assert!(e.is_empty());
    }
}
