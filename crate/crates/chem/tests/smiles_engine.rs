//! Corpus-level checks: parser totality, canonical invariance under atom
//! permutation, idempotence and fingerprint invariance.

use molsyn_chem::{canonicalize, fingerprint, parse_bytes, parse_smiles, tanimoto, Bond, MoleculeGraph, RingClosure};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> Vec<String> {
    include_str!("data/corpus.smi")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// Relabels atoms so that new index `perm[i]` holds old atom `i`.
fn permute(mol: &MoleculeGraph, perm: &[usize]) -> MoleculeGraph {
    let mut atoms = mol.atoms.clone();
    for (old, &new) in perm.iter().enumerate() {
        atoms[new] = mol.atoms[old].clone();
    }
    let mut bonds: Vec<Bond> = mol
        .bonds
        .iter()
        .map(|b| Bond {
            a: perm[b.a],
            b: perm[b.b],
            order: b.order,
        })
        .collect();
    bonds.reverse();
    MoleculeGraph {
        atoms,
        bonds,
        ring_closures: Vec::<RingClosure>::new(),
        lossy: mol.lossy,
    }
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn corpus_parses_and_validates() {
    let corpus = corpus();
    assert_eq!(corpus.len(), 100);
    for s in &corpus {
        let m = parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}"));
        assert!(m.validate(), "{s} should pass the valence check");
    }
}

#[test]
fn canonical_form_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for s in corpus() {
        let mol = parse_smiles(&s).unwrap();
        let expected = canonicalize(&mol).unwrap();
        let n = mol.atom_count();
        let mut check = |perm: &[usize]| {
            let got = canonicalize(&permute(&mol, perm)).unwrap();
            assert_eq!(got, expected, "{s} under {perm:?}");
        };
        if n <= 8 {
            for_each_permutation(n, &mut check);
        } else {
            let mut perm: Vec<usize> = (0..n).collect();
            for _ in 0..50 {
                perm.shuffle(&mut rng);
                check(&perm);
            }
        }
    }
}

#[test]
fn canonicalization_is_idempotent() {
    for s in corpus() {
        let once = canonicalize(&parse_smiles(&s).unwrap()).unwrap();
        let twice = canonicalize(&parse_smiles(&once).unwrap()).unwrap();
        assert_eq!(once, twice, "{s}");
    }
}

#[test]
fn fingerprints_ignore_atom_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in corpus() {
        let mol = parse_smiles(&s).unwrap();
        let mut perm: Vec<usize> = (0..mol.atom_count()).collect();
        perm.shuffle(&mut rng);
        assert_eq!(fingerprint(&mol), fingerprint(&permute(&mol, &perm)), "{s}");
    }
}

#[test]
fn tanimoto_is_symmetric() {
    let corpus = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let a = fingerprint(&parse_smiles(corpus.choose(&mut rng).unwrap()).unwrap());
        let b = fingerprint(&parse_smiles(corpus.choose(&mut rng).unwrap()).unwrap());
        let (ab, ba) = (tanimoto(&a, &b), tanimoto(&b, &a));
        assert_eq!(ab, ba);
        assert!((0.0..=1.0).contains(&ab));
    }
}

#[test]
fn parser_is_total_on_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    const ALPHABET: &[u8] = b"CNOSPFIBrlcnospH[]()=#-:+%0123456789.@/\\";
    for i in 0..100_000 {
        let len = rng.random_range(0..24);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.random()).collect()
        } else {
            (0..len).map(|_| *ALPHABET.choose(&mut rng).unwrap()).collect()
        };
        if let Ok(mol) = parse_bytes(&bytes) {
            if mol.validate() {
                let _ = canonicalize(&mol);
            }
            let _ = fingerprint(&mol);
        }
    }
}
