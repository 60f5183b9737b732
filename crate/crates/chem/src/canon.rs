//! Canonical SMILES.
//!
//! Atoms get invariant-based ranks refined over neighbourhoods until stable.
//! Remaining ties are broken by trying each member of the lowest tied class
//! and keeping the lexicographically smallest output, so the result does not
//! depend on input atom order. A leaf budget bounds the search on highly
//! symmetric graphs.

use crate::error::ChemError;
use crate::mol::{BondOrder, MoleculeGraph};

const LEAF_BUDGET: usize = 2048;

pub fn canonicalize(mol: &MoleculeGraph) -> Result<String, ChemError> {
    if !mol.validate() {
        return Err(ChemError::InvalidValence);
    }
    if mol.atoms.is_empty() {
        return Ok(String::new());
    }
    let ctx = Context::new(mol);
    let initial = ctx.refine(ctx.initial_ranks());
    let mut budget = LEAF_BUDGET;
    Ok(ctx.search(initial, &mut budget))
}

struct Context<'a> {
    mol: &'a MoleculeGraph,
    adj: Vec<Vec<usize>>,
    hydrogens: Vec<u8>,
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut rank = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            rank += 1;
        }
        ranks[order[w]] = rank;
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().max().map_or(0, |m| m + 1)
}

impl<'a> Context<'a> {
    fn new(mol: &'a MoleculeGraph) -> Self {
        Self {
            mol,
            adj: mol.adjacency(),
            hydrogens: mol.hydrogen_counts(),
        }
    }

    fn initial_ranks(&self) -> Vec<usize> {
        let keys: Vec<_> = self
            .mol
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    self.adj[i].len(),
                    a.element.atomic_number(),
                    a.isotope.unwrap_or(0),
                    a.charge,
                    self.hydrogens[i],
                    a.aromatic,
                )
            })
            .collect();
        dense_ranks(&keys)
    }

    fn refine(&self, mut ranks: Vec<usize>) -> Vec<usize> {
        loop {
            let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
                .map(|i| {
                    let mut nb: Vec<(usize, u8)> = self.adj[i]
                        .iter()
                        .map(|&b| {
                            let bond = &self.mol.bonds[b];
                            (ranks[bond.other(i)], bond.order.code())
                        })
                        .collect();
                    nb.sort_unstable();
                    (ranks[i], nb)
                })
                .collect();
            let next = dense_ranks(&keys);
            if class_count(&next) == class_count(&ranks) {
                return next;
            }
            ranks = next;
        }
    }

    fn search(&self, ranks: Vec<usize>, budget: &mut usize) -> String {
        let n = ranks.len();
        if class_count(&ranks) == n {
            *budget = budget.saturating_sub(1);
            return self.emit(&ranks);
        }
        let mut counts = vec![0usize; n];
        ranks.iter().for_each(|&r| counts[r] += 1);
        let tied = (0..n).find(|&r| counts[r] > 1).expect("some class is tied");
        let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied).collect();

        let mut best: Option<String> = None;
        for (k, &pick) in members.iter().enumerate() {
            if k > 0 && *budget == 0 {
                break;
            }
            let split: Vec<usize> = ranks
                .iter()
                .enumerate()
                .map(|(i, &r)| if i == pick { 2 * r } else { 2 * r + 1 })
                .collect();
            let refined = self.refine(dense_ranks(&split));
            let s = self.search(refined, budget);
            if best.as_ref().is_none_or(|b| s < *b) {
                best = Some(s);
            }
        }
        best.expect("at least one candidate")
    }

    fn atom_token(&self, i: usize) -> String {
        let atom = &self.mol.atoms[i];
        let h = self.hydrogens[i];
        let symbol = if atom.aromatic {
            atom.element.symbol().to_ascii_lowercase()
        } else {
            atom.element.symbol().to_string()
        };
        let bare_ok = atom.element.is_organic()
            && atom.charge == 0
            && atom.isotope.is_none()
            && self.mol.default_implicit_h(i, &self.adj) == h;
        if bare_ok {
            return symbol;
        }
        let mut s = String::from("[");
        if let Some(iso) = atom.isotope {
            s.push_str(&iso.to_string());
        }
        s.push_str(&symbol);
        match h {
            0 => {}
            1 => s.push('H'),
            n => s.push_str(&format!("H{n}")),
        }
        match atom.charge {
            0 => {}
            1 => s.push('+'),
            -1 => s.push('-'),
            q if q > 0 => s.push_str(&format!("+{q}")),
            q => s.push_str(&format!("-{}", -q)),
        }
        s.push(']');
        s
    }

    fn bond_token(&self, bond: usize) -> &'static str {
        let b = &self.mol.bonds[bond];
        let both_aromatic = self.mol.atoms[b.a].aromatic && self.mol.atoms[b.b].aromatic;
        match b.order {
            BondOrder::Single if both_aromatic => "-",
            BondOrder::Single | BondOrder::Aromatic => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }

    /// Neighbours of `i` as `(bond, atom)` sorted by rank.
    fn sorted_neighbors(&self, i: usize, ranks: &[usize]) -> Vec<(usize, usize)> {
        let mut nb: Vec<(usize, usize)> = self.adj[i]
            .iter()
            .map(|&b| (b, self.mol.bonds[b].other(i)))
            .collect();
        nb.sort_by_key(|&(_, a)| ranks[a]);
        nb
    }

    fn emit(&self, ranks: &[usize]) -> String {
        let n = ranks.len();
        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.sort_by_key(|&i| ranks[i]);

        // Pass 1: spanning forest and ring-closure bonds.
        let mut visited = vec![false; n];
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut is_closure = vec![false; self.mol.bonds.len()];
        let mut roots = Vec::new();
        for &start in &by_rank {
            if visited[start] {
                continue;
            }
            roots.push(start);
            let mut stack = vec![(start, usize::MAX, 0usize)];
            visited[start] = true;
            // Iterative DFS keeping a cursor into each atom's sorted neighbours.
            let mut nbrs: Vec<Option<Vec<(usize, usize)>>> = vec![None; n];
            while let Some(&mut (atom, parent_bond, ref mut cursor)) = stack.last_mut() {
                let list = nbrs[atom].get_or_insert_with(|| self.sorted_neighbors(atom, ranks));
                if *cursor >= list.len() {
                    stack.pop();
                    continue;
                }
                let (bond, other) = list[*cursor];
                *cursor += 1;
                if bond == parent_bond || is_closure[bond] {
                    continue;
                }
                if visited[other] {
                    is_closure[bond] = true;
                } else {
                    visited[other] = true;
                    children[atom].push((bond, other));
                    stack.push((other, bond, 0));
                }
            }
        }

        // Pass 2: write atoms, ring digits and branches.
        let mut out = String::new();
        let mut emitted = vec![false; n];
        let mut open_digit: Vec<Option<u16>> = vec![None; self.mol.bonds.len()];
        let mut digits_in_use: Vec<bool> = vec![false; 100];
        for (k, &root) in roots.iter().enumerate() {
            if k > 0 {
                out.push('.');
            }
            self.write_atom(root, ranks, &children, &is_closure, &mut emitted, &mut open_digit, &mut digits_in_use, &mut out);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn write_atom(
        &self,
        atom: usize,
        ranks: &[usize],
        children: &[Vec<(usize, usize)>],
        is_closure: &[bool],
        emitted: &mut [bool],
        open_digit: &mut [Option<u16>],
        digits_in_use: &mut [bool],
        out: &mut String,
    ) {
        out.push_str(&self.atom_token(atom));
        emitted[atom] = true;

        let closures: Vec<(usize, usize)> = self
            .sorted_neighbors(atom, ranks)
            .into_iter()
            .filter(|&(b, _)| is_closure[b])
            .collect();
        // Closing digits first, in the order they were opened.
        let mut closing: Vec<(u16, usize)> = closures
            .iter()
            .filter(|&&(_, o)| emitted[o])
            .filter_map(|&(b, _)| open_digit[b].map(|d| (d, b)))
            .collect();
        closing.sort_unstable();
        for (d, b) in closing {
            push_digit(out, d);
            digits_in_use[d as usize] = false;
            open_digit[b] = None;
        }
        for &(b, other) in &closures {
            if emitted[other] {
                continue;
            }
            let d = (1..100).find(|&d| !digits_in_use[d]).unwrap_or(99) as u16;
            digits_in_use[d as usize] = true;
            open_digit[b] = Some(d);
            out.push_str(self.bond_token(b));
            push_digit(out, d);
        }

        let kids = &children[atom];
        for (k, &(bond, child)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push_str(self.bond_token(bond));
            self.write_atom(child, ranks, children, is_closure, emitted, open_digit, digits_in_use, out);
            if !last {
                out.push(')');
            }
        }
    }
}

fn push_digit(out: &mut String, d: u16) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d}"));
    }
}
