//! SMILES reader.
//!
//! Works on raw bytes so arbitrary input yields either a graph or a
//! [`SmilesError`] carrying the byte offset of the problem.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{SmilesError, SmilesErrorKind};
use crate::mol::{Atom, Bond, BondOrder, MoleculeGraph, RingClosure};

pub fn parse_smiles(s: &str) -> Result<MoleculeGraph, SmilesError> {
    parse_bytes(s.as_bytes())
}

pub fn parse_bytes(input: &[u8]) -> Result<MoleculeGraph, SmilesError> {
    Parser::new(input).run()
}

#[derive(Clone, Copy)]
struct PendingBond {
    order: Option<BondOrder>,
    offset: usize,
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    mol: MoleculeGraph,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u16, OpenRing>,
}

fn err(offset: usize, kind: SmilesErrorKind) -> SmilesError {
    SmilesError { offset, kind }
}

impl<'a> Parser<'a> {
    fn new(input: &'a [u8]) -> Self {
        Self {
            input,
            pos: 0,
            mol: MoleculeGraph::default(),
            prev: None,
            pending: None,
            branches: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.input.get(self.pos + k).copied()
    }

    fn run(mut self) -> Result<MoleculeGraph, SmilesError> {
        if self.input.is_empty() {
            return Err(err(0, SmilesErrorKind::Empty));
        }
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let prev = self.prev.ok_or(err(start, SmilesErrorKind::BranchWithoutAtom))?;
                    if self.pending.is_some() {
                        return Err(err(start, SmilesErrorKind::MisplacedBond));
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    let (atom, _) = self
                        .branches
                        .pop()
                        .ok_or(err(start, SmilesErrorKind::UnbalancedParenthesis))?;
                    if let Some(p) = self.pending {
                        return Err(err(p.offset, SmilesErrorKind::MisplacedBond));
                    }
                    // "()" leaves nothing to attach.
                    if self.pos > 0 && self.input[self.pos - 1] == b'(' {
                        return Err(err(start, SmilesErrorKind::EmptyBranch));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(err(start, SmilesErrorKind::MisplacedBond));
                    }
                    let order = match c {
                        b'-' => Some(BondOrder::Single),
                        b'=' => Some(BondOrder::Double),
                        b'#' => Some(BondOrder::Triple),
                        b':' => Some(BondOrder::Aromatic),
                        _ => {
                            self.mol.lossy = true;
                            Some(BondOrder::Single)
                        }
                    };
                    self.pending = Some(PendingBond { order, offset: start });
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(p) = self.pending {
                        return Err(err(p.offset, SmilesErrorKind::MisplacedBond));
                    }
                    if self.prev.is_none() {
                        return Err(err(start, SmilesErrorKind::MisplacedDot));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, start)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, start)?;
                }
            }
        }
        if let Some(p) = self.pending {
            return Err(err(p.offset, SmilesErrorKind::MisplacedBond));
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(err(offset, SmilesErrorKind::UnbalancedParenthesis));
        }
        if let Some(ring) = self.rings.values().next() {
            return Err(err(ring.offset, SmilesErrorKind::UnclosedRing));
        }
        if self.prev.is_none() {
            // trailing '.'
            return Err(err(self.input.len() - 1, SmilesErrorKind::MisplacedDot));
        }
        Ok(self.mol)
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let c = self.input[start];
        let (element, aromatic, len) = match c {
            b'C' if self.peek_at(1) == Some(b'l') => (Element::CL, false, 2),
            b'B' if self.peek_at(1) == Some(b'r') => (Element::BR, false, 2),
            b'B' => (Element::B, false, 1),
            b'C' => (Element::C, false, 1),
            b'N' => (Element::N, false, 1),
            b'O' => (Element::O, false, 1),
            b'P' => (Element::P, false, 1),
            b'S' => (Element::S, false, 1),
            b'F' => (Element::F, false, 1),
            b'I' => (Element::I, false, 1),
            b'b' => (Element::B, true, 1),
            b'c' => (Element::C, true, 1),
            b'n' => (Element::N, true, 1),
            b'o' => (Element::O, true, 1),
            b'p' => (Element::P, true, 1),
            b's' => (Element::S, true, 1),
            b'A'..=b'Z' | b'a'..=b'z' => return Err(err(start, SmilesErrorKind::UnknownElement)),
            _ => return Err(err(start, SmilesErrorKind::UnexpectedByte(c))),
        };
        self.pos += len;
        Ok(Atom::organic(element, aromatic))
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(d @ b'0'..=b'9') = self.peek() {
            value = value.saturating_mul(10).saturating_add(u32::from(d - b'0'));
            self.pos += 1;
        }
        (self.pos > start).then_some(value)
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let bad = |p: usize| err(p, SmilesErrorKind::MalformedBracket);

        let isotope = match self.read_number() {
            Some(v) if v > u32::from(u16::MAX) => return Err(bad(open)),
            Some(v) => Some(v as u16),
            None => None,
        };

        let sym_start = self.pos;
        let first = self.peek().ok_or(bad(open))?;
        let (element, aromatic) = if first.is_ascii_uppercase() {
            self.pos += 1;
            let two = self
                .peek()
                .filter(u8::is_ascii_lowercase)
                .and_then(|l| Element::from_symbol(std::str::from_utf8(&[first, l]).ok()?));
            if let Some(e) = two {
                self.pos += 1;
                (e, false)
            } else {
                let sym = [first];
                let e = Element::from_symbol(std::str::from_utf8(&sym).unwrap_or(""))
                    .ok_or(err(sym_start, SmilesErrorKind::UnknownElement))?;
                (e, false)
            }
        } else if first.is_ascii_lowercase() {
            let two = match (first, self.peek_at(1)) {
                (b's', Some(b'e')) => Some(Element::from_symbol("Se").unwrap()),
                (b'a', Some(b's')) => Some(Element::from_symbol("As").unwrap()),
                _ => None,
            };
            if let Some(e) = two {
                self.pos += 2;
                (e, true)
            } else {
                let e = match first {
                    b'b' => Element::B,
                    b'c' => Element::C,
                    b'n' => Element::N,
                    b'o' => Element::O,
                    b'p' => Element::P,
                    b's' => Element::S,
                    _ => return Err(err(sym_start, SmilesErrorKind::UnknownElement)),
                };
                self.pos += 1;
                (e, true)
            }
        } else {
            return Err(bad(sym_start));
        };

        // Chirality is read and dropped.
        if self.peek() == Some(b'@') {
            self.mol.lossy = true;
            while self.peek() == Some(b'@') {
                self.pos += 1;
            }
            while let Some(b'A'..=b'Z' | b'0'..=b'9') = self.peek() {
                if self.peek() == Some(b'H') {
                    break;
                }
                self.pos += 1;
            }
        }

        let mut hydrogens = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = match self.read_number() {
                Some(n) if n > 9 => return Err(bad(open)),
                Some(n) => n as u8,
                None => 1,
            };
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                if n > 15 {
                    return Err(bad(open));
                }
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
                if charge.abs() > 15 {
                    return Err(bad(open));
                }
            }
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.read_number().is_none() {
                return Err(bad(open));
            }
        }

        if self.peek() != Some(b']') {
            return Err(bad(open));
        }
        self.pos += 1;
        Ok(Atom {
            element,
            aromatic,
            charge: charge as i8,
            isotope,
            explicit_h: Some(hydrogens),
        })
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.mol.atoms[a].aromatic && self.mol.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn connect(&mut self, a: usize, b: usize, order: BondOrder, offset: usize) -> Result<usize, SmilesError> {
        if a == b {
            return Err(err(offset, SmilesErrorKind::SelfBond));
        }
        if self.mol.bond_between(a, b).is_some() {
            return Err(err(offset, SmilesErrorKind::DuplicateBond));
        }
        if order == BondOrder::Aromatic && !(self.mol.atoms[a].aromatic && self.mol.atoms[b].aromatic) {
            return Err(err(offset, SmilesErrorKind::AromaticBondMismatch));
        }
        self.mol.bonds.push(Bond { a, b, order });
        Ok(self.mol.bonds.len() - 1)
    }

    fn add_atom(&mut self, atom: Atom, offset: usize) -> Result<(), SmilesError> {
        self.mol.atoms.push(atom);
        let idx = self.mol.atoms.len() - 1;
        if let Some(prev) = self.prev {
            let pending = self.pending.take();
            let order = pending
                .and_then(|p| p.order)
                .unwrap_or_else(|| self.default_order(prev, idx));
            let at = pending.map(|p| p.offset).unwrap_or(offset);
            self.connect(prev, idx, order, at)?;
        } else if let Some(p) = self.pending {
            return Err(err(p.offset, SmilesErrorKind::MisplacedBond));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let atom = self.prev.ok_or(err(start, SmilesErrorKind::RingWithoutAtom))?;
        let label = if self.input[start] == b'%' {
            match (self.peek_at(1), self.peek_at(2)) {
                (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                    self.pos += 3;
                    u16::from(a - b'0') * 10 + u16::from(b - b'0')
                }
                _ => return Err(err(start, SmilesErrorKind::MalformedRingLabel)),
            }
        } else {
            self.pos += 1;
            u16::from(self.input[start] - b'0')
        };
        let order = self.pending.take().and_then(|p| p.order);
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(
                    label,
                    OpenRing {
                        atom,
                        order,
                        offset: start,
                    },
                );
            }
            Some(open) => {
                let order = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(err(start, SmilesErrorKind::RingBondConflict))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, atom),
                };
                let bond = self.connect(open.atom, atom, order, start)?;
                self.mol.ring_closures.push(RingClosure {
                    label,
                    opened_at: open.atom,
                    closed_at: atom,
                    bond,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(s: &str) -> (usize, SmilesErrorKind) {
        let e = parse_smiles(s).unwrap_err();
        (e.offset, e.kind)
    }

    #[test]
    fn single_atom() {
        let m = parse_smiles("C").unwrap();
        assert_eq!((m.atom_count(), m.bond_count()), (1, 0));
    }

    #[test]
    fn cyclopropane_ring_closes() {
        let m = parse_smiles("C1CC1").unwrap();
        assert_eq!((m.atom_count(), m.bond_count()), (3, 3));
        assert_eq!(m.ring_closures.len(), 1);
        assert_eq!(m.ring_count(), 1);
    }

    #[test]
    fn xanomeline_counts() {
        let m = parse_smiles("CCCCCCOC1=NSN=C1C2=CCCN(C2)C").unwrap();
        assert_eq!(m.heavy_atom_count(), 19);
        assert_eq!(m.ring_count(), 2);
        assert!(m.validate());
    }

    #[test]
    fn unclosed_branch_reports_its_offset() {
        assert_eq!(kind("C("), (1, SmilesErrorKind::UnbalancedParenthesis));
        assert_eq!(kind("CC)C").1, SmilesErrorKind::UnbalancedParenthesis);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(kind("C1CC"), (1, SmilesErrorKind::UnclosedRing));
        assert_eq!(kind("CXC"), (1, SmilesErrorKind::UnknownElement));
        assert_eq!(kind("C[Zz]").1, SmilesErrorKind::UnknownElement);
        assert_eq!(kind("C[C"), (1, SmilesErrorKind::MalformedBracket));
        assert_eq!(kind("C11"), (2, SmilesErrorKind::SelfBond));
        assert_eq!(kind("C12CC12").1, SmilesErrorKind::DuplicateBond);
        assert_eq!(kind("C=1CC#1").1, SmilesErrorKind::RingBondConflict);
        assert_eq!(kind("").1, SmilesErrorKind::Empty);
        assert_eq!(kind("C=").1, SmilesErrorKind::MisplacedBond);
        assert_eq!(kind("(C)").1, SmilesErrorKind::BranchWithoutAtom);
        assert_eq!(kind("C:C").1, SmilesErrorKind::AromaticBondMismatch);
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[13CH3-]").unwrap();
        let a = &m.atoms[0];
        assert_eq!(a.isotope, Some(13));
        assert_eq!(a.explicit_h, Some(3));
        assert_eq!(a.charge, -1);
        let m = parse_smiles("[Fe++]").unwrap();
        assert_eq!(m.atoms[0].charge, 2);
        let m = parse_smiles("[nH]1cccc1").unwrap();
        assert!(m.atoms[0].aromatic);
    }

    #[test]
    fn two_digit_ring_labels() {
        let m = parse_smiles("C%12CCC%12").unwrap();
        assert_eq!(m.ring_closures[0].label, 12);
        assert_eq!(m.ring_count(), 1);
    }

    #[test]
    fn stereo_is_dropped_and_flagged() {
        let m = parse_smiles("F/C=C/F").unwrap();
        assert!(m.lossy);
        let m = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert!(m.lossy);
        assert_eq!(m.atoms[1].explicit_h, Some(1));
        assert!(!parse_smiles("CCO").unwrap().lossy);
    }

    #[test]
    fn aromatic_bonds_default_between_aromatic_atoms() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert!(m.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        let m = parse_smiles("c1ccccc1C").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Single);
    }

    #[test]
    fn disconnected_components() {
        let m = parse_smiles("CCO.[Na+]").unwrap();
        assert_eq!(m.component_count(), 2);
        assert!(parse_smiles("C..C").is_err());
        assert!(parse_smiles("C.").is_err());
    }
}
