use crate::element::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum; aromatic bonds count one, the extra
    /// pi electron is accounted per atom.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    pub isotope: Option<u16>,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms
    /// whose hydrogens are implicit.
    pub explicit_h: Option<u8>,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Self {
        Self {
            element,
            aromatic,
            charge: 0,
            isotope: None,
            explicit_h: None,
        }
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A ring-closure digit as it appeared in the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RingClosure {
    pub label: u16,
    pub opened_at: usize,
    pub closed_at: usize,
    pub bond: usize,
}

/// Labeled molecular graph parsed from SMILES.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MoleculeGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub ring_closures: Vec<RingClosure>,
    /// Set when stereo marks were read and dropped.
    pub lossy: bool,
}

impl MoleculeGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Non-hydrogen atoms.
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Incident bond indices per atom.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.a].push(i);
            adj[b.b].push(i);
        }
        adj
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds
            .iter()
            .position(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
    }

    pub fn component_count(&self) -> usize {
        let n = self.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = n;
        for b in &self.bonds {
            let (ra, rb) = (find(&mut parent, b.a), find(&mut parent, b.b));
            if ra != rb {
                parent[ra] = rb;
                count -= 1;
            }
        }
        count
    }

    /// Cyclomatic number: independent rings.
    pub fn ring_count(&self) -> usize {
        self.bonds.len() + self.component_count() - self.atoms.len()
    }

    /// Valence used by heavy-atom bonds plus the aromatic pi contribution.
    fn bonded_valence(&self, idx: usize, adj: &[Vec<usize>]) -> u32 {
        let atom = &self.atoms[idx];
        let mut used: u32 = 0;
        let mut aromatic_bonds = 0;
        let mut exo_double = false;
        for &bi in &adj[idx] {
            let order = self.bonds[bi].order;
            used += u32::from(order.valence());
            match order {
                BondOrder::Aromatic => aromatic_bonds += 1,
                BondOrder::Double => exo_double = true,
                _ => {}
            }
        }
        if atom.aromatic && aromatic_bonds > 0 && !exo_double {
            let h = atom.explicit_h.unwrap_or(0) as usize;
            let pi = match atom.element.atomic_number() {
                5 | 6 => true,
                // Pyridine-type: two connections and neutral; pyrrole-type donates a lone pair.
                7 | 15 | 33 => adj[idx].len() + h == 2 && atom.charge == 0,
                _ => false,
            };
            if pi {
                used += 1;
            }
        }
        used
    }

    /// Hydrogens an unbracketed atom of this kind would carry given its bonds.
    pub(crate) fn default_implicit_h(&self, idx: usize, adj: &[Vec<usize>]) -> u8 {
        let atom = &self.atoms[idx];
        if atom.aromatic && !matches!(atom.element.atomic_number(), 5 | 6) {
            return 0;
        }
        let used = self.bonded_valence(idx, adj);
        match atom.element.valences(0) {
            Some(vals) => vals
                .iter()
                .map(|&v| u32::from(v))
                .find(|&v| v >= used)
                .map(|v| (v - used) as u8)
                .unwrap_or(0),
            None => 0,
        }
    }

    /// Total hydrogens per atom: bracket counts as written, implicit otherwise.
    pub fn hydrogen_counts(&self) -> Vec<u8> {
        let adj = self.adjacency();
        (0..self.atoms.len())
            .map(|i| match self.atoms[i].explicit_h {
                Some(h) => h,
                None => self.default_implicit_h(i, &adj),
            })
            .collect()
    }

    /// Valence check: bond orders plus hydrogens stay within the element's
    /// allowed maximum at its charge. Elements without a table entry pass.
    pub fn validate(&self) -> bool {
        let adj = self.adjacency();
        let hs = self.hydrogen_counts();
        self.atoms.iter().enumerate().all(|(i, atom)| {
            if atom.aromatic && !atom.element.can_be_aromatic() {
                return false;
            }
            match atom.element.valences(atom.charge) {
                Some(vals) => {
                    let used = self.bonded_valence(i, &adj) + u32::from(hs[i]);
                    let max = vals.iter().copied().max().unwrap_or(0);
                    used <= u32::from(max)
                }
                None => true,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::parse_smiles;

    fn valid(s: &str) -> bool {
        parse_smiles(s).unwrap().validate()
    }

    #[test]
    fn valence_table() {
        assert!(valid("CCO"));
        assert!(!valid("F=F"));
        assert!(valid("C#N"));
        assert!(!valid("C(C)(C)(C)(C)C"));
        assert!(!valid("O=O=O"));
        assert!(valid("CS(=O)(=O)C"));
        assert!(valid("O=[N+]([O-])C"));
        assert!(valid("[NH4+]"));
    }

    #[test]
    fn aromatic_accounting() {
        assert!(valid("c1ccccc1"));
        assert!(valid("c1ccncc1"));
        assert!(valid("c1cc[nH]c1"));
        assert!(valid("Cn1cccc1"));
        assert!(valid("c1ccoc1"));
        assert!(valid("O=c1cccc[nH]1"));
        let h = parse_smiles("c1ccccc1").unwrap().hydrogen_counts();
        assert!(h.iter().all(|&n| n == 1));
        let h = parse_smiles("c1ccncc1").unwrap().hydrogen_counts();
        assert_eq!(h[3], 0);
    }

    #[test]
    fn implicit_hydrogens() {
        assert_eq!(parse_smiles("CC=O").unwrap().hydrogen_counts(), vec![3, 1, 0]);
        assert_eq!(parse_smiles("C#N").unwrap().hydrogen_counts(), vec![1, 0]);
        assert_eq!(parse_smiles("CS(C)(=O)=O").unwrap().hydrogen_counts()[1], 0);
    }
}
