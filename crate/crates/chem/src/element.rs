//! Element symbols and the valence table used for implicit hydrogens.

const SYMBOLS: [&str; 87] = [
    "", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn",
];

/// Element identified by atomic number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_symbol(sym: &str) -> Option<Element> {
        SYMBOLS
            .iter()
            .position(|s| !s.is_empty() && *s == sym)
            .map(|z| Element(z as u8))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize]
    }

    /// Members of the organic subset, writable without brackets.
    pub fn is_organic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements with a lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16 | 33 | 34)
    }

    /// Allowed valences at the given formal charge, or `None` when unchecked.
    ///
    /// Positive charges shift N/O/S/P-type valences up by the charge and
    /// negative ones down, C and B move toward their isoelectronic neighbours.
    pub fn valences(self, charge: i8) -> Option<Vec<u8>> {
        let q = i16::from(charge);
        let shift = |base: &[u8]| -> Vec<u8> {
            base.iter()
                .filter_map(|&v| {
                    let shifted = i16::from(v) + q;
                    (shifted >= 0).then_some(shifted as u8)
                })
                .collect()
        };
        let v = match self.0 {
            1 => {
                if q == 0 {
                    vec![1]
                } else {
                    vec![0]
                }
            }
            5 => match q {
                0 => vec![3],
                q if q < 0 => vec![(3 - q) as u8],
                q => vec![(3 - q).max(0) as u8],
            },
            6 => vec![(4 - q.abs()).max(0) as u8],
            7 | 15 => shift(&[3, 5]),
            8 => shift(&[2]),
            16 => shift(&[2, 4, 6]),
            9 | 17 | 35 | 53 => shift(&[1]),
            _ => return None,
        };
        if v.is_empty() {
            Some(vec![0])
        } else {
            Some(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for sym in ["C", "Cl", "Br", "Se", "Na", "H"] {
            assert_eq!(Element::from_symbol(sym).unwrap().symbol(), sym);
        }
        assert!(Element::from_symbol("Xx").is_none());
        assert!(Element::from_symbol("").is_none());
    }

    #[test]
    fn charge_shifts_valence() {
        assert_eq!(Element::N.valences(1), Some(vec![4, 6]));
        assert_eq!(Element::O.valences(-1), Some(vec![1]));
        assert_eq!(Element::O.valences(1), Some(vec![3]));
        assert_eq!(Element::C.valences(-1), Some(vec![3]));
        assert_eq!(Element::B.valences(-1), Some(vec![4]));
        assert_eq!(Element::F.valences(-1), Some(vec![0]));
        assert_eq!(Element::from_symbol("Na").unwrap().valences(0), None);
    }
}
