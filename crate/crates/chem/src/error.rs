use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmilesErrorKind {
    Empty,
    UnexpectedByte(u8),
    UnknownElement,
    MalformedBracket,
    UnbalancedParenthesis,
    EmptyBranch,
    BranchWithoutAtom,
    MisplacedBond,
    MisplacedDot,
    UnclosedRing,
    RingWithoutAtom,
    MalformedRingLabel,
    RingBondConflict,
    SelfBond,
    DuplicateBond,
    AromaticBondMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SMILES parse error at byte {offset}: {kind:?}")]
pub struct SmilesError {
    pub offset: usize,
    pub kind: SmilesErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error(transparent)]
    Parse(#[from] SmilesError),
    #[error("molecule fails the valence check")]
    InvalidValence,
}
