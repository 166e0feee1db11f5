//! OGB-compatible categorical atom and bond vocabularies.
//!
//! Slot order follows the OGB `atom_to_feature_vector` layout: atomic
//! number, chirality, degree, formal charge, hydrogen count, radical
//! electrons, hybridization, aromatic flag, ring flag. Out-of-vocabulary
//! values land on the last index of their slot.

pub const ATOM_SLOTS: usize = 9;
pub const BOND_SLOTS: usize = 3;

pub const ATOM_ATOMIC_NUM: usize = 0;
pub const ATOM_CHIRALITY: usize = 1;
pub const ATOM_DEGREE: usize = 2;
pub const ATOM_FORMAL_CHARGE: usize = 3;
pub const ATOM_NUM_H: usize = 4;
pub const ATOM_RADICALS: usize = 5;
pub const ATOM_HYBRIDIZATION: usize = 6;
pub const ATOM_AROMATIC: usize = 7;
pub const ATOM_IN_RING: usize = 8;

pub const BOND_TYPE: usize = 0;
pub const BOND_STEREO: usize = 1;
pub const BOND_CONJUGATED: usize = 2;

/// Vocabulary size per atom slot, misc index included.
pub const ATOM_VOCAB: [usize; ATOM_SLOTS] = [119, 5, 12, 12, 10, 6, 6, 2, 2];
pub const BOND_VOCAB: [usize; BOND_SLOTS] = [5, 6, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chirality {
    Unspecified,
    Clockwise,
    CounterClockwise,
}

impl Chirality {
    pub fn code(self) -> usize {
        match self {
            Chirality::Unspecified => 0,
            Chirality::Clockwise => 1,
            Chirality::CounterClockwise => 2,
        }
    }

    pub(crate) fn flipped(self) -> Self {
        match self {
            Chirality::Clockwise => Chirality::CounterClockwise,
            Chirality::CounterClockwise => Chirality::Clockwise,
            Chirality::Unspecified => Chirality::Unspecified,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hybridization {
    S,
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
}

impl Hybridization {
    pub fn code(self) -> usize {
        match self {
            Hybridization::Sp => 0,
            Hybridization::Sp2 => 1,
            Hybridization::Sp3 => 2,
            Hybridization::Sp3d => 3,
            Hybridization::Sp3d2 => 4,
            Hybridization::S => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn code(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Integral contribution to valence; aromatic bonds count one here and
    /// the shared pi electron is added per atom.
    pub(crate) fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

fn bounded(v: i64, lo: i64, hi: i64) -> usize {
    if (lo..=hi).contains(&v) {
        (v - lo) as usize
    } else {
        (hi - lo + 1) as usize
    }
}

pub fn atomic_num_code(z: u8) -> usize {
    bounded(i64::from(z), 1, 118)
}

pub fn degree_code(d: usize) -> usize {
    bounded(d as i64, 0, 10)
}

pub fn formal_charge_code(c: i8) -> usize {
    bounded(i64::from(c), -5, 5)
}

pub fn num_h_code(h: usize) -> usize {
    bounded(h as i64, 0, 8)
}

pub fn radical_code(r: usize) -> usize {
    bounded(r as i64, 0, 4)
}

/// Atomic number encoded in slot 0 (`None` for the misc index).
pub fn decode_atomic_num(code: usize) -> Option<u8> {
    (code < 118).then(|| (code + 1) as u8)
}

pub fn decode_num_h(code: usize) -> Option<usize> {
    (code < 9).then_some(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_maps_to_misc() {
        assert_eq!(degree_code(11), 11);
        assert_eq!(formal_charge_code(-6), 11);
        assert_eq!(formal_charge_code(0), 5);
        assert_eq!(num_h_code(9), 9);
        assert_eq!(radical_code(5), 5);
    }

    #[test]
    fn codes_fit_vocab() {
        assert!(atomic_num_code(118) < ATOM_VOCAB[ATOM_ATOMIC_NUM]);
        assert!(Hybridization::S.code() < ATOM_VOCAB[ATOM_HYBRIDIZATION]);
        assert!(BondOrder::Aromatic.code() < BOND_VOCAB[BOND_TYPE]);
    }
}
