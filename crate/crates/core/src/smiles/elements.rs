// Periodic table data needed for parsing, valence and molecular weight.

const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

// Standard atomic weights (g/mol); conventional mass numbers for elements
// without stable isotopes.
const WEIGHTS: [f64; 118] = [
    1.008, 4.0026, 6.94, 9.0122, 10.81, 12.011, 14.007, 15.999, 18.998, 20.180, 22.990, 24.305,
    26.982, 28.085, 30.974, 32.06, 35.45, 39.948, 39.098, 40.078, 44.956, 47.867, 50.942, 51.996,
    54.938, 55.845, 58.933, 58.693, 63.546, 65.38, 69.723, 72.630, 74.922, 78.971, 79.904, 83.798,
    85.468, 87.62, 88.906, 91.224, 92.906, 95.95, 98.0, 101.07, 102.91, 106.42, 107.87, 112.41,
    114.82, 118.71, 121.76, 127.60, 126.90, 131.29, 132.91, 137.33, 138.91, 140.12, 140.91,
    144.24, 145.0, 150.36, 151.96, 157.25, 158.93, 162.50, 164.93, 167.26, 168.93, 173.05, 174.97,
    178.49, 180.95, 183.84, 186.21, 190.23, 192.22, 195.08, 196.97, 200.59, 204.38, 207.2, 208.98,
    209.0, 210.0, 222.0, 223.0, 226.0, 227.0, 232.04, 231.04, 238.03, 237.0, 244.0, 243.0, 247.0,
    247.0, 251.0, 252.0, 257.0, 258.0, 259.0, 266.0, 267.0, 268.0, 269.0, 270.0, 277.0, 278.0,
    281.0, 282.0, 285.0, 286.0, 289.0, 290.0, 293.0, 294.0, 294.0,
];

pub(crate) const MAX_Z: u8 = 118;

pub(crate) fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .map(|i| (i + 1) as u8)
}

#[cfg(test)]
fn symbol(z: u8) -> &'static str {
    SYMBOLS[usize::from(z) - 1]
}

pub(crate) fn weight(z: u8) -> f64 {
    WEIGHTS[usize::from(z) - 1]
}

/// Allowed valences of the neutral element; empty for metals and others
/// without a conventional valence.
pub(crate) fn valences(z: u8) -> &'static [u8] {
    match z {
        1 | 3 | 9 | 11 | 17 | 19 | 35 | 37 | 55 | 87 => &[1],
        2 | 10 | 18 | 36 | 86 => &[0],
        4 | 12 | 20 | 38 | 56 | 88 => &[2],
        5 | 13 | 31 | 49 => &[3],
        6 | 14 | 32 => &[4],
        7 => &[3],
        8 => &[2],
        15 | 33 | 51 => &[3, 5, 7],
        16 | 34 | 52 | 84 => &[2, 4, 6],
        53 | 85 => &[1, 3, 5],
        50 | 82 => &[2, 4],
        54 => &[0, 2, 4, 6],
        81 => &[1, 3],
        83 => &[3, 5],
        _ => &[],
    }
}

const PERIOD_STARTS: [u8; 7] = [1, 3, 11, 19, 37, 55, 87];

fn period_and_offset(z: u8) -> (usize, u8) {
    let p = PERIOD_STARTS.iter().rposition(|&s| z >= s).unwrap_or(0);
    (p, z - PERIOD_STARTS[p])
}

/// Valence-shell electron count in the convention cheminformatics toolkits
/// use for hybridization (group number, with group 12 counted as 2).
pub(crate) fn outer_electrons(z: u8) -> i32 {
    let (period, off) = period_and_offset(z);
    let off = i32::from(off);
    match period {
        0 => off + 1,
        1 | 2 => off + 1,
        3 | 4 => match off {
            0 | 1 => off + 1,
            2..=10 => off + 1,
            11 => 2,
            _ => off - 9,
        },
        _ => match off {
            0 | 1 => off + 1,
            2..=16 => 3,
            17..=24 => off - 13,
            25 => 2,
            _ => off - 23,
        },
    }
}

/// Valences allowed for an atom carrying `charge`, using the isoelectronic
/// neighbor in the same period (N+ behaves like C, O- like F).
pub(crate) fn charged_valences(z: u8, charge: i8) -> &'static [u8] {
    if charge == 0 {
        return valences(z);
    }
    let shifted = i32::from(z) - i32::from(charge);
    if (1..=i32::from(MAX_Z)).contains(&shifted) {
        let s = shifted as u8;
        if period_and_offset(s).0 == period_and_offset(z).0 && !valences(s).is_empty() {
            return valences(s);
        }
    }
    valences(z)
}
