// Syntax pass: turns SMILES text into atoms and bonds with source offsets.
// Chemistry (hydrogens, rings, conjugation) is handled in `perceive`.

use std::collections::HashMap;

use super::elements;
use super::schema::{BondOrder, Chirality};
use super::SmilesError;

/// One entry of an atom's neighbor list in written order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    Bond(usize),
    Hydrogen,
    Open(usize),
}

#[derive(Clone, Debug)]
pub(crate) struct SynAtom {
    pub z: u8,
    pub aromatic: bool,
    pub bracket: bool,
    pub h_count: u8,
    pub charge: i8,
    pub chirality: Chirality,
    pub offset: usize,
    pub slots: Vec<Slot>,
}

#[derive(Clone, Debug)]
pub(crate) struct SynBond {
    pub a: usize,
    pub b: usize,
    /// `None` when no bond symbol was written.
    pub order: Option<BondOrder>,
    /// Position in the toolkit's bond list: chain bonds first, then ring
    /// closures grouped by ring-bond number, then by closing order.
    pub seq: usize,
    pub offset: usize,
}

#[derive(Debug, Default)]
pub(crate) struct Syntax {
    pub atoms: Vec<SynAtom>,
    pub bonds: Vec<SynBond>,
}

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
    open_id: usize,
}

const RING_SEQ_BASE: usize = 1 << 32;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    out: Syntax,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    branches: Vec<(usize, usize, usize)>,
    rings: HashMap<u32, RingOpen>,
    next_open_id: usize,
    chain_bonds: usize,
    ring_bonds: usize,
}

fn err(offset: usize, reason: impl Into<String>) -> SmilesError {
    SmilesError {
        offset,
        reason: reason.into(),
    }
}

pub(crate) fn parse(smiles: &str) -> Result<Syntax, SmilesError> {
    let mut p = Parser {
        src: smiles.as_bytes(),
        pos: 0,
        out: Syntax::default(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: HashMap::new(),
        next_open_id: 0,
        chain_bonds: 0,
        ring_bonds: 0,
    };
    p.run()?;
    Ok(p.out)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        if self.src.is_empty() {
            return Err(err(0, "empty SMILES"));
        }
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(err(at, "branch without a preceding atom"));
                    };
                    if self.pending.is_some() {
                        return Err(err(at, "bond symbol before '('"));
                    }
                    self.branches.push((prev, at, self.out.atoms.len()));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _, n_atoms)) = self.branches.pop() else {
                        return Err(err(at, "unbalanced ')'"));
                    };
                    if self.pending.is_some() {
                        return Err(err(at, "bond symbol before ')'"));
                    }
                    if self.out.atoms.len() == n_atoms {
                        return Err(err(at, "empty branch"));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.prev.is_none() {
                        return Err(err(at, "bond without a preceding atom"));
                    }
                    if self.pending.is_some() {
                        return Err(err(at, "two consecutive bond symbols"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, at));
                    self.pos += 1;
                }
                b'/' | b'\\' => return Err(err(at, "directional bonds are not supported")),
                b'$' => return Err(err(at, "quadruple bonds are not supported")),
                b'.' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(err(at, "misplaced '.'"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => self.bracket_atom()?,
                b'*' => return Err(err(at, "wildcard atoms are not supported")),
                _ => self.organic_atom()?,
            }
        }
        if let Some((_, off)) = self.pending {
            return Err(err(off, "dangling bond at end of input"));
        }
        if let Some((_, off, _)) = self.branches.last() {
            return Err(err(*off, "unbalanced '('"));
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return Err(err(open.offset, "unmatched ring-closure digit"));
        }
        Ok(())
    }

    fn add_atom(&mut self, mut atom: SynAtom) {
        let idx = self.out.atoms.len();
        if let Some(prev) = self.prev {
            let (order, offset) = match self.pending.take() {
                Some((o, off)) => (Some(o), off),
                None => (None, atom.offset),
            };
            let b = self.out.bonds.len();
            self.out.bonds.push(SynBond {
                a: prev,
                b: idx,
                order,
                seq: self.chain_bonds,
                offset,
            });
            self.chain_bonds += 1;
            self.out.atoms[prev].slots.push(Slot::Bond(b));
            atom.slots.push(Slot::Bond(b));
        }
        if atom.h_count > 0 {
            atom.slots.push(Slot::Hydrogen);
        }
        self.out.atoms.push(atom);
        self.prev = Some(idx);
    }

    fn organic_atom(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let c = self.src[at];
        let next = self.src.get(at + 1).copied();
        let (sym, aromatic, len): (&str, bool, usize) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => {
                let shown = std::str::from_utf8(&self.src[at..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .map_or_else(|| format!("byte 0x{c:02x}"), |ch| format!("'{ch}'"));
                return Err(err(at, format!("unknown atom symbol or character {shown}")));
            }
        };
        let z = elements::atomic_number(sym).expect("organic subset symbol");
        self.pos += len;
        self.add_atom(SynAtom {
            z,
            aromatic,
            bracket: false,
            h_count: 0,
            charge: 0,
            chirality: Chirality::Unspecified,
            offset: at,
            slots: Vec::new(),
        });
        Ok(())
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.src[start..self.pos]).ok()?.parse().ok()
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return Err(err(self.pos, "isotope labels are not supported"));
        }
        let sym_at = self.pos;
        let (z, aromatic) = match self.peek() {
            Some(c @ b'A'..=b'Z') => {
                let two = self.src.get(sym_at + 1).copied().filter(u8::is_ascii_lowercase);
                let mut found = None;
                if let Some(l) = two {
                    let s = [c, l];
                    if let Some(z) = std::str::from_utf8(&s).ok().and_then(elements::atomic_number) {
                        found = Some((z, 2));
                    }
                }
                if found.is_none() {
                    let s = [c];
                    found = std::str::from_utf8(&s)
                        .ok()
                        .and_then(elements::atomic_number)
                        .map(|z| (z, 1));
                }
                let (z, len) = found.ok_or_else(|| err(sym_at, "unknown element symbol"))?;
                self.pos += len;
                (z, false)
            }
            Some(b'*') => return Err(err(sym_at, "wildcard atoms are not supported")),
            Some(c @ b'a'..=b'z') => {
                let rest = &self.src[sym_at..];
                let (sym, len) = if rest.starts_with(b"se") {
                    ("Se", 2)
                } else if rest.starts_with(b"as") {
                    ("As", 2)
                } else {
                    match c {
                        b'b' => ("B", 1),
                        b'c' => ("C", 1),
                        b'n' => ("N", 1),
                        b'o' => ("O", 1),
                        b'p' => ("P", 1),
                        b's' => ("S", 1),
                        _ => return Err(err(sym_at, "unknown aromatic symbol")),
                    }
                };
                self.pos += len;
                (elements::atomic_number(sym).expect("aromatic symbol"), true)
            }
            _ => return Err(err(sym_at, "expected an element symbol")),
        };

        let mut chirality = Chirality::Unspecified;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            chirality = Chirality::CounterClockwise;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                chirality = Chirality::Clockwise;
            }
            if matches!(self.peek(), Some(b'A'..=b'G' | b'I'..=b'Z')) {
                return Err(err(self.pos, "extended chirality classes are not supported"));
            }
        }

        let mut h_count = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h_count = match self.read_number() {
                Some(n) if n <= 16 => n as u8,
                Some(_) => return Err(err(self.pos, "hydrogen count too large")),
                None => 1,
            };
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            if charge.abs() > 15 {
                return Err(err(self.pos, "formal charge out of range"));
            }
        }

        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b':') => return Err(err(self.pos, "atom classes are not supported")),
            Some(_) => return Err(err(self.pos, "unexpected character in bracket atom")),
            None => return Err(err(open, "unterminated bracket atom")),
        }

        self.add_atom(SynAtom {
            z,
            aromatic,
            bracket: true,
            h_count,
            charge: charge as i8,
            chirality,
            offset: open,
            slots: Vec::new(),
        });
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let Some(atom) = self.prev else {
            return Err(err(at, "ring-closure digit without a preceding atom"));
        };
        let id = if self.src[at] == b'%' {
            let digits = self.src.get(at + 1..at + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                }
                _ => return Err(err(at, "'%' must be followed by two digits")),
            }
        } else {
            self.pos += 1;
            u32::from(self.src[at] - b'0')
        };
        let pending = self.pending.take();

        match self.rings.remove(&id) {
            Some(open) => {
                if open.atom == atom {
                    return Err(err(at, "ring closure onto the same atom"));
                }
                let duplicate = self.out.bonds.iter().any(|b| {
                    (b.a == open.atom && b.b == atom) || (b.a == atom && b.b == open.atom)
                });
                if duplicate {
                    return Err(err(at, "ring closure duplicates an existing bond"));
                }
                let order = match (open.order, pending.map(|p| p.0)) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(err(at, "conflicting bond symbols on ring closure"))
                    }
                    (a, b) => a.or(b),
                };
                let b = self.out.bonds.len();
                self.out.bonds.push(SynBond {
                    a: atom,
                    b: open.atom,
                    order,
                    seq: RING_SEQ_BASE + id as usize * (self.src.len() + 1) + self.ring_bonds,
                    offset: open.offset,
                });
                self.ring_bonds += 1;
                let slot = self.out.atoms[open.atom]
                    .slots
                    .iter_mut()
                    .find(|s| **s == Slot::Open(open.open_id))
                    .expect("ring opening slot");
                *slot = Slot::Bond(b);
                self.out.atoms[atom].slots.push(Slot::Bond(b));
            }
            None => {
                let open_id = self.next_open_id;
                self.next_open_id += 1;
                self.out.atoms[atom].slots.push(Slot::Open(open_id));
                self.rings.insert(
                    id,
                    RingOpen {
                        atom,
                        order: pending.map(|p| p.0),
                        offset: at,
                        open_id,
                    },
                );
            }
        }
        Ok(())
    }
}
