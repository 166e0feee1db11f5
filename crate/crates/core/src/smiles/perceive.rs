// Chemistry pass over parsed syntax: bond orders, ring membership, implicit
// hydrogens, radicals, conjugation, hybridization and chirality parity.
//
// The valence, conjugation and hybridization rules mirror the conventions of
// the toolkit used to produce OGB featurizations, so that the categorical
// codes agree on drug-like input.

use super::elements;
use super::parser::{Slot, Syntax};
use super::schema::{BondOrder, Chirality, Hybridization};
use super::SmilesError;

#[derive(Clone, Debug)]
pub(crate) struct Atom {
    pub z: u8,
    pub aromatic: bool,
    pub charge: i8,
    pub h_total: u8,
    pub radicals: u8,
    pub heavy_degree: usize,
    pub in_ring: bool,
    pub chirality: Chirality,
    pub hybridization: Hybridization,
}

#[derive(Clone, Debug)]
pub(crate) struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub conjugated: bool,
}

pub(crate) struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

fn err(offset: usize, reason: impl Into<String>) -> SmilesError {
    SmilesError {
        offset,
        reason: reason.into(),
    }
}

/// Marks bonds that are not bridges; iterative lowlink DFS.
fn ring_bonds(n_atoms: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n_atoms];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    let mut disc = vec![usize::MAX; n_atoms];
    let mut low = vec![0; n_atoms];
    let mut is_bridge = vec![false; edges.len()];
    let mut timer = 0;
    for root in 0..n_atoms {
        if disc[root] != usize::MAX {
            continue;
        }
        // (node, parent edge, next neighbor index)
        let mut stack = vec![(root, usize::MAX, 0usize)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(top) = stack.last_mut() {
            let (u, pe) = (top.0, top.1);
            if top.2 < adj[u].len() {
                let (v, e) = adj[u][top.2];
                top.2 += 1;
                if e == pe {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, e, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[pe] = true;
                    }
                }
            }
        }
    }
    is_bridge.into_iter().map(|b| !b).collect()
}

fn permutation_is_odd(mut p: Vec<usize>) -> bool {
    let mut swaps = 0;
    for i in 0..p.len() {
        while p[i] != i {
            let j = p[i];
            p.swap(i, j);
            swaps += 1;
        }
    }
    swaps % 2 == 1
}

struct Electronic {
    dv: i32,
    nouter: i32,
}

fn electronic(z: u8) -> Electronic {
    Electronic {
        dv: elements::valences(z).first().map_or(-1, |v| i32::from(*v)),
        nouter: elements::outer_electrons(z),
    }
}

/// Electrons an atom can donate to a pi system; non-positive means none.
fn pi_electrons(a: &Atom) -> i32 {
    let e = electronic(a.z);
    if e.dv <= 1 {
        return -1;
    }
    let degree = (a.heavy_degree + usize::from(a.h_total)) as i32;
    if degree > 3 {
        return -1;
    }
    let nlp = (e.nouter - e.dv - i32::from(a.charge)).max(0);
    (e.dv - degree) + nlp - i32::from(a.radicals)
}

fn conjugation_candidate(a: &Atom) -> bool {
    let e = electronic(a.z);
    (a.z <= 10 || (e.nouter != 5 && e.nouter != 6) || (e.nouter == 6 && a.heavy_degree < 2))
        && pi_electrons(a) > 0
}

fn steric_number(a: &Atom, total_valence: i32) -> i32 {
    let deg = (a.heavy_degree + usize::from(a.h_total)) as i32;
    if a.z <= 1 {
        return deg;
    }
    let nouter = elements::outer_electrons(a.z);
    let chg = i32::from(a.charge);
    let free = nouter - (total_valence + chg);
    if total_valence + nouter - chg < 8 {
        let rad = i32::from(a.radicals);
        deg + (free - rad) / 2 + rad
    } else {
        deg + free / 2
    }
}

pub(crate) fn perceive(syn: Syntax) -> Result<Molecule, SmilesError> {
    let n = syn.atoms.len();
    let edges: Vec<(usize, usize)> = syn.bonds.iter().map(|b| (b.a, b.b)).collect();
    let in_ring_bond = ring_bonds(n, &edges);

    // Bond orders: unwritten bonds between aromatic atoms are aromatic only
    // inside rings.
    let mut aromatic: Vec<bool> = syn.atoms.iter().map(|a| a.aromatic).collect();
    let orders: Vec<BondOrder> = syn
        .bonds
        .iter()
        .zip(&in_ring_bond)
        .map(|(b, ring)| match b.order {
            Some(o) => o,
            None if *ring && syn.atoms[b.a].aromatic && syn.atoms[b.b].aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        })
        .collect();
    for (b, o) in syn.bonds.iter().zip(&orders) {
        if *o == BondOrder::Aromatic {
            aromatic[b.a] = true;
            aromatic[b.b] = true;
        }
    }

    let mut atom_ring = vec![false; n];
    let mut bond_sum = vec![0u32; n];
    let mut n_arom = vec![0u32; n];
    let mut heavy = vec![0usize; n];
    for ((b, o), ring) in syn.bonds.iter().zip(&orders).zip(&in_ring_bond) {
        for x in [b.a, b.b] {
            bond_sum[x] += u32::from(o.valence());
            heavy[x] += 1;
            if *o == BondOrder::Aromatic {
                n_arom[x] += 1;
            }
            if *ring {
                atom_ring[x] = true;
            }
        }
        if *o == BondOrder::Aromatic && !ring {
            return Err(err(b.offset, "aromatic bond outside a ring"));
        }
    }

    let mut atoms = Vec::with_capacity(n);
    let mut total_valence = Vec::with_capacity(n);
    for (i, sa) in syn.atoms.iter().enumerate() {
        if aromatic[i] && !atom_ring[i] {
            return Err(err(sa.offset, "aromatic atom outside a ring"));
        }
        let allowed = if sa.bracket {
            elements::charged_valences(sa.z, sa.charge)
        } else {
            elements::valences(sa.z)
        };
        let explicit_h = u32::from(sa.h_count);
        let base = bond_sum[i] + explicit_h;
        let room = |v: u32| allowed.iter().map(|a| u32::from(*a)).find(|a| *a >= v).map(|a| a - v);
        let pi = u32::from(aromatic[i] && n_arom[i] > 0 && room(base).is_some_and(|r| r >= 1));
        let valence = base + pi;

        let h_total = if sa.bracket {
            if !allowed.is_empty() && room(valence).is_none() {
                return Err(err(sa.offset, "valence overflow"));
            }
            explicit_h
        } else {
            match room(valence) {
                Some(h) => h,
                None => return Err(err(sa.offset, "valence overflow")),
            }
        };
        let total = valence + if sa.bracket { 0 } else { h_total };

        let radicals = if sa.bracket && !elements::valences(sa.z).is_empty() {
            let nouter = elements::outer_electrons(sa.z);
            let chg = i32::from(sa.charge);
            let tv = total as i32;
            let base_count = if sa.z <= 2 { 2 } else { 8 };
            let mut r = base_count - nouter - tv + chg;
            if r < 0 {
                r = 0;
                let vals = elements::valences(sa.z);
                if vals.len() > 1 {
                    if let Some(v) = vals.iter().map(|v| i32::from(*v)).find(|v| v - tv + chg >= 0) {
                        r = v - tv + chg;
                    }
                }
            }
            let r2 = nouter - tv - chg;
            if r2 >= 0 {
                r = r.min(r2);
            }
            r.max(0) as u8
        } else {
            0
        };

        atoms.push(Atom {
            z: sa.z,
            aromatic: aromatic[i],
            charge: sa.charge,
            h_total: h_total as u8,
            radicals,
            heavy_degree: heavy[i],
            in_ring: atom_ring[i],
            chirality: sa.chirality,
            hybridization: Hybridization::S,
        });
        total_valence.push(total as i32);
    }

    let mut bonds: Vec<Bond> = syn
        .bonds
        .iter()
        .zip(&orders)
        .map(|(b, o)| Bond {
            a: b.a,
            b: b.b,
            order: *o,
            conjugated: *o == BondOrder::Aromatic,
        })
        .collect();

    let mut incident = vec![Vec::new(); n];
    for (i, b) in bonds.iter().enumerate() {
        incident[b.a].push(i);
        incident[b.b].push(i);
    }

    // Conjugation: a multiple bond on a candidate atom conjugates with every
    // other bond whose far atom is also a candidate.
    for (i, a) in atoms.iter().enumerate() {
        if !conjugation_candidate(a) {
            continue;
        }
        let sbo = a.heavy_degree + usize::from(a.h_total);
        if !(2..=3).contains(&sbo) {
            continue;
        }
        for &b1 in &incident[i] {
            if bonds[b1].order == BondOrder::Single {
                continue;
            }
            for &b2 in &incident[i] {
                if b1 == b2 {
                    continue;
                }
                let other = if bonds[b2].a == i { bonds[b2].b } else { bonds[b2].a };
                let o = &atoms[other];
                if o.heavy_degree + usize::from(o.h_total) > 3 {
                    continue;
                }
                if conjugation_candidate(o) {
                    bonds[b1].conjugated = true;
                    bonds[b2].conjugated = true;
                }
            }
        }
    }

    for i in 0..n {
        let a = &atoms[i];
        let total_degree = a.heavy_degree + usize::from(a.h_total);
        let norbs = steric_number(a, total_valence[i]);
        let has_conj = incident[i].iter().any(|&b| bonds[b].conjugated);
        atoms[i].hybridization = match norbs {
            2 => Hybridization::Sp,
            3 => Hybridization::Sp2,
            4 if total_degree > 3 || !has_conj => Hybridization::Sp3,
            4 => Hybridization::Sp2,
            5 => Hybridization::Sp3d,
            6 => Hybridization::Sp3d2,
            _ => Hybridization::S,
        };
    }

    // Chirality is stored relative to the toolkit's bond-list order (chain
    // bonds, then ring closures, implicit H last); flip on odd permutations
    // of the written neighbor order.
    for (i, sa) in syn.atoms.iter().enumerate() {
        if sa.chirality == Chirality::Unspecified {
            continue;
        }
        let written: Vec<Option<usize>> = sa
            .slots
            .iter()
            .map(|s| match s {
                Slot::Bond(b) => Some(*b),
                _ => None,
            })
            .collect();
        let mut stored = written.clone();
        stored.sort_by_key(|s| s.map_or(usize::MAX, |b| syn.bonds[b].seq));
        let perm: Vec<usize> = stored
            .iter()
            .map(|s| written.iter().position(|w| w == s).expect("same multiset"))
            .collect();
        if permutation_is_odd(perm) {
            atoms[i].chirality = atoms[i].chirality.flipped();
        }
    }

    // Edge order follows the toolkit bond list.
    let mut order: Vec<usize> = (0..bonds.len()).collect();
    order.sort_by_key(|&i| syn.bonds[i].seq);
    let bonds = order.into_iter().map(|i| bonds[i].clone()).collect();

    Ok(Molecule { atoms, bonds })
}
