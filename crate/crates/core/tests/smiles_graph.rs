use deepdtf::smiles::schema::{ATOM_VOCAB, BOND_VOCAB};
use deepdtf::smiles::{parse_smiles, DrugGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    name: String,
    smiles: String,
    nodes: Vec<[usize; 9]>,
    edges: Vec<[usize; 5]>,
}

fn golden() -> Vec<Golden> {
    serde_json::from_str(include_str!("data/smiles_golden.json")).unwrap()
}

fn randomized_golden() -> Vec<Golden> {
    serde_json::from_str(include_str!("data/smiles_random_golden.json")).unwrap()
}

fn exact_edges(g: &DrugGraph) -> Vec<[usize; 5]> {
    g.edge_index
        .iter()
        .zip(&g.edge_features)
        .map(|(uv, f)| [uv[0], uv[1], f[0], f[1], f[2]])
        .collect()
}

fn sorted_edges(g: &DrugGraph) -> Vec<[usize; 5]> {
    let mut e: Vec<[usize; 5]> = g
        .edge_index
        .iter()
        .zip(&g.edge_features)
        .map(|(uv, f)| [uv[0], uv[1], f[0], f[1], f[2]])
        .collect();
    e.sort();
    e
}

fn check_invariants(g: &DrugGraph) {
    assert_eq!(g.edge_index.len(), g.edge_features.len());
    for f in &g.node_features {
        for (v, n) in f.iter().zip(ATOM_VOCAB) {
            assert!(*v < n);
        }
    }
    for (i, (uv, f)) in g.edge_index.iter().zip(&g.edge_features).enumerate() {
        assert_ne!(uv[0], uv[1], "self loop");
        assert!(uv[0] < g.n_atoms() && uv[1] < g.n_atoms());
        for (v, n) in f.iter().zip(BOND_VOCAB) {
            assert!(*v < n);
        }
        let mirror = g
            .edge_index
            .iter()
            .zip(&g.edge_features)
            .position(|(m, mf)| m[0] == uv[1] && m[1] == uv[0] && mf == f);
        assert!(mirror.is_some(), "edge {i} has no mirror");
    }
}

#[test]
fn golden_corpus_matches_reference_toolkit() {
    let corpus = golden();
    assert_eq!(corpus.len(), 50);
    let mut failures = Vec::new();
    for m in &corpus {
        let g = match parse_smiles(&m.smiles) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("{}: {e}", m.name));
                continue;
            }
        };
        check_invariants(&g);
        if g.node_features != m.nodes {
            for (i, (got, want)) in g.node_features.iter().zip(&m.nodes).enumerate() {
                if got != want {
                    failures.push(format!("{} atom {i}: got {got:?}, want {want:?}", m.name));
                }
            }
            if g.n_atoms() != m.nodes.len() {
                failures.push(format!("{}: atom count {} vs {}", m.name, g.n_atoms(), m.nodes.len()));
            }
        }
        let mut want = m.edges.clone();
        want.sort();
        if sorted_edges(&g) != want {
            failures.push(format!("{}: edge lists differ", m.name));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn golden_edge_order_follows_bond_order() {
    for m in golden() {
        let g = parse_smiles(&m.smiles).unwrap();
        assert_eq!(exact_edges(&g), m.edges, "{}", m.name);
    }
}

// Randomized atom orderings move ring closures and stereocenters around.
#[test]
fn randomized_orderings_match_reference_toolkit() {
    let corpus = randomized_golden();
    assert!(corpus.len() >= 150);
    for m in corpus {
        let g = parse_smiles(&m.smiles).unwrap_or_else(|e| panic!("{} {}: {e}", m.name, m.smiles));
        assert_eq!(g.node_features, m.nodes, "{} {}", m.name, m.smiles);
        assert_eq!(exact_edges(&g), m.edges, "{} {}", m.name, m.smiles);
    }
}

#[test]
fn benzene_json_dump() {
    let v = parse_smiles("c1ccccc1").unwrap().to_json();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 6);
    assert_eq!(v["edges"].as_array().unwrap().len(), 12);
}

const ALPHABET: &[&str] = &[
    "C", "c", "N", "n", "O", "o", "S", "s", "P", "B", "F", "Cl", "Br", "I", "(", ")", "[", "]",
    "=", "#", "-", ":", ".", "1", "2", "3", "%12", "%", "@", "@@", "H", "+", "-", "2", "/", "\\",
    "*", "Xe", "Na", "x", " ", "é", "\0",
];

#[test]
fn fuzz_never_panics() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut ok, mut err) = (0usize, 0usize);
    for _ in 0..100_000 {
        let n = rng.random_range(0..24);
        let s: String = if rng.random_bool(0.1) {
            (0..n).map(|_| char::from(rng.random_range(0u8..128))).collect()
        } else {
            (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
        };
        match parse_smiles(&s) {
            Ok(g) => {
                check_invariants(&g);
                ok += 1;
            }
            Err(e) => {
                assert!(e.offset <= s.len(), "{s:?}: offset {} past end", e.offset);
                assert!(!e.reason.is_empty());
                err += 1;
            }
        }
    }
    assert_eq!(ok + err, 100_000);
    assert!(ok > 0 && err > 0);
}

fn smiles_strategy() -> impl Strategy<Value = String> {
    let atom = prop::sample::select(vec!["C", "N", "O", "S", "Cl", "[NH4+]", "[O-]", "c1ccccc1", "C1CC1"]);
    let bond = prop::sample::select(vec!["", "", "="]);
    prop::collection::vec((atom, bond, any::<bool>()), 1..10).prop_map(|parts| {
        let mut s = String::new();
        let mut open = 0;
        for (i, (a, b, branch)) in parts.iter().enumerate() {
            if i > 0 {
                if *branch {
                    s.push('(');
                    open += 1;
                }
                s.push_str(b);
            }
            s.push_str(a);
        }
        for _ in 0..open {
            s.push(')');
        }
        s
    })
}

proptest! {
    #[test]
    fn parse_is_deterministic_and_symmetric(s in smiles_strategy()) {
        // generated strings may overflow valence; only accepted graphs are checked
        if let Ok(g) = parse_smiles(&s) {
            check_invariants(&g);
            let again = parse_smiles(&s).unwrap();
            let mut a = g.node_features.clone();
            let mut b = again.node_features.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            prop_assert_eq!(sorted_edges(&g), sorted_edges(&again));
        }
    }
}
