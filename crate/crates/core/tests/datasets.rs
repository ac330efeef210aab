//! Benchmark sizes, determinism and persistence.

use std::path::Path;

use pgexplain::dataio::{load_dataset, parse_tu, save_dataset};
use pgexplain::synthgen::{gen_dataset, DATASET_NAMES};
use pgexplain::Task;

#[test]
fn ba_shapes_counts() {
    let ds = gen_dataset("ba-shapes", 0).unwrap();
    assert_eq!(ds.total_nodes(), 700);
    let edges = ds.total_edges() as f64;
    assert!((edges - 4110.0).abs() / 4110.0 <= 0.02, "{edges} directed edges");
    assert_eq!(ds.num_labels, 4);
}

#[test]
fn ba_community_counts() {
    let ds = gen_dataset("ba-community", 0).unwrap();
    assert_eq!(ds.total_nodes(), 1400);
    assert_eq!(ds.num_labels, 8);
}

#[test]
fn tree_counts() {
    assert_eq!(gen_dataset("tree-grid", 0).unwrap().total_nodes(), 1231);
    // 511-node tree plus 80 six-node cycles.
    assert_eq!(gen_dataset("tree-cycles", 0).unwrap().total_nodes(), 991);
}

#[test]
fn ba_2motifs_counts_and_balance() {
    let ds = gen_dataset("ba-2motifs", 0).unwrap();
    assert_eq!(ds.task, Task::Graph);
    assert_eq!(ds.graphs.len(), 1000);
    assert_eq!(ds.total_nodes(), 25_000);
    assert_eq!(ds.num_labels, 2);
    let ones = ds.graphs.iter().filter(|g| g.graph_label() == Some(1)).count();
    assert_eq!(ones, 500);
    for g in &ds.graphs {
        let motif = g.motif_edges().iter().filter(|&&f| f).count() / 2;
        assert!(motif == 5 || motif == 6, "{motif} motif edges");
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    for name in DATASET_NAMES {
        let a = gen_dataset(name, 9).unwrap();
        let b = gen_dataset(name, 9).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let c = gen_dataset("ba-shapes", 10).unwrap();
    assert_ne!(c, gen_dataset("ba-shapes", 9).unwrap());
}

#[test]
fn motif_edges_join_labeled_nodes() {
    for name in ["ba-shapes", "ba-community", "tree-cycles", "tree-grid", "ba-shapes-noisy"] {
        let ds = gen_dataset(name, 0).unwrap();
        let g = &ds.graphs[0];
        for (e, &(a, b)) in g.edges().iter().enumerate() {
            if g.motif_edges()[e] {
                let base = |u: usize| g.node_labels()[u] % 4 == 0;
                assert!(!base(a) && !base(b), "{name}: motif edge {e} touches a base node");
            }
        }
    }
}

#[test]
fn noisy_variant_adds_edges_only() {
    let clean = gen_dataset("ba-shapes", 0).unwrap();
    let noisy = gen_dataset("ba-shapes-noisy", 0).unwrap();
    assert_eq!(clean.total_nodes(), noisy.total_nodes());
    let extra = (noisy.total_edges() - clean.total_edges()) / 2;
    assert_eq!(extra, 140);
}

#[test]
fn json_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["ba-community", "ba-2motifs"] {
        let ds = gen_dataset(name, 4).unwrap();
        let path = dir.path().join(format!("{name}.json"));
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }
}

#[test]
fn tu_fixture_ingests() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toymol");
    let ds = parse_tu(&dir, "TOYMOL").unwrap();
    assert_eq!(ds.task, Task::Graph);
    assert_eq!(ds.graphs.len(), 8);
    assert_eq!(ds.total_nodes(), 58);
    assert_eq!(ds.total_edges(), 112);
    assert_eq!(ds.num_labels, 2);
    // Carbon, nitrogen, oxygen.
    assert_eq!(ds.feature_dim(), 3);
    for g in &ds.graphs {
        for r in 0..g.num_nodes() {
            assert_eq!(g.features().row(r).iter().sum::<f64>(), 1.0);
        }
    }
}
