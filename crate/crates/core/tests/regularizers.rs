//! Closed-form cases of the explanation objective terms.

use diffmath::Tensor;
use pgexplain::explainer::{explainer_loss, prediction_loss, reg_budget, reg_connectivity};
use pgexplain::{EdgeScores, ExplainTrainConfig, Graph};

const LN2: f64 = std::f64::consts::LN_2;

fn star(leaves: usize) -> Graph {
    let pairs: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
    Graph::from_undirected(leaves + 1, &pairs, &vec![false; leaves], Tensor::filled(leaves + 1, 1, 1.0), vec![], None)
        .unwrap()
}

#[test]
fn budget_cases() {
    assert_eq!(reg_budget(&[1.0, 1.0, 1.0], 5.0).unwrap(), 0.0);
    assert_eq!(reg_budget(&[3.0, 2.5, 2.5], 5.0).unwrap(), 3.0);
    let e = [0.25, 0.5, 0.75, 1.0];
    assert_eq!(reg_budget(&e, 0.0).unwrap(), e.iter().sum::<f64>());
    assert!(reg_budget(&e, -1.0).is_err());
}

#[test]
fn connectivity_cases() {
    let g = star(3);
    let ones = EdgeScores(vec![1.0; g.num_edges()]);
    assert!(reg_connectivity(&g, &ones).unwrap().abs() < 1e-9);
    let halves = EdgeScores(vec![0.5; g.num_edges()]);
    assert!((reg_connectivity(&g, &halves).unwrap() - LN2).abs() < 1e-12);
}

#[test]
fn isolated_strong_edge_costs_more_than_a_uniform_star() {
    let g = star(4);
    let mut one_hot = vec![0.01; g.num_edges()];
    one_hot[0] = 0.99;
    one_hot[1] = 0.99;
    let uniform = EdgeScores(vec![0.99; g.num_edges()]);
    assert!(reg_connectivity(&g, &EdgeScores(one_hot)).unwrap() > reg_connectivity(&g, &uniform).unwrap());
}

#[test]
fn prediction_term_cases() {
    assert_eq!(prediction_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((prediction_loss(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-12);
}

#[test]
fn hard_masks_have_no_entropy_cost() {
    let g = star(3);
    let cfg = ExplainTrainConfig { lambda_size: 0.0, lambda_entropy: 1.0, ..Default::default() };
    let hard = EdgeScores(vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    assert!(explainer_loss(&[1.0, 0.0], &[1.0, 0.0], &g, &hard, &cfg).unwrap().abs() < 1e-9);
    let soft = EdgeScores(vec![0.5; 6]);
    assert!((explainer_loss(&[1.0, 0.0], &[1.0, 0.0], &g, &soft, &cfg).unwrap() - LN2).abs() < 1e-9);
}
