//! Evaluation harness: baselines, timing, inductive sweep and ablations.

use std::sync::OnceLock;

use pgexplain::eval::{
    evaluate_prepared, inductive_sweep, pooled_auc, prepare_instances, reg_ablation, timing, EvalConfig, Method,
};
use pgexplain::explainer::{baseline_instance_mask, explain_prepared, train_pgexplainer, Prepared};
use pgexplain::gnn::{train, GnnModel, TrainConfig};
use pgexplain::synthgen::gen_dataset;
use pgexplain::ExplainTrainConfig;

struct Fixture {
    model: GnnModel,
    preps: Vec<Prepared>,
}

fn fixture(name: &'static str) -> &'static Fixture {
    static SHAPES: OnceLock<Fixture> = OnceLock::new();
    static CYCLES: OnceLock<Fixture> = OnceLock::new();
    let cell = match name {
        "ba-shapes" => &SHAPES,
        "tree-cycles" => &CYCLES,
        _ => unreachable!(),
    };
    cell.get_or_init(|| {
        let ds = gen_dataset(name, 0).unwrap();
        let (model, _) = train(&ds, &TrainConfig::default()).unwrap();
        let preps = prepare_instances(&model, &ds, Some(150), 0).unwrap();
        Fixture { model, preps }
    })
}

fn train_auc(f: &Fixture, cfg: &ExplainTrainConfig) -> f64 {
    let net = train_pgexplainer(&f.model, &f.preps, cfg).unwrap().net;
    let scores: Vec<_> = f.preps.iter().map(|p| explain_prepared(&net, p, 0).unwrap().ranking_scores()).collect();
    pooled_auc(&f.preps, &scores).unwrap()
}

#[test]
fn instance_mask_auc_on_ba_shapes() {
    let f = fixture("ba-shapes");
    let cfg = EvalConfig { runs: 1, ..Default::default() };
    let r = evaluate_prepared(Method::InstanceMask, &f.model, "ba-shapes", &f.preps[..100], &cfg).unwrap();
    assert!((0.80..=1.0).contains(&r.mean_auc), "AUC {}", r.mean_auc);
}

#[test]
fn timing_controls() {
    let work = |_: usize| {
        std::hint::black_box((0..20_000u64).map(|i| i.wrapping_mul(i)).sum::<u64>());
        Ok(())
    };
    let t = timing(20, 15, work, work).unwrap();
    assert!((t.speedup - 1.0).abs() <= 0.2, "speedup {}", t.speedup);

    let f = fixture("ba-shapes");
    let preps = &f.preps[..3];
    let cfg = ExplainTrainConfig::default();
    let per_epochs: Vec<f64> = [10, 100, 1000]
        .iter()
        .map(|&ep| {
            let mask = |i: usize| baseline_instance_mask(&f.model, &preps[i], ep, 0.01, &cfg).map(|_| ());
            timing(preps.len(), 3, mask, mask).unwrap().a_ms
        })
        .collect();
    assert!(per_epochs.windows(2).all(|w| w[0] < w[1]), "{per_epochs:?}");
}

#[test]
fn inductive_sweep_on_ba_shapes() {
    let f = fixture("ba-shapes");
    let seeds = [11, 12, 13, 14, 15];
    let points = inductive_sweep(&f.model, &f.preps, &[1, 30], &seeds, &ExplainTrainConfig::default()).unwrap();
    let (one, thirty) = (&points[0], &points[1]);
    assert!(one.aucs.iter().all(|a| a.is_finite()));
    assert!(thirty.mean >= 0.90, "alpha 30: {}", thirty.mean);
    assert!(thirty.std <= one.std, "std {} vs {}", thirty.std, one.std);
    assert!(inductive_sweep(&f.model, &f.preps, &[f.preps.len()], &seeds, &ExplainTrainConfig::default()).is_err());
}

#[test]
fn ablation_cell_matches_default() {
    let f = fixture("ba-shapes");
    let cfg = ExplainTrainConfig { seed: 4, ..Default::default() };
    let grid = reg_ablation(&f.model, &f.preps, &[0.05], &[1.0], &cfg, 1).unwrap();
    let direct = train_auc(f, &cfg);
    assert!((grid.auc[0][0] - direct).abs() <= 0.02, "{} vs {direct}", grid.auc[0][0]);
    assert!(reg_ablation(&f.model, &f.preps, &[], &[1.0], &cfg, 1).is_err());
}

#[test]
fn tree_cycles_without_regularizers() {
    let f = fixture("tree-cycles");
    let cfg = ExplainTrainConfig { lambda_size: 0.0, lambda_entropy: 0.0, seed: 2, ..Default::default() };
    let a = train_auc(f, &cfg);
    assert!(a >= 0.85, "AUC {a}");
}
