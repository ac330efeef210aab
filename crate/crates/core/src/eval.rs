//! Edge AUC, method evaluation over repeated runs, timing, the inductive
//! sweep and the regularizer harness.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::explainer::{
    baseline_grad_edges, baseline_instance_mask, baseline_node_grad, explain_prepared, prepare, train_pgexplainer,
    ExplainTrainConfig, ExplainerNet, Prepared,
};
use crate::gnn::GnnModel;
use crate::graph::{edges_connected, to_dot, EdgeScores};
use crate::rng::{derive_seed, substream};

/// Area under the ROC curve via the Mann-Whitney statistic, ties at
/// midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Parameter(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Parameter(format!("score {bad} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("{pos} positives and {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Undirected scores and motif flags of one explained graph.
pub fn undirected_scores(prep: &Prepared, scores: &EdgeScores) -> Result<(Vec<f64>, Vec<bool>)> {
    scores.check_len(&prep.graph)?;
    let und = prep.undirected_edges();
    let flags = prep.graph.motif_edges();
    Ok((und.iter().map(|&e| scores.values()[e]).collect(), und.iter().map(|&e| flags[e]).collect()))
}

/// AUC over the pooled undirected edges of several explained graphs.
pub fn pooled_auc(preps: &[Prepared], scores: &[EdgeScores]) -> Result<f64> {
    let (mut s, mut l) = (Vec::new(), Vec::new());
    for (p, sc) in preps.iter().zip(scores) {
        let (a, b) = undirected_scores(p, sc)?;
        s.extend(a);
        l.extend(b);
    }
    auc(&s, &l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pgexplainer,
    InstanceMask,
    Grad,
    NodeGrad,
    Oracle,
    AntiOracle,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Pgexplainer, Method::InstanceMask, Method::Grad, Method::NodeGrad, Method::Oracle, Method::AntiOracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pgexplainer => "pgexplainer",
            Method::InstanceMask => "instance-mask",
            Method::Grad => "grad",
            Method::NodeGrad => "node-grad",
            Method::Oracle => "oracle",
            Method::AntiOracle => "anti-oracle",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub runs: usize,
    pub jobs: usize,
    pub seed: u64,
    pub explainer: ExplainTrainConfig,
    pub mask_epochs: usize,
    pub mask_lr: f64,
    /// Evaluate a seeded subsample of at most this many instances.
    pub max_instances: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            jobs: 1,
            seed: 0,
            explainer: ExplainTrainConfig::default(),
            mask_epochs: 100,
            mask_lr: 0.01,
            max_instances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub auc: Option<f64>,
    pub per_instance_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub dataset: String,
    pub instances: usize,
    pub runs: Vec<RunResult>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub per_instance_ms: f64,
    pub config: EvalConfig,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Methods as rows, datasets as columns: AUC (mean±std) then inference time.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let cell = |m: Method, d: &str, f: &dyn Fn(&EvalReport) -> String| {
        reports.iter().find(|r| r.method == m && r.dataset == d).map_or("-".to_string(), f)
    };
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Explanation AUC".to_string())
        .chain(datasets.iter().map(|d| d.to_string()))
        .collect()];
    for &m in &methods {
        let mut row = vec![m.name().to_string()];
        row.extend(datasets.iter().map(|d| cell(m, d, &|r| format!("{:.3}±{:.3}", r.mean_auc, r.std_auc))));
        rows.push(row);
    }
    rows.push(std::iter::once("Inference Time (ms)".to_string()).chain(datasets.iter().map(|_| String::new())).collect());
    for &m in &methods {
        let mut row = vec![m.name().to_string()];
        row.extend(datasets.iter().map(|d| cell(m, d, &|r| format!("{:.3}", r.per_instance_ms))));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Prepares the explainable instances, optionally subsampled.
pub fn prepare_instances(model: &GnnModel, ds: &Dataset, max: Option<usize>, seed: u64) -> Result<Vec<Prepared>> {
    let mut items = ds.explainable_instances();
    if let Some(m) = max.filter(|&m| m < items.len()) {
        items.shuffle(&mut substream(seed, "instance-subsample"));
        items.truncate(m);
        items.sort_by_key(|i| (i.graph_index(), format!("{i:?}")));
    }
    items.into_iter().map(|i| prepare(model, ds, i)).collect()
}

/// Scores every instance with `method`; returns scores and mean time per
/// instance in ms. Timing covers the GNN forward as well.
pub fn score_instances(
    method: Method,
    model: &GnnModel,
    net: Option<&ExplainerNet>,
    preps: &[Prepared],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(Vec<EdgeScores>, f64)> {
    let start = Instant::now();
    let mut out = Vec::with_capacity(preps.len());
    for (i, p) in preps.iter().enumerate() {
        let s = match method {
            Method::Pgexplainer => {
                let net = net.ok_or_else(|| Error::Contract("pgexplainer scoring needs a trained net".into()))?;
                let fresh = crate::explainer::prepare_graph(model, p.instance, p.graph.clone(), p.center, p.parent_edges.clone())?;
                explain_prepared(net, &fresh, 0)?.ranking_scores()
            }
            Method::InstanceMask => {
                let c = ExplainTrainConfig { seed: derive_seed(seed, &format!("mask-{i}")), ..cfg.explainer.clone() };
                baseline_instance_mask(model, p, cfg.mask_epochs, cfg.mask_lr, &c)?
            }
            Method::Grad => baseline_grad_edges(model, &p.graph, p.center)?,
            Method::NodeGrad => baseline_node_grad(model, &p.graph, p.center)?,
            Method::Oracle => EdgeScores(p.graph.motif_edges().iter().map(|&f| f64::from(u8::from(f))).collect()),
            Method::AntiOracle => EdgeScores(p.graph.motif_edges().iter().map(|&f| 1.0 - f64::from(u8::from(f))).collect()),
        };
        out.push(s);
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / preps.len().max(1) as f64;
    Ok((out, ms))
}

fn single_run(method: Method, model: &GnnModel, preps: &[Prepared], cfg: &EvalConfig, seed: u64) -> Result<(f64, f64)> {
    let net = match method {
        Method::Pgexplainer => {
            let c = ExplainTrainConfig { seed, ..cfg.explainer.clone() };
            Some(train_pgexplainer(model, preps, &c)?.net)
        }
        _ => None,
    };
    let (scores, ms) = score_instances(method, model, net.as_ref(), preps, cfg, seed)?;
    Ok((pooled_auc(preps, &scores)?, ms))
}

/// Runs `method` `cfg.runs` times with fresh seeds on every explainable
/// instance. At least 80% of the runs must succeed.
pub fn evaluate_method(method: Method, model: &GnnModel, ds: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let preps = prepare_instances(model, ds, cfg.max_instances, cfg.seed)?;
    evaluate_prepared(method, model, &ds.name, &preps, cfg)
}

/// As [`evaluate_method`] on instances prepared by the caller.
pub fn evaluate_prepared(
    method: Method,
    model: &GnnModel,
    dataset: &str,
    preps: &[Prepared],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if cfg.runs == 0 {
        return Err(Error::Parameter("at least one run is required".into()));
    }
    let seeds: Vec<u64> = (0..cfg.runs).map(|r| derive_seed(cfg.seed, &format!("run-{r}"))).collect();
    let results = run_parallel(&seeds, cfg.jobs, |&s| single_run(method, model, preps, cfg, s));
    let runs: Vec<RunResult> = seeds
        .iter()
        .zip(results)
        .map(|(&seed, r)| match r {
            Ok((auc, ms)) => RunResult { seed, auc: Some(auc), per_instance_ms: Some(ms), error: None },
            Err(e) => RunResult { seed, auc: None, per_instance_ms: None, error: Some(e.to_string()) },
        })
        .collect();
    let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc).collect();
    let needed = (cfg.runs * 4).div_ceil(5);
    if aucs.len() < needed {
        let first = runs.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Diverged(format!("{} of {} runs succeeded (need {needed}); first error: {first}", aucs.len(), cfg.runs)));
    }
    let times: Vec<f64> = runs.iter().filter_map(|r| r.per_instance_ms).collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    Ok(EvalReport {
        method,
        dataset: dataset.to_string(),
        instances: preps.len(),
        runs,
        mean_auc,
        std_auc,
        per_instance_ms: median(&times),
        config: cfg.clone(),
    })
}

/// Maps `f` over `items` with up to `jobs` threads; output order matches
/// input order.
pub fn run_parallel<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        for (inp, out) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let f = &f;
            s.spawn(move || {
                for (i, o) in inp.iter().zip(out) {
                    *o = Some(f(i));
                }
            });
        }
    });
    slots.into_iter().map(|o| o.expect("worker filled its slot")).collect()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Median wall time in ms of `f` over `reps` calls after one warmup call.
pub fn median_time_ms(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    if reps == 0 {
        return Err(Error::Parameter("need at least one repetition".into()));
    }
    f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&times))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub a_ms: f64,
    pub b_ms: f64,
    /// `b_ms / a_ms`.
    pub speedup: f64,
}

/// Per-instance median times of two procedures over the same instances.
/// Each repetition runs the procedure once per instance.
pub fn timing(
    instances: usize,
    reps: usize,
    mut a: impl FnMut(usize) -> Result<()>,
    mut b: impl FnMut(usize) -> Result<()>,
) -> Result<Timing> {
    if instances == 0 {
        return Err(Error::Parameter("no instances to time".into()));
    }
    let per = |ms: f64| ms / instances as f64;
    let a_ms = per(median_time_ms(reps, || (0..instances).try_for_each(&mut a))?);
    let b_ms = per(median_time_ms(reps, || (0..instances).try_for_each(&mut b))?);
    Ok(Timing { a_ms, b_ms, speedup: b_ms / a_ms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductivePoint {
    pub alpha: usize,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Trains on `alpha` instances and scores the held-out test part, for
/// every `alpha` and seed. The remaining instances are split evenly into
/// validation and test; validation is only reported through `val_auc`
/// of the debug log.
pub fn inductive_sweep(
    model: &GnnModel,
    preps: &[Prepared],
    alphas: &[usize],
    seeds: &[u64],
    cfg: &ExplainTrainConfig,
) -> Result<Vec<InductivePoint>> {
    let n = preps.len();
    if n < 60 {
        return Err(Error::Parameter(format!("inductive sweep needs at least 60 instances, have {n}")));
    }
    if let Some(&a) = alphas.iter().find(|&&a| a == 0 || a >= n) {
        return Err(Error::Parameter(format!("alpha {a} outside 1..{n}")));
    }
    let mut points = Vec::new();
    for &alpha in alphas {
        let mut aucs = Vec::new();
        for &seed in seeds {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(seed, "inductive-split"));
            let train: Vec<Prepared> = order[..alpha].iter().map(|&i| preps[i].clone()).collect();
            let test_start = alpha + (n - alpha) / 2;
            let test: Vec<Prepared> = order[test_start..].iter().map(|&i| preps[i].clone()).collect();
            let c = ExplainTrainConfig { seed: derive_seed(seed, &format!("alpha-{alpha}")), ..cfg.clone() };
            let net = train_pgexplainer(model, &train, &c)?.net;
            let scores = test.iter().map(|p| Ok(explain_prepared(&net, p, 0)?.ranking_scores())).collect::<Result<Vec<_>>>()?;
            aucs.push(pooled_auc(&test, &scores)?);
        }
        let (mean, std) = mean_std(&aucs);
        points.push(InductivePoint { alpha, aucs, mean, std });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub lambda_size: Vec<f64>,
    pub lambda_entropy: Vec<f64>,
    /// `auc[i][j]` for `lambda_size[i]`, `lambda_entropy[j]`.
    pub auc: Vec<Vec<f64>>,
}

/// One explainer per grid cell, all other settings from `cfg`.
pub fn reg_ablation(
    model: &GnnModel,
    preps: &[Prepared],
    sizes: &[f64],
    entropies: &[f64],
    cfg: &ExplainTrainConfig,
    jobs: usize,
) -> Result<AblationGrid> {
    if sizes.is_empty() || entropies.is_empty() {
        return Err(Error::Parameter("ablation grids must be nonempty".into()));
    }
    let cells: Vec<(f64, f64)> = sizes.iter().flat_map(|&s| entropies.iter().map(move |&e| (s, e))).collect();
    let results = run_parallel(&cells, jobs, |&(s, e)| {
        let c = ExplainTrainConfig { lambda_size: s, lambda_entropy: e, ..cfg.clone() };
        let net = train_pgexplainer(model, preps, &c)?.net;
        let scores = preps.iter().map(|p| Ok(explain_prepared(&net, p, 0)?.ranking_scores())).collect::<Result<Vec<_>>>()?;
        pooled_auc(preps, &scores)
    });
    let flat = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(AblationGrid {
        lambda_size: sizes.to_vec(),
        lambda_entropy: entropies.to_vec(),
        auc: flat.chunks(entropies.len()).map(<[f64]>::to_vec).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityResult {
    pub lambda_connect: f64,
    pub seed: u64,
    /// Position of the exported instance in the prepared list.
    pub instance: usize,
    pub connected: bool,
    /// Fraction of all instances whose top-k edges are connected.
    pub connected_fraction: f64,
    pub dot: String,
}

/// Trains one explainer per connectivity weight and exports the top-`k`
/// explanation of a seed-chosen instance.
pub fn connectivity_demo(
    model: &GnnModel,
    preps: &[Prepared],
    lambdas: &[f64],
    seed: u64,
    k: usize,
    cfg: &ExplainTrainConfig,
) -> Result<Vec<ConnectivityResult>> {
    if preps.is_empty() {
        return Err(Error::Parameter("no instances".into()));
    }
    let pick = derive_seed(seed, "connectivity-instance") as usize % preps.len();
    lambdas
        .iter()
        .map(|&l| {
            let c = ExplainTrainConfig { lambda_connect: l, seed, ..cfg.clone() };
            let net = train_pgexplainer(model, preps, &c)?.net;
            let mut hits = 0usize;
            let mut chosen = None;
            for (i, p) in preps.iter().enumerate() {
                let ex = explain_prepared(&net, p, k)?;
                let ok = edges_connected(&p.graph, &ex.topk);
                hits += usize::from(ok);
                if i == pick {
                    chosen = Some((ok, to_dot(&p.graph, &ex.ranking_scores(), k)?));
                }
            }
            let (connected, dot) = chosen.expect("picked index is in range");
            Ok(ConnectivityResult {
                lambda_connect: l,
                seed,
                instance: pick,
                connected,
                connected_fraction: hits as f64 / preps.len() as f64,
                dot,
            })
        })
        .collect()
}
