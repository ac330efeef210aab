//! Parameterized edge explainer: a shared MLP maps GNN embeddings of an
//! edge's endpoints (and the explained node) to an edge logit. Training
//! samples relaxed Bernoulli masks and fits the masked prediction to the
//! original one. Also hosts the per-instance mask and gradient baselines.

use std::fs;
use std::path::Path;
use std::time::Instant;

use diffmath::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use log::debug;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Instance, Task};
use crate::error::{Error, Result};
use crate::gnn::{argmax, Dense, GnnModel, LayerRecord, HIDDEN, NUM_LAYERS};
use crate::graph::{extract_computation_graph, top_k_undirected, EdgeScores, Graph};
use crate::rng::{substream, Rng};

pub const MLP_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerNet {
    pub task: Task,
    /// Per-column shift and scale applied to embeddings before the MLP.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub first: Dense,
    pub second: Dense,
    pub seed: u64,
}

struct NetVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

pub fn input_width(task: Task) -> usize {
    match task {
        Task::Node => 3 * HIDDEN,
        Task::Graph => 2 * HIDDEN,
    }
}

impl ExplainerNet {
    pub fn new(task: Task, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "explainer-init");
        let first = Dense::xavier(input_width(task), MLP_HIDDEN, &mut rng)?;
        let second = Dense::xavier(MLP_HIDDEN, 1, &mut rng)?;
        Ok(Self { task, input_mean: vec![0.0; HIDDEN], input_scale: vec![1.0; HIDDEN], first, second, seed })
    }

    /// Sets the input standardization from the pooled embedding rows.
    pub fn fit_input(&mut self, embeddings: &[&Tensor]) {
        let rows: usize = embeddings.iter().map(|z| z.rows()).sum();
        if rows == 0 {
            return;
        }
        let mut mean = vec![0.0; HIDDEN];
        let mut sq = vec![0.0; HIDDEN];
        for z in embeddings {
            for r in 0..z.rows() {
                for (c, &v) in z.row(r).iter().enumerate() {
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = rows as f64;
        for c in 0..HIDDEN {
            mean[c] /= n;
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            let sd = var.sqrt();
            self.input_scale[c] = if sd > 1e-9 { 1.0 / sd } else { 1.0 };
        }
        self.input_mean = mean;
    }

    fn standardize(&self, z: &Tensor) -> Tensor {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.input_mean[c]) * self.input_scale[c];
            }
        }
        out
    }

    /// Same as [`ExplainerNet::new`] with zero output weights, so every
    /// logit starts at `logit`.
    pub fn with_constant_output(task: Task, seed: u64, logit: f64) -> Result<Self> {
        let mut net = Self::new(task, seed)?;
        net.second.weight = Tensor::zeros(MLP_HIDDEN, 1);
        net.second.bias = Tensor::filled(1, 1, logit);
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn params(&self) -> [&Tensor; 4] {
        [&self.first.weight, &self.first.bias, &self.second.weight, &self.second.bias]
    }

    fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.first.weight, &mut self.first.bias, &mut self.second.weight, &mut self.second.bias]
    }

    fn register(&self, tape: &mut Tape) -> NetVars {
        NetVars {
            w1: tape.param(self.first.weight.clone()),
            b1: tape.param(self.first.bias.clone()),
            w2: tape.param(self.second.weight.clone()),
            b2: tape.param(self.second.bias.clone()),
        }
    }

    fn check_inputs(&self, z: &Tensor, g: &Graph, center: Option<usize>) -> Result<()> {
        if z.rows() != g.num_nodes() || z.cols() != HIDDEN {
            return Err(Error::Contract(format!(
                "embeddings are {}x{}, expected {}x{HIDDEN}",
                z.rows(),
                z.cols(),
                g.num_nodes()
            )));
        }
        match (self.task, center) {
            (Task::Node, None) => Err(Error::Contract("node task needs a center node".into())),
            (Task::Node, Some(c)) if c >= g.num_nodes() => Err(Error::NodeIndex { node: c, num_nodes: g.num_nodes() }),
            _ => Ok(()),
        }
    }

    /// Symmetric logits `E x 1`. The first layer acts on the concatenation
    /// `[z_i; z_j; z_v]`, computed blockwise so no `E x 60` input is built.
    fn logits_on_tape(&self, tape: &mut Tape, vars: &NetVars, z: Var, g: &Graph, center: Option<usize>) -> Result<Var> {
        let wa = tape.slice_rows(vars.w1, 0, HIDDEN)?;
        let wb = tape.slice_rows(vars.w1, HIDDEN, 2 * HIDDEN)?;
        let pa = tape.matmul(z, wa)?;
        let pb = tape.matmul(z, wb)?;
        let ha = tape.gather_rows(pa, g.src())?;
        let hb = tape.gather_rows(pb, g.dst())?;
        let mut h = tape.add(ha, hb)?;
        if let (Task::Node, Some(c)) = (self.task, center) {
            let wc = tape.slice_rows(vars.w1, 2 * HIDDEN, 3 * HIDDEN)?;
            let zc = tape.gather_rows(z, &[c])?;
            let pc = tape.matmul(zc, wc)?;
            h = tape.add_row(h, pc)?;
        }
        let h = tape.add_row(h, vars.b1)?;
        let h = tape.relu(h);
        let out = tape.matmul(h, vars.w2)?;
        let out = tape.add_row(out, vars.b2)?;
        let rev = tape.gather_rows(out, g.reverse())?;
        let both = tape.add(out, rev)?;
        Ok(tape.scale(both, 0.5))
    }

    /// Edge logits Ω for graph `g` with node embeddings `z`.
    pub fn edge_logits(&self, z: &Tensor, g: &Graph, center: Option<usize>) -> Result<EdgeScores> {
        self.check_inputs(z, g, center)?;
        if g.num_edges() == 0 {
            return Ok(EdgeScores(Vec::new()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let zv = tape.constant(self.standardize(z));
        let out = self.logits_on_tape(&mut tape, &vars, zv, g, center)?;
        Ok(EdgeScores(tape.value(out).data().to_vec()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetCheckpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: NetCheckpoint = serde_json::from_str(text)?;
        if c.hidden != MLP_HIDDEN {
            return Err(Error::Contract(format!("explainer hidden width {} unsupported", c.hidden)));
        }
        if c.input_mean.len() != HIDDEN || c.input_scale.len() != HIDDEN {
            return Err(Error::Contract("explainer input statistics have the wrong width".into()));
        }
        Ok(Self {
            task: c.task,
            input_mean: c.input_mean,
            input_scale: c.input_scale,
            first: c.first.into_dense(input_width(c.task), MLP_HIDDEN, "explainer layer 0")?,
            second: c.second.into_dense(MLP_HIDDEN, 1, "explainer layer 1")?,
            seed: c.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Serialize, Deserialize)]
struct NetCheckpoint {
    task: Task,
    hidden: usize,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    first: LayerRecord,
    second: LayerRecord,
    seed: u64,
}

impl From<&ExplainerNet> for NetCheckpoint {
    fn from(n: &ExplainerNet) -> Self {
        Self {
            task: n.task,
            hidden: MLP_HIDDEN,
            input_mean: n.input_mean.clone(),
            input_scale: n.input_scale.clone(),
            first: (&n.first).into(),
            second: (&n.second).into(),
            seed: n.seed,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One binary concrete draw for logit `omega` with uniform variate `eps`.
pub fn binary_concrete(omega: f64, tau: f64, eps: f64) -> f64 {
    sigmoid(((eps.ln() - (1.0 - eps).ln()) + omega) / tau)
}

fn uniform_open(rng: &mut Rng) -> f64 {
    rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12)
}

/// Logistic noise `ln e - ln(1-e)` per directed edge, one draw per
/// undirected edge.
fn logistic_noise(g: &Graph, slot: &[usize], rng: &mut Rng) -> Vec<f64> {
    let u: Vec<f64> = (0..g.num_edges() / 2)
        .map(|_| {
            let e = uniform_open(rng);
            e.ln() - (1.0 - e).ln()
        })
        .collect();
    slot.iter().map(|&s| u[s]).collect()
}

/// Samples relaxed edge indicators; both directions of an edge share one
/// uniform variate.
pub fn sample_concrete(g: &Graph, omega: &EdgeScores, tau: f64, rng: &mut Rng) -> Result<EdgeScores> {
    omega.check_len(g)?;
    if tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let noise = logistic_noise(g, &g.undirected_slot(), rng);
    Ok(EdgeScores(omega.values().iter().zip(noise).map(|(w, n)| sigmoid((n + w) / tau)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Gradients summed over all training instances, one step per epoch.
    PerEpoch,
    /// One step after every instance.
    PerInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub samples: usize,
    pub lambda_size: f64,
    pub lambda_entropy: f64,
    pub budget: Option<f64>,
    pub lambda_budget: f64,
    pub lambda_connect: f64,
    pub tau0: f64,
    pub tau_final: f64,
    pub update: UpdateMode,
    /// Starting value of every edge logit; `None` picks
    /// [`default_initial_logit`] for the model's task.
    pub initial_logit: Option<f64>,
    pub seed: u64,
}

impl Default for ExplainTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            samples: 1,
            lambda_size: 0.05,
            lambda_entropy: 1.0,
            budget: None,
            lambda_budget: 1.0,
            lambda_connect: 0.0,
            tau0: 5.0,
            tau_final: 2.0,
            update: UpdateMode::PerEpoch,
            initial_logit: None,
            seed: 0,
        }
    }
}

impl ExplainTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_size, self.lambda_entropy, self.lambda_budget, self.lambda_connect];
        if self.epochs == 0 || self.samples == 0 {
            return Err(Error::Parameter("epochs and samples must be at least 1".into()));
        }
        if self.initial_logit.is_some_and(|l| !l.is_finite()) {
            return Err(Error::Parameter("initial logit must be finite".into()));
        }
        if !(self.tau0 > 0.0 && self.tau_final > 0.0 && self.lr > 0.0) {
            return Err(Error::Parameter("temperatures and learning rate must be positive".into()));
        }
        if lambdas.iter().any(|&l| !(l >= 0.0)) || self.budget.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::Parameter("regularizer weights and budget must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Node tasks start from uniform 0.5 weights. Graph tasks start near the
/// full graph (`sigmoid(3) ~ 0.95`): a max-pooled readout only recognizes
/// an intact motif, so from half-weighted graphs the prediction loss
/// points away from it.
pub fn default_initial_logit(task: Task) -> f64 {
    match task {
        Task::Node => 0.0,
        Task::Graph => 3.0,
    }
}

/// Annealed temperature at epoch `t`, from `tau0` at 0 to `tau_final` at
/// `epochs`.
pub fn temperature(t: usize, cfg: &ExplainTrainConfig) -> f64 {
    let frac = t.min(cfg.epochs) as f64 / cfg.epochs as f64;
    cfg.tau0 * (cfg.tau_final / cfg.tau0).powf(frac)
}

/// Ordered pairs of distinct undirected edges meeting at a node, as
/// positions in [`Graph::undirected_edges`].
pub fn adjacent_edge_pairs(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let mut incident = vec![Vec::new(); g.num_nodes()];
    for (k, e) in g.undirected_edges().into_iter().enumerate() {
        incident[g.src()[e]].push(k);
        incident[g.dst()[e]].push(k);
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for inc in &incident {
        for &x in inc {
            for &y in inc {
                if x != y {
                    a.push(x);
                    b.push(y);
                }
            }
        }
    }
    (a, b)
}

/// Static per-graph data the regularizers need.
struct RegContext<'a> {
    und: &'a [usize],
    pairs: Option<&'a (Vec<usize>, Vec<usize>)>,
}

fn one_minus(tape: &mut Tape, a: Var) -> Var {
    let neg = tape.scale(a, -1.0);
    tape.add_scalar(neg, 1.0)
}

/// Size, entropy, budget and connectivity terms over the undirected edge
/// vector. Returns `None` when every term is off or there are no edges.
fn regularizers(tape: &mut Tape, e_hat: Var, ctx: &RegContext, cfg: &ExplainTrainConfig) -> Result<Option<Var>> {
    if ctx.und.is_empty() {
        return Ok(None);
    }
    let eu = tape.gather_rows(e_hat, ctx.und)?;
    let mut terms = Vec::new();
    let total = tape.sum(eu);
    if cfg.lambda_size > 0.0 {
        terms.push(tape.scale(total, cfg.lambda_size));
    }
    if cfg.lambda_entropy > 0.0 {
        let log_e = tape.log(eu);
        let rest = one_minus(tape, eu);
        let log_rest = tape.log(rest);
        let a = tape.mul(eu, log_e)?;
        let b = tape.mul(rest, log_rest)?;
        let s = tape.add(a, b)?;
        let m = tape.mean(s)?;
        terms.push(tape.scale(m, -cfg.lambda_entropy));
    }
    if let Some(budget) = cfg.budget {
        if cfg.lambda_budget > 0.0 {
            let over = tape.add_scalar(total, -budget);
            let r = tape.relu(over);
            terms.push(tape.scale(r, cfg.lambda_budget));
        }
    }
    if let Some(pairs) = ctx.pairs.filter(|p| !p.0.is_empty() && cfg.lambda_connect > 0.0) {
        let h = pair_cross_entropy(tape, eu, pairs)?;
        terms.push(tape.scale(h, cfg.lambda_connect));
    }
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => return Ok(None),
    };
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(acc))
}

/// Mean of `-[(1-a) ln(1-b) + a ln b]` over the pairs.
fn pair_cross_entropy(tape: &mut Tape, eu: Var, pairs: &(Vec<usize>, Vec<usize>)) -> Result<Var> {
    let a = tape.gather_rows(eu, &pairs.0)?;
    let b = tape.gather_rows(eu, &pairs.1)?;
    let na = one_minus(tape, a);
    let nb = one_minus(tape, b);
    let log_b = tape.log(b);
    let log_nb = tape.log(nb);
    let x = tape.mul(na, log_nb)?;
    let y = tape.mul(a, log_b)?;
    let s = tape.add(x, y)?;
    let m = tape.mean(s)?;
    Ok(tape.scale(m, -1.0))
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// Cross-entropy of the masked prediction against the original one.
pub fn prediction_loss(p_original: &[f64], p_masked: &[f64]) -> Result<f64> {
    check_probs(p_original, "original prediction")?;
    check_probs(p_masked, "masked prediction")?;
    if p_original.len() != p_masked.len() {
        return Err(Error::Contract("prediction widths differ".into()));
    }
    Ok(-p_original.iter().zip(p_masked).map(|(p, q)| p * q.max(diffmath::LOG_FLOOR).ln()).sum::<f64>())
}

fn eval_regularizers(g: &Graph, e_hat: &EdgeScores, cfg: &ExplainTrainConfig) -> Result<f64> {
    e_hat.check_len(g)?;
    let und = g.undirected_edges();
    let pairs = adjacent_edge_pairs(g);
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::column(e_hat.values().to_vec()));
    let ctx = RegContext { und: &und, pairs: Some(&pairs) };
    Ok(regularizers(&mut tape, e, &ctx, cfg)?.map_or(0.0, |v| tape.value(v).item()))
}

/// Full training objective for one instance and one mask sample.
pub fn explainer_loss(
    p_original: &[f64],
    p_masked: &[f64],
    g: &Graph,
    e_hat: &EdgeScores,
    cfg: &ExplainTrainConfig,
) -> Result<f64> {
    Ok(prediction_loss(p_original, p_masked)? + eval_regularizers(g, e_hat, cfg)?)
}

/// `ReLU(sum(e) - budget)` over undirected edge values.
pub fn reg_budget(e_undirected: &[f64], budget: f64) -> Result<f64> {
    if !(budget >= 0.0) {
        return Err(Error::Parameter(format!("budget must be nonnegative, got {budget}")));
    }
    Ok((e_undirected.iter().sum::<f64>() - budget).max(0.0))
}

/// Mean cross-entropy over ordered pairs of adjacent undirected edges.
pub fn reg_connectivity(g: &Graph, e_hat: &EdgeScores) -> Result<f64> {
    e_hat.check_len(g)?;
    let pairs = adjacent_edge_pairs(g);
    if pairs.0.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::column(e_hat.values().to_vec()));
    let eu = tape.gather_rows(e, &g.undirected_edges())?;
    let h = pair_cross_entropy(&mut tape, eu, &pairs)?;
    Ok(tape.value(h).item())
}

/// An instance ready for explanation: the graph the GNN sees for it, its
/// frozen embeddings and the unmasked prediction.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: Instance,
    pub graph: Graph,
    pub center: Option<usize>,
    /// Parent edge id of every edge of `graph`.
    pub parent_edges: Vec<usize>,
    pub z: Tensor,
    pub probs: Vec<f64>,
    und: Vec<usize>,
    slot: Vec<usize>,
}

impl Prepared {
    pub fn undirected_edges(&self) -> &[usize] {
        &self.und
    }
}

/// Extracts the computation graph (node tasks) and runs the frozen GNN on it.
pub fn prepare(model: &GnnModel, ds: &Dataset, instance: Instance) -> Result<Prepared> {
    let g = ds
        .graphs
        .get(instance.graph_index())
        .ok_or_else(|| Error::Parameter(format!("no graph {}", instance.graph_index())))?;
    model.check_graph(g)?;
    let (graph, center, parent_edges) = match (instance, ds.task) {
        (Instance::Node { node, .. }, Task::Node) => {
            let cg = extract_computation_graph(g, node, NUM_LAYERS)?;
            (cg.graph, Some(cg.center), cg.edges)
        }
        (Instance::Graph { .. }, Task::Graph) => (g.clone(), None, (0..g.num_edges()).collect()),
        _ => return Err(Error::Contract("instance kind does not match the dataset task".into())),
    };
    prepare_graph(model, instance, graph, center, parent_edges)
}

pub(crate) fn prepare_graph(
    model: &GnnModel,
    instance: Instance,
    graph: Graph,
    center: Option<usize>,
    parent_edges: Vec<usize>,
) -> Result<Prepared> {
    let fwd = model.forward(&graph, None)?;
    let probs = match center {
        Some(c) => fwd.probs.row(c).to_vec(),
        None => fwd.probs.row(0).to_vec(),
    };
    let und = graph.undirected_edges();
    let slot = graph.undirected_slot();
    Ok(Prepared { instance, z: fwd.z, probs, und, slot, graph, center, parent_edges })
}

/// Builds the instance objective on `tape` given symmetric logits.
fn instance_objective(
    tape: &mut Tape,
    model: &GnnModel,
    prep: &Prepared,
    pairs: Option<&(Vec<usize>, Vec<usize>)>,
    omega: Var,
    tau: f64,
    cfg: &ExplainTrainConfig,
    rng: &mut Rng,
) -> Result<Var> {
    let gvars = model.register(tape, false);
    let target = tape.constant(Tensor::row_vector(prep.probs.clone()));
    let ctx = RegContext { und: &prep.und, pairs };
    let mut total: Option<Var> = None;
    for _ in 0..cfg.samples {
        let noise = tape.constant(Tensor::column(logistic_noise(&prep.graph, &prep.slot, rng)));
        let shifted = tape.add(omega, noise)?;
        let scaled = tape.scale(shifted, 1.0 / tau);
        let e_hat = tape.sigmoid(scaled);
        let x = tape.constant(prep.graph.features().clone());
        let logp = model.instance_log_probs(tape, &gvars, &prep.graph, x, Some(e_hat), prep.center)?;
        let prod = tape.mul(logp, target)?;
        let ce = tape.sum(prod);
        let mut loss = tape.scale(ce, -1.0);
        if let Some(r) = regularizers(tape, e_hat, &ctx, cfg)? {
            loss = tape.add(loss, r)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("at least one sample");
    Ok(tape.scale(total, 1.0 / cfg.samples as f64))
}

/// Trained explainer and the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainedExplainer {
    pub net: ExplainerNet,
    pub losses: Vec<f64>,
}

/// Fits the shared explainer MLP on the given instances. The GNN is only
/// read.
pub fn train_pgexplainer(model: &GnnModel, instances: &[Prepared], cfg: &ExplainTrainConfig) -> Result<TrainedExplainer> {
    cfg.validate()?;
    let usable: Vec<&Prepared> = instances.iter().filter(|p| p.graph.num_edges() > 0).collect();
    if usable.is_empty() {
        return Err(Error::Parameter("no training instance has edges".into()));
    }
    let mut net = ExplainerNet::with_constant_output(
        model.task,
        cfg.seed,
        cfg.initial_logit.unwrap_or_else(|| default_initial_logit(model.task)),
    )?;
    net.fit_input(&usable.iter().map(|p| &p.z).collect::<Vec<_>>());
    let inputs: Vec<Tensor> = usable.iter().map(|p| net.standardize(&p.z)).collect();
    let pairs: Vec<Option<(Vec<usize>, Vec<usize>)>> = usable
        .iter()
        .map(|p| (cfg.lambda_connect > 0.0).then(|| adjacent_edge_pairs(&p.graph)))
        .collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &net.params());
    let mut rng = substream(cfg.seed, "explainer-sample");
    let mut losses = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / usable.len() as f64;

    for epoch in 0..cfg.epochs {
        let tau = temperature(epoch, cfg);
        let last_good = net.clone();
        let mut acc: Option<[Tensor; 4]> = None;
        let mut epoch_loss = 0.0;
        for ((prep, pairs), input) in usable.iter().zip(&pairs).zip(&inputs) {
            let mut tape = Tape::new();
            let vars = net.register(&mut tape);
            let z = tape.constant(input.clone());
            let omega = net.logits_on_tape(&mut tape, &vars, z, &prep.graph, prep.center)?;
            let loss = instance_objective(&mut tape, model, prep, pairs.as_ref(), omega, tau, cfg, &mut rng)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::ExplainerDiverged { epoch, last_good: Box::new(last_good) });
            }
            epoch_loss += value * scale;
            let mut grads = tape.backward(loss)?;
            let g = [vars.w1, vars.b1, vars.w2, vars.b2].map(|v| grads.take(v).expect("explainer gradient"));
            match cfg.update {
                UpdateMode::PerInstance => step(&mut net, &g, &mut adam, epoch, &last_good)?,
                UpdateMode::PerEpoch => match &mut acc {
                    Some(a) => {
                        for (a, g) in a.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y * scale;
                            }
                        }
                    }
                    None => acc = Some(g.map(|t| t.map(|v| v * scale))),
                },
            }
        }
        if let Some(a) = acc {
            step(&mut net, &a, &mut adam, epoch, &last_good)?;
        }
        debug!("explainer epoch {epoch} tau {tau:.3} loss {epoch_loss:.4}");
        losses.push(epoch_loss);
    }
    Ok(TrainedExplainer { net, losses })
}

fn step(net: &mut ExplainerNet, grads: &[Tensor; 4], adam: &mut AdamState, epoch: usize, last_good: &ExplainerNet) -> Result<()> {
    let refs: Vec<&Tensor> = grads.iter().collect();
    adam_step(&mut net.params_mut(), &refs, adam)
        .map_err(|_| Error::ExplainerDiverged { epoch, last_good: Box::new(last_good.clone()) })
}

/// Deterministic explanation of one instance.
#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub instance: Instance,
    /// Parent edge ids, one per edge of the explained graph.
    pub edges: Vec<usize>,
    pub omega: Vec<f64>,
    pub prob: Vec<f64>,
    /// Highest-probability undirected edges, as indices into `edges`.
    pub topk: Vec<usize>,
    pub elapsed_ms: f64,
    #[serde(skip)]
    pub graph: Graph,
}

impl Explanation {
    /// Edge probabilities.
    pub fn scores(&self) -> EdgeScores {
        EdgeScores(self.prob.clone())
    }

    /// Edge logits. Same order as [`Explanation::scores`] but free of ties
    /// from saturated probabilities, so preferred for ranking.
    pub fn ranking_scores(&self) -> EdgeScores {
        EdgeScores(self.omega.clone())
    }
}

/// Explains an instance already prepared (embeddings available).
pub fn explain_prepared(net: &ExplainerNet, prep: &Prepared, k: usize) -> Result<Explanation> {
    let start = Instant::now();
    let omega = net.edge_logits(&prep.z, &prep.graph, prep.center)?;
    let prob: Vec<f64> = omega.values().iter().map(|&w| sigmoid(w)).collect();
    let topk = top_k_undirected(&prep.graph, &omega, k)?;
    Ok(Explanation {
        instance: prep.instance,
        edges: prep.parent_edges.clone(),
        omega: omega.0,
        prob,
        topk,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        graph: prep.graph.clone(),
    })
}

/// Explains an instance from scratch: extraction, GNN forward and the
/// explainer pass all count toward `elapsed_ms`.
pub fn explain(net: &ExplainerNet, model: &GnnModel, ds: &Dataset, instance: Instance, k: usize) -> Result<Explanation> {
    if net.task != model.task {
        return Err(Error::Contract("explainer and model disagree on the task".into()));
    }
    let start = Instant::now();
    let prep = prepare(model, ds, instance)?;
    let mut out = explain_prepared(net, &prep, k)?;
    out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

/// Per-instance mask baseline: free logits per undirected edge, optimized
/// with the same objective and sampling. Returns `sigma(logits)`.
pub fn baseline_instance_mask(
    model: &GnnModel,
    prep: &Prepared,
    epochs: usize,
    lr: f64,
    cfg: &ExplainTrainConfig,
) -> Result<EdgeScores> {
    let n_und = prep.und.len();
    let mut logits = Tensor::zeros(n_und, 1);
    if epochs == 0 || n_und == 0 {
        return Ok(EdgeScores(vec![0.5; prep.graph.num_edges()]));
    }
    let schedule = ExplainTrainConfig { epochs, ..cfg.clone() };
    schedule.validate()?;
    let pairs = (cfg.lambda_connect > 0.0).then(|| adjacent_edge_pairs(&prep.graph));
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &[&logits]);
    let mut rng = substream(cfg.seed, "mask-sample");
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let free = tape.param(logits.clone());
        let omega = tape.gather_rows(free, &prep.slot)?;
        let loss = instance_objective(&mut tape, model, prep, pairs.as_ref(), omega, temperature(epoch, &schedule), cfg, &mut rng)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Diverged(format!("instance mask loss at epoch {epoch}")));
        }
        let grad = tape.backward(loss)?.take(free).expect("mask gradient");
        adam_step(&mut [&mut logits], &[&grad], &mut adam).map_err(|e| Error::Diverged(e.to_string()))?;
    }
    Ok(EdgeScores(prep.slot.iter().map(|&s| sigmoid(logits.data()[s])).collect()))
}

/// Cross-entropy of the predicted class on a tape with edge weights and
/// features as leaves; returns the loss and both leaves.
fn prediction_ce(model: &GnnModel, g: &Graph, center: Option<usize>) -> Result<(Tape, Var, Var, Var)> {
    model.check_graph(g)?;
    let probs = model.predict_proba(g, center)?;
    let class = argmax(&probs);
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, false);
    let w = tape.param(Tensor::filled(g.num_edges(), 1, 1.0));
    let x = tape.param(g.features().clone());
    let logp = model.instance_log_probs(&mut tape, &vars, g, x, Some(w), center)?;
    let picked = tape.slice_rows(logp, 0, 1)?;
    let mut onehot = Tensor::zeros(1, model.num_labels);
    onehot.set(0, class, 1.0);
    let t = tape.constant(onehot);
    let prod = tape.mul(picked, t)?;
    let s = tape.sum(prod);
    let loss = tape.scale(s, -1.0);
    Ok((tape, loss, w, x))
}

/// `|d CE / d w_e|` at unit weights, averaged over both directions.
pub fn baseline_grad_edges(model: &GnnModel, g: &Graph, center: Option<usize>) -> Result<EdgeScores> {
    let (tape, loss, w, _) = prediction_ce(model, g, center)?;
    let mut grads = tape.backward(loss)?;
    let gw = grads.take(w).expect("edge gradient");
    let d = gw.data();
    Ok(EdgeScores(g.reverse().iter().enumerate().map(|(e, &r)| 0.5 * (d[e].abs() + d[r].abs())).collect()))
}

/// Node saliency `||d CE / d x_i||`, spread to edges as the endpoint mean.
pub fn baseline_node_grad(model: &GnnModel, g: &Graph, center: Option<usize>) -> Result<EdgeScores> {
    let (tape, loss, _, x) = prediction_ce(model, g, center)?;
    let mut grads = tape.backward(loss)?;
    let gx = grads.take(x).expect("feature gradient");
    let node: Vec<f64> = (0..g.num_nodes()).map(|i| gx.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    Ok(EdgeScores(g.edges().iter().map(|&(a, b)| 0.5 * (node[a] + node[b])).collect()))
}
