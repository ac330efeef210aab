//! The model under explanation: three message-passing layers followed by a
//! dense softmax classifier, with optional per-edge weights on the messages.
//!
//! Layer update for node `i` with incoming edge weights `w_ji`:
//!
//! ```text
//! d_i  = 1 + sum_j w_ji
//! h_i' = ReLU(h_i R + (sum_j w_ji h_j / sqrt(d_i)) N + b)
//! ```
//!
//! Only edges into `i` enter `d_i`, so an L-layer prediction at `v` depends
//! on nothing outside the L-hop ball of `v`. Weights of zero reduce to the
//! edgeless graph.

use std::fs;
use std::path::Path;

use diffmath::{adam_step, xavier_uniform, AdamConfig, AdamState, Tape, Tensor, Var};
use log::debug;
use serde::{Deserialize, Serialize};

use crate::dataio::{split, Split};
use crate::dataset::{Dataset, Instance, Task};
use crate::error::{Error, Result};
use crate::graph::{EdgeScores, Graph};
use crate::rng::{derive_seed, substream};

pub const HIDDEN: usize = 20;
pub const NUM_LAYERS: usize = 3;
pub const ARCHITECTURE: &str = "mp3-root-sqrtdeg-20";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub(crate) fn xavier(fan_in: usize, fan_out: usize, rng: &mut crate::rng::Rng) -> Result<Self> {
        Ok(Self { weight: xavier_uniform(fan_in, fan_out, rng)?, bias: Tensor::zeros(1, fan_out) })
    }
}

/// One message-passing layer: `root` acts on the node itself, `neighbor` on
/// the normalized weighted neighbor sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MpLayer {
    pub root: Tensor,
    pub neighbor: Tensor,
    pub bias: Tensor,
}

impl MpLayer {
    fn xavier(fan_in: usize, fan_out: usize, rng: &mut crate::rng::Rng) -> Result<Self> {
        Ok(Self {
            root: xavier_uniform(fan_in, fan_out, rng)?,
            neighbor: xavier_uniform(fan_in, fan_out, rng)?,
            bias: Tensor::zeros(1, fan_out),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub task: Task,
    pub input_dim: usize,
    pub num_labels: usize,
    pub layers: Vec<MpLayer>,
    pub classifier: Dense,
    pub seed: u64,
}

/// Tape handles of a model's parameters.
#[derive(Debug, Clone)]
pub(crate) struct ModelVars {
    layers: Vec<[Var; 3]>,
    classifier: (Var, Var),
}

impl ModelVars {
    fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flatten().copied().collect();
        v.extend([self.classifier.0, self.classifier.1]);
        v
    }
}

/// Output of a plain forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Final node representations, `N x 20`.
    pub z: Tensor,
    /// Class probabilities: one row per node (node task) or a single row.
    pub probs: Tensor,
}

impl GnnModel {
    pub fn new(task: Task, input_dim: usize, num_labels: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || num_labels < 2 {
            return Err(Error::Parameter(format!("need input width >= 1 and >= 2 labels, got {input_dim}/{num_labels}")));
        }
        let mut rng = substream(seed, "gnn-init");
        let mut layers = Vec::with_capacity(NUM_LAYERS);
        let mut width = input_dim;
        for _ in 0..NUM_LAYERS {
            layers.push(MpLayer::xavier(width, HIDDEN, &mut rng)?);
            width = HIDDEN;
        }
        let classifier = Dense::xavier(HIDDEN, num_labels, &mut rng)?;
        Ok(Self { task, input_dim, num_labels, layers, classifier, seed })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.root, &l.neighbor, &l.bias]).collect();
        v.extend([&self.classifier.weight, &self.classifier.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| [&mut l.root, &mut l.neighbor, &mut l.bias]).collect();
        v.extend([&mut self.classifier.weight, &mut self.classifier.bias]);
        v
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let mut put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let layers = self.layers.iter().map(|l| [put(&l.root), put(&l.neighbor), put(&l.bias)]).collect();
        let classifier = (put(&self.classifier.weight), put(&self.classifier.bias));
        ModelVars { layers, classifier }
    }

    pub(crate) fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.input_dim {
            return Err(Error::Contract(format!(
                "graph features are {} wide, model expects {}",
                g.feature_dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Node representations `Z` on the tape. `weights` is an `E x 1`
    /// column; `None` means every edge at full weight.
    pub(crate) fn encode(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        g: &Graph,
        x: Var,
        weights: Option<Var>,
    ) -> Result<Var> {
        let n = g.num_nodes();
        let w = match weights {
            Some(w) => w,
            None => tape.constant(Tensor::filled(g.num_edges(), 1, 1.0)),
        };
        let deg = tape.scatter_add_rows(w, g.dst(), n)?;
        let deg = tape.add_scalar(deg, 1.0);
        let norm = tape.pow(deg, -0.5);
        let mut h = x;
        for &[root, neighbor, bias] in &vars.layers {
            let msg = tape.propagate(w, h, g.src(), g.dst())?;
            let msg = tape.scale_rows(msg, norm)?;
            let a = tape.matmul(h, root)?;
            let b = tape.matmul(msg, neighbor)?;
            let lin = tape.add(a, b)?;
            let lin = tape.add_row(lin, bias)?;
            h = tape.relu(lin);
        }
        Ok(h)
    }

    /// Class logits from representations: per row for node tasks, per
    /// segment (columnwise max-pooled) for graph tasks.
    pub(crate) fn classify(&self, tape: &mut Tape, vars: &ModelVars, z: Var, segments: &[usize]) -> Result<Var> {
        let pooled = match self.task {
            Task::Node => z,
            Task::Graph => tape.segment_max_rows(z, segments)?,
        };
        let logits = tape.matmul(pooled, vars.classifier.0)?;
        Ok(tape.add_row(logits, vars.classifier.1)?)
    }

    /// Log class probabilities of one instance, `1 x C`: the `center` row
    /// for node tasks, the pooled graph otherwise.
    pub(crate) fn instance_log_probs(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        g: &Graph,
        x: Var,
        weights: Option<Var>,
        center: Option<usize>,
    ) -> Result<Var> {
        let z = self.encode(tape, vars, g, x, weights)?;
        let logits = self.classify(tape, vars, z, &[0, g.num_nodes()])?;
        let logp = tape.log_softmax_rows(logits);
        match (self.task, center) {
            (Task::Node, Some(c)) => Ok(tape.gather_rows(logp, &[c])?),
            (Task::Node, None) => Err(Error::Contract("node task needs a center node".into())),
            (Task::Graph, _) => Ok(logp),
        }
    }

    /// Plain forward pass. Edge weights, if given, must lie in `[0, 1]`.
    pub fn forward(&self, g: &Graph, weights: Option<&EdgeScores>) -> Result<Forward> {
        self.check_graph(g)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let w = match weights {
            Some(s) => {
                s.check_len(g)?;
                if let Some(bad) = s.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Contract(format!("edge weight {bad} outside [0, 1]")));
                }
                Some(tape.constant(Tensor::column(s.values().to_vec())))
            }
            None => None,
        };
        let x = tape.constant(g.features().clone());
        let z = self.encode(&mut tape, &vars, g, x, w)?;
        let logits = self.classify(&mut tape, &vars, z, &[0, g.num_nodes()])?;
        let probs = tape.softmax_rows(logits);
        Ok(Forward { z: tape.value(z).clone(), probs: tape.value(probs).clone() })
    }

    /// Probabilities for one instance: a node of `g` or `g` itself.
    pub fn predict_proba(&self, g: &Graph, center: Option<usize>) -> Result<Vec<f64>> {
        let f = self.forward(g, None)?;
        match (self.task, center) {
            (Task::Node, Some(c)) if c < g.num_nodes() => Ok(f.probs.row(c).to_vec()),
            (Task::Node, Some(c)) => Err(Error::NodeIndex { node: c, num_nodes: g.num_nodes() }),
            (Task::Node, None) => Err(Error::Contract("node task needs a center node".into())),
            (Task::Graph, _) => Ok(f.probs.row(0).to_vec()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelCheckpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelCheckpoint>(text)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Dense> for LayerRecord {
    fn from(d: &Dense) -> Self {
        Self { rows: d.weight.rows(), cols: d.weight.cols(), weight: d.weight.data().to_vec(), bias: d.bias.data().to_vec() }
    }
}

impl LayerRecord {
    pub(crate) fn into_dense(self, rows: usize, cols: usize, what: &str) -> Result<Dense> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Contract(format!("{what}: expected {rows}x{cols}, checkpoint has {}x{}", self.rows, self.cols)));
        }
        if self.bias.len() != cols {
            return Err(Error::Contract(format!("{what}: bias has {} entries, expected {cols}", self.bias.len())));
        }
        Ok(Dense { weight: Tensor::new(rows, cols, self.weight)?, bias: Tensor::row_vector(self.bias) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MpRecord {
    rows: usize,
    cols: usize,
    root: Vec<f64>,
    neighbor: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MpLayer> for MpRecord {
    fn from(l: &MpLayer) -> Self {
        Self {
            rows: l.root.rows(),
            cols: l.root.cols(),
            root: l.root.data().to_vec(),
            neighbor: l.neighbor.data().to_vec(),
            bias: l.bias.data().to_vec(),
        }
    }
}

impl MpRecord {
    fn into_layer(self, rows: usize, cols: usize, what: &str) -> Result<MpLayer> {
        if self.rows != rows || self.cols != cols || self.bias.len() != cols {
            return Err(Error::Contract(format!("{what}: expected {rows}x{cols}, checkpoint has {}x{}", self.rows, self.cols)));
        }
        Ok(MpLayer {
            root: Tensor::new(rows, cols, self.root)?,
            neighbor: Tensor::new(rows, cols, self.neighbor)?,
            bias: Tensor::row_vector(self.bias),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelCheckpoint {
    architecture: String,
    task: Task,
    input_dim: usize,
    hidden: usize,
    num_labels: usize,
    layers: Vec<MpRecord>,
    classifier: LayerRecord,
    seed: u64,
}

impl From<&GnnModel> for ModelCheckpoint {
    fn from(m: &GnnModel) -> Self {
        Self {
            architecture: ARCHITECTURE.into(),
            task: m.task,
            input_dim: m.input_dim,
            hidden: HIDDEN,
            num_labels: m.num_labels,
            layers: m.layers.iter().map(MpRecord::from).collect(),
            classifier: (&m.classifier).into(),
            seed: m.seed,
        }
    }
}

impl TryFrom<ModelCheckpoint> for GnnModel {
    type Error = Error;

    fn try_from(c: ModelCheckpoint) -> Result<Self> {
        if c.architecture != ARCHITECTURE || c.hidden != HIDDEN {
            return Err(Error::Contract(format!("unsupported architecture {} / width {}", c.architecture, c.hidden)));
        }
        if c.layers.len() != NUM_LAYERS {
            return Err(Error::Contract(format!("expected {NUM_LAYERS} layers, found {}", c.layers.len())));
        }
        let mut width = c.input_dim;
        let mut layers = Vec::with_capacity(NUM_LAYERS);
        for (i, l) in c.layers.into_iter().enumerate() {
            layers.push(l.into_layer(width, HIDDEN, &format!("layer {i}"))?);
            width = HIDDEN;
        }
        let classifier = c.classifier.into_dense(HIDDEN, c.num_labels, "classifier")?;
        Ok(GnnModel { task: c.task, input_dim: c.input_dim, num_labels: c.num_labels, layers, classifier, seed: c.seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub ratios: [u32; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, lr: 1e-2, seed: 0, ratios: [80, 10, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub final_loss: f64,
    pub epochs: usize,
    /// Epoch whose parameters were kept (highest validation accuracy,
    /// latest on ties).
    pub best_epoch: usize,
    pub split: Split,
}

/// Batched view of the training items.
struct Batch {
    graph: Graph,
    segments: Vec<usize>,
    rows: Vec<usize>,
    labels: Vec<usize>,
}

fn training_batch(ds: &Dataset, items: &[Instance]) -> Result<Batch> {
    match ds.task {
        Task::Node => {
            let g = ds.graphs[0].clone();
            let rows = items
                .iter()
                .map(|i| match *i {
                    Instance::Node { node, .. } => Ok(node),
                    Instance::Graph { .. } => Err(Error::Contract("graph item in node task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let labels = items.iter().map(|&i| ds.label(i)).collect::<Result<_>>()?;
            let n = g.num_nodes();
            Ok(Batch { graph: g, segments: vec![0, n], rows, labels })
        }
        Task::Graph => {
            let parts: Vec<&Graph> = items.iter().map(|i| &ds.graphs[i.graph_index()]).collect();
            let (graph, segments) = Graph::disjoint_union(&parts)?;
            let labels = items.iter().map(|&i| ds.label(i)).collect::<Result<_>>()?;
            Ok(Batch { graph, segments, rows: (0..items.len()).collect(), labels })
        }
    }
}

fn label_onehot(batch: &Batch, num_labels: usize) -> Tensor {
    let mut onehot = Tensor::zeros(batch.rows.len(), num_labels);
    for (r, &l) in batch.labels.iter().enumerate() {
        onehot.set(r, l, 1.0);
    }
    onehot
}

/// Mean cross-entropy over the batch rows.
fn batch_loss(tape: &mut Tape, model: &GnnModel, vars: &ModelVars, batch: &Batch, onehot: &Tensor) -> Result<Var> {
    let x = tape.constant(batch.graph.features().clone());
    let z = model.encode(tape, vars, &batch.graph, x, None)?;
    let logits = model.classify(tape, vars, z, &batch.segments)?;
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.gather_rows(logp, &batch.rows)?;
    let target = tape.constant(onehot.clone());
    let prod = tape.mul(picked, target)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / batch.rows.len() as f64))
}

/// Validation accuracy is checked this often; the best checkpoint is kept.
pub const VAL_EVERY: usize = 10;

/// Full-batch cross-entropy training with Adam on the train split.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(GnnModel, TrainReport)> {
    if cfg.epochs == 0 || cfg.lr <= 0.0 {
        return Err(Error::Parameter("epochs and learning rate must be positive".into()));
    }
    let items = ds.prediction_items();
    let parts = split(items.len(), cfg.ratios, derive_seed(cfg.seed, "gnn-split"))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i]).collect::<Vec<_>>();
    let (train_items, val_items, test_items) = (pick(&parts.train), pick(&parts.val), pick(&parts.test));

    let mut model = GnnModel::new(ds.task, ds.feature_dim(), ds.num_labels, cfg.seed)?;
    model.check_graph(&ds.graphs[0])?;
    let batch = training_batch(ds, &train_items)?;
    let onehot = label_onehot(&batch, ds.num_labels);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params());
    let mut loss_value = f64::NAN;
    let mut best: Option<(f64, usize, GnnModel)> = None;

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, true);
        let loss = batch_loss(&mut tape, &model, &vars, &batch, &onehot)?;
        loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Diverged(format!("loss {loss_value} at epoch {epoch}")));
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.take(v).expect("param gradient")).collect();
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        adam_step(&mut model.params_mut(), &grad_refs, &mut adam)
            .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
        if epoch % 100 == 0 {
            debug!("{} epoch {epoch} loss {loss_value:.4}", ds.name);
        }
        if !val_items.is_empty() && ((epoch + 1) % VAL_EVERY == 0 || epoch + 1 == cfg.epochs) {
            let acc = accuracy(&model, ds, &val_items)?;
            if best.as_ref().is_none_or(|b| acc >= b.0) {
                best = Some((acc, epoch + 1, model.clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, m)) => {
            model = m;
            epoch
        }
        None => cfg.epochs,
    };

    let report = TrainReport {
        train_acc: accuracy(&model, ds, &train_items)?,
        val_acc: accuracy(&model, ds, &val_items).unwrap_or(f64::NAN),
        test_acc: accuracy(&model, ds, &test_items).unwrap_or(f64::NAN),
        final_loss: loss_value,
        epochs: cfg.epochs,
        best_epoch,
        split: parts,
    };
    Ok((model, report))
}

/// Predicted class of every item.
pub fn predict(model: &GnnModel, ds: &Dataset, items: &[Instance]) -> Result<Vec<usize>> {
    match ds.task {
        Task::Node => {
            let f = model.forward(&ds.graphs[0], None)?;
            items
                .iter()
                .map(|i| match *i {
                    Instance::Node { node, .. } if node < f.probs.rows() => Ok(argmax(f.probs.row(node))),
                    Instance::Node { node, .. } => Err(Error::NodeIndex { node, num_nodes: f.probs.rows() }),
                    Instance::Graph { .. } => Err(Error::Contract("graph item in node task".into())),
                })
                .collect()
        }
        Task::Graph => items.iter().map(|i| Ok(argmax(&model.predict_proba(&ds.graphs[i.graph_index()], None)?))).collect(),
    }
}

/// Fraction of items whose argmax prediction matches the label.
pub fn accuracy(model: &GnnModel, ds: &Dataset, items: &[Instance]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Parameter("accuracy of an empty split".into()));
    }
    let preds = predict(model, ds, items)?;
    let hits = items.iter().zip(&preds).filter(|(&i, &p)| ds.label(i).is_ok_and(|l| l == p)).count();
    Ok(hits as f64 / items.len() as f64)
}
