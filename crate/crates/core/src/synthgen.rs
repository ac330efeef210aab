//! Seeded synthetic benchmarks: a base graph (preferential attachment or a
//! balanced binary tree) with planted motifs whose internal edges are the
//! ground-truth explanation.

use std::collections::HashSet;

use diffmath::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{derive_seed, substream, Rng as StreamRng};

/// Input width of every synthetic dataset.
pub const FEATURE_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifKind {
    House,
    Cycle6,
    Grid3x3,
    Cycle5,
}

/// A motif's internal structure and the label of each of its nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifSpec {
    pub kind: MotifKind,
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub roles: Vec<usize>,
}

impl MotifSpec {
    pub fn new(kind: MotifKind) -> Self {
        let ring = |n: usize| (0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>();
        match kind {
            // roof 0, middle 1-2, bottom 3-4
            MotifKind::House => Self {
                kind,
                num_nodes: 5,
                edges: vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)],
                roles: vec![1, 2, 2, 3, 3],
            },
            MotifKind::Cycle6 => Self { kind, num_nodes: 6, edges: ring(6), roles: vec![1; 6] },
            MotifKind::Cycle5 => Self { kind, num_nodes: 5, edges: ring(5), roles: vec![1; 5] },
            MotifKind::Grid3x3 => {
                let mut edges = Vec::new();
                for r in 0..3 {
                    for c in 0..3 {
                        let v = r * 3 + c;
                        if c < 2 {
                            edges.push((v, v + 1));
                        }
                        if r < 2 {
                            edges.push((v, v + 3));
                        }
                    }
                }
                Self { kind, num_nodes: 9, edges, roles: vec![1; 9] }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseKind {
    Ba { nodes: usize, m: usize },
    Tree { depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureScheme {
    /// All-ones rows.
    Constant { dim: usize },
    /// Per-community Gaussian rows with mean `(community + 1) * spacing` in
    /// every coordinate. No community is centered at zero, since a zero-mean
    /// community would carry no degree information through sum aggregation.
    Gaussian { dim: usize, spacing: f64, sigma: f64 },
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecipe {
    pub name: String,
    pub base: BaseKind,
    /// Motif kinds, cycled over graphs for multi-graph datasets.
    pub motifs: Vec<MotifKind>,
    pub motif_count: usize,
    /// Random edges added per base+motif graph.
    pub perturb_edges: usize,
    /// Extra random edges added to the finished graph.
    pub noise_edges: usize,
    pub features: FeatureScheme,
    pub communities: usize,
    pub inter_edges: usize,
    pub num_graphs: usize,
    pub seed: u64,
}

/// Undirected edge accumulator that remembers insertion order.
struct Builder {
    n: usize,
    pairs: Vec<(usize, usize)>,
    motif: Vec<bool>,
    seen: HashSet<(usize, usize)>,
    labels: Vec<usize>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self { n, pairs: Vec::new(), motif: Vec::new(), seen: HashSet::new(), labels: vec![0; n] }
    }

    fn from_graph(g: &Graph) -> Self {
        let mut b = Self::new(g.num_nodes());
        for (e, &(x, y)) in g.edges().iter().enumerate() {
            b.add(x, y, g.motif_edges()[e]);
        }
        if !g.node_labels().is_empty() {
            b.labels = g.node_labels().to_vec();
        }
        b
    }

    fn has(&self, a: usize, b: usize) -> bool {
        self.seen.contains(&(a.min(b), a.max(b)))
    }

    fn add(&mut self, a: usize, b: usize, motif: bool) -> bool {
        if a == b || !self.seen.insert((a.min(b), a.max(b))) {
            return false;
        }
        self.pairs.push((a, b));
        self.motif.push(motif);
        true
    }

    fn add_node(&mut self, label: usize) -> usize {
        self.n += 1;
        self.labels.push(label);
        self.n - 1
    }

    fn finish(self, features: Tensor, graph_label: Option<usize>) -> Result<Graph> {
        Graph::from_undirected(self.n, &self.pairs, &self.motif, features, self.labels, graph_label)
    }

    fn finish_constant(self) -> Result<Graph> {
        let n = self.n;
        self.finish(Tensor::filled(n, FEATURE_DIM, 1.0), None)
    }
}

/// Barabasi-Albert preferential attachment. Starts from an `m`-clique; each
/// later node links to `m` distinct existing nodes drawn proportionally to
/// degree (uniformly while every degree is zero).
pub fn gen_ba<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Graph> {
    if m == 0 || n <= m {
        return Err(Error::Parameter(format!("preferential attachment needs n > m >= 1, got n={n}, m={m}")));
    }
    let mut b = Builder::new(n);
    // one entry per edge endpoint, so a uniform pick is degree-proportional
    let mut endpoints: Vec<usize> = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            b.add(i, j, false);
            endpoints.extend([i, j]);
        }
    }
    for v in m..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = if endpoints.is_empty() { rng.random_range(0..v) } else { endpoints[rng.random_range(0..endpoints.len())] };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            b.add(v, t, false);
            endpoints.extend([v, t]);
        }
    }
    b.finish_constant()
}

/// Perfect binary tree of the given depth, nodes in breadth-first order.
pub fn gen_balanced_tree(depth: usize) -> Result<Graph> {
    if depth == 0 {
        return Err(Error::Parameter("tree depth must be at least 1".into()));
    }
    let n = (1usize << (depth + 1)) - 1;
    let mut b = Builder::new(n);
    for child in 1..n {
        b.add((child - 1) / 2, child, false);
    }
    b.finish_constant()
}

/// Appends `count` copies of a motif. Each copy's internal edges are flagged
/// as ground truth; one unflagged connector joins a uniformly chosen motif
/// node to a uniformly chosen node of `base`.
pub fn attach_motifs<R: Rng + ?Sized>(base: &Graph, spec: &MotifSpec, count: usize, rng: &mut R) -> Result<Graph> {
    if count == 0 {
        return Err(Error::Parameter("motif count must be at least 1".into()));
    }
    let base_n = base.num_nodes();
    if base_n == 0 {
        return Err(Error::Parameter("cannot attach motifs to an empty graph".into()));
    }
    let mut b = Builder::from_graph(base);
    for _ in 0..count {
        let first = b.n;
        for &role in &spec.roles {
            b.add_node(role);
        }
        for &(x, y) in &spec.edges {
            b.add(first + x, first + y, true);
        }
        let from = first + rng.random_range(0..spec.num_nodes);
        let to = rng.random_range(0..base_n);
        b.add(from, to, false);
    }
    let n = b.n;
    let mut features = Vec::with_capacity(n * base.feature_dim());
    features.extend_from_slice(base.features().data());
    features.resize(n * base.feature_dim(), 1.0);
    let features = Tensor::new(n, base.feature_dim(), features)?;
    b.finish(features, base.graph_label())
}

/// Adds `count` uniformly random new undirected edges, never flagged.
pub fn perturb_edges<R: Rng + ?Sized>(g: &Graph, count: usize, rng: &mut R) -> Result<Graph> {
    let n = g.num_nodes();
    let mut b = Builder::from_graph(g);
    let available = n * n.saturating_sub(1) / 2 - b.pairs.len();
    if count > available {
        return Err(Error::Parameter(format!("only {available} free node pairs, asked for {count}")));
    }
    if count * 4 > available {
        let mut free: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (a + 1..n).map(move |c| (a, c))).filter(|&(a, c)| !b.has(a, c)).collect();
        free.shuffle(rng);
        for &(a, c) in free.iter().take(count) {
            b.add(a, c, false);
        }
    } else {
        let mut added = 0;
        while added < count {
            let (a, c) = (rng.random_range(0..n), rng.random_range(0..n));
            if b.add(a, c, false) {
                added += 1;
            }
        }
    }
    b.finish(g.features().clone(), g.graph_label())
}

pub const DATASET_NAMES: [&str; 6] = ["ba-shapes", "ba-community", "tree-cycles", "tree-grid", "ba-2motifs", "ba-shapes-noisy"];

/// Default recipe for a named dataset.
pub fn recipe(name: &str, seed: u64) -> Result<GenRecipe> {
    let constant = FeatureScheme::Constant { dim: FEATURE_DIM };
    let shapes = |name: &str, noise: usize| GenRecipe {
        name: name.into(),
        base: BaseKind::Ba { nodes: 300, m: 5 },
        motifs: vec![MotifKind::House],
        motif_count: 80,
        // 1% of the base+motif edge count (2045 for this construction)
        perturb_edges: 20,
        noise_edges: noise,
        features: constant.clone(),
        communities: 1,
        inter_edges: 0,
        num_graphs: 1,
        seed,
    };
    let tree = |name: &str, motif: MotifKind| GenRecipe {
        name: name.into(),
        base: BaseKind::Tree { depth: 8 },
        motifs: vec![motif],
        motif_count: 80,
        perturb_edges: 0,
        noise_edges: 0,
        features: constant.clone(),
        communities: 1,
        inter_edges: 0,
        num_graphs: 1,
        seed,
    };
    Ok(match name {
        "ba-shapes" => shapes(name, 0),
        // 0.2 N with N = 700
        "ba-shapes-noisy" => shapes(name, 140),
        "ba-community" => GenRecipe {
            features: FeatureScheme::Gaussian { dim: FEATURE_DIM, spacing: 1.0, sigma: 0.5 },
            communities: 2,
            // 0.01 N with N = 1400
            inter_edges: 14,
            ..shapes(name, 0)
        },
        "tree-cycles" => tree(name, MotifKind::Cycle6),
        "tree-grid" => tree(name, MotifKind::Grid3x3),
        "ba-2motifs" => GenRecipe {
            name: name.into(),
            base: BaseKind::Ba { nodes: 20, m: 1 },
            motifs: vec![MotifKind::House, MotifKind::Cycle5],
            motif_count: 1,
            perturb_edges: 0,
            noise_edges: 0,
            features: constant,
            communities: 1,
            inter_edges: 0,
            num_graphs: 1000,
            seed,
        },
        other => return Err(Error::Parameter(format!("unknown dataset {other:?}; expected one of {DATASET_NAMES:?}"))),
    })
}

fn base_graph(recipe: &GenRecipe, rng: &mut StreamRng) -> Result<Graph> {
    match recipe.base {
        BaseKind::Ba { nodes, m } => gen_ba(nodes, m, rng),
        BaseKind::Tree { depth } => gen_balanced_tree(depth),
    }
}

/// Base graph, motifs and perturbation for one community or graph.
fn motif_graph(recipe: &GenRecipe, motif: MotifKind, seed: u64) -> Result<Graph> {
    let base = base_graph(recipe, &mut substream(seed, "base"))?;
    let g = attach_motifs(&base, &MotifSpec::new(motif), recipe.motif_count, &mut substream(seed, "motifs"))?;
    if recipe.perturb_edges > 0 {
        perturb_edges(&g, recipe.perturb_edges, &mut substream(seed, "perturb"))
    } else {
        Ok(g)
    }
}

fn features_for(scheme: &FeatureScheme, communities: &[usize], seed: u64) -> Result<Tensor> {
    let n = communities.len();
    match *scheme {
        FeatureScheme::Constant { dim } => Ok(Tensor::filled(n, dim, 1.0)),
        FeatureScheme::Gaussian { dim, spacing, sigma } => {
            let mut rng = substream(seed, "features");
            let mut data = Vec::with_capacity(n * dim);
            for &c in communities {
                let normal = Normal::new((c + 1) as f64 * spacing, sigma)
                    .map_err(|e| Error::Parameter(format!("feature distribution: {e}")))?;
                data.extend((0..dim).map(|_| normal.sample(&mut rng)));
            }
            Ok(Tensor::new(n, dim, data)?)
        }
    }
}

/// Runs a recipe.
pub fn generate(recipe: &GenRecipe) -> Result<Dataset> {
    let seed = recipe.seed;
    let motif_roles = |kind: MotifKind| MotifSpec::new(kind).roles.iter().copied().max().unwrap_or(1);
    if recipe.num_graphs > 1 {
        let mut graphs = Vec::with_capacity(recipe.num_graphs);
        for i in 0..recipe.num_graphs {
            let class = i % recipe.motifs.len();
            let g = motif_graph(recipe, recipe.motifs[class], derive_seed(seed, &format!("{}/{i}", recipe.name)))?;
            let features = features_for(&recipe.features, &vec![0; g.num_nodes()], seed)?;
            graphs.push(Graph::new(
                g.num_nodes(),
                g.edges().to_vec(),
                features,
                g.node_labels().to_vec(),
                Some(class),
                g.motif_edges().to_vec(),
            )?);
        }
        return Ok(Dataset {
            name: recipe.name.clone(),
            task: Task::Graph,
            num_labels: recipe.motifs.len(),
            graphs,
            recipe: Some(recipe.clone()),
        });
    }

    let motif = *recipe.motifs.first().ok_or_else(|| Error::Parameter("recipe has no motif".into()))?;
    let roles = motif_roles(motif) + 1;
    let parts: Vec<Graph> = (0..recipe.communities)
        .map(|c| motif_graph(recipe, motif, derive_seed(seed, &format!("{}/community-{c}", recipe.name))))
        .collect::<Result<_>>()?;
    let mut b = Builder::new(0);
    let mut community = Vec::new();
    let mut bounds = Vec::new();
    for (c, part) in parts.iter().enumerate() {
        let offset = b.n;
        for &l in part.node_labels() {
            b.add_node(l + roles * c);
            community.push(c);
        }
        for (e, &(x, y)) in part.edges().iter().enumerate() {
            b.add(x + offset, y + offset, part.motif_edges()[e]);
        }
        bounds.push(offset..b.n);
    }
    if recipe.communities > 1 && recipe.inter_edges > 0 {
        let mut rng = substream(seed, "inter");
        let mut added = 0;
        while added < recipe.inter_edges {
            let c1 = rng.random_range(0..recipe.communities);
            let c2 = rng.random_range(0..recipe.communities);
            if c1 == c2 {
                continue;
            }
            let a = rng.random_range(bounds[c1].clone());
            let d = rng.random_range(bounds[c2].clone());
            if b.add(a, d, false) {
                added += 1;
            }
        }
    }
    let mut g = b.finish_constant()?;
    if recipe.noise_edges > 0 {
        g = perturb_edges(&g, recipe.noise_edges, &mut substream(seed, "noise"))?;
    }
    let g = g.with_features(features_for(&recipe.features, &community, seed)?)?;
    Ok(Dataset {
        name: recipe.name.clone(),
        task: Task::Node,
        num_labels: roles * recipe.communities,
        graphs: vec![g],
        recipe: Some(recipe.clone()),
    })
}

/// Generates one of the named benchmarks.
pub fn gen_dataset(name: &str, seed: u64) -> Result<Dataset> {
    generate(&recipe(name, seed)?)
}
