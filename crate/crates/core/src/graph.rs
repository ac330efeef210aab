//! Graph storage, L-hop computation graphs, per-edge score overlays and
//! their DOT / JSON exports.
//!
//! Undirected graphs are stored as paired directed edges: `(i, j)` is
//! present iff `(j, i)` is. Message passing and edge masks share this one
//! directed edge index space, and [`Graph::reverse`] maps each edge to its
//! twin.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use diffmath::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An immutable attributed graph with ground-truth motif flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    node_labels: Vec<usize>,
    graph_label: Option<usize>,
    motif_edges: Vec<bool>,
    src: Vec<usize>,
    dst: Vec<usize>,
    reverse: Vec<usize>,
}

impl Graph {
    /// Validates and builds a graph. `node_labels` may be empty (graph-level
    /// data without node roles).
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        node_labels: Vec<usize>,
        graph_label: Option<usize>,
        motif_edges: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if !node_labels.is_empty() && node_labels.len() != num_nodes {
            return Err(Error::InvalidGraph(format!("{} labels for {num_nodes} nodes", node_labels.len())));
        }
        if motif_edges.len() != edges.len() {
            return Err(Error::InvalidGraph(format!(
                "{} motif flags for {} edges",
                motif_edges.len(),
                edges.len()
            )));
        }
        let mut index = HashMap::with_capacity(edges.len());
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!("edge {e} ({a}, {b}) has an endpoint >= {num_nodes}")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop at node {a}")));
            }
            if index.insert((a, b), e).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        let mut reverse = Vec::with_capacity(edges.len());
        for (e, &(a, b)) in edges.iter().enumerate() {
            let r = *index
                .get(&(b, a))
                .ok_or_else(|| Error::InvalidGraph(format!("edge ({a}, {b}) has no reverse")))?;
            if motif_edges[e] != motif_edges[r] {
                return Err(Error::InvalidGraph(format!("motif flag of ({a}, {b}) differs from its reverse")));
            }
            reverse.push(r);
        }
        let (src, dst) = edges.iter().copied().unzip();
        Ok(Self { num_nodes, edges, features, node_labels, graph_label, motif_edges, src, dst, reverse })
    }

    /// Builds from undirected pairs, emitting `(a, b), (b, a)` for each pair
    /// in order.
    pub fn from_undirected(
        num_nodes: usize,
        pairs: &[(usize, usize)],
        motif: &[bool],
        features: Tensor,
        node_labels: Vec<usize>,
        graph_label: Option<usize>,
    ) -> Result<Self> {
        if motif.len() != pairs.len() {
            return Err(Error::InvalidGraph("motif flags must match pairs".into()));
        }
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        let mut flags = Vec::with_capacity(pairs.len() * 2);
        for (&(a, b), &m) in pairs.iter().zip(motif) {
            edges.push((a, b));
            edges.push((b, a));
            flags.push(m);
            flags.push(m);
        }
        Self::new(num_nodes, edges, features, node_labels, graph_label, flags)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    /// Index of the opposite direction of every edge.
    pub fn reverse(&self) -> &[usize] {
        &self.reverse
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn motif_edges(&self) -> &[bool] {
        &self.motif_edges
    }

    /// Directed edge indices with `src < dst`, one per undirected edge, in
    /// edge order.
    pub fn undirected_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.src[e] < self.dst[e]).collect()
    }

    /// For every directed edge, the position of its undirected edge in
    /// [`Graph::undirected_edges`].
    pub fn undirected_slot(&self) -> Vec<usize> {
        let mut slot = vec![usize::MAX; self.edges.len()];
        for (k, e) in self.undirected_edges().into_iter().enumerate() {
            slot[e] = k;
            slot[self.reverse[e]] = k;
        }
        slot
    }

    /// Out-neighbors per node, in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &a in &self.src {
            deg[a] += 1;
        }
        deg
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(
            self.num_nodes,
            self.edges.clone(),
            features,
            self.node_labels.clone(),
            self.graph_label,
            self.motif_edges.clone(),
        )
    }

    /// Disjoint union; node ids of later graphs are offset. Returns the
    /// union and the node offset of every part (plus the total at the end).
    pub fn disjoint_union(parts: &[&Graph]) -> Result<(Graph, Vec<usize>)> {
        let dim = parts.first().map_or(0, |g| g.feature_dim());
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut edges = Vec::new();
        let mut flags = Vec::new();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut n = 0;
        for g in parts {
            if g.feature_dim() != dim {
                return Err(Error::InvalidGraph("feature widths differ across union".into()));
            }
            offsets.push(n);
            edges.extend(g.edges.iter().map(|&(a, b)| (a + n, b + n)));
            flags.extend_from_slice(&g.motif_edges);
            features.extend_from_slice(g.features.data());
            if g.node_labels.is_empty() {
                labels.extend(std::iter::repeat_n(0, g.num_nodes));
            } else {
                labels.extend_from_slice(&g.node_labels);
            }
            n += g.num_nodes;
        }
        offsets.push(n);
        let features = Tensor::new(n, dim, features)?;
        Ok((Graph::new(n, edges, features, labels, None, flags)?, offsets))
    }
}

/// One real score per directed edge, aligned with the owning graph's edge
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores(pub Vec<f64>);

impl EdgeScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn check_len(&self, g: &Graph) -> Result<()> {
        if self.0.len() != g.num_edges() {
            return Err(Error::Contract(format!("{} scores for {} edges", self.0.len(), g.num_edges())));
        }
        Ok(())
    }
}

/// Averages the two directions of every undirected edge.
pub fn symmetrize_scores(g: &Graph, s: &EdgeScores) -> Result<EdgeScores> {
    s.check_len(g)?;
    Ok(EdgeScores(g.reverse().iter().enumerate().map(|(e, &r)| 0.5 * (s.0[e] + s.0[r])).collect()))
}

/// The L-hop neighborhood of a center node as a standalone graph.
#[derive(Debug, Clone)]
pub struct ComputationGraph {
    pub graph: Graph,
    /// Parent node id of every local node (ascending).
    pub nodes: Vec<usize>,
    /// Parent edge id of every local edge.
    pub edges: Vec<usize>,
    /// Local index of the center.
    pub center: usize,
}

/// Extracts the `hops`-hop ball around `center` with every parent edge
/// whose endpoints both lie inside. Local nodes are ordered by parent id and
/// local edges keep parent edge order.
pub fn extract_computation_graph(g: &Graph, center: usize, hops: usize) -> Result<ComputationGraph> {
    if center >= g.num_nodes() {
        return Err(Error::NodeIndex { node: center, num_nodes: g.num_nodes() });
    }
    if hops == 0 {
        return Err(Error::Parameter("hop count must be at least 1".into()));
    }
    let adj = g.adjacency();
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == hops {
            continue;
        }
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    let nodes: Vec<usize> = (0..g.num_nodes()).filter(|&u| dist[u] != usize::MAX).collect();
    let mut local = vec![usize::MAX; g.num_nodes()];
    for (i, &u) in nodes.iter().enumerate() {
        local[u] = i;
    }
    let mut edges = Vec::new();
    let mut local_edges = Vec::new();
    let mut flags = Vec::new();
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        if local[a] != usize::MAX && local[b] != usize::MAX {
            edges.push(e);
            local_edges.push((local[a], local[b]));
            flags.push(g.motif_edges()[e]);
        }
    }
    let dim = g.feature_dim();
    let mut feats = Vec::with_capacity(nodes.len() * dim);
    for &u in &nodes {
        feats.extend_from_slice(g.features().row(u));
    }
    let labels = if g.node_labels().is_empty() {
        Vec::new()
    } else {
        nodes.iter().map(|&u| g.node_labels()[u]).collect()
    };
    let graph = Graph::new(
        nodes.len(),
        local_edges,
        Tensor::new(nodes.len(), dim, feats)?,
        labels,
        g.graph_label(),
        flags,
    )?;
    Ok(ComputationGraph { graph, center: local[center], nodes, edges })
}

/// Undirected edges (canonical directed indices) ranked by score, highest
/// first; ties keep edge order. At most `k` are returned.
pub fn top_k_undirected(g: &Graph, s: &EdgeScores, k: usize) -> Result<Vec<usize>> {
    let sym = symmetrize_scores(g, s)?;
    let mut und = g.undirected_edges();
    und.sort_by(|&a, &b| sym.0[b].total_cmp(&sym.0[a]).then(a.cmp(&b)));
    und.truncate(k);
    Ok(und)
}

/// Whether the undirected edges `edges` (directed indices) form one
/// connected component over the nodes they touch.
pub fn edges_connected(g: &Graph, edges: &[usize]) -> bool {
    if edges.is_empty() {
        return true;
    }
    let mut parent: HashMap<usize, usize> = HashMap::new();
    fn find(parent: &mut HashMap<usize, usize>, x: usize) -> usize {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    for &e in edges {
        let (a, b) = g.edges()[e];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra, rb);
        }
    }
    let nodes: Vec<usize> = parent.keys().copied().collect();
    let root = find(&mut parent, nodes[0]);
    nodes.into_iter().all(|n| find(&mut parent, n) == root)
}

const PALETTE: [&str; 8] =
    ["#d9d9d9", "#fdb462", "#80b1d3", "#b3de69", "#fb8072", "#bebada", "#8dd3c7", "#fccde5"];

/// Graphviz text for `g` with the `k` best undirected edges drawn bold.
pub fn to_dot(g: &Graph, s: &EdgeScores, k: usize) -> Result<String> {
    let sym = symmetrize_scores(g, s)?;
    let top: std::collections::HashSet<usize> = top_k_undirected(g, s, k)?.into_iter().collect();
    let mut out = String::from("graph explanation {\n  node [style=filled, shape=circle, fontsize=10];\n");
    for u in 0..g.num_nodes() {
        let label = g.node_labels().get(u).copied().unwrap_or(0);
        let color = PALETTE[label % PALETTE.len()];
        let _ = writeln!(out, "  n{u} [label=\"{u}\", fillcolor=\"{color}\"];");
    }
    for e in g.undirected_edges() {
        let (a, b) = g.edges()[e];
        let score = sym.0[e];
        if top.contains(&e) {
            let _ = writeln!(out, "  n{a} -- n{b} [style=bold, color=black, penwidth=3, score={score:.6}];");
        } else {
            let _ = writeln!(out, "  n{a} -- n{b} [color=gray70, score={score:.6}];");
        }
    }
    out.push_str("}\n");
    Ok(out)
}

/// Plot-ready edge table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeExport {
    pub edges: Vec<[usize; 2]>,
    pub scores: Vec<f64>,
    pub motif_flags: Vec<bool>,
}

pub fn edge_export(g: &Graph, s: &EdgeScores) -> Result<EdgeExport> {
    s.check_len(g)?;
    Ok(EdgeExport {
        edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
        scores: s.0.clone(),
        motif_flags: g.motif_edges().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path(n: usize) -> Graph {
        let pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_undirected(n, &pairs, &vec![false; n - 1], Tensor::filled(n, 2, 1.0), vec![0; n], None)
            .unwrap()
    }

    fn house() -> Graph {
        // 0 roof, 1-2 middle, 3-4 bottom, plus a tail 4-5-6
        let pairs = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6)];
        let motif = [true, true, true, true, true, true, false, false];
        Graph::from_undirected(7, &pairs, &motif, Tensor::filled(7, 1, 1.0), vec![1, 2, 2, 3, 3, 0, 0], None)
            .unwrap()
    }

    #[test]
    fn rejects_bad_graphs() {
        let f = Tensor::filled(2, 1, 1.0);
        assert!(Graph::new(2, vec![(0, 1)], f.clone(), vec![], None, vec![false]).is_err());
        assert!(Graph::new(2, vec![(0, 2), (2, 0)], f.clone(), vec![], None, vec![false; 2]).is_err());
        assert!(Graph::new(2, vec![(0, 1), (1, 0)], f.clone(), vec![], None, vec![true, false]).is_err());
        assert!(Graph::new(2, vec![(0, 1), (1, 0), (0, 1)], f, vec![], None, vec![false; 3]).is_err());
    }

    #[test]
    fn isolated_node_ball() {
        let g = Graph::new(3, vec![(0, 1), (1, 0)], Tensor::filled(3, 1, 1.0), vec![], None, vec![false; 2])
            .unwrap();
        let cg = extract_computation_graph(&g, 2, 3).unwrap();
        assert_eq!(cg.graph.num_nodes(), 1);
        assert_eq!(cg.graph.num_edges(), 0);
    }

    #[test]
    fn path_radius_two() {
        let g = path(5);
        let cg = extract_computation_graph(&g, 2, 2).unwrap();
        assert_eq!(cg.graph.num_nodes(), 5);
        assert_eq!(cg.graph.num_edges(), 8);
        let cg = extract_computation_graph(&g, 0, 2).unwrap();
        assert_eq!(cg.nodes, vec![0, 1, 2]);
        assert_eq!(cg.graph.num_edges(), 4);
    }

    #[test]
    fn extraction_errors() {
        let g = path(3);
        assert!(matches!(extract_computation_graph(&g, 9, 1), Err(Error::NodeIndex { .. })));
        assert!(matches!(extract_computation_graph(&g, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn extraction_is_idempotent() {
        let g = house();
        let cg = extract_computation_graph(&g, 6, 2).unwrap();
        let again = extract_computation_graph(&cg.graph, cg.center, 2).unwrap();
        assert_eq!(again.graph, cg.graph);
        assert_eq!(again.center, cg.center);
    }

    #[test]
    fn symmetrize_examples() {
        let g = path(2);
        let s = symmetrize_scores(&g, &EdgeScores(vec![1.0, 0.0])).unwrap();
        assert_eq!(s.0, vec![0.5, 0.5]);
        let again = symmetrize_scores(&g, &s).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn dot_bold_counts() {
        let g = house();
        let zeros = EdgeScores(vec![0.0; g.num_edges()]);
        let bold = |dot: &str| dot.lines().filter(|l| l.contains("style=bold")).count();
        assert_eq!(bold(&to_dot(&g, &zeros, 0).unwrap()), 0);
        assert_eq!(bold(&to_dot(&g, &zeros, g.num_edges() / 2).unwrap()), g.num_edges() / 2);

        let oracle = EdgeScores(g.motif_edges().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
        let dot = to_dot(&g, &oracle, 6).unwrap();
        assert_eq!(bold(&dot), 6);
        for line in dot.lines().filter(|l| l.contains("style=bold")) {
            assert!(!line.contains("n5") && !line.contains("n6"), "{line}");
        }
    }

    #[test]
    fn connectivity_check() {
        let g = house();
        let und = g.undirected_edges();
        assert!(edges_connected(&g, &und[..6]));
        // roof edge plus the far tail edge
        assert!(!edges_connected(&g, &[und[0], und[7]]));
    }

    #[test]
    fn export_has_stable_fields() {
        let g = path(2);
        let json = serde_json::to_value(edge_export(&g, &EdgeScores(vec![0.1, 0.2])).unwrap()).unwrap();
        assert_eq!(json["edges"][1], serde_json::json!([1, 0]));
        assert!(json.get("scores").is_some() && json.get("motif_flags").is_some());
    }
}
