//! TU-format ingestion, JSON persistence and seeded splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use diffmath::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::substream;
use crate::synthgen::GenRecipe;

/// Raw contents of a TU bundle, 1-based node ids as in the files.
#[derive(Debug, Clone, PartialEq)]
pub struct TuBundle {
    pub adjacency: Vec<(usize, usize)>,
    pub graph_indicator: Vec<usize>,
    pub graph_labels: Vec<i64>,
    pub node_labels: Vec<i64>,
}

fn parse_ints(text: &str, file: &str, per_line: usize) -> Result<Vec<Vec<i64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<i64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<i64>().map_err(|e| Error::Parse {
                    file: file.into(),
                    line: i + 1,
                    msg: format!("{t:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != per_line {
            return Err(Error::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("expected {per_line} values, found {}", values.len()),
            });
        }
        rows.push(values);
    }
    Ok(rows)
}

impl TuBundle {
    /// Parses the four file bodies.
    pub fn from_texts(adjacency: &str, indicator: &str, graph_labels: &str, node_labels: &str) -> Result<Self> {
        let positive = |v: i64, file: &str, line: usize| -> Result<usize> {
            usize::try_from(v).ok().filter(|&u| u >= 1).ok_or_else(|| Error::Parse {
                file: file.into(),
                line,
                msg: format!("ids are 1-based, got {v}"),
            })
        };
        let adjacency = parse_ints(adjacency, "A", 2)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| Ok((positive(r[0], "A", i + 1)?, positive(r[1], "A", i + 1)?)))
            .collect::<Result<_>>()?;
        let graph_indicator = parse_ints(indicator, "graph_indicator", 1)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| positive(r[0], "graph_indicator", i + 1))
            .collect::<Result<_>>()?;
        let graph_labels = parse_ints(graph_labels, "graph_labels", 1)?.into_iter().map(|r| r[0]).collect();
        let node_labels = parse_ints(node_labels, "node_labels", 1)?.into_iter().map(|r| r[0]).collect();
        Ok(Self { adjacency, graph_indicator, graph_labels, node_labels })
    }

    /// Reads `{dir}/{name}_A.txt` and its siblings.
    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let read = |suffix: &str| {
            let path = dir.join(format!("{name}_{suffix}.txt"));
            fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        Self::from_texts(&read("A")?, &read("graph_indicator")?, &read("graph_labels")?, &read("node_labels")?)
    }

    /// Splits into per-graph [`Graph`]s. Node labels become one-hot features
    /// over the sorted label vocabulary; graph labels map to their rank in
    /// the sorted set of distinct labels. Missing reverse edges are added.
    pub fn into_dataset(self, name: &str) -> Result<Dataset> {
        let n = self.graph_indicator.len();
        if self.node_labels.len() != n {
            return Err(Error::Parse {
                file: "node_labels".into(),
                line: self.node_labels.len().min(n) + 1,
                msg: format!("{} node labels for {n} nodes in graph_indicator", self.node_labels.len()),
            });
        }
        let num_graphs = self.graph_indicator.iter().copied().max().unwrap_or(0);
        if self.graph_labels.len() != num_graphs {
            return Err(Error::Parse {
                file: "graph_labels".into(),
                line: self.graph_labels.len().min(num_graphs) + 1,
                msg: format!("{} graph labels for {num_graphs} graphs", self.graph_labels.len()),
            });
        }
        for (i, w) in self.graph_indicator.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::Parse {
                    file: "graph_indicator".into(),
                    line: i + 2,
                    msg: "graph ids must be non-decreasing".into(),
                });
            }
        }

        let vocab: Vec<i64> = self.node_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let classes: Vec<i64> = self.graph_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();

        let mut start = vec![usize::MAX; num_graphs + 1];
        let mut count = vec![0usize; num_graphs + 1];
        for (node, &gid) in self.graph_indicator.iter().enumerate() {
            start[gid] = start[gid].min(node);
            count[gid] += 1;
        }

        let mut pairs: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for (line, &(a, b)) in self.adjacency.iter().enumerate() {
            let bad = |msg: String| Error::Parse { file: "A".into(), line: line + 1, msg };
            if a > n || b > n {
                return Err(bad(format!("node id beyond {n}")));
            }
            let (ga, gb) = (self.graph_indicator[a - 1], self.graph_indicator[b - 1]);
            if ga != gb {
                return Err(bad(format!("edge joins graphs {ga} and {gb}")));
            }
            if a != b {
                pairs.entry(ga).or_default().push((a - 1 - start[ga], b - 1 - start[ga]));
            }
        }

        let mut graphs = Vec::with_capacity(num_graphs);
        for gid in 1..=num_graphs {
            let size = count[gid];
            if size == 0 {
                return Err(Error::Parse { file: "graph_indicator".into(), line: 0, msg: format!("graph {gid} has no nodes") });
            }
            let mut edges = Vec::new();
            let mut seen = HashSet::new();
            for &(a, b) in pairs.get(&gid).map(Vec::as_slice).unwrap_or(&[]) {
                for e in [(a, b), (b, a)] {
                    if seen.insert(e) {
                        edges.push(e);
                    }
                }
            }
            let mut features = Tensor::zeros(size, vocab.len());
            let mut labels = Vec::with_capacity(size);
            for local in 0..size {
                let label = self.node_labels[start[gid] + local];
                let k = vocab.binary_search(&label).expect("vocabulary built from labels");
                features.set(local, k, 1.0);
                labels.push(k);
            }
            let class = classes.binary_search(&self.graph_labels[gid - 1]).expect("class set built from labels");
            let flags = vec![false; edges.len()];
            graphs.push(Graph::new(size, edges, features, labels, Some(class), flags)?);
        }
        Ok(Dataset { name: name.into(), task: Task::Graph, num_labels: classes.len(), graphs, recipe: None })
    }
}

/// Reads and converts a TU bundle.
pub fn parse_tu(dir: &Path, name: &str) -> Result<Dataset> {
    TuBundle::read(dir, name)?.into_dataset(name)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    #[serde(default)]
    graph_label: Option<usize>,
    motif_flags: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    schema_version: u32,
    name: String,
    task: Task,
    num_labels: usize,
    recipe: Option<GenRecipe>,
    graphs: Vec<GraphRecord>,
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let record = DatasetRecord {
        schema_version: SCHEMA_VERSION,
        name: ds.name.clone(),
        task: ds.task,
        num_labels: ds.num_labels,
        recipe: ds.recipe.clone(),
        graphs: ds
            .graphs
            .iter()
            .map(|g| GraphRecord {
                num_nodes: g.num_nodes(),
                edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
                features: (0..g.num_nodes()).map(|r| g.features().row(r).to_vec()).collect(),
                labels: g.node_labels().to_vec(),
                graph_label: g.graph_label(),
                motif_flags: g.motif_edges().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&record)?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let record: DatasetRecord = serde_json::from_str(text)?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(Error::Contract(format!(
            "dataset schema {} is not the supported {SCHEMA_VERSION}",
            record.schema_version
        )));
    }
    let graphs = record
        .graphs
        .into_iter()
        .map(|g| {
            let dim = g.features.first().map_or(0, Vec::len);
            let features = Tensor::from_rows(&g.features)?;
            let features = if g.num_nodes == 0 { Tensor::zeros(0, dim) } else { features };
            Graph::new(
                g.num_nodes,
                g.edges.into_iter().map(|[a, b]| (a, b)).collect(),
                features,
                g.labels,
                g.graph_label,
                g.motif_flags,
            )
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { name: record.name, task: record.task, num_labels: record.num_labels, graphs, recipe: record.recipe })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_json(ds)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// A train / validation / test partition of item positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with a seeded stream and cuts it by percentage. Train and
/// validation sizes round down; the test part takes the remainder.
pub fn split(n: usize, ratios: [u32; 3], seed: u64) -> Result<Split> {
    if n == 0 {
        return Err(Error::Parameter("cannot split an empty dataset".into()));
    }
    if ratios.iter().sum::<u32>() != 100 {
        return Err(Error::Parameter(format!("split ratios {ratios:?} do not sum to 100")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split"));
    let n_train = n * ratios[0] as usize / 100;
    let n_val = n * ratios[1] as usize / 100;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_bundle() {
        let b = TuBundle::from_texts("1, 2\n2, 1\n", "1\n1\n", "-1\n", "0\n3\n").unwrap();
        let ds = b.into_dataset("tiny").unwrap();
        assert_eq!(ds.graphs.len(), 1);
        let g = &ds.graphs[0];
        assert_eq!((g.num_nodes(), g.num_edges()), (2, 2));
        assert_eq!(g.feature_dim(), 2);
        for r in 0..2 {
            assert_eq!(g.features().row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn one_direction_is_completed() {
        let ds = TuBundle::from_texts("1 2\n", "1\n1\n", "1\n", "0\n0\n").unwrap().into_dataset("x").unwrap();
        assert_eq!(ds.graphs[0].num_edges(), 2);
    }

    #[test]
    fn cross_graph_edge_names_line() {
        let err = TuBundle::from_texts("1, 2\n1, 3\n", "1\n1\n2\n", "0\n1\n", "0\n0\n0\n")
            .unwrap()
            .into_dataset("x")
            .unwrap_err();
        match err {
            Error::Parse { file, line, .. } => assert_eq!((file.as_str(), line), ("A", 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_parse_error() {
        let err = TuBundle::from_texts("1, 2\n", "1\n1\n", "0\n", "0\n").unwrap().into_dataset("x").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
        assert!(TuBundle::from_texts("1, x\n", "1\n", "0\n", "0\n").is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split(10, [80, 10, 10], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(10, [80, 10, 10], 3).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split(0, [80, 10, 10], 0).is_err());
        assert!(split(5, [80, 10, 20], 0).is_err());
    }
}
