//! Per-snippet spatiotemporal scene graphs.
//!
//! Nodes are the snippet's tubes in canonical order: first-appearance frame,
//! then the box-centre x coordinate at first appearance, then tube id. Three
//! edge sets are built over the same nodes (appearance order, feature
//! similarity, shared action label) and merged into one undirected
//! adjacency without self-loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};
use crate::tube::{ActionTube, TUBE_LEN};

/// Linear projection of pooled tube features `[K, C·L·k·k]` to node
/// features `[K, d_node]`.
pub fn project_node_features(tape: &mut Tape, pooled: Var, weight: Var, bias: Var) -> Result<Var> {
    tape.linear(pooled, weight, bias)
}

fn first_center_x(t: &ActionTube) -> f64 {
    let snippet_start = t.snippet_index * TUBE_LEN + 1;
    let offset = t.first_frame.saturating_sub(snippet_start).min(t.boxes.len().saturating_sub(1));
    t.boxes.get(offset).map_or(0.0, |b| b.center().0)
}

/// Permutation that sorts `tubes` into canonical node order.
pub fn canonical_order(tubes: &[ActionTube]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tubes.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ta, tb) = (&tubes[a], &tubes[b]);
        ta.first_frame
            .cmp(&tb.first_frame)
            .then(first_center_x(ta).total_cmp(&first_center_x(tb)))
            .then(ta.id.cmp(&tb.id))
    });
    idx
}

/// Directed chain `i → i+1` through the tubes in appearance order, expressed
/// in input indices.
pub fn build_order_edges(tubes: &[ActionTube]) -> Vec<(usize, usize)> {
    canonical_order(tubes).windows(2).map(|w| (w[0], w[1])).collect()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

fn undirected(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

/// Each node linked to its `kappa` nearest neighbours under cosine
/// distance (ties to the lower node id), returned as the sorted undirected
/// union.
pub fn build_similarity_edges(features: &[Vec<f64>], kappa: usize) -> Vec<(usize, usize)> {
    let k = features.len();
    let mut edges = Vec::new();
    for i in 0..k {
        let mut others: Vec<(f64, usize)> = (0..k)
            .filter(|&j| j != i)
            .map(|j| (cosine_distance(&features[i], &features[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(others.into_iter().take(kappa).map(|(_, j)| undirected(i, j)));
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Cliques over tubes sharing an action label; placeholder tubes never link.
pub fn build_label_edges(tubes: &[ActionTube]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..tubes.len() {
        for j in i + 1..tubes.len() {
            if !tubes[i].is_placeholder() && tubes[i].action_label == tubes[j].action_label {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Symmetric 0/1 adjacency (row-major `n × n`) of the union of all edge sets,
/// with order edges taken as undirected and self-loops dropped.
pub fn merge_graphs(n: usize, order: &[(usize, usize)], similarity: &[(usize, usize)], label: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut adj = vec![0.0; n * n];
    for &(i, j) in order.iter().chain(similarity).chain(label) {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("edge ({i}, {j}) outside {n} nodes")));
        }
        if i != j {
            adj[i * n + j] = 1.0;
            adj[j * n + i] = 1.0;
        }
    }
    Ok(adj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub tube_id: u64,
    /// `None` for the whole-frame placeholder of an empty snippet.
    pub action_label: Option<u32>,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    pub order_edges: Vec<(usize, usize)>,
    pub similarity_edges: Vec<(usize, usize)>,
    pub label_edges: Vec<(usize, usize)>,
    pub adjacency: Vec<Vec<u8>>,
}

impl SceneGraph {
    /// Builds the graph of tubes that are already in canonical order, with
    /// `features[i]` the node feature of `tubes[i]`.
    pub fn build(tubes: &[ActionTube], features: &[Vec<f64>], kappa: usize) -> Result<SceneGraph> {
        if tubes.is_empty() {
            return Err(Error::InvalidArgument("scene graph needs at least one node".into()));
        }
        if features.len() != tubes.len() {
            return Err(Error::shape("scene graph", &[tubes.len()], &[features.len()]));
        }
        let n = tubes.len();
        let order: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let similarity = build_similarity_edges(features, kappa);
        let label = build_label_edges(tubes);
        let adj = merge_graphs(n, &order, &similarity, &label)?;
        Ok(SceneGraph {
            nodes: tubes
                .iter()
                .zip(features)
                .map(|(t, f)| GraphNode {
                    tube_id: t.id,
                    action_label: (!t.is_placeholder()).then_some(t.action_label),
                    feature: f.clone(),
                })
                .collect(),
            order_edges: order,
            similarity_edges: similarity,
            label_edges: label,
            adjacency: adj.chunks(n).map(|r| r.iter().map(|&v| v as u8).collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row-major `f64` adjacency.
    pub fn adjacency_matrix(&self) -> Vec<f64> {
        self.adjacency.iter().flatten().map(|&v| f64::from(v)).collect()
    }
}
