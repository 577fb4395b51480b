use std::sync::Arc;

use rand::Rng;

use crate::chem::{DirectedEdgeGraph, ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use crate::numeric::Tensor;

/// Several molecules packed into one block-diagonal graph. `node_graph[v]`
/// names the molecule (readout component) that owns atom `v`.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub edge_features: Tensor,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub rev: Arc<[usize]>,
    pub node_graph: Arc<[usize]>,
    /// Message pairs: edge `msg_from[k]` feeds edge `msg_to[k]`, for every
    /// `u -> v` feeding `v -> w` with `u != w`.
    pub msg_from: Arc<[usize]>,
    pub msg_to: Arc<[usize]>,
    pub num_graphs: usize,
    pub nodes_per_graph: Vec<usize>,
}

impl GraphBatch {
    pub fn pack(graphs: &[&DirectedEdgeGraph]) -> GraphBatch {
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let total_edges: usize = graphs.iter().map(|g| g.num_edges()).sum();
        let mut nodes = Vec::with_capacity(total_nodes * ATOM_FEATURE_DIM);
        let mut edge_feats = Vec::with_capacity(total_edges * BOND_FEATURE_DIM);
        let (mut src, mut dst, mut rev) = (
            Vec::with_capacity(total_edges),
            Vec::with_capacity(total_edges),
            Vec::with_capacity(total_edges),
        );
        let mut node_graph = Vec::with_capacity(total_nodes);
        let mut nodes_per_graph = Vec::with_capacity(graphs.len());
        let (mut node_off, mut edge_off) = (0, 0);
        for (gi, g) in graphs.iter().enumerate() {
            nodes.extend_from_slice(g.node_features.data());
            for e in &g.edges {
                edge_feats.extend_from_slice(&e.features);
                src.push(e.source + node_off);
                dst.push(e.target + node_off);
                rev.push(e.reverse + edge_off);
            }
            node_graph.extend(std::iter::repeat_n(gi, g.num_nodes()));
            nodes_per_graph.push(g.num_nodes());
            node_off += g.num_nodes();
            edge_off += g.num_edges();
        }
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); total_nodes];
        for (e, &d) in dst.iter().enumerate() {
            incoming[d].push(e);
        }
        let (mut msg_from, mut msg_to) = (Vec::new(), Vec::new());
        for e in 0..src.len() {
            for &f in &incoming[src[e]] {
                if f != rev[e] {
                    msg_from.push(f);
                    msg_to.push(e);
                }
            }
        }
        let node_dim = graphs.first().map_or(ATOM_FEATURE_DIM, |g| g.node_features.cols());
        GraphBatch {
            node_features: Tensor::matrix(total_nodes, node_dim, nodes).expect("node rows"),
            edge_features: Tensor::matrix(total_edges, BOND_FEATURE_DIM, edge_feats).expect("edge rows"),
            src: src.into(),
            dst: dst.into(),
            rev: rev.into(),
            node_graph: node_graph.into(),
            msg_from: msg_from.into(),
            msg_to: msg_to.into(),
            num_graphs: graphs.len(),
            nodes_per_graph,
        }
    }

    pub fn single(g: &DirectedEdgeGraph) -> GraphBatch {
        GraphBatch::pack(&[g])
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Copy with each atom's feature row zeroed with probability `rate`.
    pub fn with_masked_nodes<R: Rng>(&self, rng: &mut R, rate: f64) -> GraphBatch {
        let mut out = self.clone();
        for v in 0..out.num_nodes() {
            if rng.gen::<f64>() < rate {
                out.node_features.row_mut(v).fill(0.0);
            }
        }
        out
    }
}
