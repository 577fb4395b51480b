//! Graph encoders producing atom- and molecule-level embeddings.
//!
//! Both encoders share the same surface: [`Encoder::forward`] records the
//! computation on a tape and returns the atom embeddings, the per-molecule
//! readout and the projection-head output.

mod batch;
mod dmpnn;
mod gin;
mod mlp;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{DirectedEdgeGraph, ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use crate::numeric::{NumericError, ParamStore, Tape, Tensor, Var};

pub use batch::GraphBatch;
pub use dmpnn::{directed_messages, dmpnn_forward, dmpnn_initial_states, node_messages};
pub use gin::gin_forward;
pub use mlp::{init_mlp, mlp_head};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Dmpnn,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub depth: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub projection_dim: usize,
    pub readout: Readout,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::dmpnn()
    }
}

impl EncoderConfig {
    /// Depth 5, hidden 300, embedding 128, projection 512.
    pub fn dmpnn() -> Self {
        EncoderConfig {
            kind: EncoderKind::Dmpnn,
            depth: 5,
            hidden_dim: 300,
            embed_dim: 128,
            projection_dim: 512,
            readout: Readout::Sum,
        }
    }

    /// Five layers of width 128, projection 512.
    pub fn gin() -> Self {
        EncoderConfig {
            kind: EncoderKind::Gin,
            depth: 5,
            hidden_dim: 128,
            embed_dim: 128,
            projection_dim: 512,
            readout: Readout::Sum,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.depth < 1 {
            return Err(EncoderError::Config("depth must be at least 1".into()));
        }
        if self.hidden_dim < 1 || self.embed_dim < 1 || self.projection_dim < 1 {
            return Err(EncoderError::Config("dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn projection_dims(&self) -> [usize; 3] {
        [self.embed_dim, self.projection_dim, self.projection_dim]
    }
}

/// Tape handles of one encoder pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    /// `[num_atoms x embed_dim]`
    pub atoms: Var,
    /// `[num_graphs x embed_dim]`
    pub graphs: Var,
    /// `[num_graphs x projection_dim]`
    pub projected: Var,
}

/// Detached values of one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub atom_embeddings: Tensor,
    pub graph_embedding: Tensor,
    pub projected: Tensor,
}

/// An encoder architecture bound to a parameter-name prefix. Parameters live
/// in a separate [`ParamStore`] so replicas can share one definition.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Result<Self, EncoderError> {
        cfg.validate()?;
        Ok(Encoder {
            cfg,
            prefix: prefix.into(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param_name(&self, local: &str) -> String {
        format!("{}{}", self.prefix, local)
    }

    pub fn projection_prefix(&self) -> String {
        self.param_name("proj")
    }

    /// Glorot-uniform weights, zero biases, GIN epsilons at 0.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let mut store = match self.cfg.kind {
            EncoderKind::Dmpnn => dmpnn::init(self, rng),
            EncoderKind::Gin => gin::init(self, rng),
        };
        store.extend(init_mlp(rng, &self.projection_prefix(), &self.cfg.projection_dims()));
        store
    }

    /// Atom and molecule embeddings, without the projection head.
    pub fn encode(&self, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<(Var, Var), EncoderError> {
        let atoms = match self.cfg.kind {
            EncoderKind::Dmpnn => dmpnn::atom_embeddings(self, tape, params, batch)?,
            EncoderKind::Gin => gin::atom_embeddings(self, tape, params, batch)?,
        };
        let graphs = readout(tape, atoms, batch, self.cfg.readout)?;
        Ok((atoms, graphs))
    }

    /// Projection head applied to any `[rows x embed_dim]` input.
    pub fn project(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var, EncoderError> {
        Ok(mlp_head(tape, x, params, &self.projection_prefix(), &self.cfg.projection_dims())?)
    }

    /// Record a forward pass over a packed batch.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<EncoderVars, EncoderError> {
        let (atoms, graphs) = self.encode(tape, params, batch)?;
        let projected = mlp_head(tape, graphs, params, &self.projection_prefix(), &self.cfg.projection_dims())?;
        Ok(EncoderVars {
            atoms,
            graphs,
            projected,
        })
    }

    /// Forward pass without keeping the tape.
    pub fn embed(&self, params: &ParamStore, batch: &GraphBatch) -> Result<EncoderOutput, EncoderError> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, params, batch)?;
        Ok(EncoderOutput {
            atom_embeddings: tape.value(vars.atoms).clone(),
            graph_embedding: tape.value(vars.graphs).clone(),
            projected: tape.value(vars.projected).clone(),
        })
    }

    pub fn embed_graph(&self, params: &ParamStore, g: &DirectedEdgeGraph) -> Result<EncoderOutput, EncoderError> {
        self.embed(params, &GraphBatch::single(g))
    }
}

/// Sum or mean of atom rows per molecule.
pub fn readout(tape: &mut Tape, atoms: Var, batch: &GraphBatch, mode: Readout) -> Result<Var, NumericError> {
    let summed = tape.segment_sum(atoms, batch.node_graph.clone(), batch.num_graphs)?;
    match mode {
        Readout::Sum => Ok(summed),
        Readout::Mean => {
            let inv: Arc<[f64]> = batch
                .nodes_per_graph
                .iter()
                .map(|&n| 1.0 / n.max(1) as f64)
                .collect();
            tape.scale_rows(summed, inv)
        }
    }
}

pub(crate) fn node_input_dim() -> usize {
    ATOM_FEATURE_DIM
}

pub(crate) fn edge_input_dim() -> usize {
    BOND_FEATURE_DIM
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{featurize, parse_smiles};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn configs() -> [EncoderConfig; 2] {
        let small = |c: EncoderConfig| EncoderConfig {
            depth: 3,
            hidden_dim: 10,
            embed_dim: 7,
            projection_dim: 4,
            ..c
        };
        [small(EncoderConfig::dmpnn()), small(EncoderConfig::gin())]
    }

    fn graph(smiles: &str) -> DirectedEdgeGraph {
        featurize(&parse_smiles(smiles).unwrap()).unwrap()
    }

    #[test]
    fn permutation_invariant_readout() {
        let mol = parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
        let n = mol.num_atoms();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let g1 = featurize(&mol).unwrap();
        let g2 = featurize(&mol.permuted(&perm).unwrap()).unwrap();
        for cfg in configs() {
            let enc = Encoder::new(cfg, "e.").unwrap();
            let params = enc.init_params(&mut ChaCha8Rng::seed_from_u64(5));
            let a = enc.embed_graph(&params, &g1).unwrap();
            let b = enc.embed_graph(&params, &g2).unwrap();
            assert!(a.graph_embedding.max_abs_diff(&b.graph_embedding).unwrap() < 1e-10);
            for (i, &p) in perm.iter().enumerate() {
                let da = a.atom_embeddings.row(i);
                let db = b.atom_embeddings.row(p);
                assert!(da.iter().zip(db).all(|(x, y)| (x - y).abs() < 1e-10));
            }
        }
    }

    #[test]
    fn batching_matches_single_graphs() {
        let gs = [graph("CCO"), graph("c1ccccc1"), graph("C")];
        for cfg in configs() {
            let enc = Encoder::new(cfg, "e.").unwrap();
            let params = enc.init_params(&mut ChaCha8Rng::seed_from_u64(2));
            let refs: Vec<&DirectedEdgeGraph> = gs.iter().collect();
            let packed = enc.embed(&params, &GraphBatch::pack(&refs)).unwrap();
            for (i, g) in gs.iter().enumerate() {
                let one = enc.embed_graph(&params, g).unwrap();
                let diff = one
                    .projected
                    .row(0)
                    .iter()
                    .zip(packed.projected.row(i))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn sum_readout_is_additive_over_components() {
        let (a, b) = (graph("CCN"), graph("OC=O"));
        let joint = a.disjoint_union(&b);
        for cfg in configs() {
            let enc = Encoder::new(cfg, "e.").unwrap();
            let params = enc.init_params(&mut ChaCha8Rng::seed_from_u64(9));
            let ea = enc.embed_graph(&params, &a).unwrap().graph_embedding;
            let eb = enc.embed_graph(&params, &b).unwrap().graph_embedding;
            let ej = enc.embed_graph(&params, &joint).unwrap().graph_embedding;
            assert!(ea.add(&eb).unwrap().max_abs_diff(&ej).unwrap() < 1e-10);
        }
    }

    #[test]
    fn mean_readout_divides_by_atom_count() {
        let g = graph("CCCO");
        let mut cfg = configs()[0];
        let enc_sum = Encoder::new(cfg, "e.").unwrap();
        cfg.readout = Readout::Mean;
        let enc_mean = Encoder::new(cfg, "e.").unwrap();
        let params = enc_sum.init_params(&mut ChaCha8Rng::seed_from_u64(4));
        let s = enc_sum.embed_graph(&params, &g).unwrap().graph_embedding;
        let m = enc_mean.embed_graph(&params, &g).unwrap().graph_embedding;
        assert!(s.scale(0.25).max_abs_diff(&m).unwrap() < 1e-14);
    }

    #[test]
    fn end_to_end_parameter_gradients() {
        let gs = [graph("CC(=O)O"), graph("c1ccncc1")];
        let refs: Vec<&DirectedEdgeGraph> = gs.iter().collect();
        let batch = GraphBatch::pack(&refs);
        for cfg in configs() {
            let enc = Encoder::new(cfg, "e.").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut params = enc.init_params(&mut rng);
            // move off the zero biases so relu kinks are not hit exactly
            for (name, t) in params.clone().iter() {
                if name.ends_with(".b") || name.ends_with("b_atom") || name.ends_with(".b1") || name.ends_with(".b2") {
                    let shifted: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    params.insert(name.clone(), Tensor::new(t.shape().to_vec(), shifted).unwrap());
                }
            }
            let loss = |p: &ParamStore| -> (f64, Tape, Var) {
                let mut tape = Tape::new();
                let vars = enc.forward(&mut tape, p, &batch).unwrap();
                let sq = tape.mul(vars.projected, vars.projected).unwrap();
                let l = tape.reduce_sum(sq).unwrap();
                (tape.value(l).item().unwrap(), tape, l)
            };
            let (_, tape, l) = loss(&params);
            let grads = tape.backward(l).unwrap();
            let h = 1e-6;
            for (name, t) in params.clone().iter() {
                let analytic = grads.get(name).unwrap();
                for i in (0..t.numel()).step_by(t.numel().div_ceil(5)) {
                    let mut probe = params.clone();
                    probe.get_mut(name).unwrap().data_mut()[i] += h;
                    let plus = loss(&probe).0;
                    probe.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
                    let minus = loss(&probe).0;
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = analytic.data()[i];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(rel < 1e-4, "{:?} {name}[{i}]: {a} vs {numeric}", cfg.kind);
                }
            }
        }
    }
}
