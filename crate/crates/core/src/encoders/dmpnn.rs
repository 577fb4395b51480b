//! Directed-edge message passing.
//!
//! Hidden states live on directed bonds. The message into edge `v -> w`
//! sums the states of every edge entering `v` except the reverse edge
//! `w -> v`, so a walk can never immediately backtrack.

use rand::Rng;

use crate::numeric::{glorot_uniform, NumericError, ParamStore, Tape, Tensor, Var};

use super::{edge_input_dim, node_input_dim, Encoder, EncoderConfig, EncoderError, EncoderVars, GraphBatch};

pub(super) fn init<R: Rng>(enc: &Encoder, rng: &mut R) -> ParamStore {
    let c = enc.config();
    let (f, fe, h, e) = (node_input_dim(), edge_input_dim(), c.hidden_dim, c.embed_dim);
    let mut s = ParamStore::new();
    s.insert(enc.param_name("w_in"), glorot_uniform(rng, f + fe, h));
    s.insert(enc.param_name("w_msg"), glorot_uniform(rng, h, h));
    s.insert(enc.param_name("w_atom"), glorot_uniform(rng, f + h, e));
    s.insert(enc.param_name("b_atom"), Tensor::zeros(&[1, e]));
    s
}

/// `h0[v->w] = relu(W_in [x_v || e_vw])`
pub fn dmpnn_initial_states(enc: &Encoder, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<Var, NumericError> {
    let x = tape.constant(batch.node_features.clone());
    let ef = tape.constant(batch.edge_features.clone());
    let x_src = tape.gather_rows(x, batch.src.clone())?;
    let inp = tape.concat_cols(&[x_src, ef])?;
    let w_in = tape.param_from(params, &enc.param_name("w_in"))?;
    let pre = tape.matmul(inp, w_in)?;
    tape.relu(pre)
}

/// `m[v->w] = sum over u in N(v), u != w, of h[u->v]`
///
/// Summed over explicit edge pairs rather than as `incoming - reverse`, so the
/// reverse state never enters the arithmetic.
pub fn directed_messages(tape: &mut Tape, batch: &GraphBatch, h: Var) -> Result<Var, NumericError> {
    let feeding = tape.gather_rows(h, batch.msg_from.clone())?;
    tape.segment_sum(feeding, batch.msg_to.clone(), batch.num_edges())
}

/// Node-centred control: the message along `v -> w` is the full sum of
/// states entering `v`, including the one coming back from `w`.
pub fn node_messages(tape: &mut Tape, batch: &GraphBatch, h: Var) -> Result<Var, NumericError> {
    let incoming = tape.segment_sum(h, batch.dst.clone(), batch.num_nodes())?;
    tape.gather_rows(incoming, batch.src.clone())
}

pub(super) fn atom_embeddings(enc: &Encoder, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<Var, NumericError> {
    let cfg = enc.config();
    let x = tape.constant(batch.node_features.clone());
    let incoming = if batch.num_edges() == 0 {
        tape.constant(Tensor::zeros(&[batch.num_nodes(), cfg.hidden_dim]))
    } else {
        let h0 = dmpnn_initial_states(enc, tape, params, batch)?;
        let w_msg = tape.param_from(params, &enc.param_name("w_msg"))?;
        let mut h = h0;
        for _ in 1..cfg.depth {
            let m = directed_messages(tape, batch, h)?;
            let mw = tape.matmul(m, w_msg)?;
            let pre = tape.add(h0, mw)?;
            h = tape.relu(pre)?;
        }
        tape.segment_sum(h, batch.dst.clone(), batch.num_nodes())?
    };
    let joined = tape.concat_cols(&[x, incoming])?;
    let w_atom = tape.param_from(params, &enc.param_name("w_atom"))?;
    let b_atom = tape.param_from(params, &enc.param_name("b_atom"))?;
    let pre = tape.matmul(joined, w_atom)?;
    let pre = tape.add_bias(pre, b_atom)?;
    tape.relu(pre)
}

/// Forward pass with an explicit DMPNN config.
pub fn dmpnn_forward(tape: &mut Tape, batch: &GraphBatch, params: &ParamStore, cfg: &EncoderConfig, prefix: &str) -> Result<EncoderVars, EncoderError> {
    if cfg.kind != super::EncoderKind::Dmpnn {
        return Err(EncoderError::Config("dmpnn_forward needs kind = dmpnn".into()));
    }
    Encoder::new(*cfg, prefix)?.forward(tape, params, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{featurize, parse_smiles};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            depth: 3,
            hidden_dim: 8,
            embed_dim: 6,
            projection_dim: 5,
            ..EncoderConfig::dmpnn()
        }
    }

    fn setup(smiles: &str) -> (Encoder, ParamStore, GraphBatch) {
        let enc = Encoder::new(small(), "enc.").unwrap();
        let params = enc.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let g = featurize(&parse_smiles(smiles).unwrap()).unwrap();
        (enc, params, GraphBatch::single(&g))
    }

    #[test]
    fn no_backtracking_on_a_single_bond() {
        let (enc, params, batch) = setup("CO");
        let mut tape = Tape::new();
        let h0 = dmpnn_initial_states(&enc, &mut tape, &params, &batch).unwrap();
        let m = directed_messages(&mut tape, &batch, h0).unwrap();
        assert!(tape.value(m).data().iter().all(|&v| v == 0.0));
        // the node-centred control sends each edge's state straight back
        let n = node_messages(&mut tape, &batch, h0).unwrap();
        let rev = tape.gather_rows(h0, batch.rev.clone()).unwrap();
        assert_eq!(tape.value(n), tape.value(rev));
        assert!(tape.value(n).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn terminal_edges_carry_no_message() {
        let (enc, params, batch) = setup("CCO");
        let mut tape = Tape::new();
        let h0 = dmpnn_initial_states(&enc, &mut tape, &params, &batch).unwrap();
        let m = directed_messages(&mut tape, &batch, h0).unwrap();
        for e in 0..batch.num_edges() {
            let terminal = batch.src.iter().filter(|&&s| s == batch.src[e]).count() == 1;
            let zero = tape.value(m).row(e).iter().all(|&v| v == 0.0);
            assert_eq!(terminal, zero, "edge {e}");
        }
    }

    #[test]
    fn reverse_edge_state_never_reaches_its_twin() {
        let (_, _, batch) = setup("CCO");
        let find = |s: usize, d: usize| (0..batch.num_edges()).find(|&e| batch.src[e] == s && batch.dst[e] == d).unwrap();
        let (ab, bc, cb) = (find(0, 1), find(1, 2), find(2, 1));
        let h0: Vec<f64> = (0..batch.num_edges() * 3).map(|k| 0.1 + k as f64 * 0.37).collect();
        let message = |h: &Tensor, directed: bool| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let m = if directed {
                directed_messages(&mut tape, &batch, hv)
            } else {
                node_messages(&mut tape, &batch, hv)
            }
            .unwrap();
            tape.value(m).row(bc).to_vec()
        };
        let base = Tensor::matrix(batch.num_edges(), 3, h0).unwrap();
        let mut bumped_rev = base.clone();
        bumped_rev.row_mut(cb).iter_mut().for_each(|v| *v += 1.0);
        let mut bumped_in = base.clone();
        bumped_in.row_mut(ab).iter_mut().for_each(|v| *v += 1.0);
        assert_eq!(message(&base, true), message(&bumped_rev, true));
        assert_ne!(message(&base, true), message(&bumped_in, true));
        assert_eq!(message(&base, true), base.row(ab).to_vec());
        assert_ne!(message(&base, false), message(&bumped_rev, false));
    }

    #[test]
    fn single_atom_molecule() {
        let (enc, params, batch) = setup("C");
        let out = enc.embed(&params, &batch).unwrap();
        assert_eq!(out.atom_embeddings.shape(), &[1, 6]);
        assert_eq!(out.projected.shape(), &[1, 5]);
    }
}
