//! Graph isomorphism network layers:
//! `h' = MLP((1 + eps) h + sum of neighbor h)`.

use rand::Rng;

use crate::numeric::{glorot_uniform, NumericError, ParamStore, Tape, Tensor, Var};

use super::{node_input_dim, Encoder, EncoderConfig, EncoderError, EncoderKind, EncoderVars, GraphBatch};

fn layer_dims(cfg: &EncoderConfig, t: usize) -> (usize, usize, usize) {
    let input = if t == 0 { node_input_dim() } else { cfg.hidden_dim };
    let output = if t + 1 == cfg.depth { cfg.embed_dim } else { cfg.hidden_dim };
    (input, cfg.hidden_dim, output)
}

pub(super) fn init<R: Rng>(enc: &Encoder, rng: &mut R) -> ParamStore {
    let cfg = enc.config();
    let mut s = ParamStore::new();
    for t in 0..cfg.depth {
        let (i, h, o) = layer_dims(cfg, t);
        let p = enc.param_name(&format!("gin{t}"));
        s.insert(format!("{p}.w1"), glorot_uniform(rng, i, h));
        s.insert(format!("{p}.b1"), Tensor::zeros(&[1, h]));
        s.insert(format!("{p}.w2"), glorot_uniform(rng, h, o));
        s.insert(format!("{p}.b2"), Tensor::zeros(&[1, o]));
        s.insert(format!("{p}.eps"), Tensor::zeros(&[1, 1]));
    }
    s
}

pub(super) fn atom_embeddings(enc: &Encoder, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<Var, NumericError> {
    let cfg = enc.config();
    let mut h = tape.constant(batch.node_features.clone());
    for t in 0..cfg.depth {
        let p = enc.param_name(&format!("gin{t}"));
        let eps = tape.param_from(params, &format!("{p}.eps"))?;
        let from_src = tape.gather_rows(h, batch.src.clone())?;
        let neigh = tape.segment_sum(from_src, batch.dst.clone(), batch.num_nodes())?;
        let scaled = tape.mul_scalar(h, eps)?;
        let own = tape.add(h, scaled)?;
        let agg = tape.add(own, neigh)?;
        let w1 = tape.param_from(params, &format!("{p}.w1"))?;
        let b1 = tape.param_from(params, &format!("{p}.b1"))?;
        let w2 = tape.param_from(params, &format!("{p}.w2"))?;
        let b2 = tape.param_from(params, &format!("{p}.b2"))?;
        let z = tape.matmul(agg, w1)?;
        let z = tape.add_bias(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        h = tape.add_bias(z, b2)?;
        if t + 1 < cfg.depth {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Forward pass with an explicit GIN config.
pub fn gin_forward(tape: &mut Tape, batch: &GraphBatch, params: &ParamStore, cfg: &EncoderConfig, prefix: &str) -> Result<EncoderVars, EncoderError> {
    if cfg.kind != EncoderKind::Gin {
        return Err(EncoderError::Config("gin_forward needs kind = gin".into()));
    }
    Encoder::new(*cfg, prefix)?.forward(tape, params, batch)
}
