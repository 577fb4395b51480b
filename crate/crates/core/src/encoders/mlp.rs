use rand::Rng;

use crate::numeric::{glorot_uniform, NumericError, ParamStore, Tape, Tensor, Var};

/// Parameters of an affine stack `dims[0] -> dims[1] -> ... -> dims[k]`,
/// named `{prefix}.{i}.w` / `{prefix}.{i}.b`.
pub fn init_mlp<R: Rng>(rng: &mut R, prefix: &str, dims: &[usize]) -> ParamStore {
    let mut store = ParamStore::new();
    for (i, pair) in dims.windows(2).enumerate() {
        store.insert(format!("{prefix}.{i}.w"), glorot_uniform(rng, pair[0], pair[1]));
        store.insert(format!("{prefix}.{i}.b"), Tensor::zeros(&[1, pair[1]]));
    }
    store
}

/// Affine + relu layers, with the last layer affine only. Fewer than two
/// dims means an empty stack, which returns `x` unchanged.
pub fn mlp_head(tape: &mut Tape, x: Var, params: &ParamStore, prefix: &str, dims: &[usize]) -> Result<Var, NumericError> {
    let layers = dims.len().saturating_sub(1);
    let mut h = x;
    for i in 0..layers {
        let w = tape.param_from(params, &format!("{prefix}.{i}.w"))?;
        let b = tape.param_from(params, &format!("{prefix}.{i}.b"))?;
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if i + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}
