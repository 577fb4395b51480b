//! Early, intermediate and late fusion of modalities.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{init_mlp, mlp_head};
use crate::numeric::{glorot_uniform, NumericError, ParamStore, Tape, Tensor, Var};
use crate::output::fmt_real;
use crate::similarity::{SimilarityError, TargetSimilarityMatrix};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("fusion weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights(Vec<f64>),
    #[error("{matrices} matrices but {weights} weights")]
    CountMismatch { matrices: usize, weights: usize },
    #[error("matrix {0} lists its instances in a different order")]
    IdOrder(usize),
    #[error("branch {index} has width {got}, expected {expected}")]
    DimMismatch { index: usize, expected: usize, got: usize },
    #[error("at least one branch is required")]
    NoBranches,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convex weights over modality branches, in branch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, FusionError> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(FusionError::BadWeights(weights));
        }
        Ok(FusionWeights(weights))
    }

    pub fn uniform(n: usize) -> Result<Self, FusionError> {
        FusionWeights::new(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Result<Self, FusionError> {
        let mut w = vec![0.0; n];
        if k < n {
            w[k] = 1.0;
        }
        FusionWeights::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `t = sum_R w_R t^R`. Every input must list the same ids in the same order.
pub fn early_fuse_targets(ts: &[TargetSimilarityMatrix], w: &FusionWeights) -> Result<TargetSimilarityMatrix, FusionError> {
    if ts.len() != w.len() {
        return Err(FusionError::CountMismatch {
            matrices: ts.len(),
            weights: w.len(),
        });
    }
    let first = ts.first().ok_or(FusionError::NoBranches)?;
    if let Some(k) = ts.iter().position(|t| t.ids() != first.ids()) {
        return Err(FusionError::IdOrder(k));
    }
    let mut out = Tensor::zeros(first.matrix().shape());
    for (t, &wr) in ts.iter().zip(w.as_slice()) {
        if wr == 0.0 {
            continue;
        }
        for (o, v) in out.data_mut().iter_mut().zip(t.matrix().data()) {
            *o += wr * v;
        }
    }
    Ok(TargetSimilarityMatrix::new(first.ids().to_vec(), out)?)
}

/// `[n*D, n*D, D]`: one hidden layer as wide as the concatenation.
pub fn intermediate_dims(n: usize, dim: usize) -> [usize; 3] {
    [n * dim, n * dim, dim]
}

pub fn init_intermediate<R: Rng>(rng: &mut R, prefix: &str, n: usize, dim: usize) -> ParamStore {
    init_mlp(rng, prefix, &intermediate_dims(n, dim))
}

/// `MLP(concat(f_1, ..., f_n))` back down to the branch width.
pub fn intermediate_fuse(tape: &mut Tape, features: &[Var], params: &ParamStore, prefix: &str, dims: &[usize]) -> Result<Var, FusionError> {
    let dim = check_branches(tape, features)?;
    if let (Some(&first), Some(&last)) = (dims.first(), dims.last()) {
        if first != features.len() * dim || last != dim {
            return Err(FusionError::DimMismatch {
                index: 0,
                expected: features.len() * dim,
                got: first,
            });
        }
    }
    let joined = if features.len() == 1 {
        features[0]
    } else {
        tape.concat_cols(features)?
    };
    Ok(mlp_head(tape, joined, params, prefix, dims)?)
}

fn check_branches(tape: &Tape, features: &[Var]) -> Result<usize, FusionError> {
    let first = features.first().ok_or(FusionError::NoBranches)?;
    let dim = tape.value(*first).cols();
    for (index, f) in features.iter().enumerate() {
        let got = tape.value(*f).cols();
        if got != dim {
            return Err(FusionError::DimMismatch { index, expected: dim, got });
        }
    }
    Ok(dim)
}

/// Per-branch scalar gates `w_i = T_i(f_i)` and readouts `p_i = readout_i(f_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateFusionHead {
    pub prefix: String,
    pub branches: usize,
    /// `[D, hidden..., outputs]`
    pub readout_dims: Vec<usize>,
}

impl LateFusionHead {
    pub fn new(prefix: impl Into<String>, branches: usize, readout_dims: Vec<usize>) -> Result<Self, FusionError> {
        if branches == 0 {
            return Err(FusionError::NoBranches);
        }
        Ok(LateFusionHead {
            prefix: prefix.into(),
            branches,
            readout_dims,
        })
    }

    pub fn gate_name(&self, i: usize, part: &str) -> String {
        format!("{}gate{i}.{part}", self.prefix)
    }

    pub fn readout_prefix(&self, i: usize) -> String {
        format!("{}readout{i}", self.prefix)
    }

    pub fn outputs(&self) -> usize {
        *self.readout_dims.last().expect("readout dims are non-empty")
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let d = self.readout_dims[0];
        let mut s = ParamStore::new();
        for i in 0..self.branches {
            s.insert(self.gate_name(i, "w"), glorot_uniform(rng, d, 1));
            s.insert(self.gate_name(i, "b"), Tensor::zeros(&[1, 1]));
            s.extend(init_mlp(rng, &self.readout_prefix(i), &self.readout_dims));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct LateFusionVars {
    /// `[B x 1]` per branch
    pub gates: Vec<Var>,
    /// `[B x outputs]` per branch
    pub predictions: Vec<Var>,
    /// `sum_i w_i p_i`, before any output link
    pub fused: Var,
}

pub fn late_fuse(tape: &mut Tape, features: &[Var], params: &ParamStore, head: &LateFusionHead) -> Result<LateFusionVars, FusionError> {
    check_branches(tape, features)?;
    if features.len() != head.branches {
        return Err(FusionError::CountMismatch {
            matrices: features.len(),
            weights: head.branches,
        });
    }
    let rows = tape.value(features[0]).rows();
    let spread = tape.constant(Tensor::full(&[1, head.outputs()], 1.0));
    let mut gates = Vec::new();
    let mut predictions = Vec::new();
    let mut fused: Option<Var> = None;
    for (i, &f) in features.iter().enumerate() {
        let gw = tape.param_from(params, &head.gate_name(i, "w"))?;
        let gb = tape.param_from(params, &head.gate_name(i, "b"))?;
        let w = tape.matmul(f, gw)?;
        let w = tape.add_bias(w, gb)?;
        let p = mlp_head(tape, f, params, &head.readout_prefix(i), &head.readout_dims)?;
        let wide = tape.matmul(w, spread)?;
        let wp = tape.mul(wide, p)?;
        fused = Some(match fused {
            None => wp,
            Some(acc) => tape.add(acc, wp)?,
        });
        gates.push(w);
        predictions.push(p);
    }
    debug_assert_eq!(tape.value(gates[0]).rows(), rows);
    Ok(LateFusionVars {
        gates,
        predictions,
        fused: fused.expect("at least one branch"),
    })
}

/// One row of the contribution report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub id: String,
    pub modality: String,
    pub task: usize,
    pub w: f64,
    pub p: f64,
    pub wp: f64,
}

pub const FINAL_ROW: &str = "__final__";

/// Per-molecule, per-branch `(w, p, w*p)` rows, each followed by a
/// `__final__` row whose `p` is the fused prediction.
pub fn contribution_rows(tape: &Tape, vars: &LateFusionVars, ids: &[String], modalities: &[String]) -> Vec<Contribution> {
    let tasks = tape.value(vars.fused).cols();
    let mut rows = Vec::new();
    for (r, id) in ids.iter().enumerate() {
        for task in 0..tasks {
            for (i, m) in modalities.iter().enumerate() {
                let w = tape.value(vars.gates[i]).get(r, 0);
                let p = tape.value(vars.predictions[i]).get(r, task);
                rows.push(Contribution {
                    id: id.clone(),
                    modality: m.clone(),
                    task,
                    w,
                    p,
                    wp: w * p,
                });
            }
            let f = tape.value(vars.fused).get(r, task);
            rows.push(Contribution {
                id: id.clone(),
                modality: FINAL_ROW.into(),
                task,
                w: 1.0,
                p: f,
                wp: f,
            });
        }
    }
    rows
}

/// CSV `id,modality,w,p,w*p`, with a trailing `task` column for multi-task heads.
pub fn write_contributions<W: Write>(out: W, rows: &[Contribution]) -> Result<(), FusionError> {
    let multi = rows.iter().any(|r| r.task > 0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id", "modality", "w", "p", "w*p"];
    if multi {
        header.push("task");
    }
    w.write_record(&header).map_err(std::io::Error::other)?;
    for r in rows {
        let mut rec = vec![r.id.clone(), r.modality.clone(), fmt_real(r.w), fmt_real(r.p), fmt_real(r.wp)];
        if multi {
            rec.push(r.task.to_string());
        }
        w.write_record(&rec).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

/// Largest `|p_final - sum_i w_i p_i|` over molecules and tasks, summing in branch order.
pub fn decomposition_residual(rows: &[Contribution]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut acc: Option<f64> = None;
    for r in rows {
        if r.modality == FINAL_ROW {
            worst = worst.max((r.p - acc.unwrap_or(0.0)).abs());
            acc = None;
        } else {
            acc = Some(match acc {
                None => r.wp,
                Some(a) => a + r.wp,
            });
        }
    }
    worst
}
