use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{pearson, PipelineError};
use crate::chem::Dataset;
use crate::output::fmt_real;
use crate::similarity::{Modality, ModalityEmbedding};

pub const RIDGE_LAMBDA: f64 = 1e-6;
pub const DEFAULT_GAIN_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Intermediate,
    Late,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Intermediate => "intermediate",
            Strategy::Late => "late",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub task: String,
    pub samples: usize,
    /// In-sample Pearson of each modality's linear fit, in input order.
    pub per_modality: Vec<(String, f64)>,
    pub top1: f64,
    pub concat: f64,
    pub gain: f64,
    pub threshold: f64,
    pub strategy: Strategy,
}

impl SensitivityReport {
    /// One-row CSV: `task,<modalities...>,top1,concat,gain,strategy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| PipelineError::Io(std::io::Error::other(e));
        let mut header = vec!["task".to_string()];
        header.extend(self.per_modality.iter().map(|(m, _)| m.clone()));
        header.extend(["top1", "concat", "gain", "strategy"].map(String::from));
        w.write_record(&header).map_err(err)?;
        let mut row = vec![self.task.clone()];
        row.extend(self.per_modality.iter().map(|(_, v)| fmt_real(*v)));
        row.extend([fmt_real(self.top1), fmt_real(self.concat), fmt_real(self.gain), self.strategy.to_string()]);
        w.write_record(&row).map_err(err)?;
        w.flush()?;
        Ok(())
    }
}

/// Ridge regression with an unpenalized intercept; returns fitted values.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>, PipelineError> {
    let n = y.len();
    if n < 2 || x.len() != n {
        return Err(PipelineError::NoData(format!("regression needs at least 2 aligned samples, got {n}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(PipelineError::Config("ragged feature rows".into()));
    }
    let mut xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    for mut col in xm.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let mut gram = xm.transpose() * &xm;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xm.transpose() * &yc;
    let beta = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| PipelineError::Metric(format!("ridge solve failed: {e}")))?,
    };
    let fitted = xm * beta;
    Ok(fitted.iter().map(|v| v + y_mean).collect())
}

/// Pearson of the in-sample fit; a constant fit carries no signal and scores 0.
fn fit_pearson(x: &[Vec<f64>], y: &[f64]) -> Result<f64, PipelineError> {
    let fitted = ridge_fit(x, y, RIDGE_LAMBDA)?;
    Ok(pearson(&fitted, y).unwrap_or(0.0))
}

/// Per-modality linear relevance and the gain from concatenating them.
/// `features[k]` holds one row per sample for modality `names[k]`.
pub fn sensitivity_from_features(task: &str, y: &[f64], names: &[String], features: &[Vec<Vec<f64>>], threshold: f64) -> Result<SensitivityReport, PipelineError> {
    if names.is_empty() || names.len() != features.len() {
        return Err(PipelineError::Config("one feature block per modality is required".into()));
    }
    let mut per_modality = Vec::new();
    for (name, x) in names.iter().zip(features) {
        per_modality.push((name.clone(), fit_pearson(x, y)?));
    }
    let joined: Vec<Vec<f64>> = (0..y.len()).map(|i| features.iter().flat_map(|f| f[i].iter().copied()).collect()).collect();
    if joined[0].len() >= y.len() {
        log::warn!(
            "{} concatenated features for {} samples: the in-sample fit is near-perfect",
            joined[0].len(),
            y.len()
        );
    }
    let concat = fit_pearson(&joined, y)?;
    let top1 = per_modality.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let gain = concat - top1;
    Ok(SensitivityReport {
        task: task.to_string(),
        samples: y.len(),
        per_modality,
        top1,
        concat,
        gain,
        threshold,
        strategy: if gain >= threshold { Strategy::Intermediate } else { Strategy::Late },
    })
}

/// Sensitivity of task `task` to each vector modality, over molecules that
/// have the label and every listed modality.
pub fn sensitivity_analysis(data: &Dataset, task: usize, embeddings: &BTreeMap<Modality, Vec<ModalityEmbedding>>, threshold: f64) -> Result<SensitivityReport, PipelineError> {
    let task_name = data
        .task_names
        .get(task)
        .ok_or_else(|| PipelineError::Config(format!("task index {task} out of range")))?;
    if embeddings.is_empty() {
        return Err(PipelineError::NoData("no modality embeddings given".into()));
    }
    let mut lookups = Vec::new();
    let mut names = Vec::new();
    for (m, embs) in embeddings {
        let mut map = HashMap::new();
        for e in embs {
            let v = e
                .as_vector()
                .ok_or_else(|| PipelineError::Config(format!("{m} is atom-level; sensitivity needs one vector per molecule")))?;
            map.insert(e.id.as_str(), v);
        }
        lookups.push(map);
        names.push(m.name().to_string());
    }
    let mut y = Vec::new();
    let mut features: Vec<Vec<Vec<f64>>> = vec![Vec::new(); lookups.len()];
    for r in &data.records {
        let Some(label) = r.labels[task] else { continue };
        let rows: Option<Vec<&[f64]>> = lookups.iter().map(|l| l.get(r.id.as_str()).copied()).collect();
        let Some(rows) = rows else { continue };
        y.push(label);
        for (k, row) in rows.into_iter().enumerate() {
            features[k].push(row.to_vec());
        }
    }
    if y.len() < 2 {
        return Err(PipelineError::NoData(format!("{} usable samples, need at least 2", y.len())));
    }
    sensitivity_from_features(task_name, &y, &names, &features, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn ridge_recovers_an_exact_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_block(&mut rng, 40, 3);
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 7.0).collect();
        let fit = ridge_fit(&x, &y, RIDGE_LAMBDA).unwrap();
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rank_deficient_features_still_solve() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let fit = ridge_fit(&x, &y, RIDGE_LAMBDA).unwrap();
        assert!((pearson(&fit, &y).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_relevant_modality_recommends_late() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_block(&mut rng, 100, 4);
        let b = random_block(&mut rng, 100, 4);
        let y: Vec<f64> = a.iter().map(|r| r[0] + r[1] - r[3]).collect();
        let rep = sensitivity_from_features("y", &y, &["a".into(), "b".into()], &[a, b], DEFAULT_GAIN_THRESHOLD).unwrap();
        assert!((rep.per_modality[0].1 - 1.0).abs() < 1e-9);
        assert!(rep.gain.abs() < 1e-6);
        assert_eq!(rep.strategy, Strategy::Late);
    }

    #[test]
    fn too_few_samples() {
        let err = sensitivity_from_features("y", &[1.0], &["a".into()], &[vec![vec![1.0]]], 0.15);
        assert!(matches!(err, Err(PipelineError::NoData(_))));
    }
}
