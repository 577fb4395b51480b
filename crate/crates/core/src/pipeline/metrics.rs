use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RocAuc,
    Rmse,
    Pearson,
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "roc_auc" => Ok(MetricKind::RocAuc),
            "rmse" => Ok(MetricKind::Rmse),
            "pearson" => Ok(MetricKind::Pearson),
            _ => Err(format!("unknown metric '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub value: f64,
    /// One entry per task; `None` where the task could not be scored.
    pub per_task: Vec<Option<f64>>,
}

/// Mann-Whitney estimate of P(score+ > score-), ties counted as 1/2.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, PipelineError> {
    if scores.len() != labels.len() {
        return Err(PipelineError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(PipelineError::Metric("roc_auc needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PipelineError::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, PipelineError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(PipelineError::Metric(format!("rmse over {} and {} values", pred.len(), target.len())));
    }
    let mse = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, PipelineError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(PipelineError::Metric(format!("pearson over {} and {} values", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PipelineError::Metric("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Score each task on its non-missing rows and average the tasks that
/// could be scored. `scores[i][t]`, `labels[i][t]`.
pub fn multitask_metric(kind: MetricKind, scores: &[Vec<f64>], labels: &[Vec<Option<f64>>]) -> Result<Metric, PipelineError> {
    let tasks = labels.first().map_or(0, Vec::len);
    let mut per_task = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let (s, l): (Vec<f64>, Vec<f64>) = scores
            .iter()
            .zip(labels)
            .filter_map(|(sr, lr)| lr[t].map(|l| (sr[t], l)))
            .unzip();
        let v = match kind {
            MetricKind::RocAuc => roc_auc(&s, &l.iter().map(|&v| v >= 0.5).collect::<Vec<_>>()),
            MetricKind::Rmse => rmse(&s, &l),
            MetricKind::Pearson => pearson(&s, &l),
        };
        match v {
            Ok(v) => per_task.push(Some(v)),
            Err(e) => {
                log::warn!("task {t} not scored: {e}");
                per_task.push(None);
            }
        }
    }
    let scored: Vec<f64> = per_task.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(PipelineError::Metric("no task could be scored".into()));
    }
    Ok(Metric {
        kind,
        value: scored.iter().sum::<f64>() / scored.len() as f64,
        per_task,
    })
}
