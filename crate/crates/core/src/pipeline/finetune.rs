use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pretrain::ENCODER_PREFIX;
use super::{multitask_metric, sub_seed, Metric, MetricKind, Partition, PipelineError, SplitAssignment};
use crate::chem::{Dataset, DirectedEdgeGraph};
use crate::encoders::{init_mlp, mlp_head, Encoder, EncoderConfig, GraphBatch};
use crate::fusion::{
    contribution_rows, init_intermediate, intermediate_dims, intermediate_fuse, late_fuse, Contribution, LateFusionHead, LateFusionVars,
};
use crate::numeric::{load_checkpoint, save_checkpoint, sigmoid, Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::output::fmt_real;
use crate::similarity::Modality;

/// How pretrained encoders enter the downstream model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionMode {
    /// Randomly initialized encoder.
    None,
    Unimodal(Modality),
    /// Encoder pretrained against early-fused targets.
    Early,
    Intermediate(Vec<Modality>),
    Late(Vec<Modality>),
}

impl FusionMode {
    /// Checkpoint names, one per branch; `None` for a random branch.
    pub fn branches(&self) -> Vec<Option<String>> {
        match self {
            FusionMode::None => vec![None],
            FusionMode::Unimodal(m) => vec![Some(m.name().to_string())],
            FusionMode::Early => vec![Some("early".to_string())],
            FusionMode::Intermediate(ms) | FusionMode::Late(ms) => ms.iter().map(|m| Some(m.name().to_string())).collect(),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |ms: &[Modality]| ms.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        match self {
            FusionMode::None => f.write_str("none"),
            FusionMode::Unimodal(m) => write!(f, "unimodal:{m}"),
            FusionMode::Early => f.write_str("early"),
            FusionMode::Intermediate(ms) => write!(f, "intermediate:{}", list(ms)),
            FusionMode::Late(ms) => write!(f, "late:{}", list(ms)),
        }
    }
}

impl FromStr for FusionMode {
    type Err = String;

    /// `none`, `early`, `unimodal:<m>`, `intermediate:<m>,<m>...`, `late:<m>,<m>...`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let list = || -> Result<Vec<Modality>, String> {
            let ms = rest
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.trim().parse::<Modality>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            if ms.is_empty() {
                return Err(format!("mode '{head}' needs at least one modality"));
            }
            Ok(ms)
        };
        match head {
            "none" if rest.is_empty() => Ok(FusionMode::None),
            "early" if rest.is_empty() => Ok(FusionMode::Early),
            "unimodal" => {
                let ms = list()?;
                if ms.len() != 1 {
                    return Err("unimodal takes exactly one modality".into());
                }
                Ok(FusionMode::Unimodal(ms[0]))
            }
            "intermediate" => Ok(FusionMode::Intermediate(list()?)),
            "late" => Ok(FusionMode::Late(list()?)),
            _ => Err(format!("unknown fusion mode '{s}'")),
        }
    }
}

impl Serialize for FusionMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FusionMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Logistic loss, scores are probabilities.
    Classification,
    /// Squared loss on standardized targets.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub batch_size: usize,
    /// Stop after this many epochs without a better validation loss.
    pub patience: usize,
    pub head_hidden: usize,
    /// Keep encoder weights at their initial values.
    pub freeze_encoder: bool,
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
    /// Detected from the labels when unset.
    pub task: Option<TaskKind>,
    /// Defaults to roc_auc for classification and rmse for regression.
    pub metric: Option<MetricKind>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 50,
            encoder_lr: 1e-4,
            head_lr: 1e-3,
            batch_size: 32,
            patience: 10,
            head_hidden: 128,
            freeze_encoder: false,
            encoder: EncoderConfig::default(),
            adam: AdamConfig::default(),
            task: None,
            metric: None,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.head_hidden == 0 {
            return bad("epochs, batch_size and head_hidden must be positive");
        }
        if !(self.encoder_lr >= 0.0 && self.head_lr >= 0.0) || !self.encoder_lr.is_finite() || !self.head_lr.is_finite() {
            return bad("learning rates must be finite and non-negative");
        }
        self.encoder.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    /// Present only for multi-task datasets.
    pub task: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub test_metric: Metric,
    pub valid_metric: Option<Metric>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub predictions: Vec<PredictionRow>,
    /// Late mode only: per-branch gates and readouts on the test set.
    pub contributions: Option<Vec<Contribution>>,
    pub model: FinetunedModel,
}

struct Model {
    encoders: Vec<Encoder>,
    intermediate: bool,
    dims: Vec<usize>,
    late: Option<LateFusionHead>,
    branch_names: Vec<String>,
}

const HEAD: &str = "head";
const FUSE: &str = "fuse";
const LATE: &str = "late.";

impl Model {
    fn new(mode: &FusionMode, cfg: &FinetuneConfig, tasks: usize) -> Result<Self, PipelineError> {
        let branches = mode.branches();
        let encoders = (0..branches.len())
            .map(|i| Encoder::new(cfg.encoder, format!("b{i}.{ENCODER_PREFIX}")))
            .collect::<Result<Vec<_>, _>>()?;
        let dims = vec![cfg.encoder.embed_dim, cfg.head_hidden, tasks];
        let late = match mode {
            FusionMode::Late(_) => Some(LateFusionHead::new(LATE, branches.len(), dims.clone())?),
            _ => None,
        };
        Ok(Model {
            encoders,
            intermediate: matches!(mode, FusionMode::Intermediate(_)),
            dims,
            late,
            branch_names: branches.into_iter().map(|b| b.unwrap_or_else(|| "random".into())).collect(),
        })
    }

    /// Encoders from their checkpoints (or random), then freshly initialized heads.
    fn init_params(&self, mode: &FusionMode, checkpoints: &BTreeMap<String, ParamStore>, rng: &mut ChaCha8Rng) -> Result<ParamStore, PipelineError> {
        let mut params = ParamStore::new();
        for (enc, ckpt) in self.encoders.iter().zip(mode.branches()) {
            let init = enc.init_params(rng);
            let Some(name) = ckpt else {
                params.extend(init);
                continue;
            };
            let stored = checkpoints
                .get(&name)
                .ok_or_else(|| PipelineError::MissingCheckpoint(format!("mode {mode} needs the '{name}' checkpoint")))?;
            let mut loaded = ParamStore::new();
            loaded.import_prefixed(stored, ENCODER_PREFIX, enc.prefix());
            for (pname, t) in init.iter() {
                match loaded.get(pname) {
                    Some(l) if l.shape() == t.shape() => {
                        params.insert(pname.clone(), l.clone());
                    }
                    Some(l) => {
                        return Err(PipelineError::IncompatibleCheckpoint(format!(
                            "'{name}': {pname} has shape {:?}, encoder needs {:?}",
                            l.shape(),
                            t.shape()
                        )))
                    }
                    None => return Err(PipelineError::IncompatibleCheckpoint(format!("'{name}' lacks {pname}"))),
                }
            }
        }
        let e = self.dims[0];
        if let Some(late) = &self.late {
            params.extend(late.init_params(rng));
        } else {
            if self.intermediate {
                params.extend(init_intermediate(rng, FUSE, self.encoders.len(), e));
            }
            params.extend(init_mlp(rng, HEAD, &self.dims));
        }
        Ok(params)
    }

    /// Raw outputs `[B x T]` (logits or standardized values).
    fn forward(&self, tape: &mut Tape, params: &ParamStore, batch: &GraphBatch) -> Result<(Var, Option<LateFusionVars>), PipelineError> {
        let mut feats = Vec::with_capacity(self.encoders.len());
        for e in &self.encoders {
            feats.push(e.encode(tape, params, batch)?.1);
        }
        if let Some(late) = &self.late {
            let vars = late_fuse(tape, &feats, params, late)?;
            return Ok((vars.fused, Some(vars)));
        }
        let joined = if self.intermediate {
            let dims = intermediate_dims(feats.len(), self.dims[0]);
            let f = intermediate_fuse(tape, &feats, params, FUSE, &dims)?;
            tape.relu(f)?
        } else {
            feats[0]
        };
        Ok((mlp_head(tape, joined, params, HEAD, &self.dims)?, None))
    }
}

/// A fine-tuned network together with what is needed to score new molecules.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetunedModel {
    pub mode: FusionMode,
    pub config: FinetuneConfig,
    pub task: TaskKind,
    pub task_names: Vec<String>,
    /// Per-task `(mean, std)` of the training labels; `(0, 1)` for classification.
    pub scale: Vec<(f64, f64)>,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    mode: FusionMode,
    config: FinetuneConfig,
    task: TaskKind,
    task_names: Vec<String>,
    scale: Vec<(f64, f64)>,
}

impl FinetunedModel {
    fn network(&self) -> Result<Model, PipelineError> {
        Model::new(&self.mode, &self.config, self.task_names.len())
    }

    fn raw(&self, net: &Model, tape: &mut Tape, graphs: &[&DirectedEdgeGraph]) -> Result<(Var, Option<LateFusionVars>), PipelineError> {
        if graphs.is_empty() {
            return Err(PipelineError::NoData("no molecules to score".into()));
        }
        net.forward(tape, &self.params, &GraphBatch::pack(graphs))
    }

    /// Probabilities (classification) or values in label units, `[molecule][task]`.
    pub fn predict(&self, graphs: &[&DirectedEdgeGraph]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let net = self.network()?;
        let mut tape = Tape::new();
        let (out, _) = self.raw(&net, &mut tape, graphs)?;
        let raw = tape.value(out);
        Ok((0..graphs.len())
            .map(|r| {
                (0..self.scale.len())
                    .map(|t| match self.task {
                        TaskKind::Classification => sigmoid(raw.get(r, t)),
                        TaskKind::Regression => raw.get(r, t) * self.scale[t].1 + self.scale[t].0,
                    })
                    .collect()
            })
            .collect())
    }

    /// Late mode only. Gates and readouts are reported on the raw output
    /// scale (logits, or standardized values for regression).
    pub fn contributions(&self, ids: &[String], graphs: &[&DirectedEdgeGraph]) -> Result<Vec<Contribution>, PipelineError> {
        let net = self.network()?;
        if net.late.is_none() {
            return Err(PipelineError::Config(format!("contributions need a late-fusion model, this one is {}", self.mode)));
        }
        if ids.len() != graphs.len() {
            return Err(PipelineError::Config(format!("{} ids for {} molecules", ids.len(), graphs.len())));
        }
        let mut tape = Tape::new();
        let (_, vars) = self.raw(&net, &mut tape, graphs)?;
        Ok(contribution_rows(&tape, &vars.expect("late network"), ids, &net.branch_names))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let meta = ModelMeta {
            mode: self.mode.clone(),
            config: self.config.clone(),
            task: self.task,
            task_names: self.task_names.clone(),
            scale: self.scale.clone(),
        };
        save_checkpoint(path, &self.params, serde_json::to_value(meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let (params, manifest) = load_checkpoint(path)?;
        let meta: ModelMeta = serde_json::from_value(manifest.metadata)
            .map_err(|e| PipelineError::IncompatibleCheckpoint(format!("{} is not a fine-tuned model: {e}", path.display())))?;
        Ok(FinetunedModel {
            mode: meta.mode,
            config: meta.config,
            task: meta.task,
            task_names: meta.task_names,
            scale: meta.scale,
            params,
        })
    }
}

struct Targets {
    /// Standardized for regression.
    values: Tensor,
    mask: Tensor,
    count: usize,
}

fn gather_targets(rows: &[usize], labels: &[Vec<Option<f64>>], scale: &[(f64, f64)]) -> Targets {
    let tasks = scale.len();
    let mut values = Tensor::zeros(&[rows.len(), tasks]);
    let mut mask = Tensor::zeros(&[rows.len(), tasks]);
    let mut count = 0;
    for (r, &i) in rows.iter().enumerate() {
        for t in 0..tasks {
            if let Some(y) = labels[i][t] {
                values.set(r, t, (y - scale[t].0) / scale[t].1);
                mask.set(r, t, 1.0);
                count += 1;
            }
        }
    }
    Targets { values, mask, count }
}

/// Masked mean of the per-label loss; `None` when no label is present.
fn masked_loss(tape: &mut Tape, out: Var, y: &Targets, kind: TaskKind) -> Result<Option<Var>, PipelineError> {
    if y.count == 0 {
        return Ok(None);
    }
    let yv = tape.constant(y.values.clone());
    let mask = tape.constant(y.mask.clone());
    let per = match kind {
        TaskKind::Classification => {
            // softplus(z) - y z == -[y log σ(z) + (1-y) log(1-σ(z))]
            let sp = tape.softplus(out)?;
            let yz = tape.mul(yv, out)?;
            tape.sub(sp, yz)?
        }
        TaskKind::Regression => {
            let diff = tape.sub(out, yv)?;
            tape.mul(diff, diff)?
        }
    };
    let masked = tape.mul(per, mask)?;
    let total = tape.reduce_sum(masked)?;
    Ok(Some(tape.scale(total, 1.0 / y.count as f64)?))
}

fn detect_task(data: &Dataset) -> TaskKind {
    if data.is_binary() {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    }
}

/// Fine-tune on the train partition, keep the parameters with the lowest
/// validation loss and report the test metric.
///
/// `checkpoints` maps checkpoint names (a modality name or `early`) to
/// pretrained encoder parameters.
pub fn finetune(
    data: &Dataset,
    graphs: &[DirectedEdgeGraph],
    split: &SplitAssignment,
    mode: &FusionMode,
    checkpoints: &BTreeMap<String, ParamStore>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport, PipelineError> {
    cfg.validate()?;
    if graphs.len() != data.len() || split.tags.len() != data.len() {
        return Err(PipelineError::Config(format!(
            "{} records, {} graphs, {} split tags",
            data.len(),
            graphs.len(),
            split.tags.len()
        )));
    }
    let tasks = data.num_tasks();
    if tasks == 0 {
        return Err(PipelineError::NoData("dataset has no label column".into()));
    }
    let kind = cfg.task.unwrap_or_else(|| detect_task(data));
    let metric_kind = cfg.metric.unwrap_or(match kind {
        TaskKind::Classification => MetricKind::RocAuc,
        TaskKind::Regression => MetricKind::Rmse,
    });
    let train = split.indices(Partition::Train);
    let valid = split.indices(Partition::Valid);
    let test = split.indices(Partition::Test);
    if train.is_empty() || test.is_empty() {
        return Err(PipelineError::NoData("train and test partitions must be non-empty".into()));
    }
    let labels: Vec<Vec<Option<f64>>> = data.records.iter().map(|r| r.labels.clone()).collect();
    let scale = target_scale(&train, &labels, tasks, kind);

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "finetune"));
    let net = Model::new(mode, cfg, tasks)?;
    let mut params = net.init_params(mode, checkpoints, &mut rng)?;

    let graph_refs: Vec<&DirectedEdgeGraph> = graphs.iter().collect();
    let pick = |rows: &[usize]| rows.iter().map(|&i| graph_refs[i]).collect::<Vec<_>>();
    let valid_batch = (!valid.is_empty()).then(|| GraphBatch::pack(&pick(&valid)));
    let valid_targets = gather_targets(&valid, &labels, &scale);
    let freeze = cfg.freeze_encoder;
    let lr_for = |name: &str| -> Option<f64> {
        if name.starts_with('b') && name.contains(ENCODER_PREFIX) {
            (!freeze).then_some(cfg.encoder_lr)
        } else {
            Some(cfg.head_lr)
        }
    };

    let mut adam = Adam::new(cfg.adam);
    let mut order = train.clone();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let (mut train_hist, mut valid_hist) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let y = gather_targets(chunk, &labels, &scale);
            let mut tape = Tape::new();
            let (out, _) = net.forward(&mut tape, &params, &GraphBatch::pack(&pick(chunk)))?;
            let Some(loss) = masked_loss(&mut tape, out, &y, kind)? else { continue };
            total += tape.value(loss).item()?;
            batches += 1;
            let grads = tape.backward(loss)?;
            adam.step(&mut params, &grads, lr_for);
        }
        train_hist.push(if batches == 0 { f64::NAN } else { total / batches as f64 });
        // without validation labels the last epoch is kept
        let v = match &valid_batch {
            Some(b) => {
                let mut tape = Tape::new();
                let (out, _) = net.forward(&mut tape, &params, b)?;
                match masked_loss(&mut tape, out, &valid_targets, kind)? {
                    Some(l) => tape.value(l).item()?,
                    None => -(epoch as f64),
                }
            }
            None => -(epoch as f64),
        };
        valid_hist.push(v);
        log::debug!("finetune {mode} epoch {epoch}: train {:.6} valid {v:.6}", train_hist[epoch]);
        match &best {
            Some((bv, be, _)) if !(v < *bv) => {
                if epoch - be >= cfg.patience {
                    log::info!("early stop at epoch {epoch}, best {be}");
                    break;
                }
            }
            _ => best = Some((v, epoch, params.clone())),
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    let model = FinetunedModel {
        mode: mode.clone(),
        config: cfg.clone(),
        task: kind,
        task_names: data.task_names.clone(),
        scale,
        params,
    };

    let ids = |rows: &[usize]| rows.iter().map(|&i| data.records[i].id.clone()).collect::<Vec<_>>();
    let test_scores = model.predict(&pick(&test))?;
    let contributions = match mode {
        FusionMode::Late(_) => Some(model.contributions(&ids(&test), &pick(&test))?),
        _ => None,
    };
    let test_labels: Vec<Vec<Option<f64>>> = test.iter().map(|&i| labels[i].clone()).collect();
    let test_metric = multitask_metric(metric_kind, &test_scores, &test_labels)?;
    let valid_metric = if valid.is_empty() {
        None
    } else {
        let s = model.predict(&pick(&valid))?;
        let l: Vec<Vec<Option<f64>>> = valid.iter().map(|&i| labels[i].clone()).collect();
        multitask_metric(metric_kind, &s, &l).ok()
    };
    let multi = tasks > 1;
    let predictions = test
        .iter()
        .zip(&test_scores)
        .flat_map(|(&i, s)| {
            (0..tasks).map(move |t| PredictionRow {
                id: data.records[i].id.clone(),
                task: multi.then(|| data.task_names[t].clone()),
                score: s[t],
            })
        })
        .collect();
    Ok(FinetuneReport {
        test_metric,
        valid_metric,
        best_epoch,
        train_loss: train_hist,
        valid_loss: valid_hist,
        predictions,
        contributions,
        model,
    })
}

/// Per-task `(mean, std)` over present training labels; identity for classification.
fn target_scale(train: &[usize], labels: &[Vec<Option<f64>>], tasks: usize, kind: TaskKind) -> Vec<(f64, f64)> {
    (0..tasks)
        .map(|t| {
            if kind == TaskKind::Classification {
                return (0.0, 1.0);
            }
            let ys: Vec<f64> = train.iter().filter_map(|&i| labels[i][t]).collect();
            if ys.is_empty() {
                return (0.0, 1.0);
            }
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

/// CSV `id,score[,task]`.
pub fn write_predictions<W: Write>(out: W, rows: &[PredictionRow]) -> Result<(), PipelineError> {
    let multi = rows.iter().any(|r| r.task.is_some());
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| PipelineError::Io(std::io::Error::other(e));
    let mut header = vec!["id", "score"];
    if multi {
        header.push("task");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.id.clone(), fmt_real(r.score)];
        if multi {
            rec.push(r.task.clone().unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionRow>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let bad = |m: String| PipelineError::Config(format!("predictions: {m}"));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, score_col) = match (col("id"), col("score")) {
        (Some(i), Some(s)) => (i, s),
        _ => return Err(bad("header must contain id and score".into())),
    };
    let task_col = col("task");
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let score: f64 = rec[score_col]
            .parse()
            .map_err(|_| bad(format!("row {}: bad score '{}'", line + 2, &rec[score_col])))?;
        rows.push(PredictionRow {
            id: rec[id_col].to_string(),
            task: task_col.map(|c| rec[c].to_string()),
            score,
        });
    }
    Ok(rows)
}

/// Label table `id[,smiles],<task columns...>`; empty cells are missing labels.
/// SMILES are kept when present but not parsed.
pub fn read_labels<R: Read>(input: R) -> Result<Dataset, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let bad = |m: String| PipelineError::Config(format!("labels: {m}"));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let id_col = headers.iter().position(|h| h == "id").ok_or_else(|| bad("missing id column".into()))?;
    let smiles_col = headers.iter().position(|h| h == "smiles");
    let task_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != id_col && Some(c) != smiles_col).collect();
    if task_cols.is_empty() {
        return Err(bad("no label columns".into()));
    }
    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let labels = task_cols
            .iter()
            .map(|&c| match &rec[c] {
                "" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| bad(format!("row {}: bad label '{v}'", line + 2))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(crate::chem::MoleculeRecord {
            id: rec[id_col].to_string(),
            smiles: smiles_col.map(|c| rec[c].to_string()).unwrap_or_default(),
            labels,
        });
    }
    Ok(Dataset {
        task_names: task_cols.iter().map(|&c| headers[c].to_string()).collect(),
        records,
    })
}

/// Score predictions against a dataset's labels, matched by id (and task
/// name for multi-task files). Every prediction must have a label row.
pub fn evaluate_predictions(preds: &[PredictionRow], labels: &Dataset, kind: MetricKind) -> Result<Metric, PipelineError> {
    let by_id: HashMap<&str, &[Option<f64>]> = labels.records.iter().map(|r| (r.id.as_str(), r.labels.as_slice())).collect();
    let task_index: HashMap<&str, usize> = labels.task_names.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let tasks = labels.num_tasks();
    let mut per_id: BTreeMap<&str, (Vec<f64>, Vec<Option<f64>>)> = BTreeMap::new();
    let mut order = Vec::new();
    for p in preds {
        let row = by_id
            .get(p.id.as_str())
            .ok_or_else(|| PipelineError::Config(format!("no label row for '{}'", p.id)))?;
        let t = match &p.task {
            Some(name) if tasks > 1 || !name.is_empty() => *task_index
                .get(name.as_str())
                .ok_or_else(|| PipelineError::Config(format!("unknown task '{name}'")))?,
            _ if tasks == 1 => 0,
            _ => return Err(PipelineError::Config("multi-task labels need a task column".into())),
        };
        let entry = per_id.entry(p.id.as_str()).or_insert_with(|| {
            order.push(p.id.as_str());
            (vec![f64::NAN; tasks], vec![None; tasks])
        });
        entry.0[t] = p.score;
        entry.1[t] = row[t];
    }
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for id in order {
        let (s, l) = per_id.remove(id).expect("inserted above");
        // tasks without a prediction are treated as unlabeled
        truth.push(s.iter().zip(&l).map(|(v, y)| if v.is_nan() { None } else { *y }).collect());
        scores.push(s);
    }
    multitask_metric(kind, &scores, &truth)
}
