use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sub_seed, PipelineError};
use crate::chem::DirectedEdgeGraph;
use crate::encoders::{Encoder, EncoderConfig, GraphBatch};
use crate::fusion::{early_fuse_targets, FusionWeights};
use crate::losses::{contrastive_loss, in_batch_negatives, mrl_loss, similarity_logits, triplet_loss, LossValue};
use crate::numeric::{load_checkpoint, save_checkpoint, Adam, AdamConfig, ParamStore, Tape, Var};
use crate::similarity::{
    target_matrix, EmbeddingData, Level, Modality, ModalityEmbedding, TargetOptions, TargetSimilarityMatrix,
};

/// Parameter-name prefix of every pretrained encoder.
pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Soft-target cross-entropy against a modality's similarity matrix.
    Mrl,
    /// In-batch contrastive loss against a node-masked view.
    Contrastive,
    /// Triplet loss with a node-masked positive and a random in-batch negative.
    Triplet,
}

/// Where target rows are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetScope {
    Batch,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub modalities: Vec<Modality>,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub objective: Objective,
    /// Early-fusion weights over the graph-level entries of `modalities`;
    /// when set, one extra encoder is trained against the fused targets.
    pub early_weights: Option<Vec<f64>>,
    pub targets: TargetOptions,
    pub target_scope: TargetScope,
    /// Compare projection-head outputs (true) or raw readouts (false).
    pub use_projection: bool,
    pub temperature: f64,
    pub contrastive_temperature: f64,
    pub triplet_margin: f64,
    pub mask_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 1e-3,
            epochs: 200,
            batch_size: 256,
            adam: AdamConfig::default(),
            modalities: vec![Modality::Fingerprint],
            seed: 0,
            encoder: EncoderConfig::default(),
            objective: Objective::Mrl,
            early_weights: None,
            targets: TargetOptions::default(),
            target_scope: TargetScope::Batch,
            use_projection: true,
            temperature: 1.0,
            contrastive_temperature: 0.1,
            triplet_margin: 1.0,
            mask_rate: 0.1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be a finite non-negative number");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.temperature > 0.0) || !(self.contrastive_temperature > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad("mask_rate must lie in [0, 1]");
        }
        if self.modalities.is_empty() && self.early_weights.is_none() {
            return bad("no modality to pretrain");
        }
        self.encoder.validate()?;
        Ok(())
    }
}

/// One trained replica.
#[derive(Debug, Clone)]
pub struct PretrainRun {
    /// Modality name, or `early`.
    pub name: String,
    pub params: ParamStore,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
    pub molecules: usize,
    pub skipped_batches: usize,
}

enum Targets<'a> {
    Graph {
        embeddings: Vec<&'a ModalityEmbedding>,
        full: Option<TargetSimilarityMatrix>,
    },
    Atom {
        embeddings: Vec<&'a ModalityEmbedding>,
    },
    Early {
        per_modality: Vec<Vec<&'a ModalityEmbedding>>,
        weights: FusionWeights,
    },
    SelfSupervised,
}

struct Replica<'a> {
    name: String,
    graphs: Vec<&'a DirectedEdgeGraph>,
    targets: Targets<'a>,
}

/// Train one encoder per requested modality (plus an early-fused encoder
/// when `early_weights` is set). Replicas run on separate threads.
///
/// `ids[i]` names `graphs[i]`; embeddings are matched to molecules by id and
/// a molecule joins a replica only where that modality is present.
pub fn pretrain(
    ids: &[String],
    graphs: &[DirectedEdgeGraph],
    embeddings: &BTreeMap<Modality, Vec<ModalityEmbedding>>,
    cfg: &PretrainConfig,
) -> Result<Vec<PretrainRun>, PipelineError> {
    cfg.validate()?;
    if ids.len() != graphs.len() {
        return Err(PipelineError::Config(format!("{} ids for {} graphs", ids.len(), graphs.len())));
    }
    let lookup = |m: Modality| -> HashMap<&str, &ModalityEmbedding> {
        embeddings
            .get(&m)
            .map(|v| v.iter().map(|e| (e.id.as_str(), e)).collect())
            .unwrap_or_default()
    };
    let mut replicas = Vec::new();
    for &m in &cfg.modalities {
        let by_id = lookup(m);
        let members: Vec<usize> = (0..ids.len()).filter(|&i| by_id.contains_key(ids[i].as_str())).collect();
        if members.is_empty() && cfg.objective == Objective::Mrl {
            return Err(PipelineError::NoData(format!("no molecule has a {m} embedding")));
        }
        let embs: Vec<&ModalityEmbedding> = members.iter().map(|&i| by_id[ids[i].as_str()]).collect();
        let targets = match (cfg.objective, m.level()) {
            (Objective::Mrl, Level::Graph) => {
                let full = match cfg.target_scope {
                    TargetScope::Batch => None,
                    TargetScope::Dataset => {
                        let owned: Vec<ModalityEmbedding> = embs.iter().map(|e| (*e).clone()).collect();
                        Some(target_matrix(&owned, Level::Graph, &cfg.targets)?)
                    }
                };
                Targets::Graph { embeddings: embs, full }
            }
            (Objective::Mrl, Level::Atom) => {
                if cfg.target_scope == TargetScope::Dataset {
                    log::warn!("atom-level targets are always normalized per batch");
                }
                Targets::Atom { embeddings: embs }
            }
            _ => Targets::SelfSupervised,
        };
        replicas.push(Replica {
            name: m.name().to_string(),
            graphs: members.iter().map(|&i| &graphs[i]).collect(),
            targets,
        });
    }
    if let Some(w) = &cfg.early_weights {
        let mods: Vec<Modality> = cfg.modalities.iter().copied().filter(|m| m.level() == Level::Graph).collect();
        if mods.len() != w.len() {
            return Err(PipelineError::Config(format!(
                "{} early-fusion weights for {} graph-level modalities",
                w.len(),
                mods.len()
            )));
        }
        let weights = FusionWeights::new(w.clone())?;
        let maps: Vec<HashMap<&str, &ModalityEmbedding>> = mods.iter().map(|&m| lookup(m)).collect();
        let members: Vec<usize> = (0..ids.len())
            .filter(|&i| maps.iter().all(|map| map.contains_key(ids[i].as_str())))
            .collect();
        let dropped = ids.len() - members.len();
        if dropped > 0 {
            log::info!("early fusion: dropped {dropped} molecules without every modality");
        }
        if members.len() < 2 {
            return Err(PipelineError::NoData("fewer than 2 molecules carry every modality".into()));
        }
        let per_modality = maps
            .iter()
            .map(|map| members.iter().map(|&i| map[ids[i].as_str()]).collect())
            .collect();
        replicas.push(Replica {
            name: "early".into(),
            graphs: members.iter().map(|&i| &graphs[i]).collect(),
            targets: Targets::Early { per_modality, weights },
        });
    }
    let results: Vec<Result<PretrainRun, PipelineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = replicas.iter().map(|r| scope.spawn(move || train_replica(r, cfg))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(PipelineError::Config("pretraining worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn train_replica(r: &Replica<'_>, cfg: &PretrainConfig) -> Result<PretrainRun, PipelineError> {
    let encoder = Encoder::new(cfg.encoder, ENCODER_PREFIX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &r.name));
    let mut params = encoder.init_params(&mut rng);
    let mut adam = Adam::new(cfg.adam);
    let n = r.graphs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                if epoch == 0 {
                    log::warn!("{}: skipping a batch of {} molecule (similarity needs two)", r.name, chunk.len());
                }
                skipped += 1;
                continue;
            }
            let batch = GraphBatch::pack(&chunk.iter().map(|&i| r.graphs[i]).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let Some(loss) = batch_loss(&mut tape, &encoder, &params, &batch, chunk, r, cfg, &mut rng)? else {
                skipped += 1;
                continue;
            };
            let grads = tape.backward(loss.var)?;
            adam.step(&mut params, &grads, |_| Some(cfg.lr));
            total += loss.value;
            batches += 1;
        }
        history.push(if batches == 0 { f64::NAN } else { total / batches as f64 });
        log::debug!("{} epoch {epoch}: loss {:.6}", r.name, history[epoch]);
    }
    Ok(PretrainRun {
        name: r.name.clone(),
        params,
        loss_history: history,
        molecules: n,
        skipped_batches: skipped,
    })
}

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    tape: &mut Tape,
    encoder: &Encoder,
    params: &ParamStore,
    batch: &GraphBatch,
    chunk: &[usize],
    r: &Replica<'_>,
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<LossValue>, PipelineError> {
    let (atoms, graphs) = encoder.encode(tape, params, batch)?;
    let view = |tape: &mut Tape, x: Var| -> Result<Var, PipelineError> {
        Ok(if cfg.use_projection {
            encoder.project(tape, params, x)?
        } else {
            x
        })
    };
    let exclude = !cfg.targets.include_diagonal;
    let loss = match &r.targets {
        Targets::Graph { embeddings, full } => {
            let t = match full {
                Some(full) => full.submatrix(chunk)?,
                None => {
                    let embs: Vec<ModalityEmbedding> = chunk.iter().map(|&i| embeddings[i].clone()).collect();
                    target_matrix(&embs, Level::Graph, &cfg.targets)?
                }
            };
            let z = view(tape, graphs)?;
            let d = similarity_logits(tape, z, cfg.temperature)?;
            mrl_loss(tape, d, t.matrix(), exclude)?
        }
        Targets::Early { per_modality, weights } => {
            let ts = per_modality
                .iter()
                .map(|embs| {
                    let owned: Vec<ModalityEmbedding> = chunk.iter().map(|&i| embs[i].clone()).collect();
                    target_matrix(&owned, Level::Graph, &cfg.targets)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let t = early_fuse_targets(&ts, weights)?;
            let z = view(tape, graphs)?;
            let d = similarity_logits(tape, z, cfg.temperature)?;
            mrl_loss(tape, d, t.matrix(), exclude)?
        }
        Targets::Atom { embeddings } => {
            let mut rows = Vec::new();
            let mut owned = Vec::new();
            let mut offset = 0;
            for (k, &i) in chunk.iter().enumerate() {
                if let EmbeddingData::Peaks(p) = &embeddings[i].data {
                    let atoms_here = batch.nodes_per_graph[k];
                    let valid: std::collections::BTreeMap<usize, f64> =
                        p.iter().filter(|(&a, _)| a < atoms_here).map(|(&a, &v)| (a, v)).collect();
                    if valid.len() < p.len() {
                        log::warn!("{}: peak atom index beyond molecule size ignored", embeddings[i].id);
                    }
                    rows.extend(valid.keys().map(|&a| offset + a));
                    owned.push(ModalityEmbedding {
                        modality: Modality::NmrPeak,
                        id: format!("{k}"),
                        data: EmbeddingData::Peaks(valid),
                    });
                }
                offset += batch.nodes_per_graph[k];
            }
            if rows.len() < 2 {
                return Ok(None);
            }
            let chunks = crate::similarity::atom_target_chunks(&owned, &cfg.targets)?;
            let picked = tape.gather_rows(atoms, Arc::from(rows))?;
            let z = view(tape, picked)?;
            let mut acc: Option<(Var, f64, usize)> = None;
            let mut start = 0;
            let count = chunks.len() as f64;
            for t in &chunks {
                let idx: Arc<[usize]> = (start..start + t.len()).collect();
                start += t.len();
                let zc = tape.gather_rows(z, idx)?;
                let d = similarity_logits(tape, zc, cfg.temperature)?;
                let l = mrl_loss(tape, d, t.matrix(), exclude)?;
                let scaled = tape.scale(l.var, 1.0 / count)?;
                acc = Some(match acc {
                    None => (scaled, l.value / count, l.batch_size),
                    Some((v, val, bs)) => (tape.add(v, scaled)?, val + l.value / count, bs + l.batch_size),
                });
            }
            let (var, value, batch_size) = acc.expect("at least one chunk");
            LossValue { var, value, batch_size }
        }
        Targets::SelfSupervised => {
            let masked = batch.with_masked_nodes(rng, cfg.mask_rate);
            let (_, masked_graphs) = encoder.encode(tape, params, &masked)?;
            let anchor = view(tape, graphs)?;
            let positive = view(tape, masked_graphs)?;
            match cfg.objective {
                Objective::Triplet => {
                    if chunk.len() < 3 {
                        return Ok(None);
                    }
                    let neg_idx = in_batch_negatives(rng, chunk.len())?;
                    let negative = tape.gather_rows(anchor, neg_idx)?;
                    triplet_loss(tape, anchor, positive, negative, cfg.triplet_margin)?
                }
                _ => contrastive_loss(tape, anchor, positive, cfg.contrastive_temperature)?,
            }
        }
    };
    Ok(Some(loss))
}

/// Writes `<dir>/<name>.ckpt` and its manifest for every run.
pub fn save_pretrained(dir: &Path, runs: &[PretrainRun], cfg: &PretrainConfig) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for r in runs {
        let path = dir.join(format!("{}.ckpt", r.name));
        let history: Vec<Option<f64>> = r.loss_history.iter().map(|v| v.is_finite().then_some(*v)).collect();
        let meta = serde_json::json!({
            "name": r.name,
            "encoder": cfg.encoder,
            "objective": cfg.objective,
            "seed": cfg.seed,
            "molecules": r.molecules,
            "skipped_batches": r.skipped_batches,
            "loss_history": history,
        });
        save_checkpoint(&path, &r.params, meta)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Load a pretrained encoder, checking that it was trained with `expected`.
pub fn load_pretrained(path: &Path, expected: &EncoderConfig) -> Result<ParamStore, PipelineError> {
    let (params, manifest) = load_checkpoint(path)?;
    let stored: EncoderConfig = serde_json::from_value(manifest.metadata["encoder"].clone())
        .map_err(|e| PipelineError::IncompatibleCheckpoint(format!("{}: {e}", path.display())))?;
    if &stored != expected {
        return Err(PipelineError::IncompatibleCheckpoint(format!(
            "{} was trained with {stored:?}, run uses {expected:?}",
            path.display()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{featurize, parse_smiles};
    use crate::encoders::EncoderKind;

    fn tiny() -> PretrainConfig {
        PretrainConfig {
            epochs: 3,
            batch_size: 4,
            encoder: EncoderConfig {
                kind: EncoderKind::Dmpnn,
                depth: 2,
                hidden_dim: 8,
                embed_dim: 8,
                projection_dim: 8,
                readout: crate::encoders::Readout::Sum,
            },
            ..PretrainConfig::default()
        }
    }

    fn corpus() -> (Vec<String>, Vec<DirectedEdgeGraph>, BTreeMap<Modality, Vec<ModalityEmbedding>>) {
        let smiles = ["CCO", "c1ccccc1", "CC(=O)O", "CCN", "c1ccncc1", "CCCC", "OCCO", "C1CCCCC1", "CC#N"];
        let ids: Vec<String> = (0..smiles.len()).map(|i| format!("m{i}")).collect();
        let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        let graphs = mols.iter().map(|m| featurize(m).unwrap()).collect();
        let fps: Vec<ModalityEmbedding> = ids
            .iter()
            .zip(&mols)
            .map(|(id, m)| ModalityEmbedding::vector(Modality::Fingerprint, id.clone(), crate::fingerprint::ecfp4(m).to_dense()).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let peaks: Vec<ModalityEmbedding> = ids
            .iter()
            .zip(&mols)
            .map(|(id, m)| {
                ModalityEmbedding::peaks(id.clone(), super::super::synthetic_ppm(&mut rng, m), &Default::default()).unwrap()
            })
            .collect();
        let img: Vec<ModalityEmbedding> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ModalityEmbedding::vector(Modality::Image, id.clone(), vec![1.0, i as f64, (i * i) as f64 % 5.0]).unwrap())
            .collect();
        let map = BTreeMap::from([(Modality::Fingerprint, fps), (Modality::NmrPeak, peaks), (Modality::Image, img[..7].to_vec())]);
        (ids, graphs, map)
    }

    #[test]
    fn replicas_and_determinism() {
        let (ids, graphs, embs) = corpus();
        let cfg = PretrainConfig {
            modalities: vec![Modality::Fingerprint, Modality::NmrPeak, Modality::Image],
            early_weights: Some(vec![0.5, 0.5]),
            ..tiny()
        };
        let a = pretrain(&ids, &graphs, &embs, &cfg).unwrap();
        let names: Vec<&str> = a.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["fingerprint", "nmr_peak", "image", "early"]);
        assert_eq!(a[2].molecules, 7);
        assert_eq!(a[3].molecules, 7);
        // 9 molecules in batches of 4 leaves a single-molecule batch each epoch
        assert_eq!(a[0].skipped_batches, 3);
        let b = pretrain(&ids, &graphs, &embs, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.loss_history[0].to_bits(), y.loss_history[0].to_bits());
            assert_eq!(x.params, y.params);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (ids, graphs, embs) = corpus();
        let cfg = PretrainConfig { lr: 0.0, ..tiny() };
        let run = &pretrain(&ids, &graphs, &embs, &cfg).unwrap()[0];
        let encoder = Encoder::new(cfg.encoder, ENCODER_PREFIX).unwrap();
        let init = encoder.init_params(&mut ChaCha8Rng::seed_from_u64(super::super::sub_seed(cfg.seed, "fingerprint")));
        for ((n1, t1), (n2, t2)) in run.params.iter().zip(init.iter()) {
            assert_eq!(n1, n2);
            let a: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn self_supervised_and_dataset_scope() {
        let (ids, graphs, embs) = corpus();
        for objective in [Objective::Contrastive, Objective::Triplet] {
            let cfg = PretrainConfig { objective, ..tiny() };
            let run = &pretrain(&ids, &graphs, &embs, &cfg).unwrap()[0];
            assert!(run.loss_history.iter().all(|v| v.is_finite()));
        }
        let cfg = PretrainConfig {
            target_scope: TargetScope::Dataset,
            ..tiny()
        };
        assert!(pretrain(&ids, &graphs, &embs, &cfg).unwrap()[0].loss_history[0].is_finite());
    }

    #[test]
    fn missing_modality_is_an_error() {
        let (ids, graphs, embs) = corpus();
        let cfg = PretrainConfig {
            modalities: vec![Modality::Smiles],
            ..tiny()
        };
        assert!(matches!(pretrain(&ids, &graphs, &embs, &cfg), Err(PipelineError::NoData(_))));
    }

    #[test]
    fn checkpoint_roundtrip_checks_config() {
        let (ids, graphs, embs) = corpus();
        let cfg = tiny();
        let runs = pretrain(&ids, &graphs, &embs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = save_pretrained(dir.path(), &runs, &cfg).unwrap();
        assert_eq!(load_pretrained(&paths[0], &cfg.encoder).unwrap(), runs[0].params);
        let other = EncoderConfig { depth: 3, ..cfg.encoder };
        assert!(matches!(load_pretrained(&paths[0], &other), Err(PipelineError::IncompatibleCheckpoint(_))));
    }
}
