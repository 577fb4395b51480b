use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde_json::json;

use relmol::chem::{featurize, murcko_scaffold, parse_smiles, read_dataset, write_dataset, Dataset, DirectedEdgeGraph, Molecule};
use relmol::fingerprint::morgan_fingerprint;
use relmol::fusion::{decomposition_residual, write_contributions};
use relmol::output::write_matrix_csv;
use relmol::pipeline::{
    evaluate_predictions, finetune, load_pretrained, pretrain, read_labels, read_predictions, save_pretrained, scaffold_keys, scaffold_split,
    sensitivity_analysis, synthetic_corpus, write_predictions, FinetunedModel, FusionMode, Partition,
};
use relmol::similarity::{load_embeddings, target_matrix, write_embeddings_csv, write_ppm_jsonl, Level, Modality, ModalityEmbedding};

use crate::config::RunConfig;
use crate::{Command, MolInput, Outcome};

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Parse(_) => "parse",
        Command::Fingerprint { .. } => "fingerprint",
        Command::Similarity { .. } => "similarity",
        Command::Pretrain { .. } => "pretrain",
        Command::Finetune { .. } => "finetune",
        Command::Evaluate { .. } => "evaluate",
        Command::Sensitivity { .. } => "sensitivity",
        Command::FuseReport { .. } => "fuse-report",
        Command::Synthesize { .. } => "synthesize",
    }
}

pub fn run(cmd: &Command, cfg: &mut RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Parse(input) => parse(input),
        Command::Fingerprint { input, radius, width } => {
            if let Some(r) = radius {
                cfg.fingerprint.radius = *r;
            }
            if let Some(w) = width {
                cfg.fingerprint.width = *w;
            }
            fingerprint(input, cfg)
        }
        Command::Similarity { modality, input, out } => similarity(*modality, input, out.as_deref(), cfg),
        Command::Pretrain {
            data,
            modalities,
            embeddings,
            out_dir,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.pretrain.epochs = *e;
            }
            run_pretrain(data, modalities, embeddings, out_dir, cfg)
        }
        Command::Finetune {
            data,
            mode,
            checkpoints,
            pred,
            contributions,
            model_out,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.finetune.epochs = *e;
            }
            run_finetune(data, mode, checkpoints.as_deref(), pred, contributions.as_deref(), model_out.as_deref(), cfg)
        }
        Command::Evaluate { pred, labels, metric } => {
            let preds = read_predictions(open(pred)?).with_context(|| format!("predictions {}", pred.display()))?;
            let truth = read_labels(open(labels)?).with_context(|| format!("labels {}", labels.display()))?;
            let m = evaluate_predictions(&preds, &truth, *metric)?;
            println!("{}", json!({ "metric": metric_name(&m.kind), "value": m.value, "per_task": m.per_task }));
            Ok(Outcome {
                inputs: vec![pred.clone(), labels.clone()],
                metrics: BTreeMap::from([(metric_name(&m.kind), m.value)]),
            })
        }
        Command::Sensitivity {
            data,
            embeddings,
            task,
            threshold,
            out,
        } => {
            if let Some(t) = threshold {
                cfg.sensitivity.threshold = *t;
            }
            run_sensitivity(data, embeddings, task.as_deref(), out.as_deref(), cfg)
        }
        Command::FuseReport { model, data, out } => fuse_report(model, data, out.as_deref()),
        Command::Synthesize { out_dir, molecules } => {
            if let Some(n) = molecules {
                cfg.synthetic.molecules = *n;
            }
            synthesize(out_dir, cfg)
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// `--out` file, or stdout. Stdout output is collected and written in one
/// piece by [`Sink::finish`], so a closed pipe surfaces as a plain io error.
enum Sink {
    File(BufWriter<File>),
    Stdout(Vec<u8>),
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Sink::File(f) => f.write(buf),
            Sink::Stdout(v) => v.write(buf),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Sink::File(f) => f.flush(),
            Sink::Stdout(_) => Ok(()),
        }
    }
}

impl Sink {
    fn finish(self) -> Result<()> {
        match self {
            Sink::File(mut f) => f.flush()?,
            Sink::Stdout(v) => {
                let mut out = std::io::stdout().lock();
                out.write_all(&v)?;
                out.flush()?;
            }
        }
        Ok(())
    }
}

fn sink(out: Option<&Path>) -> Result<Sink> {
    Ok(match out {
        Some(p) => Sink::File(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Sink::Stdout(Vec::new()),
    })
}

fn metric_name(kind: &relmol::pipeline::MetricKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_else(|| format!("{kind:?}"))
}

type Named = (String, Molecule);

/// `(id, molecule)` pairs from `--smiles` (id = the SMILES) or a dataset.
fn molecules(input: &MolInput) -> Result<(Vec<Named>, Vec<PathBuf>)> {
    if let Some(s) = &input.smiles {
        let mol = parse_smiles(s).map_err(|e| anyhow!("SMILES '{s}': {e}"))?;
        return Ok((vec![(s.clone(), mol)], Vec::new()));
    }
    let path = input.input.as_ref().expect("clap requires --smiles or --in");
    let data = read_dataset(path).with_context(|| format!("dataset {}", path.display()))?;
    let mols = data.molecules()?;
    Ok((data.records.into_iter().map(|r| r.id).zip(mols).collect(), vec![path.clone()]))
}

fn mol_summary(id: &str, mol: &Molecule) -> serde_json::Value {
    let atoms: Vec<_> = (0..mol.num_atoms())
        .map(|i| {
            let a = &mol.atoms()[i];
            json!({
                "index": i,
                "symbol": a.symbol,
                "charge": a.charge,
                "hydrogens": a.total_h(),
                "aromatic": a.aromatic,
                "in_ring": mol.atom_in_ring(i),
                "degree": mol.degree(i),
            })
        })
        .collect();
    let bonds: Vec<_> = mol
        .bonds()
        .iter()
        .map(|b| json!({ "begin": b.begin, "end": b.end, "order": b.order, "in_ring": b.in_ring }))
        .collect();
    json!({
        "id": id,
        "smiles": mol.source(),
        "num_atoms": mol.num_atoms(),
        "num_bonds": mol.num_bonds(),
        "scaffold": murcko_scaffold(mol).canonical_key,
        "atoms": atoms,
        "bonds": bonds,
    })
}

fn parse(input: &MolInput) -> Result<Outcome> {
    let (mols, inputs) = molecules(input)?;
    let mut out = sink(input.out.as_deref())?;
    for (id, mol) in &mols {
        writeln!(out, "{}", mol_summary(id, mol))?;
    }
    out.finish()?;
    let atoms: usize = mols.iter().map(|(_, m)| m.num_atoms()).sum();
    Ok(Outcome {
        inputs,
        metrics: BTreeMap::from([("molecules".into(), mols.len() as f64), ("atoms".into(), atoms as f64)]),
    })
}

fn fingerprint(input: &MolInput, cfg: &RunConfig) -> Result<Outcome> {
    let (mols, inputs) = molecules(input)?;
    let mut w = csv::Writer::from_writer(sink(input.out.as_deref())?);
    w.write_record(["id", "fingerprint"])?;
    let mut bits = 0usize;
    for (id, mol) in &mols {
        let fp = morgan_fingerprint(mol, cfg.fingerprint.radius, cfg.fingerprint.width)?;
        bits += fp.set_count();
        w.write_record([id.as_str(), fp.to_hex().as_str()])?;
    }
    w.into_inner().map_err(|e| anyhow!("{}", e.error()))?.finish()?;
    Ok(Outcome {
        inputs,
        metrics: BTreeMap::from([("molecules".into(), mols.len() as f64), ("bits_set".into(), bits as f64)]),
    })
}

fn is_dataset(path: &Path) -> Result<bool> {
    let mut first = String::new();
    open(path)?.read_line(&mut first)?;
    let mut cols = first.trim().split(',').map(str::trim);
    Ok(cols.next() == Some("id") && cols.next() == Some("smiles"))
}

fn fingerprint_embeddings(data: &Dataset, cfg: &RunConfig) -> Result<Vec<ModalityEmbedding>> {
    let mols = data.molecules()?;
    data.records
        .iter()
        .zip(&mols)
        .map(|(r, m)| {
            let fp = morgan_fingerprint(m, cfg.fingerprint.radius, cfg.fingerprint.width)?;
            Ok(ModalityEmbedding::vector(Modality::Fingerprint, r.id.clone(), fp.to_dense())?)
        })
        .collect()
}

fn read_modality(path: &Path, modality: Modality, cfg: &RunConfig) -> Result<Vec<ModalityEmbedding>> {
    if modality == Modality::Fingerprint && is_dataset(path)? {
        let data = read_dataset(path).with_context(|| format!("dataset {}", path.display()))?;
        return fingerprint_embeddings(&data, cfg);
    }
    load_embeddings(path, modality, &cfg.ppm).with_context(|| format!("{modality} embeddings {}", path.display()))
}

fn similarity(modality: Modality, input: &Path, out: Option<&Path>, cfg: &RunConfig) -> Result<Outcome> {
    let embs = read_modality(input, modality, cfg)?;
    let t = target_matrix(&embs, modality.level(), &cfg.similarity)?;
    let mut w = sink(out)?;
    write_matrix_csv(&mut w, t.ids(), t.matrix())?;
    w.finish()?;
    let mut metrics = BTreeMap::from([("instances".to_string(), t.ids().len() as f64)]);
    if modality.level() == Level::Atom {
        metrics.insert("molecules".into(), embs.len() as f64);
    }
    Ok(Outcome {
        inputs: vec![input.to_path_buf()],
        metrics,
    })
}

/// `modality=path` pairs.
fn embedding_args(args: &[String]) -> Result<Vec<(Modality, PathBuf)>> {
    let mut seen = BTreeMap::new();
    for a in args {
        let (m, p) = a.split_once('=').ok_or_else(|| anyhow!("--embeddings expects MODALITY=PATH, got '{a}'"))?;
        let m: Modality = m.trim().parse().map_err(|e: String| anyhow!(e))?;
        if seen.insert(m, PathBuf::from(p)).is_some() {
            bail!("--embeddings given twice for {m}");
        }
    }
    Ok(seen.into_iter().collect())
}

fn graphs_of(data: &Dataset) -> Result<Vec<DirectedEdgeGraph>> {
    data.molecules()?.iter().map(|m| featurize(m).map_err(Into::into)).collect()
}

fn run_pretrain(data_path: &Path, modalities: &str, embeddings: &[String], out_dir: &Path, cfg: &mut RunConfig) -> Result<Outcome> {
    let data = read_dataset(data_path).with_context(|| format!("dataset {}", data_path.display()))?;
    let graphs = graphs_of(&data)?;
    let ids: Vec<String> = data.records.iter().map(|r| r.id.clone()).collect();
    let mut inputs = vec![data_path.to_path_buf()];
    let mut embs = BTreeMap::new();
    for (m, path) in embedding_args(embeddings)? {
        embs.insert(m, read_modality(&path, m, cfg)?);
        inputs.push(path);
    }
    if let Entry::Vacant(slot) = embs.entry(Modality::Fingerprint) {
        slot.insert(fingerprint_embeddings(&data, cfg)?);
    }
    cfg.pretrain.modalities = if modalities.trim() == "all" {
        embs.keys().copied().collect()
    } else {
        modalities
            .split(',')
            .map(|m| m.trim().parse::<Modality>().map_err(|e| anyhow!(e)))
            .collect::<Result<Vec<_>>>()?
    };
    for m in &cfg.pretrain.modalities {
        if !embs.contains_key(m) {
            bail!("no embeddings for modality {m}; pass --embeddings {m}=PATH");
        }
    }
    info!("pretraining {:?} on {} molecules", cfg.pretrain.modalities, data.len());
    let runs = pretrain(&ids, &graphs, &embs, &cfg.pretrain)?;
    let paths = save_pretrained(out_dir, &runs, &cfg.pretrain)?;

    let mut w = csv::Writer::from_path(out_dir.join("loss_history.csv"))?;
    let mut header = vec!["epoch".to_string()];
    header.extend(runs.iter().map(|r| r.name.clone()));
    w.write_record(&header)?;
    for epoch in 0..cfg.pretrain.epochs {
        let mut row = vec![epoch.to_string()];
        row.extend(runs.iter().map(|r| r.loss_history.get(epoch).map_or(String::new(), |&v| relmol::output::fmt_real(v))));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut metrics = BTreeMap::new();
    let summary: Vec<_> = runs
        .iter()
        .zip(&paths)
        .map(|(r, p)| {
            let last = r.loss_history.last().copied().unwrap_or(f64::NAN);
            metrics.insert(format!("final_loss.{}", r.name), last);
            json!({
                "name": r.name,
                "checkpoint": p,
                "molecules": r.molecules,
                "skipped_batches": r.skipped_batches,
                "final_loss": last,
            })
        })
        .collect();
    println!("{}", json!({ "runs": summary }));
    Ok(Outcome { inputs, metrics })
}

#[allow(clippy::too_many_arguments)]
fn run_finetune(
    data_path: &Path,
    mode: &FusionMode,
    checkpoint_dir: Option<&Path>,
    pred: &Path,
    contributions: Option<&Path>,
    model_out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<Outcome> {
    let data = read_dataset(data_path).with_context(|| format!("dataset {}", data_path.display()))?;
    let mols = data.molecules()?;
    let graphs: Vec<DirectedEdgeGraph> = mols.iter().map(featurize).collect::<Result<_, _>>()?;
    let mut inputs = vec![data_path.to_path_buf()];
    let mut checkpoints = BTreeMap::new();
    for name in mode.branches().into_iter().flatten() {
        let dir = checkpoint_dir.ok_or_else(|| anyhow!("mode {mode} needs --checkpoints"))?;
        let path = dir.join(format!("{name}.ckpt"));
        if !path.exists() {
            bail!("missing checkpoint {} for mode {mode}", path.display());
        }
        checkpoints.insert(name, load_pretrained(&path, &cfg.finetune.encoder)?);
        inputs.push(path);
    }
    let split = scaffold_split(&scaffold_keys(&mols), cfg.split, cfg.finetune.seed)?;
    let report = finetune(&data, &graphs, &split, mode, &checkpoints, &cfg.finetune)?;

    let mut w = sink(Some(pred))?;
    write_predictions(&mut w, &report.predictions)?;
    w.finish()?;
    let metric = metric_name(&report.test_metric.kind);
    let mut metrics = BTreeMap::from([
        (format!("test.{metric}"), report.test_metric.value),
        ("best_epoch".to_string(), report.best_epoch as f64),
    ]);
    if let Some(v) = &report.valid_metric {
        metrics.insert(format!("valid.{metric}"), v.value);
    }
    let mut residual = None;
    if let Some(rows) = &report.contributions {
        let r = decomposition_residual(rows);
        metrics.insert("late.residual".into(), r);
        residual = Some(r);
        if let Some(path) = contributions {
            let mut w = sink(Some(path))?;
            write_contributions(&mut w, rows)?;
            w.finish()?;
        }
    } else if contributions.is_some() {
        bail!("--contributions needs a late fusion mode, got {mode}");
    }
    if let Some(path) = model_out {
        report.model.save(path)?;
    }
    println!(
        "{}",
        json!({
            "mode": mode.to_string(),
            "metric": metric,
            "test": report.test_metric.value,
            "valid": report.valid_metric.as_ref().map(|m| m.value),
            "per_task": report.test_metric.per_task,
            "best_epoch": report.best_epoch,
            "train_size": split.count(Partition::Train),
            "valid_size": split.count(Partition::Valid),
            "test_size": split.count(Partition::Test),
            "late_residual": residual,
        })
    );
    Ok(Outcome { inputs, metrics })
}

fn run_sensitivity(data_path: &Path, embeddings: &[String], task: Option<&str>, out: Option<&Path>, cfg: &RunConfig) -> Result<Outcome> {
    let data = read_dataset(data_path).with_context(|| format!("dataset {}", data_path.display()))?;
    let task_idx = match task {
        None => 0,
        Some(t) => data
            .task_names
            .iter()
            .position(|n| n == t)
            .ok_or_else(|| anyhow!("no task column '{t}'"))?,
    };
    let mut inputs = vec![data_path.to_path_buf()];
    let mut embs = BTreeMap::new();
    for (m, path) in embedding_args(embeddings)? {
        embs.insert(m, read_modality(&path, m, cfg)?);
        inputs.push(path);
    }
    let report = sensitivity_analysis(&data, task_idx, &embs, cfg.sensitivity.threshold)?;
    let mut w = sink(out)?;
    report.write_csv(&mut w)?;
    w.finish()?;
    let mut metrics: BTreeMap<String, f64> = report.per_modality.iter().map(|(m, r)| (format!("pearson.{m}"), *r)).collect();
    metrics.insert("top1".into(), report.top1);
    metrics.insert("concat".into(), report.concat);
    metrics.insert("gain".into(), report.gain);
    Ok(Outcome { inputs, metrics })
}

fn fuse_report(model_path: &Path, data_path: &Path, out: Option<&Path>) -> Result<Outcome> {
    let model = FinetunedModel::load(model_path).with_context(|| format!("model {}", model_path.display()))?;
    let data = read_dataset(data_path).with_context(|| format!("dataset {}", data_path.display()))?;
    let graphs = graphs_of(&data)?;
    let ids: Vec<String> = data.records.iter().map(|r| r.id.clone()).collect();
    let refs: Vec<&DirectedEdgeGraph> = graphs.iter().collect();
    let rows = model.contributions(&ids, &refs)?;
    let mut w = sink(out)?;
    write_contributions(&mut w, &rows)?;
    w.finish()?;
    Ok(Outcome {
        inputs: vec![model_path.to_path_buf(), data_path.to_path_buf()],
        metrics: BTreeMap::from([("residual".into(), decomposition_residual(&rows))]),
    })
}

fn synthesize(out_dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let corpus = synthetic_corpus(&cfg.synthetic)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_dataset(File::create(out_dir.join("dataset.csv"))?, &corpus.dataset)?;
    for (m, embs) in &corpus.embeddings {
        if m.level() == Level::Atom {
            write_ppm_jsonl(BufWriter::new(File::create(out_dir.join(format!("{m}.jsonl")))?), embs)?;
        } else {
            write_embeddings_csv(BufWriter::new(File::create(out_dir.join(format!("{m}.csv")))?), embs)?;
        }
    }
    let positives = corpus.dataset.records.iter().filter(|r| r.labels[0] == Some(1.0)).count();
    let scaffolds: std::collections::BTreeSet<String> = scaffold_keys(&corpus.molecules).into_iter().collect();
    println!("{}", json!({ "molecules": corpus.dataset.len(), "positives": positives, "scaffolds": scaffolds.len(), "out_dir": out_dir }));
    Ok(Outcome {
        inputs: Vec::new(),
        metrics: BTreeMap::from([
            ("molecules".into(), corpus.dataset.len() as f64),
            ("positives".into(), positives as f64),
        ]),
    })
}
