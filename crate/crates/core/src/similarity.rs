//! Target similarity matrices.
//!
//! Each modality supplies a raw similarity between instances: cosine for
//! dense embeddings, Tanimoto for fingerprint bits and an inverse-distance
//! kernel over NMR peak positions for atoms. Raw similarities are turned
//! into row-stochastic targets by a row softmax.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{decode_records, softmax, NumericError, Tensor};

pub const DEFAULT_TAU1: f64 = 1e-5;
pub const DEFAULT_TAU2: f64 = 10.0;
/// Largest atom count for which one atom-level matrix is built.
pub const ATOM_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} instances, got {got}")]
    TooFewInstances { need: usize, got: usize },
    #[error("expected modality {expected}, found {found}")]
    MixedModalities { expected: Modality, found: Modality },
    #[error("no atom in the batch carries a ppm value")]
    NoPeaks,
    #[error("{count} ppm-labelled atoms exceed the chunk size {cap}; use atom_target_chunks")]
    ChunkRequired { count: usize, cap: usize },
    #[error("invalid embedding for '{id}': {reason}")]
    InvalidEmbedding { id: String, reason: String },
    #[error("not a target matrix: {0}")]
    NotStochastic(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Smiles,
    Image,
    NmrSpectrum,
    Fingerprint,
    NmrPeak,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Smiles,
        Modality::Image,
        Modality::NmrSpectrum,
        Modality::Fingerprint,
        Modality::NmrPeak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Smiles => "smiles",
            Modality::Image => "image",
            Modality::NmrSpectrum => "nmr_spectrum",
            Modality::Fingerprint => "fingerprint",
            Modality::NmrPeak => "nmr_peak",
        }
    }

    pub fn level(self) -> Level {
        if self == Modality::NmrPeak {
            Level::Atom
        } else {
            Level::Graph
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modality '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Graph,
    Atom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingData {
    Vector(Vec<f64>),
    /// atom index -> ppm
    Peaks(BTreeMap<usize, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEmbedding {
    pub modality: Modality,
    pub id: String,
    pub data: EmbeddingData,
}

/// Accepted ppm window and the narrower window outside which a warning is logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpmRange {
    pub min: f64,
    pub max: f64,
    pub warn_min: f64,
    pub warn_max: f64,
}

impl Default for PpmRange {
    fn default() -> Self {
        PpmRange {
            min: -50.0,
            max: 350.0,
            warn_min: 0.0,
            warn_max: 200.0,
        }
    }
}

impl ModalityEmbedding {
    pub fn vector(modality: Modality, id: impl Into<String>, values: Vec<f64>) -> Result<Self, SimilarityError> {
        let e = ModalityEmbedding {
            modality,
            id: id.into(),
            data: EmbeddingData::Vector(values),
        };
        e.validate(&PpmRange::default())?;
        Ok(e)
    }

    pub fn peaks(id: impl Into<String>, peaks: BTreeMap<usize, f64>, range: &PpmRange) -> Result<Self, SimilarityError> {
        let e = ModalityEmbedding {
            modality: Modality::NmrPeak,
            id: id.into(),
            data: EmbeddingData::Peaks(peaks),
        };
        e.validate(range)?;
        Ok(e)
    }

    pub fn validate(&self, range: &PpmRange) -> Result<(), SimilarityError> {
        let bad = |reason: String| SimilarityError::InvalidEmbedding {
            id: self.id.clone(),
            reason,
        };
        match (&self.data, self.modality) {
            (EmbeddingData::Vector(_), Modality::NmrPeak) => Err(bad("nmr_peak needs a ppm map".into())),
            (EmbeddingData::Peaks(_), m) if m != Modality::NmrPeak => Err(bad(format!("{m} needs a vector"))),
            (EmbeddingData::Vector(v), _) => {
                if v.is_empty() {
                    Err(bad("empty vector".into()))
                } else if v.iter().any(|x| !x.is_finite()) {
                    Err(bad("non-finite value".into()))
                } else {
                    Ok(())
                }
            }
            (EmbeddingData::Peaks(p), _) => {
                for (&atom, &ppm) in p {
                    if !ppm.is_finite() || ppm < range.min || ppm > range.max {
                        return Err(bad(format!("atom {atom}: ppm {ppm} outside [{}, {}]", range.min, range.max)));
                    }
                    if ppm < range.warn_min || ppm > range.warn_max {
                        log::warn!("{}: atom {atom} ppm {ppm} is unusual", self.id);
                    }
                }
                Ok(())
            }
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match &self.data {
            EmbeddingData::Vector(v) => Some(v),
            EmbeddingData::Peaks(_) => None,
        }
    }
}

/// Row-stochastic matrix over an ordered instance list.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSimilarityMatrix {
    ids: Vec<String>,
    t: Tensor,
}

impl TargetSimilarityMatrix {
    /// Rows must be non-negative and sum to 1 within `1e-9`.
    pub fn new(ids: Vec<String>, t: Tensor) -> Result<Self, SimilarityError> {
        let n = ids.len();
        if t.shape() != [n, n] {
            return Err(SimilarityError::NotStochastic(format!(
                "shape {:?} for {n} ids",
                t.shape()
            )));
        }
        check_stochastic(&t, 1e-9)?;
        Ok(TargetSimilarityMatrix { ids, t })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Tensor {
        &self.t
    }

    pub fn into_matrix(self) -> Tensor {
        self.t
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows and columns restricted to `idx`, renormalized.
    pub fn submatrix(&self, idx: &[usize]) -> Result<Self, SimilarityError> {
        let k = idx.len();
        let mut data = Vec::with_capacity(k * k);
        for &i in idx {
            let row: Vec<f64> = idx.iter().map(|&j| self.t.get(i, j)).collect();
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(SimilarityError::NotStochastic(format!("row {i} vanishes on the subset")));
            }
            data.extend(row.into_iter().map(|v| v / s));
        }
        let ids = idx.iter().map(|&i| self.ids[i].clone()).collect();
        TargetSimilarityMatrix::new(ids, Tensor::matrix(k, k, data)?)
    }
}

pub(crate) fn check_stochastic(t: &Tensor, tol: f64) -> Result<(), SimilarityError> {
    for r in 0..t.rows() {
        let row = t.row(r);
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SimilarityError::NotStochastic(format!("row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(SimilarityError::NotStochastic(format!("row {r} sums to {s}")));
        }
    }
    Ok(())
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::LengthMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `a.b / (|a|^2 + |b|^2 - a.b)`; the set Tanimoto on 0/1 vectors, 1.0 for two zero vectors.
pub fn tanimoto_dense(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::LengthMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let denom = u.iter().map(|a| a * a).sum::<f64>() + v.iter().map(|a| a * a).sum::<f64>() - dot;
    Ok(if denom == 0.0 { 1.0 } else { dot / denom })
}

/// `tau2 / (|ppm_l - ppm_m| + tau1)`
pub fn nmr_peak_similarity(ppm_l: f64, ppm_m: f64, tau1: f64, tau2: f64) -> f64 {
    debug_assert!(tau1 > 0.0 && tau2 > 0.0);
    tau2 / ((ppm_l - ppm_m).abs() + tau1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetOptions {
    /// Keep self-pairs in the softmax. When false the diagonal is zero.
    pub include_diagonal: bool,
    pub tau1: f64,
    pub tau2: f64,
    pub atom_chunk: usize,
}

impl Default for TargetOptions {
    fn default() -> Self {
        TargetOptions {
            include_diagonal: true,
            tau1: DEFAULT_TAU1,
            tau2: DEFAULT_TAU2,
            atom_chunk: ATOM_CHUNK,
        }
    }
}

fn single_modality(embeddings: &[ModalityEmbedding]) -> Result<Modality, SimilarityError> {
    let first = embeddings
        .first()
        .ok_or(SimilarityError::TooFewInstances { need: 2, got: 0 })?
        .modality;
    if let Some(other) = embeddings.iter().find(|e| e.modality != first) {
        return Err(SimilarityError::MixedModalities {
            expected: first,
            found: other.modality,
        });
    }
    Ok(first)
}

/// Pairwise raw similarities of graph-level embeddings.
pub fn raw_similarities(embeddings: &[ModalityEmbedding]) -> Result<Tensor, SimilarityError> {
    let modality = single_modality(embeddings)?;
    let vectors: Vec<&[f64]> = embeddings
        .iter()
        .map(|e| {
            e.as_vector().ok_or_else(|| SimilarityError::InvalidEmbedding {
                id: e.id.clone(),
                reason: "atom-level data at graph level".into(),
            })
        })
        .collect::<Result<_, _>>()?;
    let sim = if modality == Modality::Fingerprint {
        tanimoto_dense
    } else {
        cosine_sim
    };
    let n = vectors.len();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let s = sim(vectors[i], vectors[j])?;
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    Ok(m)
}

/// Row softmax of raw similarities; excluded diagonals get probability 0.
pub fn normalize_rows(raw: &Tensor, include_diagonal: bool) -> Tensor {
    let n = raw.rows();
    let mut out = Tensor::zeros(&[n, raw.cols()]);
    for i in 0..n {
        let row = raw.row(i);
        if include_diagonal {
            out.row_mut(i).copy_from_slice(&softmax(row));
        } else {
            let off: Vec<f64> = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
            let p = softmax(&off);
            let dst = out.row_mut(i);
            for (k, j) in (0..dst.len()).filter(|&j| j != i).enumerate() {
                dst[j] = p[k];
            }
        }
    }
    out
}

/// Graph-level target matrix, or the atom-level matrix when all atoms fit in one chunk.
pub fn target_matrix(embeddings: &[ModalityEmbedding], level: Level, opts: &TargetOptions) -> Result<TargetSimilarityMatrix, SimilarityError> {
    match level {
        Level::Graph => {
            if embeddings.len() < 2 {
                return Err(SimilarityError::TooFewInstances {
                    need: 2,
                    got: embeddings.len(),
                });
            }
            let raw = raw_similarities(embeddings)?;
            let t = normalize_rows(&raw, opts.include_diagonal);
            TargetSimilarityMatrix::new(embeddings.iter().map(|e| e.id.clone()).collect(), t)
        }
        Level::Atom => {
            let atoms = peak_atoms(embeddings)?;
            if atoms.len() > opts.atom_chunk {
                return Err(SimilarityError::ChunkRequired {
                    count: atoms.len(),
                    cap: opts.atom_chunk,
                });
            }
            atom_matrix(&atoms, opts)
        }
    }
}

/// Atom-level targets split into consecutive chunks of at most `opts.atom_chunk`
/// atoms, each normalized on its own.
pub fn atom_target_chunks(embeddings: &[ModalityEmbedding], opts: &TargetOptions) -> Result<Vec<TargetSimilarityMatrix>, SimilarityError> {
    let atoms = peak_atoms(embeddings)?;
    atoms
        .chunks(opts.atom_chunk.max(2))
        .map(|chunk| atom_matrix(chunk, opts))
        .collect()
}

/// Atom ids are `"{molecule id}:{atom index}"`.
pub fn atom_id(mol: &str, atom: usize) -> String {
    format!("{mol}:{atom}")
}

fn peak_atoms(embeddings: &[ModalityEmbedding]) -> Result<Vec<(String, f64)>, SimilarityError> {
    let modality = single_modality(embeddings)?;
    if modality != Modality::NmrPeak {
        return Err(SimilarityError::MixedModalities {
            expected: Modality::NmrPeak,
            found: modality,
        });
    }
    let mut atoms = Vec::new();
    for e in embeddings {
        if let EmbeddingData::Peaks(p) = &e.data {
            atoms.extend(p.iter().map(|(&a, &ppm)| (atom_id(&e.id, a), ppm)));
        }
    }
    if atoms.is_empty() {
        return Err(SimilarityError::NoPeaks);
    }
    Ok(atoms)
}

fn atom_matrix(atoms: &[(String, f64)], opts: &TargetOptions) -> Result<TargetSimilarityMatrix, SimilarityError> {
    let n = atoms.len();
    if n < 2 {
        return Err(SimilarityError::TooFewInstances { need: 2, got: n });
    }
    let mut raw = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            raw.set(i, j, nmr_peak_similarity(atoms[i].1, atoms[j].1, opts.tau1, opts.tau2));
        }
    }
    let t = normalize_rows(&raw, opts.include_diagonal);
    TargetSimilarityMatrix::new(atoms.iter().map(|a| a.0.clone()).collect(), t)
}

/// CSV with header `id,dim,values...`: each row is `id, dim, v_1, ..., v_dim`.
pub fn read_embeddings_csv<R: Read>(reader: R, modality: Modality) -> Result<Vec<ModalityEmbedding>, SimilarityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimilarityError::Parse {
            line: line + 1,
            reason: e.to_string(),
        })?;
        let parse_err = |reason: String| SimilarityError::Parse { line: line + 1, reason };
        if line == 0 {
            if rec.get(0) != Some("id") || rec.get(1) != Some("dim") {
                return Err(parse_err("header must start with id,dim".into()));
            }
            continue;
        }
        let id = rec.get(0).unwrap_or_default().to_string();
        let dim: usize = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| parse_err("dim is not an integer".into()))?;
        if rec.len() != dim + 2 {
            return Err(parse_err(format!("expected {dim} values, found {}", rec.len().saturating_sub(2))));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(format!("bad number '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ModalityEmbedding::vector(modality, id, values)?);
    }
    Ok(out)
}

pub fn write_embeddings_csv<W: std::io::Write>(out: W, embeddings: &[ModalityEmbedding]) -> Result<(), SimilarityError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["id", "dim", "values..."]).map_err(csv_io)?;
    for e in embeddings {
        let v = e.as_vector().ok_or_else(|| SimilarityError::InvalidEmbedding {
            id: e.id.clone(),
            reason: "only vector embeddings are written as CSV".into(),
        })?;
        let mut rec = vec![e.id.clone(), v.len().to_string()];
        rec.extend(v.iter().map(|&x| crate::output::fmt_real(x)));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SimilarityError {
    SimilarityError::Io(std::io::Error::other(e))
}

/// Embeddings stored in the binary parameter container, one record per id.
pub fn read_embeddings_container(bytes: &[u8], modality: Modality) -> Result<Vec<ModalityEmbedding>, SimilarityError> {
    let store = decode_records(bytes)?;
    store
        .iter()
        .map(|(id, t)| ModalityEmbedding::vector(modality, id.clone(), t.data().to_vec()))
        .collect()
}

#[derive(Deserialize)]
struct PpmLine {
    id: String,
    peaks: BTreeMap<String, f64>,
}

/// JSON lines `{"id": ..., "peaks": {"<atom index>": ppm}}`.
pub fn read_ppm_jsonl<R: Read>(reader: R, range: &PpmRange) -> Result<Vec<ModalityEmbedding>, SimilarityError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| SimilarityError::Parse { line: i + 1, reason };
        let rec: PpmLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let peaks = rec
            .peaks
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|a| (a, v))
                    .map_err(|_| parse_err(format!("atom index '{k}' is not an integer")))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        out.push(ModalityEmbedding::peaks(rec.id, peaks, range)?);
    }
    Ok(out)
}

/// Inverse of [`read_ppm_jsonl`]; vector embeddings are rejected.
pub fn write_ppm_jsonl<W: std::io::Write>(mut out: W, embeddings: &[ModalityEmbedding]) -> Result<(), SimilarityError> {
    for e in embeddings {
        let EmbeddingData::Peaks(p) = &e.data else {
            return Err(SimilarityError::InvalidEmbedding {
                id: e.id.clone(),
                reason: "only peak lists are written as JSON lines".into(),
            });
        };
        let peaks: BTreeMap<String, f64> = p.iter().map(|(a, v)| (a.to_string(), *v)).collect();
        writeln!(out, "{}", serde_json::json!({ "id": e.id, "peaks": peaks }))?;
    }
    Ok(())
}

/// Peaks are read as JSON lines; vectors from a checkpoint container when the
/// file starts with its magic, otherwise from CSV.
pub fn load_embeddings(path: &Path, modality: Modality, range: &PpmRange) -> Result<Vec<ModalityEmbedding>, SimilarityError> {
    if modality == Modality::NmrPeak {
        return read_ppm_jsonl(std::fs::File::open(path)?, range);
    }
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(crate::numeric::CHECKPOINT_MAGIC) {
        read_embeddings_container(&bytes, modality)
    } else {
        read_embeddings_csv(bytes.as_slice(), modality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vecs(m: Modality, rows: &[&[f64]]) -> Vec<ModalityEmbedding> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| ModalityEmbedding::vector(m, format!("m{i}"), r.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(SimilarityError::ZeroVector)));
        assert!(cosine_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn peak_kernel_examples() {
        let k = |d: f64| nmr_peak_similarity(100.0, 100.0 + d, DEFAULT_TAU1, DEFAULT_TAU2);
        assert!((k(0.0) / 1e6 - 1.0).abs() < 1e-12);
        assert!((k(10.0) - 10.0 / 10.00001).abs() < 1e-12);
        assert!((k(190.0) - 0.0526316).abs() < 1e-6);
        assert_eq!(k(5.0), nmr_peak_similarity(105.0, 100.0, DEFAULT_TAU1, DEFAULT_TAU2));
    }

    #[test]
    fn identical_embeddings_give_uniform_rows() {
        let e = vecs(Modality::Image, &[&[1.0, 2.0], &[1.0, 2.0], &[2.0, 4.0], &[0.5, 1.0]]);
        let t = target_matrix(&e, Level::Graph, &TargetOptions::default()).unwrap();
        assert!(t.matrix().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_orthogonal_instances() {
        let e = vecs(Modality::Smiles, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = target_matrix(&e, Level::Graph, &TargetOptions::default()).unwrap();
        assert!((t.matrix().get(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((t.matrix().get(0, 1) - 0.268_941_421_369_995_1).abs() < 1e-12);
        let excl = TargetOptions {
            include_diagonal: false,
            ..TargetOptions::default()
        };
        let t = target_matrix(&e, Level::Graph, &excl).unwrap();
        assert_eq!(t.matrix().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn fingerprint_uses_tanimoto() {
        let e = vecs(Modality::Fingerprint, &[&[1.0, 1.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 1.0]]);
        let raw = raw_similarities(&e).unwrap();
        assert_eq!(raw.get(0, 1), 0.5);
        assert_eq!(raw.get(1, 1), 1.0);
    }

    #[test]
    fn preconditions() {
        let one = vecs(Modality::Image, &[&[1.0]]);
        assert!(target_matrix(&one, Level::Graph, &TargetOptions::default()).is_err());
        let mut mixed = vecs(Modality::Image, &[&[1.0], &[2.0]]);
        mixed[1].modality = Modality::Smiles;
        assert!(matches!(
            target_matrix(&mixed, Level::Graph, &TargetOptions::default()),
            Err(SimilarityError::MixedModalities { .. })
        ));
        let empty = vec![ModalityEmbedding::peaks("a", BTreeMap::new(), &PpmRange::default()).unwrap()];
        assert!(matches!(
            target_matrix(&empty, Level::Atom, &TargetOptions::default()),
            Err(SimilarityError::NoPeaks)
        ));
        assert!(ModalityEmbedding::vector(Modality::Image, "x", vec![]).is_err());
        assert!(ModalityEmbedding::vector(Modality::Image, "x", vec![f64::NAN]).is_err());
        let far = BTreeMap::from([(0, 400.0)]);
        assert!(ModalityEmbedding::peaks("x", far, &PpmRange::default()).is_err());
    }

    #[test]
    fn atom_level_and_chunking() {
        let range = PpmRange::default();
        let e = vec![
            ModalityEmbedding::peaks("a", BTreeMap::from([(0, 20.0), (1, 60.0)]), &range).unwrap(),
            ModalityEmbedding::peaks("b", BTreeMap::from([(2, 20.5)]), &range).unwrap(),
        ];
        let excl = TargetOptions {
            include_diagonal: false,
            ..TargetOptions::default()
        };
        let t = target_matrix(&e, Level::Atom, &excl).unwrap();
        assert_eq!(t.ids(), &["a:0", "a:1", "b:2"]);
        // the closest peak dominates
        assert!(t.matrix().get(0, 2) > t.matrix().get(0, 1));
        let small = TargetOptions { atom_chunk: 2, ..excl };
        assert!(matches!(
            target_matrix(&e, Level::Atom, &small),
            Err(SimilarityError::ChunkRequired { .. })
        ));
        let e3 = vec![
            e[0].clone(),
            e[1].clone(),
            ModalityEmbedding::peaks("c", BTreeMap::from([(0, 30.0)]), &range).unwrap(),
        ];
        let chunks = atom_target_chunks(&e3, &small).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].ids(), &["b:2", "c:0"]);
    }

    #[test]
    fn csv_and_jsonl_ingestion() {
        let text = "id,dim,values...\nm1,3,1.0,2.0,3.0\nm2,3,0,0,1\n";
        let e = read_embeddings_csv(text.as_bytes(), Modality::Image).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].as_vector().unwrap(), &[1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, &e).unwrap();
        assert_eq!(read_embeddings_csv(buf.as_slice(), Modality::Image).unwrap(), e);
        assert!(read_embeddings_csv("id,dim\nm1,2,1.0\n".as_bytes(), Modality::Image).is_err());

        let lines = "{\"id\": \"m1\", \"peaks\": {\"0\": 21.5, \"3\": 170.2}}\n\n{\"id\": \"m2\", \"peaks\": {}}\n";
        let p = read_ppm_jsonl(lines.as_bytes(), &PpmRange::default()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].data, EmbeddingData::Peaks(BTreeMap::from([(0, 21.5), (3, 170.2)])));
        assert!(read_ppm_jsonl("{\"id\": \"m\", \"peaks\": {\"x\": 1.0}}".as_bytes(), &PpmRange::default()).is_err());
    }

    #[test]
    fn container_ingestion() {
        let mut store = crate::numeric::ParamStore::new();
        store.insert("m1", Tensor::row_vector(vec![0.5, 0.25]));
        let bytes = crate::numeric::encode_records(&store);
        let e = read_embeddings_container(&bytes, Modality::NmrSpectrum).unwrap();
        assert_eq!(e[0].id, "m1");
        assert_eq!(e[0].as_vector().unwrap(), &[0.5, 0.25]);
    }

    proptest! {
        #[test]
        fn rows_stochastic_and_rank_preserving(rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 2..12)) {
            prop_assume!(rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-6)));
            let e: Vec<ModalityEmbedding> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| ModalityEmbedding::vector(Modality::Image, i.to_string(), r.clone()).unwrap())
                .collect();
            let raw = raw_similarities(&e).unwrap();
            let t = target_matrix(&e, Level::Graph, &TargetOptions::default()).unwrap();
            let n = e.len();
            for i in 0..n {
                let s: f64 = t.matrix().row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for j in 0..n {
                    prop_assert!(t.matrix().get(i, j) > 0.0);
                    for k in 0..n {
                        if raw.get(i, j) > raw.get(i, k) {
                            prop_assert!(t.matrix().get(i, j) >= t.matrix().get(i, k));
                        }
                    }
                }
            }
        }

        #[test]
        fn peak_kernel_symmetric_decreasing(a in -50.0f64..350.0, b in -50.0f64..350.0, extra in 0.001f64..10.0) {
            let k = |x: f64, y: f64| nmr_peak_similarity(x, y, DEFAULT_TAU1, DEFAULT_TAU2);
            prop_assert_eq!(k(a, b), k(b, a));
            prop_assert!(k(a, b) <= DEFAULT_TAU2 / DEFAULT_TAU1);
            let far = if b >= a { b + extra } else { b - extra };
            prop_assert!(k(a, far) < k(a, b));
        }
    }
}
