//! Desk-scale synthetic corpora.
//!
//! Molecules come from a small grammar of rings and chains. Labels are
//! planted as a function of ECFP4 bits, and each vector modality is a noisy
//! random linear image of the same bits whose signal share is set per
//! modality.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::chem::{parse_smiles, BondOrder, Dataset, Molecule, MoleculeRecord};
use crate::fingerprint::{ecfp4, tanimoto, Fingerprint};
use crate::similarity::{Modality, ModalityEmbedding, PpmRange};

const RINGS: [&[&str]; 7] = [
    &["c", "c", "c", "c", "c", "c"],
    &["C", "C", "C", "C", "C", "C"],
    &["c", "c", "c", "n", "c", "c"],
    &["C", "C", "N", "C", "C"],
    &["C", "C", "C", "O", "C", "C"],
    &["C", "C", "C", "C", "C"],
    &["c", "c", "n", "c", "n", "c"],
];

const CHAINS: [&str; 14] = [
    "C", "CC", "CCC", "C(C)C", "CO", "CN", "C(=O)O", "C(=O)N", "OC", "C#N", "F", "Cl", "CC(=O)C", "N(C)C",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub molecules: usize,
    pub seed: u64,
    /// Signal share in [0, 1] per vector modality.
    pub relevance: BTreeMap<Modality, f64>,
    pub embedding_dim: usize,
    /// Number of reference molecules defining the planted property.
    pub prototypes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            molecules: 200,
            seed: 0,
            relevance: BTreeMap::from([
                (Modality::Smiles, 0.8),
                (Modality::Image, 0.5),
                (Modality::NmrSpectrum, 0.2),
            ]),
            embedding_dim: 32,
            prototypes: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub molecules: Vec<Molecule>,
    pub fingerprints: Vec<Fingerprint>,
    pub embeddings: BTreeMap<Modality, Vec<ModalityEmbedding>>,
}

/// One random molecule: one to three ring or chain units joined in a line,
/// with optional substituents on rings.
pub fn random_smiles<R: Rng>(rng: &mut R) -> String {
    let units = rng.gen_range(1..=3);
    let mut s = String::new();
    let mut ring_label = 1;
    for u in 0..units {
        let ring = rng.gen_bool(0.6) || (u == 0 && units == 1 && rng.gen_bool(0.5));
        if ring {
            let atoms = RINGS.choose(rng).expect("non-empty");
            let sub_at = rng.gen_range(1..atoms.len());
            let sub = if rng.gen_bool(0.5) {
                Some(*CHAINS.choose(rng).expect("non-empty"))
            } else {
                None
            };
            for (k, a) in atoms.iter().enumerate() {
                s.push_str(a);
                if k == 0 {
                    s.push_str(&ring_label.to_string());
                }
                if Some(k) == sub.map(|_| sub_at) {
                    s.push('(');
                    s.push_str(sub.expect("checked"));
                    s.push(')');
                }
            }
            s.push_str(&ring_label.to_string());
            ring_label += 1;
        } else {
            let chain = *CHAINS.choose(rng).expect("non-empty");
            // terminal halogens cannot sit between two units
            if u + 1 < units && (chain == "F" || chain == "Cl" || chain == "C#N") {
                s.push_str("CC");
            } else {
                s.push_str(chain);
            }
        }
    }
    s
}

/// Label 1 when the nearest prototype (by Tanimoto) belongs to the positive
/// half of the prototype list.
pub fn planted_labels(fps: &[Fingerprint], prototypes: &[Fingerprint]) -> Vec<f64> {
    let half = prototypes.len().div_ceil(2);
    fps.iter()
        .map(|fp| {
            let best = prototypes
                .iter()
                .enumerate()
                .map(|(k, p)| (tanimoto(fp, p).expect("same width"), k))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .expect("at least one prototype");
            if best.1 < half {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Projection `z = r * normalize(A x) + (1 - r) * noise`, with Gaussian `A`
/// and unit-scale Gaussian noise.
fn linear_image<R: Rng>(rng: &mut R, fps: &[Fingerprint], dim: usize, relevance: f64) -> Vec<Vec<f64>> {
    let width = fps.first().map_or(0, Fingerprint::width);
    let a: Vec<f64> = (0..dim * width).map(|_| StandardNormal.sample(rng)).collect();
    fps.iter()
        .map(|fp| {
            let mut z = vec![0.0; dim];
            for bit in fp.ones() {
                for (d, zd) in z.iter_mut().enumerate() {
                    *zd += a[d * width + bit];
                }
            }
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            z.iter()
                .map(|v| {
                    let noise: f64 = StandardNormal.sample(rng);
                    relevance * v / norm * (dim as f64).sqrt() + (1.0 - relevance) * noise
                })
                .collect()
        })
        .collect()
}

/// Rough carbon shifts by local environment, with +/- 2 ppm jitter.
pub fn synthetic_ppm<R: Rng>(rng: &mut R, mol: &Molecule) -> BTreeMap<usize, f64> {
    let mut peaks = BTreeMap::new();
    for (i, atom) in mol.atoms().iter().enumerate() {
        if atom.symbol != "C" {
            continue;
        }
        let mut base = 15.0 + 6.0 * mol.degree(i) as f64;
        if atom.aromatic {
            base = 128.0;
        }
        for &(j, b) in mol.neighbors(i) {
            let other = &mol.atoms()[j].symbol;
            let order = mol.bonds()[b].order;
            match (other.as_str(), order) {
                ("O", BondOrder::Double) => base = 172.0,
                ("N", BondOrder::Triple) => base = 118.0,
                ("O", _) if !atom.aromatic => base = base.max(62.0),
                ("N", _) if !atom.aromatic => base = base.max(47.0),
                ("F", _) | ("Cl", _) => base = base.max(70.0),
                _ => {}
            }
        }
        peaks.insert(i, base + rng.gen_range(-2.0..2.0));
    }
    peaks
}

pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus, PipelineError> {
    if cfg.molecules < 2 || cfg.prototypes < 2 || cfg.embedding_dim == 0 {
        return Err(PipelineError::Config("synthetic corpus needs >= 2 molecules, >= 2 prototypes, dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut smiles = Vec::with_capacity(cfg.molecules);
    let mut molecules = Vec::with_capacity(cfg.molecules);
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0;
    while molecules.len() < cfg.molecules {
        attempts += 1;
        if attempts > cfg.molecules * 200 {
            return Err(PipelineError::Config("grammar cannot produce that many distinct molecules".into()));
        }
        let s = random_smiles(&mut rng);
        if !seen.insert(s.clone()) {
            continue;
        }
        let m = parse_smiles(&s).map_err(|e| PipelineError::Config(format!("grammar produced '{s}': {e}")))?;
        smiles.push(s);
        molecules.push(m);
    }
    let fingerprints: Vec<Fingerprint> = molecules.iter().map(ecfp4).collect();
    let mut order: Vec<usize> = (0..molecules.len()).collect();
    order.shuffle(&mut rng);
    let prototypes: Vec<Fingerprint> = order[..cfg.prototypes.min(order.len())]
        .iter()
        .map(|&i| fingerprints[i].clone())
        .collect();
    let labels = planted_labels(&fingerprints, &prototypes);
    let ids: Vec<String> = (0..molecules.len()).map(|i| format!("mol{i:04}")).collect();
    let dataset = Dataset {
        task_names: vec!["planted".into()],
        records: ids
            .iter()
            .zip(&smiles)
            .zip(&labels)
            .map(|((id, s), &y)| MoleculeRecord {
                id: id.clone(),
                smiles: s.clone(),
                labels: vec![Some(y)],
            })
            .collect(),
    };
    let mut embeddings = BTreeMap::new();
    embeddings.insert(
        Modality::Fingerprint,
        ids.iter()
            .zip(&fingerprints)
            .map(|(id, fp)| ModalityEmbedding::vector(Modality::Fingerprint, id.clone(), fp.to_dense()))
            .collect::<Result<Vec<_>, _>>()?,
    );
    for (&m, &r) in &cfg.relevance {
        if m == Modality::Fingerprint || m == Modality::NmrPeak {
            continue;
        }
        let vecs = linear_image(&mut rng, &fingerprints, cfg.embedding_dim, r.clamp(0.0, 1.0));
        embeddings.insert(
            m,
            ids.iter()
                .zip(vecs)
                .map(|(id, v)| ModalityEmbedding::vector(m, id.clone(), v))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let range = PpmRange::default();
    embeddings.insert(
        Modality::NmrPeak,
        ids.iter()
            .zip(&molecules)
            .map(|(id, mol)| ModalityEmbedding::peaks(id.clone(), synthetic_ppm(&mut rng, mol), &range))
            .collect::<Result<Vec<_>, _>>()?,
    );
    Ok(SyntheticCorpus {
        dataset,
        molecules,
        fingerprints,
        embeddings,
    })
}
