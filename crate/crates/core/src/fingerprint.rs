//! Circular (Morgan / ECFP-style) fingerprints and Tanimoto similarity.
//!
//! Atom identifiers start from a stable hash of the atom invariants
//! `(element, degree, charge, aromatic, in-ring, H count)`. Each iteration
//! rehashes `(iteration, own id, sorted (bond order, neighbor id) pairs)`.
//! Identifiers from iterations `0..=radius` are deduplicated by the atom set
//! they cover (the earliest, then smallest, identifier wins) and folded into
//! the bit vector by `id mod width`.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::chem::Molecule;
use crate::hash::StableHasher;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_WIDTH: usize = 2048;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("fingerprint width must be a positive power of two, got {0}")]
    BadWidth(usize),
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("bit {bit} out of range for width {width}")]
    BitOutOfRange { bit: usize, width: usize },
    #[error("invalid hex fingerprint: {0}")]
    BadHex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    set_count: usize,
}

impl Fingerprint {
    pub fn empty(width: usize) -> Result<Self, FingerprintError> {
        if width == 0 || !width.is_power_of_two() {
            return Err(FingerprintError::BadWidth(width));
        }
        Ok(Fingerprint {
            words: vec![0; width.div_ceil(64)],
            width,
            set_count: 0,
        })
    }

    pub fn from_bits(width: usize, bits: impl IntoIterator<Item = usize>) -> Result<Self, FingerprintError> {
        let mut fp = Fingerprint::empty(width)?;
        for bit in bits {
            if bit >= width {
                return Err(FingerprintError::BitOutOfRange { bit, width });
            }
            fp.set(bit);
        }
        Ok(fp)
    }

    fn set(&mut self, bit: usize) {
        let (w, b) = (bit / 64, bit % 64);
        if self.words[w] & (1 << b) == 0 {
            self.words[w] |= 1 << b;
            self.set_count += 1;
        }
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set_count(&self) -> usize {
        self.set_count
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&b| self.get(b))
    }

    /// 0/1 vector of length `width`.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.width).map(|b| if self.get(b) { 1.0 } else { 0.0 }).collect()
    }

    /// `width / 4` hex characters. Character `k` holds bits `4k..4k+4`, with
    /// bit `4k` as the most significant bit of the nibble, so the string reads
    /// the bit vector front to back.
    pub fn to_hex(&self) -> String {
        let chars = self.width.div_ceil(4);
        (0..chars)
            .map(|k| {
                let mut nibble = 0u32;
                for i in 0..4 {
                    nibble = (nibble << 1) | u32::from(self.get(4 * k + i));
                }
                char::from_digit(nibble, 16).expect("nibble < 16")
            })
            .collect()
    }

    pub fn from_hex(hex: &str) -> Result<Self, FingerprintError> {
        let width = hex.len() * 4;
        let mut fp = Fingerprint::empty(width).map_err(|_| FingerprintError::BadHex(format!("length {}", hex.len())))?;
        for (k, c) in hex.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| FingerprintError::BadHex(format!("character '{c}'")))?;
            for i in 0..4 {
                if nibble >> (3 - i) & 1 == 1 {
                    fp.set(4 * k + i);
                }
            }
        }
        Ok(fp)
    }
}

pub fn morgan_fingerprint(mol: &Molecule, radius: usize, width: usize) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::empty(width)?;
    for id in morgan_identifiers(mol, radius) {
        fp.set((id % width as u64) as usize);
    }
    Ok(fp)
}

/// ECFP4 with 2048 bits.
pub fn ecfp4(mol: &Molecule) -> Fingerprint {
    morgan_fingerprint(mol, DEFAULT_RADIUS, DEFAULT_WIDTH).expect("default width is valid")
}

/// Deduplicated environment identifiers before folding.
pub fn morgan_identifiers(mol: &Molecule, radius: usize) -> Vec<u64> {
    let n = mol.num_atoms();
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = &mol.atoms()[i];
            let mut h = StableHasher::new();
            h.write_bytes(a.symbol.as_bytes())
                .write(mol.degree(i) as u64)
                .write_i64(i64::from(a.charge))
                .write(u64::from(a.aromatic))
                .write(u64::from(mol.atom_in_ring(i)))
                .write(u64::from(a.total_h()));
            h.finish()
        })
        .collect();
    let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // (iteration, id, covered atoms)
    let mut envs: Vec<(usize, u64, Vec<usize>)> = (0..n).map(|i| (0, ids[i], sets[i].clone())).collect();
    let mut nbrs = Vec::new();
    for iteration in 1..=radius {
        let mut next_ids = Vec::with_capacity(n);
        let mut next_sets = Vec::with_capacity(n);
        for v in 0..n {
            nbrs.clear();
            nbrs.extend(
                mol.neighbors(v)
                    .iter()
                    .map(|&(w, b)| (mol.bonds()[b].order.code() as u64, ids[w])),
            );
            nbrs.sort_unstable();
            let mut h = StableHasher::new();
            h.write(iteration as u64).write(ids[v]);
            for &(o, id) in &nbrs {
                h.write(o).write(id);
            }
            next_ids.push(h.finish());
            let mut covered = sets[v].clone();
            for &(w, _) in mol.neighbors(v) {
                covered.extend_from_slice(&sets[w]);
            }
            covered.sort_unstable();
            covered.dedup();
            next_sets.push(covered);
        }
        for v in 0..n {
            envs.push((iteration, next_ids[v], next_sets[v].clone()));
        }
        ids = next_ids;
        sets = next_sets;
    }
    envs.sort_by_key(|e| (e.0, e.1));
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    for (_, id, covered) in envs {
        if seen.insert(covered) {
            out.push(id);
        }
    }
    out
}

/// `|A ∩ B| / |A ∪ B|` over set bits; 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.width != b.width {
        return Err(FingerprintError::WidthMismatch(a.width, b.width));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}
