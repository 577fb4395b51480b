//! Relational-learning pretraining and multimodal fusion for molecular
//! property prediction.
//!
//! Molecules parsed from SMILES are encoded by directed-edge (DMPNN) or GIN
//! message-passing networks. Encoders are pretrained so that the softmax
//! distribution of their pairwise similarities matches a fixed target
//! distribution derived from another modality (fingerprints, SMILES, image
//! or NMR embeddings, NMR peak positions). Modalities are then combined by
//! early fusion (mixing target matrices), intermediate fusion (concatenating
//! embeddings) or late fusion (gated sum of per-modality predictions).

// `!(x >= 0.0)` style checks are used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chem;
pub mod encoders;
pub mod fingerprint;
pub mod fusion;
pub mod losses;
pub(crate) mod hash;
pub mod numeric;
pub mod output;
pub mod pipeline;
pub mod similarity;
