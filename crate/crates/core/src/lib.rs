//! Skeleton recovery for discrete Bayesian networks by per-node block
//! l1/l2-regularized multivariate regression on encoded categorical data.
//!
//! The pipeline is: build or generate a [`CategoricalNetwork`], draw samples
//! with [`ancestral_sample`], encode them ([`encode_design`] /
//! [`MomentMatrix`]), fit every node with [`fit`], and assemble and score the
//! recovered skeleton with [`assemble_skeleton`] and [`score`]. The
//! [`theory`] module computes the recoverability certificates for a known
//! network, and [`experiment`] drives the sample-complexity sweep.

pub mod encoding;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod lasso;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod sampler;
pub mod theory;

pub use encoding::{encode_design, encode_level, BlockIndexMap, EncodedMatrix, MomentMatrix, Scheme};
pub use error::{Error, Result};
pub use lasso::{fit, lambda_schedule, FitOptions, FitResult, LambdaRule, Problem};
pub use linalg::BlockMatrix;
pub use metrics::{assemble_skeleton, score, CombineRule, RecoveryScore};
pub use network::{generate_network, CategoricalNetwork, GeneratorConfig, Node, Skeleton};
pub use sampler::{ancestral_sample, enumerate_joint, SampleMatrix};
pub use theory::{Mode, NodeReport, TheoryReport};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        write!(out, "{b:02x}").expect("writing to a String");
    }
    out
}
