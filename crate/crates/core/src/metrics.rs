use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{CategoricalNetwork, Skeleton};

/// How per-node supports are merged into undirected edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    /// `{i, j}` when either endpoint selects the other.
    #[default]
    Union,
    /// `{i, j}` when both endpoints select each other.
    Intersection,
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineRule::Union => "union",
            CombineRule::Intersection => "intersection",
        })
    }
}

impl FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" | "or" => Ok(CombineRule::Union),
            "intersection" | "and" => Ok(CombineRule::Intersection),
            other => Err(Error::parse("combination rule", format!("unknown rule `{other}`"))),
        }
    }
}

pub fn assemble_skeleton(supports: &[BTreeSet<usize>], rule: CombineRule) -> Skeleton {
    let n = supports.len();
    let mut skeleton = Skeleton::empty(n);
    for (i, s) in supports.iter().enumerate() {
        for &j in s {
            if j == i || j >= n {
                continue;
            }
            let keep = match rule {
                CombineRule::Union => true,
                CombineRule::Intersection => supports[j].contains(&i),
            };
            if keep {
                skeleton.insert(i, j);
            }
        }
    }
    skeleton
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when nothing was recovered, so precision is 0 by convention.
    pub precision_undefined: bool,
    /// Set when the truth has no edges, so recall is 0 by convention.
    pub recall_undefined: bool,
    pub per_node: Vec<BTreeSet<usize>>,
}

/// Node-summed precision and recall:
///
/// ```text
/// P = sum_r |S^_r ∩ S_r| / sum_r |S^_r|      R = sum_r |S^_r ∩ S_r| / sum_r |S_r|
/// ```
///
/// where `S_r` is the true parents-and-children set of node `r`.
pub fn score(recovered: &[BTreeSet<usize>], truth: &CategoricalNetwork) -> Result<RecoveryScore> {
    if recovered.len() != truth.n() {
        return Err(Error::NodeMismatch(recovered.len(), truth.n()));
    }
    let true_sets: Vec<BTreeSet<usize>> = (0..truth.n()).map(|r| truth.neighbors(r)).collect();
    Ok(score_sets(recovered, &true_sets))
}

/// [`score`] against explicit true neighbor sets.
pub fn score_sets(recovered: &[BTreeSet<usize>], truth: &[BTreeSet<usize>]) -> RecoveryScore {
    let hits: usize = recovered
        .iter()
        .zip(truth)
        .map(|(a, b)| a.intersection(b).count())
        .sum();
    let found: usize = recovered.iter().map(BTreeSet::len).sum();
    let actual: usize = truth.iter().map(BTreeSet::len).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(hits, found);
    let recall = ratio(hits, actual);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RecoveryScore {
        precision,
        recall,
        f1,
        precision_undefined: found == 0,
        recall_undefined: actual == 0,
        per_node: recovered.to_vec(),
    }
}
