//! Recoverability certificates for a known network: positive definiteness
//! of the Hessian on the true neighborhood, mutual incoherence, the
//! substitute model `W*`, residual bounds, and the resulting lower bound on
//! lambda and minimum-weight threshold.
//!
//! Every certificate can be computed in population mode (exact expectations
//! by enumerating the joint distribution) or empirical mode (plug-in
//! estimates from a sample matrix).

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_assignment, BlockIndexMap, MomentMatrix, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{self, BlockMatrix};
use crate::network::CategoricalNetwork;
use crate::sampler::{enumerate_joint, population_moment, JointTable, SampleMatrix, DEFAULT_ENUMERATION_CAP};

/// Minimum eigenvalue above which a matrix counts as positive definite.
pub const PD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Population,
    Empirical,
}

/// Exact second moment of the stacked encoding of all nodes.
pub fn population_moments(net: &CategoricalNetwork, scheme: Scheme) -> Result<MomentMatrix> {
    let joint = enumerate_joint(net, DEFAULT_ENUMERATION_CAP)?;
    Ok(moments_from_joint(&joint, &net.levels(), scheme))
}

fn moments_from_joint(joint: &JointTable, levels: &[usize], scheme: Scheme) -> MomentMatrix {
    let map = BlockIndexMap::all(levels);
    let encode = |c: &[u16]| {
        let mut out = vec![0.0; map.total()];
        encode_assignment(c, levels, &map, scheme, &mut out);
        out
    };
    let mut values = population_moment(joint, encode, encode);
    values = (&values + values.transpose()) * 0.5;
    let means = population_moment(joint, encode, |_| vec![1.0]).column(0).into_owned();
    MomentMatrix {
        values,
        means,
        map: map.clone(),
        scheme,
        levels: levels.to_vec(),
        n_samples: None,
    }
}

/// `H = E[E(X_{-r}) E(X_{-r})^T]` by enumeration.
pub fn population_hessian(net: &CategoricalNetwork, r: usize, scheme: Scheme) -> Result<DMatrix<f64>> {
    if r >= net.n() {
        return Err(Error::UnknownNode(r));
    }
    Ok(population_moments(net, scheme)?.hessian(r).0)
}

/// Positive definiteness of `H` restricted to `rows`, with its minimum
/// eigenvalue as the witness. An empty restriction holds trivially and
/// reports `+inf`.
pub fn check_assumption1(h: &DMatrix<f64>, rows: &[usize]) -> Result<(bool, f64)> {
    if rows.is_empty() {
        return Ok((true, f64::INFINITY));
    }
    let sub = h.select_rows(rows).select_columns(rows);
    let lambda_min = linalg::min_eigenvalue(&sub)?;
    Ok((lambda_min > PD_TOL, lambda_min))
}

/// Mutual incoherence `||H_{S^c S} H_{SS}^{-1}||_{B,inf,1}` with row blocks
/// given by the nodes of `map` outside `support`. Holds when the value is
/// below 1. Empty `support` or empty complement give 0.
pub fn check_assumption2(h: &DMatrix<f64>, map: &BlockIndexMap, support: &BTreeSet<usize>) -> Result<(bool, f64)> {
    let s_rows = map.support_rows(support.iter().copied())?;
    let complement: Vec<usize> = map.nodes().iter().copied().filter(|i| !support.contains(i)).collect();
    if s_rows.is_empty() || complement.is_empty() {
        return Ok((true, 0.0));
    }
    let c_rows = map.support_rows(complement.iter().copied())?;
    let h_ss = h.select_rows(&s_rows).select_columns(&s_rows);
    let h_sc = h.select_rows(&s_rows).select_columns(&c_rows);
    // Q^T = H_SS^{-1} H_{S S^c}, H_SS symmetric
    let q = linalg::solve_spd(&h_ss, &h_sc)?.transpose();
    let q = BlockMatrix::new(q, map.restrict(complement)?)?;
    let value = linalg::block_norm_inf_1(&q);
    Ok((value < 1.0, value))
}

/// `W*_{S.} = E[E(X_S) E(X_S)^T]^{-1} E[E(X_S) E(X_r)^T]`, zero outside
/// `support`, laid out over the design map of `r`.
pub fn substitute_weights(moments: &MomentMatrix, r: usize, support: &BTreeSet<usize>) -> Result<BlockMatrix> {
    let (h, map) = moments.hessian(r);
    let cross = moments.cross(r);
    let rows = map.support_rows(support.iter().copied())?;
    let mut w = BlockMatrix::zeros(map, cross.ncols());
    if rows.is_empty() {
        return Ok(w);
    }
    let h_ss = h.select_rows(&rows).select_columns(&rows);
    let w_s = linalg::solve_spd(&h_ss, &cross.select_rows(&rows))?;
    for (k, &row) in rows.iter().enumerate() {
        w.values_mut().row_mut(row).copy_from(&w_s.row(k));
    }
    Ok(w)
}

struct ResidualStats {
    max_abs: f64,
    mean_abs: Vec<f64>,
    total: f64,
}

fn residual_stats<F>(levels: &[usize], scheme: Scheme, r: usize, w: &BlockMatrix, visit: F) -> (f64, f64)
where
    F: FnOnce(&mut dyn FnMut(&[u16], f64)),
{
    let design_map = w.partition().clone();
    let target_map = BlockIndexMap::new(vec![r], vec![levels[r] - 1]).expect("single block");
    let wv = w.values();
    let mut stats = ResidualStats {
        max_abs: 0.0,
        mean_abs: vec![0.0; wv.ncols()],
        total: 0.0,
    };
    let mut x = vec![0.0; design_map.total()];
    let mut y = vec![0.0; levels[r] - 1];
    visit(&mut |config: &[u16], weight: f64| {
        encode_assignment(config, levels, &design_map, scheme, &mut x);
        encode_assignment(config, levels, &target_map, scheme, &mut y);
        for (j, &yj) in y.iter().enumerate() {
            let fitted: f64 = x.iter().zip(wv.column(j).iter()).map(|(a, b)| a * b).sum();
            let e = (yj - fitted).abs();
            stats.max_abs = stats.max_abs.max(e);
            stats.mean_abs[j] += weight * e;
        }
        stats.total += weight;
    });
    let mu = stats
        .mean_abs
        .iter()
        .map(|m| m / stats.total.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    (stats.max_abs / 2.0, mu)
}

/// `(sigma, mu)` for the residual `e = E(X_r) - W*^T E(X_{-r})`: `sigma` is
/// half the largest `|e_j|` over configurations with positive probability,
/// `mu` the largest componentwise `E|e_j|`.
pub fn residual_bounds_population(
    joint: &JointTable,
    levels: &[usize],
    scheme: Scheme,
    r: usize,
    w: &BlockMatrix,
) -> (f64, f64) {
    residual_stats(levels, scheme, r, w, |f| joint.for_each_positive(|c, p| f(c, p)))
}

/// [`residual_bounds_population`] over the observed rows.
pub fn residual_bounds_empirical(samples: &SampleMatrix, scheme: Scheme, r: usize, w: &BlockMatrix) -> (f64, f64) {
    residual_stats(samples.levels(), scheme, r, w, |f| {
        for row in samples.rows() {
            f(row, 1.0);
        }
    })
}

/// Inputs to the lambda condition and the minimum-weight threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Inputs {
    pub alpha: f64,
    pub sigma: f64,
    pub mu: f64,
    /// `m_r - 1`.
    pub rho_r: usize,
    /// Stacked width of the neighborhood, also `|S_r|`.
    pub rho_s: usize,
    /// `max_i (m_i - 1)` over all nodes.
    pub rho_bar: usize,
    /// Number of non-neighbor nodes other than `r`.
    pub complement: usize,
    pub n_samples: usize,
    /// Lower bound on the minimum eigenvalue of `H_SS`.
    pub c: f64,
    /// `max_i m_i`.
    pub m_bar: usize,
    /// Regularization at which the minimum-weight threshold is evaluated.
    pub lambda: f64,
}

/// Returns `(lambda_lower, minweight_threshold)`:
///
/// ```text
/// lambda_lower = 4/alpha sqrt(rho_r/N) max((1-alpha)(sqrt(2 s^2 ln(rho_S rho_r)) + mu),
///                                          sqrt(rho_bar)(sqrt(2 s^2 ln(|S^c| rho_bar rho_r)) + mu))
/// minweight    = 4 m_bar / C (alpha / (4 (1 - alpha)) + sqrt(rho_r) + 1) sqrt(|S_r|) lambda
/// ```
///
/// A term whose set is empty (no neighbors, no non-neighbors) is 0, and
/// `alpha = 1` makes the minimum-weight threshold infinite.
pub fn theorem1_thresholds(t: &Theorem1Inputs) -> Result<(f64, f64)> {
    if !(t.alpha > 0.0 && t.alpha <= 1.0) {
        return Err(Error::AlphaOutOfRange(t.alpha));
    }
    let rho_r = t.rho_r as f64;
    let rho_bar = t.rho_bar as f64;
    let tail = |count: f64| (2.0 * t.sigma * t.sigma * count.ln().max(0.0)).sqrt() + t.mu;
    let first = if t.rho_s == 0 {
        0.0
    } else {
        (1.0 - t.alpha) * tail(t.rho_s as f64 * rho_r)
    };
    let second = if t.complement == 0 {
        0.0
    } else {
        rho_bar.sqrt() * tail(t.complement as f64 * rho_bar * rho_r)
    };
    let lambda_lower = 4.0 / t.alpha * (rho_r / t.n_samples as f64).sqrt() * first.max(second);
    let minweight = if t.rho_s == 0 {
        0.0
    } else if t.alpha == 1.0 {
        f64::INFINITY
    } else {
        4.0 * t.m_bar as f64 / t.c
            * (t.alpha / (4.0 * (1.0 - t.alpha)) + rho_r.sqrt() + 1.0)
            * (t.rho_s as f64).sqrt()
            * t.lambda
    };
    Ok((lambda_lower, minweight))
}

/// Incoherence on the parents-and-children support versus the Markov
/// blanket support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportComparison {
    pub mipc_holds: bool,
    pub mimb_holds: bool,
    pub mipc_value: f64,
    pub mimb_value: f64,
}

/// Runs [`check_assumption2`] with `S` the parents and children of `r`
/// and with `S` the Markov blanket. A singular `H_SS` counts as a failure
/// with value `+inf`.
pub fn compare_supports(net: &CategoricalNetwork, r: usize, moments: &MomentMatrix) -> Result<SupportComparison> {
    let (h, map) = moments.hessian(r);
    let run = |support: &BTreeSet<usize>| -> Result<(bool, f64)> {
        let rows = map.support_rows(support.iter().copied())?;
        if !check_assumption1(&h, &rows)?.0 {
            return Ok((false, f64::INFINITY));
        }
        match check_assumption2(&h, &map, support) {
            Err(Error::NotPositiveDefinite) => Ok((false, f64::INFINITY)),
            other => other,
        }
    };
    let (mipc_holds, mipc_value) = run(&net.neighbors(r))?;
    let (mimb_holds, mimb_value) = run(&net.markov_blanket(r))?;
    Ok(SupportComparison {
        mipc_holds,
        mimb_holds,
        mipc_value,
        mimb_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemma4Probe {
    /// The matrix whose rows are the encodings of every neighborhood
    /// configuration with positive probability has full column rank.
    pub full_rank: bool,
    /// The population `H_SS` is positive definite.
    pub hss_pd: bool,
}

pub fn lemma4_pd_probe(net: &CategoricalNetwork, r: usize, scheme: Scheme) -> Result<Lemma4Probe> {
    let joint = enumerate_joint(net, DEFAULT_ENUMERATION_CAP)?;
    let levels = net.levels();
    let support: Vec<usize> = net.neighbors(r).into_iter().collect();
    if support.is_empty() {
        return Ok(Lemma4Probe {
            full_rank: true,
            hss_pd: true,
        });
    }
    let widths = support.iter().map(|&i| levels[i] - 1).collect();
    let map = BlockIndexMap::new(support.clone(), widths)?;
    let mut seen = BTreeSet::new();
    joint.for_each_positive(|c, _| {
        seen.insert(support.iter().map(|&i| c[i]).collect::<Vec<u16>>());
    });
    let mut realization = DMatrix::zeros(seen.len(), map.total());
    let mut full = vec![0u16; net.n()];
    let mut row = vec![0.0; map.total()];
    for (k, config) in seen.iter().enumerate() {
        for (&i, &v) in support.iter().zip(config) {
            full[i] = v;
        }
        encode_assignment(&full, &levels, &map, scheme, &mut row);
        realization.row_mut(k).copy_from_slice(&row);
    }
    let full_rank = if realization.nrows() < realization.ncols() {
        false
    } else {
        let sv = realization.singular_values();
        let top = sv.max();
        sv.iter()
            .all(|&s| s > top * 1e-10 * realization.nrows().max(realization.ncols()) as f64)
    };
    let moments = moments_from_joint(&joint, &levels, scheme);
    let (h, design) = moments.hessian(r);
    let rows = design.support_rows(support.iter().copied())?;
    let (hss_pd, _) = check_assumption1(&h, &rows)?;
    Ok(Lemma4Probe { full_rank, hss_pd })
}

/// Settings for [`check_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub scheme: Scheme,
    /// `N` entering the lambda condition. In empirical mode the sample count
    /// is used when this is absent.
    pub n_samples: Option<usize>,
    /// Regularization for the minimum-weight threshold; each node's
    /// `lambda_lower` when absent.
    pub lambda: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            scheme: Scheme::Effects,
            n_samples: None,
            lambda: None,
        }
    }
}

/// Default `N` for population-mode thresholds.
pub const DEFAULT_CHECK_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub r: usize,
    pub support: Vec<usize>,
    pub support_rows: usize,
    /// `+inf` (serialized as `null`) for an empty support.
    pub lambda_min_hss: f64,
    pub assumption1: bool,
    pub incoherence: f64,
    pub alpha: f64,
    pub assumption2: bool,
    /// `(node, ||vec(W*_i)||_2)` for each neighbor.
    pub wstar_blocks: Vec<(usize, f64)>,
    pub sigma: f64,
    pub mu: f64,
    pub lambda_lower: f64,
    pub lambda_used: f64,
    pub minweight_threshold: f64,
    /// `min_i ||vec(W*_i)||_2` exceeds the minimum-weight threshold.
    pub minweight_ok: bool,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub mode: Mode,
    pub scheme: Scheme,
    pub n_samples: usize,
    pub nodes: Vec<NodeReport>,
}

impl TheoryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one row per node.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:>4} {:>4} {:>10} {:>11} {:>8} {:>8} {:>8} {:>10} {:>10} {:>4} {:>4} {:>4}\n",
            "node",
            "|S|",
            "lambda_min",
            "incoherence",
            "alpha",
            "sigma",
            "mu",
            "lam_lower",
            "minweight",
            "A1",
            "A2",
            "MW"
        );
        let flag = |b: bool| if b { "ok" } else { "FAIL" };
        for n in &self.nodes {
            out.push_str(&format!(
                "{:>4} {:>4} {:>10.4} {:>11.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>4} {:>4} {:>4}\n",
                n.r + 1,
                n.support.len(),
                n.lambda_min_hss,
                n.incoherence,
                n.alpha,
                n.sigma,
                n.mu,
                n.lambda_lower,
                n.minweight_threshold,
                flag(n.assumption1),
                flag(n.assumption2),
                flag(n.minweight_ok),
            ));
        }
        out
    }
}

/// Per-node certificates for `net`, exact when `samples` is `None` and
/// plug-in otherwise.
pub fn check_network(
    net: &CategoricalNetwork,
    samples: Option<&SampleMatrix>,
    options: &CheckOptions,
) -> Result<TheoryReport> {
    let levels = net.levels();
    if let Some(s) = samples {
        if s.levels() != levels.as_slice() {
            return Err(Error::NodeMismatch(s.n(), net.n()));
        }
    }
    let (mode, moments, joint) = match samples {
        None => {
            let joint = enumerate_joint(net, DEFAULT_ENUMERATION_CAP)?;
            (
                Mode::Population,
                moments_from_joint(&joint, &levels, options.scheme),
                Some(joint),
            )
        }
        Some(s) => (Mode::Empirical, MomentMatrix::from_samples(s, options.scheme), None),
    };
    let n_samples = options
        .n_samples
        .or(samples.map(SampleMatrix::n_samples))
        .unwrap_or(DEFAULT_CHECK_SAMPLES);
    let rho_bar = levels.iter().map(|m| m - 1).max().unwrap_or(0);
    let m_bar = levels.iter().copied().max().unwrap_or(0);

    let nodes = (0..net.n())
        .into_par_iter()
        .map(|r| {
            let support = net.neighbors(r);
            let (h, map) = moments.hessian(r);
            let rows = map.support_rows(support.iter().copied())?;
            let (assumption1, lambda_min) = check_assumption1(&h, &rows)?;
            let (assumption2, incoherence, wstar) = if assumption1 {
                let (ok, value) = check_assumption2(&h, &map, &support)?;
                (ok, value, Some(substitute_weights(&moments, r, &support)?))
            } else {
                (false, f64::INFINITY, None)
            };
            let wstar_blocks: Vec<(usize, f64)> = match &wstar {
                Some(w) => map
                    .nodes()
                    .iter()
                    .copied()
                    .zip(w.block_l2_norms())
                    .filter(|(i, _)| support.contains(i))
                    .collect(),
                None => Vec::new(),
            };
            let (sigma, mu) = match (&wstar, &joint, samples) {
                (Some(w), Some(j), _) => residual_bounds_population(j, &levels, options.scheme, r, w),
                (Some(w), None, Some(s)) => residual_bounds_empirical(s, options.scheme, r, w),
                _ => (f64::INFINITY, f64::INFINITY),
            };
            let alpha = 1.0 - incoherence;
            let inputs = Theorem1Inputs {
                alpha,
                sigma,
                mu,
                rho_r: levels[r] - 1,
                rho_s: rows.len(),
                rho_bar,
                complement: net.n() - 1 - support.len(),
                n_samples,
                c: lambda_min,
                m_bar,
                lambda: 0.0,
            };
            let (lambda_lower, lambda_used, minweight) = if assumption2 && alpha > 0.0 {
                let (lower, _) = theorem1_thresholds(&inputs)?;
                let used = options.lambda.unwrap_or(lower);
                let (_, mw) = theorem1_thresholds(&Theorem1Inputs { lambda: used, ..inputs })?;
                (lower, used, mw)
            } else {
                (f64::INFINITY, options.lambda.unwrap_or(f64::INFINITY), f64::INFINITY)
            };
            let min_w = wstar_blocks.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
            Ok(NodeReport {
                r,
                support: support.iter().copied().collect(),
                support_rows: rows.len(),
                lambda_min_hss: lambda_min,
                assumption1,
                incoherence,
                alpha,
                assumption2,
                wstar_blocks,
                sigma,
                mu,
                lambda_lower,
                lambda_used,
                minweight_threshold: minweight,
                minweight_ok: support.is_empty() || min_w > minweight,
                mode,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryReport {
        mode,
        scheme: options.scheme,
        n_samples,
        nodes,
    })
}
