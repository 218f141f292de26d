//! Dummy and unweighted-effects coding of categorical values, block index
//! bookkeeping and encoded second-moment matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SampleMatrix;

/// Coding scheme. The reference level is always the LAST declared level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Level `j < m-1` maps to `e_j`, the last level to the zero vector.
    Dummy,
    /// Level `j < m-1` maps to `e_j`, the last level to all `-1`.
    #[default]
    Effects,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Dummy => "dummy",
            Scheme::Effects => "effects",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dummy" => Ok(Scheme::Dummy),
            "effects" => Ok(Scheme::Effects),
            other => Err(Error::parse("scheme", format!("unknown coding scheme '{other}'"))),
        }
    }
}

/// Codeword of `level` among `m` levels, length `m - 1`.
pub fn encode_level(level: usize, m: usize, scheme: Scheme) -> Result<Vec<f64>> {
    if m < 2 || level >= m {
        return Err(Error::OutOfRange { level, levels: m });
    }
    let mut out = vec![0.0; m - 1];
    write_code(level, m, scheme, &mut out);
    Ok(out)
}

#[inline]
fn write_code(level: usize, m: usize, scheme: Scheme, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m - 1);
    if level + 1 < m {
        out.fill(0.0);
        out[level] = 1.0;
    } else {
        out.fill(match scheme {
            Scheme::Dummy => 0.0,
            Scheme::Effects => -1.0,
        });
    }
}

/// Codewords of every level of a node with `m` levels.
fn code_table(m: usize, scheme: Scheme) -> Vec<Vec<f64>> {
    (0..m)
        .map(|l| {
            let mut v = vec![0.0; m - 1];
            write_code(l, m, scheme, &mut v);
            v
        })
        .collect()
}

/// Position of each node's block in a stacked encoded vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndexMap {
    nodes: Vec<usize>,
    offsets: Vec<usize>,
    widths: Vec<usize>,
    total: usize,
}

impl BlockIndexMap {
    /// Blocks in the given order with the given widths.
    pub fn new(nodes: Vec<usize>, widths: Vec<usize>) -> Result<Self> {
        if nodes.len() != widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} nodes but {} widths",
                nodes.len(),
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::validation("block width", "every block needs width >= 1"));
        }
        let distinct: BTreeSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(Error::validation("block map", "node listed twice"));
        }
        let mut offsets = Vec::with_capacity(nodes.len());
        let mut total = 0;
        for &w in &widths {
            offsets.push(total);
            total += w;
        }
        Ok(BlockIndexMap {
            nodes,
            offsets,
            widths,
            total,
        })
    }

    /// Every node in index order, width `m_i - 1`.
    pub fn all(levels: &[usize]) -> Self {
        Self::new((0..levels.len()).collect(), levels.iter().map(|m| m - 1).collect()).expect("levels are at least 2")
    }

    /// Every node except `target`, in index order.
    pub fn for_design(levels: &[usize], target: usize) -> Self {
        let nodes: Vec<usize> = (0..levels.len()).filter(|&i| i != target).collect();
        let widths = nodes.iter().map(|&i| levels[i] - 1).collect();
        Self::new(nodes, widths).expect("levels are at least 2")
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn block_count(&self) -> usize {
        self.nodes.len()
    }

    /// Largest block width, 0 for an empty map.
    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    /// Row range of block `k` (by position, not node index).
    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.widths[k]
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    pub fn range_of(&self, node: usize) -> Option<Range<usize>> {
        self.position(node).map(|k| self.block_range(k))
    }

    /// Stacked indices belonging to `node_set`, in block order.
    pub fn support_rows<I>(&self, node_set: I) -> Result<Vec<usize>>
    where
        I: IntoIterator<Item = usize>,
    {
        let wanted: BTreeSet<usize> = node_set.into_iter().collect();
        if let Some(&bad) = wanted.iter().find(|n| !self.nodes.contains(n)) {
            return Err(Error::UnknownNode(bad));
        }
        Ok((0..self.nodes.len())
            .filter(|&k| wanted.contains(&self.nodes[k]))
            .flat_map(|k| self.block_range(k))
            .collect())
    }

    /// Sub-map over `node_set`, keeping block order and compacting offsets.
    pub fn restrict<I>(&self, node_set: I) -> Result<BlockIndexMap>
    where
        I: IntoIterator<Item = usize>,
    {
        let wanted: BTreeSet<usize> = node_set.into_iter().collect();
        if let Some(&bad) = wanted.iter().find(|n| !self.nodes.contains(n)) {
            return Err(Error::UnknownNode(bad));
        }
        let (nodes, widths) = self
            .nodes
            .iter()
            .zip(&self.widths)
            .filter(|(n, _)| wanted.contains(n))
            .map(|(&n, &w)| (n, w))
            .unzip();
        BlockIndexMap::new(nodes, widths)
    }
}

/// Encoded columns of a sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: DMatrix<f64>,
    pub map: BlockIndexMap,
    pub scheme: Scheme,
}

impl EncodedMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }
}

/// Encodes the columns of `nodes` (in that order) into an `N x rho` matrix.
pub fn encode_columns(samples: &SampleMatrix, nodes: &[usize], scheme: Scheme) -> Result<EncodedMatrix> {
    let levels = samples.levels();
    if let Some(&bad) = nodes.iter().find(|&&i| i >= levels.len()) {
        return Err(Error::UnknownNode(bad));
    }
    let map = BlockIndexMap::new(nodes.to_vec(), nodes.iter().map(|&i| levels[i] - 1).collect())?;
    let tables: Vec<Vec<Vec<f64>>> = nodes.iter().map(|&i| code_table(levels[i], scheme)).collect();
    let mut values = DMatrix::zeros(samples.n_samples(), map.total());
    for (s, row) in samples.rows().enumerate() {
        for (k, &node) in nodes.iter().enumerate() {
            let code = &tables[k][row[node] as usize];
            for (c, &v) in map.block_range(k).zip(code) {
                values[(s, c)] = v;
            }
        }
    }
    Ok(EncodedMatrix { values, map, scheme })
}

/// Design `E(X^{-r})` (every node but `target`, in index order) and response
/// `E(X^r)`.
pub fn encode_design(samples: &SampleMatrix, target: usize, scheme: Scheme) -> Result<(EncodedMatrix, EncodedMatrix)> {
    if target >= samples.n() {
        return Err(Error::UnknownNode(target));
    }
    let others: Vec<usize> = (0..samples.n()).filter(|&i| i != target).collect();
    Ok((
        encode_columns(samples, &others, scheme)?,
        encode_columns(samples, &[target], scheme)?,
    ))
}

/// Writes the stacked encoding of a full assignment, laid out by `map`.
pub fn encode_assignment(assignment: &[u16], levels: &[usize], map: &BlockIndexMap, scheme: Scheme, out: &mut [f64]) {
    for (k, &node) in map.nodes().iter().enumerate() {
        write_code(
            assignment[node] as usize,
            levels[node],
            scheme,
            &mut out[map.block_range(k)],
        );
    }
}

/// Second moment `E[E(X) E(X)^T]` of the stacked encoding of every node,
/// from which the Hessian and cross moments of any target are read off.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub values: DMatrix<f64>,
    /// First moment `E[E(X)]`.
    pub means: DVector<f64>,
    pub map: BlockIndexMap,
    pub scheme: Scheme,
    pub levels: Vec<usize>,
    /// Sample count for empirical moments, `None` for exact population moments.
    pub n_samples: Option<usize>,
}

impl MomentMatrix {
    /// Empirical moment `(1/N) sum_s E(x_s) E(x_s)^T`, accumulated from
    /// pairwise level counts so the `N x rho` design is never materialized.
    pub fn from_samples(samples: &SampleMatrix, scheme: Scheme) -> Self {
        let levels = samples.levels().to_vec();
        let n = levels.len();
        let map = BlockIndexMap::all(&levels);
        let tables: Vec<Vec<Vec<f64>>> = levels.iter().map(|&m| code_table(m, scheme)).collect();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let counts: Vec<Vec<u64>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mj = levels[j];
                let mut c = vec![0u64; levels[i] * mj];
                for row in samples.rows() {
                    c[row[i] as usize * mj + row[j] as usize] += 1;
                }
                c
            })
            .collect();
        let total = samples.n_samples() as f64;
        let mut values = DMatrix::zeros(map.total(), map.total());
        for (&(i, j), c) in pairs.iter().zip(&counts) {
            let (ri, rj) = (map.block_range(i), map.block_range(j));
            for a in 0..levels[i] {
                for b in 0..levels[j] {
                    let w = c[a * levels[j] + b];
                    if w == 0 {
                        continue;
                    }
                    let w = w as f64;
                    for (s, &ea) in ri.clone().zip(&tables[i][a]) {
                        for (t, &eb) in rj.clone().zip(&tables[j][b]) {
                            values[(s, t)] += w * ea * eb;
                        }
                    }
                }
            }
        }
        values /= total;
        let mut means = DVector::zeros(map.total());
        for (&(i, j), c) in pairs.iter().zip(&counts) {
            if i != j {
                continue;
            }
            for a in 0..levels[i] {
                let w = c[a * levels[i] + a] as f64 / total;
                for (s, &ea) in map.block_range(i).zip(&tables[i][a]) {
                    means[s] += w * ea;
                }
            }
        }
        // only blocks (i, j) with i <= j were filled
        for s in 0..values.nrows() {
            for t in 0..s {
                values[(s, t)] = values[(t, s)];
            }
        }
        MomentMatrix {
            values,
            means,
            map,
            scheme,
            levels,
            n_samples: Some(samples.n_samples()),
        }
    }

    /// Covariance `E[E(X) E(X)^T] - E[E(X)] E[E(X)]^T`, i.e. the moments of
    /// the centered encoding.
    pub fn centered(&self) -> MomentMatrix {
        MomentMatrix {
            values: &self.values - &self.means * self.means.transpose(),
            means: DVector::zeros(self.means.len()),
            ..self.clone()
        }
    }

    /// Hessian `H = E[E(X_{-r}) E(X_{-r})^T]` and its block map.
    pub fn hessian(&self, target: usize) -> (DMatrix<f64>, BlockIndexMap) {
        let design = BlockIndexMap::for_design(&self.levels, target);
        let rows = self.rows_of(&design);
        (self.values.select_rows(&rows).select_columns(&rows), design)
    }

    /// Cross moment `E[E(X_{-r}) E(X_r)^T]`.
    pub fn cross(&self, target: usize) -> DMatrix<f64> {
        let design = BlockIndexMap::for_design(&self.levels, target);
        let rows = self.rows_of(&design);
        let cols: Vec<usize> = self.map.block_range(target).collect();
        self.values.select_rows(&rows).select_columns(&cols)
    }

    /// `E[||E(X_r)||^2]`.
    pub fn target_energy(&self, target: usize) -> f64 {
        self.map.block_range(target).map(|i| self.values[(i, i)]).sum()
    }

    fn rows_of(&self, design: &BlockIndexMap) -> Vec<usize> {
        design.nodes().iter().flat_map(|&i| self.map.block_range(i)).collect()
    }
}
