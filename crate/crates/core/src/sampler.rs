//! Forward sampling and exact enumeration of a network's joint distribution.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::CategoricalNetwork;
use crate::rng;

/// Default cap on the number of joint configurations [`enumerate_joint`]
/// will materialize.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Rows per independently seeded sampling chunk.
const CHUNK_ROWS: usize = 4096;

/// `N x n` matrix of 0-based level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    levels: Vec<usize>,
    rows: usize,
    data: Vec<u16>,
    /// Seed and network hash the rows were drawn with, when known.
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub network_hash: String,
}

impl SampleMatrix {
    /// Builds a matrix from row-major level indices.
    pub fn new(levels: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        let n = levels.len();
        if n == 0 || !data.len().is_multiple_of(n) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill rows of {} columns",
                data.len(),
                n
            )));
        }
        let rows = data.len() / n;
        if rows == 0 {
            return Err(Error::InvalidRange("N must be ≥ 1".into()));
        }
        for (k, &v) in data.iter().enumerate() {
            let m = levels[k % n];
            if v as usize >= m {
                return Err(Error::OutOfRange {
                    level: v as usize,
                    levels: m,
                });
            }
        }
        Ok(SampleMatrix {
            levels,
            rows,
            data,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.levels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.rows
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn row(&self, i: usize) -> &[u16] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.data.chunks_exact(self.n())
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.data[i * self.n() + j]
    }

    /// Rows at the given indices, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<SampleMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.n());
        for &i in indices {
            if i >= self.rows {
                return Err(Error::OutOfRange {
                    level: i,
                    levels: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix::new(self.levels.clone(), data)
    }

    /// Writes a header of node names and one row of level labels per sample.
    pub fn write_csv(&self, net: &CategoricalNetwork, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(net.nodes().iter().map(|n| n.name.as_str()))
            .map_err(|e| csv_error(path, e))?;
        for row in self.rows() {
            w.write_record(
                row.iter()
                    .enumerate()
                    .map(|(j, &l)| net.node(j).levels[l as usize].as_str()),
            )
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a sample CSV, mapping labels back to indices through `net`.
    ///
    /// Columns may appear in any order but must name every node exactly once.
    pub fn read_csv(net: &CategoricalNetwork, path: impl AsRef<Path>) -> Result<SampleMatrix> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.len() != net.n() {
            return Err(Error::parse(
                format!("{ctx} header"),
                format!("{} columns for {} nodes", header.len(), net.n()),
            ));
        }
        let mut column_node = Vec::with_capacity(net.n());
        for name in header.iter() {
            let idx = net
                .index_of(name)
                .ok_or_else(|| Error::parse(format!("{ctx} header"), format!("unknown node '{name}'")))?;
            if column_node.contains(&idx) {
                return Err(Error::parse(
                    format!("{ctx} header"),
                    format!("duplicate column '{name}'"),
                ));
            }
            column_node.push(idx);
        }
        let mut data = Vec::new();
        let mut row = vec![0u16; net.n()];
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            for (col, label) in record.iter().enumerate() {
                let node = column_node[col];
                let level = net.node(node).levels.iter().position(|l| l == label).ok_or_else(|| {
                    Error::parse(
                        format!("{ctx} line {}", line + 2),
                        format!("'{label}' is not a level of '{}'", net.node(node).name),
                    )
                })?;
                row[node] = level as u16;
            }
            data.extend_from_slice(&row);
        }
        SampleMatrix::new(net.levels(), data)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let context = match e.position() {
        Some(pos) => format!("{} line {}", path.display(), pos.line()),
        None => path.display().to_string(),
    };
    Error::parse(context, e.to_string())
}

/// Draws `n_samples` i.i.d. rows by sampling each node given its realized
/// parents in topological order.
///
/// Rows are generated in chunks of 4096; chunk `c` uses stream `c` of the
/// generator keyed by `seed`, so the output does not depend on the thread
/// count.
pub fn ancestral_sample(net: &CategoricalNetwork, n_samples: usize, seed: u64) -> Result<SampleMatrix> {
    if n_samples == 0 {
        return Err(Error::InvalidRange("N must be ≥ 1".into()));
    }
    let n = net.n();
    let cumulative: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|r| {
            net.cpt(r)
                .iter()
                .map(|row| {
                    row.iter()
                        .scan(0.0, |acc, &p| {
                            *acc += p;
                            Some(*acc)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut data = vec![0u16; n_samples * n];
    data.par_chunks_mut(CHUNK_ROWS * n)
        .enumerate()
        .for_each(|(chunk, block)| {
            let mut rng = rng::stream(seed, chunk as u64);
            for row in block.chunks_exact_mut(n) {
                for &r in net.order() {
                    let j = net.parent_row(r, row);
                    let u: f64 = rng.random();
                    row[r] = draw_level(&cumulative[r][j], u, &net.cpt(r)[j]);
                }
            }
        });
    let mut out = SampleMatrix::new(net.levels(), data)?;
    out.provenance = Some(Provenance {
        seed,
        network_hash: net.content_hash(),
    });
    Ok(out)
}

/// Inverse-CDF draw; rounding at the top falls back to the last level with
/// positive probability.
fn draw_level(cdf: &[f64], u: f64, probs: &[f64]) -> u16 {
    match cdf.iter().position(|&c| u < c) {
        Some(l) => l as u16,
        None => probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) as u16,
    }
}

/// Exact joint distribution over every configuration, first node most
/// significant.
#[derive(Debug, Clone)]
pub struct JointTable {
    radices: Vec<usize>,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    /// Writes the configuration with the given index into `out`.
    pub fn config(&self, mut index: usize, out: &mut [u16]) {
        for (slot, &m) in out.iter_mut().zip(&self.radices).rev() {
            *slot = (index % m) as u16;
            index /= m;
        }
    }

    /// Calls `f(config, p)` for every configuration with positive probability.
    pub fn for_each_positive(&self, mut f: impl FnMut(&[u16], f64)) {
        let mut config = vec![0u16; self.radices.len()];
        for &p in &self.probs {
            if p > 0.0 {
                f(&config, p);
            }
            advance(&mut config, &self.radices);
        }
    }

    /// Marginal distribution of node `r`.
    pub fn marginal(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.radices[r]];
        self.for_each_positive(|c, p| out[c[r] as usize] += p);
        out
    }
}

fn advance(config: &mut [u16], radices: &[usize]) {
    for (slot, &m) in config.iter_mut().zip(radices).rev() {
        *slot += 1;
        if (*slot as usize) < m {
            return;
        }
        *slot = 0;
    }
}

/// Enumerates `P(x) = prod_r P(x_r | x_parents)` over all configurations.
pub fn enumerate_joint(net: &CategoricalNetwork, cap: u64) -> Result<JointTable> {
    let radices = net.levels();
    let configs = radices.iter().map(|&m| m as u128).product::<u128>();
    if configs > cap as u128 {
        return Err(Error::TooLarge { configs, cap });
    }
    let mut probs = Vec::with_capacity(configs as usize);
    let mut config = vec![0u16; radices.len()];
    for _ in 0..configs {
        let p = (0..net.n())
            .map(|r| net.cpt(r)[net.parent_row(r, &config)][config[r] as usize])
            .product();
        probs.push(p);
        advance(&mut config, &radices);
    }
    Ok(JointTable { radices, probs })
}

/// `E[left(X) right(X)^T]` under the exact joint distribution.
pub fn population_moment<L, R>(joint: &JointTable, left: L, right: R) -> DMatrix<f64>
where
    L: Fn(&[u16]) -> Vec<f64>,
    R: Fn(&[u16]) -> Vec<f64>,
{
    let mut acc: Option<DMatrix<f64>> = None;
    joint.for_each_positive(|config, p| {
        let a = left(config);
        let b = right(config);
        let m = acc.get_or_insert_with(|| DMatrix::zeros(a.len(), b.len()));
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                m[(i, j)] += p * ai * bj;
            }
        }
    });
    acc.unwrap_or_else(|| DMatrix::zeros(0, 0))
}
