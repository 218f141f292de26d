//! Row-partitioned block matrices, the norms defined on them, and the dense
//! symmetric routines the certificates need.

use nalgebra::{DMatrix, DMatrixView};

use crate::encoding::BlockIndexMap;
use crate::error::{Error, Result};

/// A `p x q` matrix whose rows are partitioned into node blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    values: DMatrix<f64>,
    partition: BlockIndexMap,
}

impl BlockMatrix {
    pub fn new(values: DMatrix<f64>, partition: BlockIndexMap) -> Result<Self> {
        if partition.total() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "partition covers {} rows, matrix has {}",
                partition.total(),
                values.nrows()
            )));
        }
        Ok(BlockMatrix { values, partition })
    }

    pub fn zeros(partition: BlockIndexMap, cols: usize) -> Self {
        BlockMatrix {
            values: DMatrix::zeros(partition.total(), cols),
            partition,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn partition(&self) -> &BlockIndexMap {
        &self.partition
    }

    /// Block `k` (by position in the partition).
    pub fn block(&self, k: usize) -> DMatrixView<'_, f64> {
        let r = self.partition.block_range(k);
        self.values.rows(r.start, r.len())
    }

    /// `||vec(A_k)||_2` for every block.
    pub fn block_l2_norms(&self) -> Vec<f64> {
        (0..self.partition.block_count())
            .map(|k| self.block(k).norm())
            .collect()
    }
}

/// `||A||_{B,a,b} = (sum_k ||vec(A_k)||_b^a)^(1/a)` for
/// `(a, b)` in `{(inf, 2), (inf, 1), (1, 2)}`; an `a = inf` norm is the max
/// over blocks and is 0 when there are none.
pub fn block_norm(a: &BlockMatrix, outer: f64, inner: f64) -> Result<f64> {
    let per_block = |f: &dyn Fn(DMatrixView<'_, f64>) -> f64| -> Vec<f64> {
        (0..a.partition.block_count()).map(|k| f(a.block(k))).collect()
    };
    let l1 = |b: DMatrixView<'_, f64>| b.iter().map(|x| x.abs()).sum::<f64>();
    let l2 = |b: DMatrixView<'_, f64>| b.norm();
    match (outer, inner) {
        (o, i) if o == f64::INFINITY && i == 2.0 => Ok(per_block(&l2).into_iter().fold(0.0, f64::max)),
        (o, i) if o == f64::INFINITY && i == 1.0 => Ok(per_block(&l1).into_iter().fold(0.0, f64::max)),
        (o, i) if o == 1.0 && i == 2.0 => Ok(per_block(&l2).into_iter().sum()),
        (o, i) => Err(Error::UnsupportedPair(o.to_string(), i.to_string())),
    }
}

/// `max_k ||vec(A_k)||_2`.
pub fn block_norm_inf_2(a: &BlockMatrix) -> f64 {
    block_norm(a, f64::INFINITY, 2.0).expect("supported pair")
}

/// `max_k ||vec(A_k)||_1`.
pub fn block_norm_inf_1(a: &BlockMatrix) -> f64 {
    block_norm(a, f64::INFINITY, 1.0).expect("supported pair")
}

/// `sum_k ||vec(A_k)||_2`, the group penalty.
pub fn block_norm_1_2(a: &BlockMatrix) -> f64 {
    block_norm(a, 1.0, 2.0).expect("supported pair")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpNorm {
    /// `|||A|||_{inf,inf}`: max absolute row sum.
    InfInf,
    /// `|||A|||_{2,2}`: largest singular value.
    Spectral,
    Frobenius,
    /// `|||A|||_{inf,2}`: max row l2 norm.
    InfTwo,
}

pub fn op_norm(a: &DMatrix<f64>, kind: OpNorm) -> f64 {
    match kind {
        OpNorm::InfInf => a
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        OpNorm::Spectral => {
            if a.is_empty() {
                0.0
            } else {
                a.clone().singular_values().max()
            }
        }
        OpNorm::Frobenius => a.norm(),
        OpNorm::InfTwo => a.row_iter().map(|r| r.norm()).fold(0.0, f64::max),
    }
}

fn symmetrized(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = symmetrized(a)?;
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Smallest eigenvalue; `+inf` for a 0x0 matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?.first().copied().unwrap_or(f64::INFINITY))
}

/// Largest eigenvalue; 0 for a 0x0 matrix.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?.last().copied().unwrap_or(0.0))
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrized(a)?;
    if b.nrows() != s.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{}, B has {} rows",
            s.nrows(),
            s.ncols(),
            b.nrows()
        )));
    }
    let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Proximal map of `tau ||.||_2` on a flattened block:
/// `max(0, 1 - tau / ||vec(g)||_2) g`, exactly zero inside the ball.
pub fn group_soft_threshold(g: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut out = g.clone();
    shrink_in_place(out.as_mut_slice(), tau);
    out
}

/// In-place [`group_soft_threshold`] on a flat slice; returns the new norm.
pub(crate) fn shrink_in_place(block: &mut [f64], tau: f64) -> f64 {
    let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= tau {
        block.fill(0.0);
        0.0
    } else {
        let scale = 1.0 - tau / norm;
        block.iter_mut().for_each(|x| *x *= scale);
        norm - tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_blocks(p: usize) -> BlockIndexMap {
        BlockIndexMap::new((0..p).collect(), vec![1; p]).unwrap()
    }

    #[test]
    fn block_norm_examples() {
        let a = BlockMatrix::new(DMatrix::from_element(1, 1, -3.0), single_blocks(1)).unwrap();
        assert_eq!(block_norm(&a, 1.0, 2.0).unwrap(), 3.0);

        let a = BlockMatrix::new(DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]), single_blocks(2)).unwrap();
        assert_eq!(block_norm_inf_2(&a), 5.0);
        assert_eq!(block_norm_1_2(&a), 5.0);
        assert_eq!(block_norm_inf_1(&a), 7.0);

        let z = BlockMatrix::zeros(BlockIndexMap::new(vec![0, 1], vec![2, 3]).unwrap(), 2);
        for (o, i) in [(f64::INFINITY, 2.0), (f64::INFINITY, 1.0), (1.0, 2.0)] {
            assert_eq!(block_norm(&z, o, i).unwrap(), 0.0);
        }
        assert!(matches!(block_norm(&z, 2.0, 2.0), Err(Error::UnsupportedPair(..))));

        let empty = BlockMatrix::zeros(BlockIndexMap::new(vec![], vec![]).unwrap(), 3);
        assert_eq!(block_norm_inf_2(&empty), 0.0);
    }

    #[test]
    fn op_norm_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(op_norm(&i3, OpNorm::InfInf), 1.0);
        assert!((op_norm(&i3, OpNorm::Spectral) - 1.0).abs() < 1e-14);
        assert!((op_norm(&i3, OpNorm::Frobenius) - 3f64.sqrt()).abs() < 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        assert_eq!(op_norm(&a, OpNorm::InfInf), 3.0);
        assert_eq!(op_norm(&a, OpNorm::InfTwo), 3.0);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 1.0, 0.0]);
        assert!((op_norm(&b, OpNorm::InfTwo) - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn eigen_and_solve_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        assert!((min_eigenvalue(&d).unwrap() - 0.5).abs() < 1e-15);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.48, 0.48, 1.0]);
        assert!((min_eigenvalue(&p).unwrap() - 0.52).abs() < 1e-14);
        assert!((min_eigenvalue(&DMatrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            min_eigenvalue(&DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));

        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(solve_spd(&DMatrix::identity(3, 3), &b).unwrap(), b);
        let x = solve_spd(&DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(x[(0, 0)], 0.5);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_spd(&singular, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn solve_spd_matches_inverse() {
        let mut state = 17u64;
        let mut next = || {
            state = crate::rng::derive_seed(state, &[1]);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let g = DMatrix::from_fn(6, 6, |_, _| next());
        let a = &g * g.transpose() + DMatrix::identity(6, 6) * 0.1;
        let b = DMatrix::from_fn(6, 3, |_, _| next());
        let x = solve_spd(&a, &b).unwrap();
        let oracle = a.clone().try_inverse().unwrap() * &b;
        assert!((&x - oracle).amax() < 1e-9);
        assert!((&a * &x - &b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn soft_threshold_examples() {
        let g = DMatrix::from_row_slice(1, 2, &[0.9 * 0.6, 0.9 * 0.8]);
        assert_eq!(group_soft_threshold(&g, 1.0), DMatrix::zeros(1, 2));
        let g = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(group_soft_threshold(&g, 0.0), g);
        assert_eq!(
            group_soft_threshold(&g, 2.5),
            DMatrix::from_row_slice(1, 2, &[1.5, 2.0])
        );
    }

    #[test]
    fn soft_threshold_minimizes_prox_objective() {
        // grid oracle for min_x 0.5 ||x - g||^2 + tau ||x||_2 on 2-d blocks
        for (g, tau) in [([1.0, -0.5], 0.3), ([0.2, 0.1], 0.5), ([-2.0, 1.5], 1.0)] {
            let obj = |x: [f64; 2]| {
                0.5 * ((x[0] - g[0]).powi(2) + (x[1] - g[1]).powi(2)) + tau * (x[0] * x[0] + x[1] * x[1]).sqrt()
            };
            let mut best = ([0.0, 0.0], f64::INFINITY);
            let steps = 800;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = [
                        -3.0 + 6.0 * i as f64 / steps as f64,
                        -3.0 + 6.0 * j as f64 / steps as f64,
                    ];
                    let v = obj(x);
                    if v < best.1 {
                        best = (x, v);
                    }
                }
            }
            let p = group_soft_threshold(&DMatrix::from_row_slice(1, 2, &g), tau);
            let pv = obj([p[(0, 0)], p[(0, 1)]]);
            assert!(pv <= best.1 + 1e-12, "{pv} vs {}", best.1);
            assert!((p[(0, 0)] - best.0[0]).abs() < 0.02 && (p[(0, 1)] - best.0[1]).abs() < 0.02);
        }
    }

    fn blocked(widths: &[usize], cols: usize, vals: &[f64]) -> BlockMatrix {
        let map = BlockIndexMap::new((0..widths.len()).collect(), widths.to_vec()).unwrap();
        let rows = map.total();
        BlockMatrix::new(
            DMatrix::from_fn(rows, cols, |i, j| vals[(i * cols + j) % vals.len()]),
            map,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn norm_inequalities_hold(
            widths in proptest::collection::vec(1usize..4, 1..5),
            inner in 1usize..5,
            cols in 1usize..4,
            a_vals in proptest::collection::vec(-5.0f64..5.0, 16..64),
            b_vals in proptest::collection::vec(-5.0f64..5.0, 16..64),
        ) {
            let a = blocked(&widths, inner, &a_vals);
            let b = DMatrix::from_fn(inner, cols, |i, j| b_vals[(i * cols + j) % b_vals.len()]);
            let ab = BlockMatrix::new(a.values() * &b, a.partition().clone()).unwrap();
            let lhs1 = block_norm_inf_2(&ab);
            let rhs1 = block_norm_inf_1(&a) * op_norm(&b, OpNorm::InfTwo);
            prop_assert!(lhs1 <= rhs1 + 1e-12);
            let lhs2 = block_norm_inf_1(&ab);
            let rhs2 = block_norm_inf_1(&a) * op_norm(&b, OpNorm::InfInf);
            prop_assert!(lhs2 <= rhs2 + 1e-12);
        }

        #[test]
        fn spectral_frobenius_sandwich(vals in proptest::collection::vec(-3.0f64..3.0, 25)) {
            let a = DMatrix::from_row_slice(5, 5, &vals);
            let s = op_norm(&a, OpNorm::Spectral);
            let f = op_norm(&a, OpNorm::Frobenius);
            prop_assert!(s <= f + 1e-12 && f <= 5f64.sqrt() * s + 1e-12);
        }

        #[test]
        fn unit_blocks_reduce_to_inf_operator_norm(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let a = blocked(&[1, 1, 1, 1], 3, &vals);
            prop_assert!((block_norm_inf_1(&a) - op_norm(a.values(), OpNorm::InfInf)).abs() < 1e-12);
        }
    }
}
