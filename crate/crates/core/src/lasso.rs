//! Block l1/l2-regularized multivariate least squares for one target node:
//!
//! ```text
//! minimize  1/(2N) ||E(X^r) - E(X^{-r}) W||_F^2 + lambda * sum_i ||vec(W_i)||_2
//! ```
//!
//! The loss is evaluated from second moments only (`H = X'X/N`,
//! `C = X'Y/N`, `||Y||_F^2/N`), so a problem built from a million samples
//! costs the same per iteration as one built from ten.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoding::{BlockIndexMap, EncodedMatrix, MomentMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, BlockMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    response_energy: f64,
    n_samples: usize,
    map: BlockIndexMap,
    lambda: f64,
}

impl Problem {
    /// Problem for an explicit design `E(X^{-r})` and response `E(X^r)`.
    pub fn new(design: &EncodedMatrix, response: &EncodedMatrix, lambda: f64) -> Result<Self> {
        let n = design.values.nrows();
        if response.values.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "design has {} rows, response has {}",
                n,
                response.values.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidRange("N must be ≥ 1".into()));
        }
        check_lambda(lambda)?;
        let inv_n = 1.0 / n as f64;
        Ok(Problem {
            gram: empirical_hessian(design),
            cross: design.values.transpose() * &response.values * inv_n,
            response_energy: response.values.norm_squared() * inv_n,
            n_samples: n,
            map: design.map.clone(),
            lambda,
        })
    }

    /// Problem for `target` read from a second-moment matrix over all nodes.
    pub fn from_moments(moments: &MomentMatrix, target: usize, lambda: f64) -> Result<Self> {
        if target >= moments.levels.len() {
            return Err(Error::UnknownNode(target));
        }
        check_lambda(lambda)?;
        let (gram, map) = moments.hessian(target);
        Ok(Problem {
            gram,
            cross: moments.cross(target),
            response_energy: moments.target_energy(target),
            n_samples: moments.n_samples.unwrap_or(usize::MAX),
            map,
            lambda,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Problem { lambda, ..self.clone() })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn map(&self) -> &BlockIndexMap {
        &self.map
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// `rho` (design width) and `rho_r` (response width).
    pub fn shape(&self) -> (usize, usize) {
        (self.cross.nrows(), self.cross.ncols())
    }

    /// Smallest lambda for which `W = 0` is optimal: `||C||_{B,inf,2}`.
    pub fn null_threshold(&self) -> f64 {
        let c = BlockMatrix::new(self.cross.clone(), self.map.clone()).expect("cross matches map");
        linalg::block_norm_inf_2(&c)
    }

    fn loss(&self, w: &DMatrix<f64>) -> f64 {
        let quad = (w.transpose() * &self.gram).component_mul(&w.transpose()).sum();
        let lin = w.component_mul(&self.cross).sum();
        (0.5 * self.response_energy - lin + 0.5 * quad).max(0.0)
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gram * w - &self.cross
    }

    fn penalty(&self, w: &DMatrix<f64>) -> f64 {
        (0..self.map.block_count())
            .map(|k| block_rows(w, &self.map, k).norm())
            .sum()
    }

    /// `f(W) = L(W) + lambda ||W||_{B,1,2}`.
    pub fn objective(&self, w: &DMatrix<f64>) -> f64 {
        self.loss(w) + self.lambda * self.penalty(w)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!(
            "lambda = {lambda} must be finite and >= 0"
        )))
    }
}

fn block_rows<'a>(w: &'a DMatrix<f64>, map: &BlockIndexMap, k: usize) -> nalgebra::DMatrixView<'a, f64> {
    let r = map.block_range(k);
    w.rows(r.start, r.len())
}

/// `L(W) = 1/(2N) ||Y - X W||_F^2` and `grad L = (X'X W - X'Y) / N`.
pub fn loss_and_gradient(problem: &Problem, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (rho, rho_r) = problem.shape();
    if w.shape() != (rho, rho_r) {
        return Err(Error::ShapeMismatch(format!(
            "W is {}x{}, expected {}x{}",
            w.nrows(),
            w.ncols(),
            rho,
            rho_r
        )));
    }
    Ok((problem.loss(w), problem.gradient(w)))
}

/// `H = X'X / N`.
pub fn empirical_hessian(design: &EncodedMatrix) -> DMatrix<f64> {
    let n = design.values.nrows().max(1) as f64;
    design.values.tr_mul(&design.values) / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub support_tol: f64,
    /// Use the accelerated (monotone FISTA) iteration; plain proximal
    /// gradient otherwise.
    pub accelerate: bool,
    /// Starting point; zero when absent.
    #[serde(skip)]
    pub init: Option<DMatrix<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 50_000,
            kkt_tol: 1e-6,
            support_tol: 1e-8,
            accelerate: true,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub w_hat: BlockMatrix,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Nodes whose block norm exceeds `support_tol`.
    pub support: Vec<usize>,
}

/// JSON-friendly view of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub support: Vec<usize>,
    /// `(node, ||vec(W_i)||_2)` for every design block.
    pub block_norms: Vec<(usize, f64)>,
}

impl FitResult {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            lambda: self.lambda,
            objective: self.objective,
            kkt_residual: self.kkt_residual,
            iterations: self.iterations,
            converged: self.converged,
            support: self.support.clone(),
            block_norms: self
                .w_hat
                .partition()
                .nodes()
                .iter()
                .copied()
                .zip(self.w_hat.block_l2_norms())
                .collect(),
        }
    }
}

/// Distance of `w` from the optimality conditions:
/// zero blocks need `||g_i|| <= lambda`, nonzero blocks need
/// `g_i + lambda W_i / ||W_i|| = 0`, where `g = grad L(w)`.
pub fn kkt_residual(problem: &Problem, w: &DMatrix<f64>) -> f64 {
    kkt_with_gradient(problem, w, &problem.gradient(w))
}

fn kkt_with_gradient(problem: &Problem, w: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
    let map = &problem.map;
    let mut worst: f64 = 0.0;
    for k in 0..map.block_count() {
        let wb = block_rows(w, map, k);
        let gb = block_rows(grad, map, k);
        let wn = wb.norm();
        let r = if wn == 0.0 {
            (gb.norm() - problem.lambda).max(0.0)
        } else {
            (gb + wb * (problem.lambda / wn)).norm()
        };
        worst = worst.max(r);
    }
    worst
}

fn prox_step(problem: &Problem, y: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    let mut z = y - grad * step;
    let tau = step * problem.lambda;
    let cols = z.ncols();
    for k in 0..problem.map.block_count() {
        let r = problem.map.block_range(k);
        // gather the block so the prox sees vec(W_i) as one vector
        let mut buf: Vec<f64> = Vec::with_capacity(r.len() * cols);
        for c in 0..cols {
            for i in r.clone() {
                buf.push(z[(i, c)]);
            }
        }
        linalg::shrink_in_place(&mut buf, tau);
        let mut it = buf.into_iter();
        for c in 0..cols {
            for i in r.clone() {
                z[(i, c)] = it.next().expect("buffer sized to block");
            }
        }
    }
    z
}

/// Minimizes `f(W) = L(W) + lambda ||W||_{B,1,2}` by proximal gradient with
/// backtracking from step `1 / lambda_max(H)`, optionally accelerated with
/// the monotone FISTA scheme (objective never increases between iterates).
///
/// Converges when the KKT residual drops to `kkt_tol`; otherwise fails with
/// [`Error::NotConverged`] carrying the last iterate.
pub fn fit(problem: &Problem, options: &FitOptions) -> Result<FitResult> {
    let (rho, rho_r) = problem.shape();
    let mut x = match &options.init {
        Some(w0) if w0.shape() == (rho, rho_r) => w0.clone(),
        Some(w0) => {
            return Err(Error::ShapeMismatch(format!(
                "initial W is {}x{}, expected {}x{}",
                w0.nrows(),
                w0.ncols(),
                rho,
                rho_r
            )))
        }
        None => DMatrix::zeros(rho, rho_r),
    };
    let lipschitz = linalg::max_eigenvalue(&problem.gram)?;
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let mut fx = problem.objective(&x);
    let mut grad_x = problem.gradient(&x);
    let mut kkt = kkt_with_gradient(problem, &x, &grad_x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;

    while kkt > options.kkt_tol && iterations < options.max_iter {
        iterations += 1;
        let grad_y = if options.accelerate {
            problem.gradient(&y)
        } else {
            grad_x.clone()
        };
        let loss_y = problem.loss(&y);
        let z = loop {
            let z = prox_step(problem, &y, &grad_y, step);
            let d = &z - &y;
            let model = loss_y + grad_y.component_mul(&d).sum() + 0.5 / step * d.norm_squared();
            if problem.loss(&z) <= model + 1e-12 * model.abs().max(1.0) || step < 1e-300 {
                break z;
            }
            step *= 0.5;
        };
        let fz = problem.objective(&z);
        if !options.accelerate {
            y = z.clone();
            x = z;
            fx = fz;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // with t = 1 the step was taken from x itself, a descent step up
            // to rounding in f
            if fz <= fx || t == 1.0 {
                y = &z + (&z - &x) * ((t - 1.0) / t_next);
                x = z;
                fx = fz;
                t = t_next;
            } else {
                // monotone safeguard doubles as an adaptive restart
                y = x.clone();
                t = 1.0;
            }
        }
        grad_x = problem.gradient(&x);
        kkt = kkt_with_gradient(problem, &x, &grad_x);
    }

    let w_hat = BlockMatrix::new(x, problem.map.clone())?;
    let support = w_hat
        .partition()
        .nodes()
        .iter()
        .zip(w_hat.block_l2_norms())
        .filter(|(_, norm)| *norm > options.support_tol)
        .map(|(&node, _)| node)
        .collect();
    let result = FitResult {
        w_hat,
        lambda: problem.lambda,
        objective: fx,
        kkt_residual: kkt,
        iterations,
        converged: kkt <= options.kkt_tol,
        support,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NotConverged {
            iterations,
            kkt_residual: kkt,
            last: Box::new(result),
        })
    }
}

/// Per-node regularization for heterogeneous level counts:
/// `max(c1 sqrt(ln((k_r - 1)(mean k - 1) n) / N) + c2, delta)`.
pub fn lambda_schedule(
    n: usize,
    n_samples: usize,
    levels: &[usize],
    target: usize,
    c1: f64,
    c2: f64,
    delta: f64,
) -> f64 {
    let k_r = levels[target] as f64;
    let mean_k = levels.iter().sum::<usize>() as f64 / levels.len() as f64;
    let arg = (k_r - 1.0) * (mean_k - 1.0) * n as f64;
    scaled_lambda(arg, n_samples, c1, c2, delta)
}

/// Regularization for `n` nodes with `k` levels each:
/// `max(c1 sqrt(ln((k - 1) n) / N) + c2, delta)`.
pub fn lambda_homogeneous(n: usize, n_samples: usize, k: usize, c1: f64, c2: f64, delta: f64) -> f64 {
    scaled_lambda((k as f64 - 1.0) * n as f64, n_samples, c1, c2, delta)
}

fn scaled_lambda(log_arg: f64, n_samples: usize, c1: f64, c2: f64, delta: f64) -> f64 {
    let log = log_arg.ln().max(0.0);
    (c1 * (log / n_samples as f64).sqrt() + c2).max(delta)
}

/// Constants of the regularization schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRule {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
}

impl LambdaRule {
    /// Homogeneous form when every node has the same level count, the
    /// per-node form otherwise.
    pub fn for_node(&self, levels: &[usize], target: usize, n_samples: usize) -> f64 {
        let n = levels.len();
        if levels.iter().all(|&m| m == levels[0]) {
            lambda_homogeneous(n, n_samples, levels[0], self.c1, self.c2, self.delta)
        } else {
            lambda_schedule(n, n_samples, levels, target, self.c1, self.c2, self.delta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_design, Scheme};
    use crate::fixtures;
    use crate::sampler::{ancestral_sample, SampleMatrix};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut k = 0u64;
        DMatrix::from_fn(rows, cols, |_, _| {
            k += 1;
            let h = crate::rng::derive_seed(seed, &[k]);
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
    }

    fn random_samples(levels: Vec<usize>, rows: usize, seed: u64) -> SampleMatrix {
        let n = levels.len();
        let data = (0..rows * n)
            .map(|k| (crate::rng::derive_seed(seed, &[k as u64]) % levels[k % n] as u64) as u16)
            .collect();
        SampleMatrix::new(levels, data).unwrap()
    }

    fn problem(
        levels: Vec<usize>,
        rows: usize,
        target: usize,
        lambda: f64,
        seed: u64,
    ) -> (Problem, EncodedMatrix, EncodedMatrix) {
        let s = random_samples(levels, rows, seed);
        let (x, y) = encode_design(&s, target, Scheme::Effects).unwrap();
        (Problem::new(&x, &y, lambda).unwrap(), x, y)
    }

    #[test]
    fn loss_at_zero() {
        let (p, x, y) = problem(vec![2, 3, 4, 2], 40, 2, 0.1, 1);
        let w = DMatrix::zeros(x.values.ncols(), y.values.ncols());
        let (loss, grad) = loss_and_gradient(&p, &w).unwrap();
        assert!((loss - y.values.norm_squared() / 80.0).abs() < 1e-12);
        let expected = -(x.values.transpose() * &y.values) / 40.0;
        assert!((grad - expected).amax() < 1e-12);
        assert!(matches!(
            loss_and_gradient(&p, &DMatrix::zeros(1, 1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn loss_matches_residual_form() {
        let (p, x, y) = problem(vec![3, 3, 2, 4], 30, 0, 0.0, 5);
        let w = random_matrix(x.values.ncols(), y.values.ncols(), 9);
        let direct = (&y.values - &x.values * &w).norm_squared() / 60.0;
        assert!((loss_and_gradient(&p, &w).unwrap().0 - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_least_squares() {
        let (p, x, y) = problem(vec![2, 3, 2, 3], 200, 1, 0.0, 3);
        let xtx = x.values.transpose() * &x.values;
        let w = xtx.try_inverse().unwrap() * x.values.transpose() * &y.values;
        let (_, g) = loss_and_gradient(&p, &w).unwrap();
        assert!(g.amax() < 1e-10, "{}", g.amax());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (p, x, y) = problem(vec![3, 2, 4, 2, 3], 60, 2, 0.0, 21);
        let w = random_matrix(x.values.ncols(), y.values.ncols(), 2);
        let (_, g) = loss_and_gradient(&p, &w).unwrap();
        for seed in 0..5 {
            let d = random_matrix(w.nrows(), w.ncols(), 100 + seed);
            let h = 1e-5;
            let fp = loss_and_gradient(&p, &(&w + &d * h)).unwrap().0;
            let fm = loss_and_gradient(&p, &(&w - &d * h)).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.component_mul(&d).sum()).abs() < 1e-6);
        }
    }

    #[test]
    fn hessian_examples() {
        let s = random_samples(vec![2; 4], 25, 8);
        let (x, _) = encode_design(&s, 0, Scheme::Effects).unwrap();
        let h = empirical_hessian(&x);
        assert!((0..3).all(|i| (h[(i, i)] - 1.0).abs() < 1e-15));
        assert!(linalg::min_eigenvalue(&h).unwrap() > -1e-12);

        let one = s.select_rows(&[3]).unwrap();
        let (x1, _) = encode_design(&one, 0, Scheme::Effects).unwrap();
        let h1 = empirical_hessian(&x1);
        let row = x1.values.row(0).transpose();
        assert_eq!(h1, &row * row.transpose());

        let coins = fixtures::independent(4, 0.5);
        let big = ancestral_sample(&coins, 100_000, 4).unwrap();
        let (xb, _) = encode_design(&big, 0, Scheme::Effects).unwrap();
        let hb = empirical_hessian(&xb);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(hb[(i, j)].abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn null_model_above_threshold() {
        let (p, _, _) = problem(vec![2, 3, 4, 3], 50, 3, 0.0, 12);
        let thr = p.null_threshold();
        let fit_at = fit(&p.with_lambda(thr * 1.0001).unwrap(), &FitOptions::default()).unwrap();
        assert!(fit_at.w_hat.values().iter().all(|&v| v == 0.0));
        assert!(fit_at.support.is_empty());
        let below = fit(&p.with_lambda(thr * 0.9).unwrap(), &FitOptions::default()).unwrap();
        assert!(!below.support.is_empty());
    }

    #[test]
    fn unregularized_fit_matches_normal_equations() {
        let (p, x, y) = problem(vec![2, 3, 2, 4], 120, 3, 0.0, 77);
        let r = fit(&p, &FitOptions::default()).unwrap();
        let xtx = x.values.transpose() * &x.values;
        let oracle = xtx.try_inverse().unwrap() * x.values.transpose() * &y.values;
        assert!((r.w_hat.values() - oracle).amax() < 1e-6);
    }

    #[test]
    fn objective_is_monotone() {
        let (p, _, _) = problem(vec![3, 3, 3, 3, 3], 40, 1, 0.05, 31);
        let mut last = f64::INFINITY;
        for iters in 1..60 {
            let opts = FitOptions {
                max_iter: iters,
                kkt_tol: 0.0,
                ..FitOptions::default()
            };
            let f = match fit(&p, &opts) {
                Ok(r) => r.objective,
                Err(Error::NotConverged { last, .. }) => last.objective,
                Err(e) => panic!("{e}"),
            };
            assert!(f <= last + 1e-15);
            last = f;
        }
    }

    #[test]
    fn solution_independent_of_start() {
        let (p, x, y) = problem(vec![2, 3, 2, 3, 2], 300, 0, 0.03, 8);
        // agreement to 1e-6 needs a certificate tighter than lambda_min(H_SS) * 1e-6
        let tight = FitOptions {
            kkt_tol: 1e-9,
            ..FitOptions::default()
        };
        let a = fit(&p, &tight).unwrap();
        let h_s = {
            let rows = p.map().support_rows(a.support.iter().copied()).unwrap();
            p.gram().select_rows(&rows).select_columns(&rows)
        };
        assert!(linalg::min_eigenvalue(&h_s).unwrap() > 0.0);
        let opts = FitOptions {
            init: Some(random_matrix(x.values.ncols(), y.values.ncols(), 4)),
            ..tight.clone()
        };
        let b = fit(&p, &opts).unwrap();
        assert!((a.w_hat.values() - b.w_hat.values()).norm() < 1e-6);
        let plain = fit(
            &p,
            &FitOptions {
                accelerate: false,
                ..tight.clone()
            },
        )
        .unwrap();
        assert!((a.w_hat.values() - plain.w_hat.values()).norm() < 1e-6);
    }

    #[test]
    fn chain_support_recovered() {
        let chain = fixtures::binary_chain(4, 0.8);
        let s = ancestral_sample(&chain, 100_000, 17).unwrap();
        let (x, y) = encode_design(&s, 1, Scheme::Effects).unwrap();
        let lambda = lambda_homogeneous(4, 100_000, 2, 1.0, 0.0, 0.01);
        let r = fit(&Problem::new(&x, &y, lambda).unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(r.support, vec![0, 2]);
    }

    #[test]
    fn moments_problem_matches_design_problem() {
        let s = random_samples(vec![2, 4, 3, 2], 90, 44);
        let (x, y) = encode_design(&s, 1, Scheme::Dummy).unwrap();
        let direct = Problem::new(&x, &y, 0.02).unwrap();
        let mm = MomentMatrix::from_samples(&s, Scheme::Dummy);
        let via = Problem::from_moments(&mm, 1, 0.02).unwrap();
        assert!((direct.gram() - via.gram()).amax() < 1e-12);
        assert!((direct.cross() - via.cross()).amax() < 1e-12);
        assert!((direct.response_energy - via.response_energy).abs() < 1e-12);
    }

    #[test]
    fn lambda_schedule_examples() {
        assert_eq!(lambda_schedule(20, 10, &[4; 20], 0, 0.0, 0.05, 0.0), 0.05);
        assert_eq!(lambda_schedule(20, 1_000_000, &[4; 20], 0, 0.0, 0.05, 0.0), 0.05);
        let v = lambda_schedule(20, 1000, &[4; 20], 3, 1.0, 0.0, 0.0);
        assert!((v - (180f64.ln() / 1000.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.0721).abs() < 1e-4);
        let floor = lambda_schedule(20, usize::MAX / 2, &[4; 20], 0, 1.0, 0.0, 0.01);
        assert_eq!(floor, 0.01);
    }

    #[test]
    fn negative_lambda_rejected() {
        let s = random_samples(vec![2; 3], 5, 1);
        let (x, y) = encode_design(&s, 0, Scheme::Effects).unwrap();
        assert!(Problem::new(&x, &y, -1.0).is_err());
    }
}
