//! Small hand-built networks used throughout the tests, the CLI and the
//! acceptance suite.

use nalgebra::{DMatrix, DVector};

use crate::encoding::{BlockIndexMap, MomentMatrix, Scheme};
use crate::error::Result;
use crate::network::{CategoricalNetwork, Node};

const TF: [&str; 2] = ["T", "F"];

/// Four binary nodes `X1 -> X2 -> X4 <- X3`, levels `[T, F]`.
///
/// `X1` and `X3` are uniform, `X2` copies `X1` with probability `agree`, and
/// `P(X4 = T | x2, x3) = 0.5 + coef * (e(x2) + e(x3))` with `e(T) = 1`,
/// `e(F) = -1`. Under effects coding this gives
/// `E[e1 e2] = 2 agree - 1`, `E[e2 e4] = E[e3 e4] = 2 coef` and
/// `E[e1 e4] = 2 coef (2 agree - 1)`. Fails validation when the conditional
/// probabilities leave `[0, 1]`, i.e. for `|coef| > 0.25`.
pub fn collider(agree: f64, coef: f64) -> Result<CategoricalNetwork> {
    let nodes = (1..=4).map(|i| Node::new(format!("X{i}"), &TF)).collect();
    let parents = vec![vec![], vec![0], vec![], vec![1, 2]];
    let half = vec![vec![0.5, 0.5]];
    let copy = vec![vec![agree, 1.0 - agree], vec![1.0 - agree, agree]];
    // rows: (x2, x3) = (T,T), (T,F), (F,T), (F,F)
    let x4 = [2.0, 0.0, 0.0, -2.0]
        .iter()
        .map(|s| {
            let t = 0.5 + coef * s;
            vec![t, 1.0 - t]
        })
        .collect();
    CategoricalNetwork::new(nodes, parents, vec![half.clone(), copy, half, x4])
}

/// Effects-coded second moments of the [`collider`] structure written
/// directly in terms of `p = E[e1 e2] = E[e2 e4] = E[e3 e4]` and
/// `q = E[e1 e4]`, whether or not a distribution realizes them.
pub fn collider_moments(p: f64, q: f64) -> MomentMatrix {
    #[rustfmt::skip]
    let values = DMatrix::from_row_slice(4, 4, &[
        1.0, p,   0.0, q,
        p,   1.0, 0.0, p,
        0.0, 0.0, 1.0, p,
        q,   p,   p,   1.0,
    ]);
    let levels = vec![2; 4];
    MomentMatrix {
        values,
        means: DVector::zeros(4),
        map: BlockIndexMap::all(&levels),
        scheme: Scheme::Effects,
        levels,
        n_samples: None,
    }
}

/// [`collider`] for parameters known to be valid.
pub fn valid_collider(agree: f64, coef: f64) -> CategoricalNetwork {
    collider(agree, coef).expect("valid fixture parameters")
}

/// Binary chain `X1 -> X2`.
pub fn chain2(p1: f64, p2_given_t: f64, p2_given_f: f64) -> CategoricalNetwork {
    CategoricalNetwork::new(
        vec![Node::new("X1", &TF), Node::new("X2", &TF)],
        vec![vec![], vec![0]],
        vec![
            vec![vec![p1, 1.0 - p1]],
            vec![vec![p2_given_t, 1.0 - p2_given_t], vec![p2_given_f, 1.0 - p2_given_f]],
        ],
    )
    .expect("valid chain")
}

/// Binary chain `X1 -> X2 -> ... -> Xn` where each node copies its parent
/// with probability `agree` and `X1` is uniform.
pub fn binary_chain(n: usize, agree: f64) -> CategoricalNetwork {
    let nodes = (1..=n).map(|i| Node::new(format!("X{i}"), &TF)).collect();
    let parents = (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect();
    let cpts = (0..n)
        .map(|i| {
            if i == 0 {
                vec![vec![0.5, 0.5]]
            } else {
                vec![vec![agree, 1.0 - agree], vec![1.0 - agree, agree]]
            }
        })
        .collect();
    CategoricalNetwork::new(nodes, parents, cpts).expect("valid chain")
}

/// `n` mutually independent binary nodes with `P(T) = p`.
pub fn independent(n: usize, p: f64) -> CategoricalNetwork {
    let nodes = (1..=n).map(|i| Node::new(format!("X{i}"), &TF)).collect();
    CategoricalNetwork::new(nodes, vec![vec![]; n], vec![vec![vec![p, 1.0 - p]]; n]).expect("valid independent network")
}
