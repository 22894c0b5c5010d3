//! Ridge regression over mean-pooled document embeddings.

use crate::nn::{EmbeddingTable, PAD};
use crate::tensor::Tensor;
use crate::train::EncodedSet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: f64,
    /// Max-norm residual of the solved normal equations.
    pub residual: f64,
}

/// Mean of the rows of a `D×N` document not flagged as padding.
pub fn mean_pool(doc: &Tensor, pad_mask: &[bool]) -> Result<Vec<f64>> {
    let [d, n] = *doc.shape() else {
        return Err(Error::Shape(format!("document must be D×N, got {:?}", doc.shape())));
    };
    if pad_mask.len() != d {
        return Err(Error::Shape(format!("pad mask has {} entries for {d} rows", pad_mask.len())));
    }
    let mut out = vec![0.0; n];
    let mut count = 0usize;
    for (row, &pad) in doc.data().chunks(n).zip(pad_mask) {
        if !pad {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid("cannot pool a document made only of padding".into()));
    }
    out.iter_mut().for_each(|o| *o /= count as f64);
    Ok(out)
}

/// Pooled feature rows for every document of `set`.
pub fn pooled_features(set: &EncodedSet, table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    (0..set.len())
        .map(|i| {
            let ids = set.doc(i);
            let doc = table.embed_lookup(ids)?;
            let mask: Vec<bool> = ids.iter().map(|&t| t == PAD).collect();
            mean_pool(&doc, &mask)
        })
        .collect()
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Numerical(
                "ridge normal equations are singular; use alpha > 0".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let n = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("feature rows have different lengths".into()));
    }
    Ok(n)
}

/// Closed-form ridge fit with an unregularised bias.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel> {
    if x.is_empty() {
        return Err(Error::Invalid("ridge needs at least one example".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.len(), y.len())));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Invalid(format!("alpha must be ≥ 0, got {alpha}")));
    }
    let n = check_rows(x)?;
    // Augmented system over [w; b]; the last coordinate is the bias.
    let dim = n + 1;
    let mut a = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..dim {
            let xi = if i < n { row[i] } else { 1.0 };
            rhs[i] += xi * t;
            for j in 0..dim {
                let xj = if j < n { row[j] } else { 1.0 };
                a[i][j] += xi * xj;
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate().take(n) {
        r[i] += alpha;
    }
    let residual_of = |sol: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| a[i].iter().zip(sol).map(|(p, q)| p * q).sum::<f64>() - rhs[i])
            .collect()
    };
    let mut sol = solve(a.clone(), rhs.clone())?;
    let mut r = residual_of(&sol);
    // one round of iterative refinement
    if let Ok(corr) = solve(a.clone(), r.clone()) {
        let refined: Vec<f64> = sol.iter().zip(&corr).map(|(s, c)| s - c).collect();
        let r2 = residual_of(&refined);
        if max_abs(&r2) < max_abs(&r) {
            sol = refined;
            r = r2;
        }
    }
    let residual = max_abs(&r);
    if !(residual < 1e-8) {
        return Err(Error::Numerical(format!(
            "ridge solve residual {residual:e} exceeds 1e-8; the system is ill-conditioned"
        )));
    }
    let bias = sol.pop().expect("dim ≥ 1");
    Ok(RidgeModel {
        weights: sol,
        bias,
        alpha,
        residual,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn ridge_predict(model: &RidgeModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .map(|row| {
            if row.len() != model.weights.len() {
                return Err(Error::Shape(format!(
                    "feature row has {} values, model expects {}",
                    row.len(),
                    model.weights.len()
                )));
            }
            Ok(row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>() + model.bias)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn norm(w: &[f64]) -> f64 {
        w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn random_rows(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn pooling_examples() {
        let r = [0.5, -1.5, 2.0];
        let one = Tensor::new([1, 3], r.to_vec()).unwrap();
        assert_eq!(mean_pool(&one, &[false]).unwrap(), r);
        let pm = Tensor::new([2, 3], vec![0.5, -1.5, 2.0, -0.5, 1.5, -2.0]).unwrap();
        assert_eq!(mean_pool(&pm, &[false, false]).unwrap(), vec![0.0; 3]);
        let padded = Tensor::new([2, 3], vec![0.5, -1.5, 2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(mean_pool(&padded, &[false, true]).unwrap(), r);
        assert!(mean_pool(&padded, &[true, true]).is_err());
    }

    #[test]
    fn recovers_planted_solution() {
        let x = random_rows(40, 5, 1);
        let w = [0.3, -1.2, 2.0, 0.0, 0.7];
        let b = -0.4;
        let y: Vec<f64> = x.iter().map(|r| r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b).collect();
        let m = ridge_fit(&x, &y, 1e-8).unwrap();
        for (got, want) in m.weights.iter().zip(&w) {
            assert!((got - want).abs() < 1e-6);
        }
        assert!((m.bias - b).abs() < 1e-6);
        let pred = ridge_predict(&m, &x).unwrap();
        let mae = pred.iter().zip(&y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64;
        assert!(mae < 1e-6);
        assert!(m.residual < 1e-8);
    }

    #[test]
    fn strong_shrinkage_limit() {
        let x = random_rows(30, 3, 2);
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[2] + 5.0).collect();
        let small = ridge_fit(&x, &y, 1e-8).unwrap();
        let big = ridge_fit(&x, &y, 1e9).unwrap();
        assert!(norm(&big.weights) < 1e-6 * norm(&small.weights));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((big.bias - mean).abs() < 1e-6);
    }

    #[test]
    fn two_point_case() {
        let m = ridge_fit(&[vec![1.0], vec![2.0]], &[1.0, 2.0], 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_without_alpha_is_singular() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(ridge_fit(&x, &y, 0.0), Err(Error::Numerical(_))));
        assert!(ridge_fit(&x, &y, 1e-3).is_ok());
    }

    #[test]
    fn least_squares_beats_grid() {
        let x = random_rows(25, 2, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = x.iter().map(|r| 0.8 * r[0] - 0.3 * r[1] + 0.2 + rng.random_range(-0.5..0.5)).collect();
        let m = ridge_fit(&x, &y, 0.0).unwrap();
        let sse = |w0: f64, w1: f64, b: f64| -> f64 { x.iter().zip(&y).map(|(r, t)| (w0 * r[0] + w1 * r[1] + b - t).powi(2)).sum() };
        let best = sse(m.weights[0], m.weights[1], m.bias);
        for i in 0..=200 {
            for j in 0..=200 {
                let (w0, w1) = (-1.0 + i as f64 * 0.01, -1.0 + j as f64 * 0.01);
                // optimal bias for this grid point
                let b = x.iter().zip(&y).map(|(r, t)| t - w0 * r[0] - w1 * r[1]).sum::<f64>() / y.len() as f64;
                assert!(best <= sse(w0, w1, b) + 1e-12);
            }
        }
    }

    #[test]
    fn weight_norm_shrinks_with_alpha() {
        let x = random_rows(20, 4, 5);
        let y: Vec<f64> = x.iter().map(|r| r[0] + 2.0 * r[1] - r[3]).collect();
        let norms: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&a| norm(&ridge_fit(&x, &y, a).unwrap().weights))
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
    }

    #[test]
    fn predict_is_affine() {
        let m = RidgeModel {
            weights: vec![0.5, -2.0],
            bias: 1.5,
            alpha: 0.0,
            residual: 0.0,
        };
        let x1 = random_rows(6, 2, 6);
        let x2 = random_rows(6, 2, 7);
        let sum: Vec<Vec<f64>> = x1.iter().zip(&x2).map(|(a, b)| vec![a[0] + b[0], a[1] + b[1]]).collect();
        let (p1, p2, ps) = (ridge_predict(&m, &x1).unwrap(), ridge_predict(&m, &x2).unwrap(), ridge_predict(&m, &sum).unwrap());
        for i in 0..6 {
            assert!((ps[i] - (p1[i] + p2[i] - m.bias)).abs() < 1e-12);
        }
        let zero = RidgeModel { weights: vec![0.0, 0.0], ..m };
        assert!(ridge_predict(&zero, &x1).unwrap().iter().all(|&p| p == 1.5));
        assert!(ridge_predict(&zero, &[vec![1.0]]).is_err());
    }
}
