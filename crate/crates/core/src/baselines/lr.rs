use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge strength used when the design matrix is rank deficient.
pub const RIDGE_FALLBACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Set when the ridge fallback was needed.
    pub ridge: Option<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Least squares with intercept. `features` holds `targets.len()` rows of
/// `feature_len` values.
pub fn lr_fit(features: &[f64], feature_len: usize, targets: &[f64]) -> Result<LinearModel> {
    let n = targets.len();
    if n < 2 {
        return Err(Error::Empty(format!("linear regression needs >= 2 instances, got {n}")));
    }
    if features.len() != n * feature_len {
        return Err(Error::Dimension(format!("{} feature values for {n} × {feature_len}", features.len())));
    }
    let k = feature_len;
    let mut means = vec![0.0; k];
    for row in features.chunks(k.max(1)).take(n) {
        means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = targets.iter().sum::<f64>() / n as f64;

    let x = DMatrix::from_fn(n, k, |i, j| features[i * k + j] - means[j]);
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));

    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * n.max(k) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let (beta, ridge) = if rank == k && sigma_max > 0.0 {
        let beta = svd.solve(&y, cutoff).map_err(|e| Error::Config(e.to_string()))?;
        (beta, None)
    } else {
        log::warn!("design matrix has rank {rank} < {k}; using ridge {RIDGE_FALLBACK}");
        let xt = x.transpose();
        let gram = &xt * &x + DMatrix::identity(k, k) * RIDGE_FALLBACK;
        let rhs = &xt * &y;
        let beta =
            gram.cholesky().ok_or_else(|| Error::Config("ridge system is not positive definite".into()))?.solve(&rhs);
        (beta, Some(RIDGE_FALLBACK))
    };
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel { coefficients, intercept, ridge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_feature_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = lr_fit(&x, 1, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert_eq!(m.ridge, None);
    }

    #[test]
    fn affine_targets_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 5;
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..50 * k).map(|_| rng.random_range(0.0..3.0)).collect();
        let y: Vec<f64> = x.chunks(k).map(|r| 0.3 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let m = lr_fit(&x, k, &y).unwrap();
        for (r, t) in x.chunks(k).zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_feature_uses_ridge() {
        let x: Vec<f64> = (0..10).flat_map(|i| [i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let m = lr_fit(&x, 2, &y).unwrap();
        assert_eq!(m.ridge, Some(RIDGE_FALLBACK));
        assert!((m.predict(&[4.0, 1.0]) - 2.0).abs() < 1e-6);
        let zeros = vec![0.0; 20];
        let m = lr_fit(&zeros, 2, &y).unwrap();
        assert!((m.predict(&[0.0, 0.0]) - 2.25).abs() < 1e-12);
        assert!(lr_fit(&[1.0], 1, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal_to_features(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, k) = (40, 4);
            let x: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = lr_fit(&x, k, &y).unwrap();
            let resid: Vec<f64> = x.chunks(k).zip(&y).map(|(r, t)| t - m.predict(r)).collect();
            prop_assert!(resid.iter().sum::<f64>().abs() < 1e-6);
            for j in 0..k {
                let dot: f64 = x.chunks(k).zip(&resid).map(|(r, e)| r[j] * e).sum();
                prop_assert!(dot.abs() < 1e-6);
            }
        }

        #[test]
        fn permutation_invariant(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, k) = (30, 3);
            let rows: Vec<(Vec<f64>, f64)> = (0..n)
                .map(|_| ((0..k).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.0..1.0)))
                .collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng);
            let fit = |r: &[(Vec<f64>, f64)]| {
                let x: Vec<f64> = r.iter().flat_map(|(f, _)| f.clone()).collect();
                let y: Vec<f64> = r.iter().map(|(_, t)| *t).collect();
                lr_fit(&x, k, &y).unwrap()
            };
            let (a, b) = (fit(&rows), fit(&shuffled));
            let q = [0.2, -0.4, 0.9];
            prop_assert!((a.predict(&q) - b.predict(&q)).abs() < 1e-9);
        }
    }
}
