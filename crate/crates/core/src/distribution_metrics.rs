//! Fréchet distance between Gaussians fitted to two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor_io::LatentMatrix;

/// Eigenvalues down to this value are treated as rounding noise and clamped to zero.
pub const EIGEN_TOLERANCE: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    n: usize,
}

impl GaussianStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d * d {
            return Err(Error::DimMismatch {
                expected: d * d,
                actual: sigma.len(),
            });
        }
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let sigma = DMatrix::from_row_slice(d, d, &sigma);
        if (&sigma - sigma.transpose()).amax() > 1e-8 {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        psd_sqrt(&sigma)?;
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mu.as_slice()
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Column means and the unbiased (N-1) sample covariance.
pub fn gaussian_stats(features: &LatentMatrix) -> Result<GaussianStats> {
    let n = features.n_rows();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let d = features.dim();
    let x = DMatrix::from_row_iterator(n, d, features.data().iter().map(|&v| v as f64));
    let mu = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut sigma = centered.transpose() * &centered / (n - 1) as f64;
    // exact symmetry; the product can differ in the last bit
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(GaussianStats { mu, sigma, n })
}

/// Symmetric square root via eigendecomposition.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = checked_roots(eig.eigenvalues.as_slice())?;
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&DVector::from_vec(roots)) * v.transpose())
}

fn checked_roots(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    eigenvalues
        .iter()
        .map(|&l| {
            if l < EIGEN_TOLERANCE {
                Err(Error::NotPsd { eigenvalue: l })
            } else {
                Ok(l.max(0.0).sqrt())
            }
        })
        .collect()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, clamped at zero.
///
/// The trace of the cross term is taken from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which shares them with `S_a S_b`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let root_a = psd_sqrt(&a.sigma)?;
    let inner = &root_a * &b.sigma * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = checked_roots(SymmetricEigen::new(inner).eigenvalues.as_slice())?
        .iter()
        .sum();
    Ok((mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn features(rows: &[Vec<f32>]) -> LatentMatrix {
        let ids = (0..rows.len()).map(|i| format!("f{i}")).collect();
        LatentMatrix::from_rows(ids, rows, rows[0].len()).unwrap()
    }

    #[test]
    fn two_point_stats() {
        let s = gaussian_stats(&features(&[vec![0.0, 0.0], vec![2.0, 0.0]])).unwrap();
        assert_eq!(s.mean(), &[1.0, 0.0]);
        assert_eq!(s.covariance(0, 0), 2.0);
        assert_eq!(s.covariance(0, 1), 0.0);
        assert_eq!(s.covariance(1, 1), 0.0);
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let s = gaussian_stats(&features(&vec![vec![1.5, -2.0]; 5])).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(s.covariance(i, j), 0.0);
            }
        }
        assert!(matches!(
            gaussian_stats(&features(&[vec![1.0]])),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn recovers_diagonal_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stds = [0.5f64, 1.0, 1.5, 2.0];
        let rows: Vec<Vec<f32>> = (0..500)
            .map(|_| {
                stds.iter()
                    .map(|&s| Normal::new(0.0, s).unwrap().sample(&mut rng) as f32)
                    .collect()
            })
            .collect();
        let st = gaussian_stats(&features(&rows)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let truth = if i == j { stds[i] * stds[i] } else { 0.0 };
                // four standard errors of the sample covariance
                let se = ((stds[i] * stds[i] * stds[j] * stds[j] + truth * truth) / 500.0).sqrt();
                assert!((st.covariance(i, j) - truth).abs() < 4.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn one_dimensional_shift() {
        let a = GaussianStats::new(vec![0.0], vec![1.0], 10).unwrap();
        let b = GaussianStats::new(vec![1.0], vec![1.0], 10).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-8);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            GaussianStats::new(vec![0.0], vec![-1.0], 10),
            Err(Error::NotPsd { .. })
        ));
        assert!(GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.0, 1.0], 10).is_err());
        let a = GaussianStats::new(vec![0.0], vec![1.0], 10).unwrap();
        let b = GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 10).unwrap();
        assert!(matches!(
            frechet_distance(&a, &b),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn tiny_negative_eigenvalues_clamp() {
        let a = GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, -5e-7], 10).unwrap();
        assert!(frechet_distance(&a, &a).unwrap() >= 0.0);
    }
}
