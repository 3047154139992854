use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::dense_fourier_basis;
use crate::{OracleError, Result};

/// Gaussian source prior with independent Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSource {
    /// Coefficient-domain mean.
    pub mean: Vec<f64>,
    /// Coefficient-domain variances.
    pub variances: Vec<f64>,
}

/// Conjugate posterior of independent Gaussian sources given
/// `y = sum of sources + N(0, sigma_z^2 I)`.
#[derive(Clone, Debug)]
pub struct ExactGaussianPosterior {
    basis: DMatrix<f64>,
    /// Time-domain posterior mean per source.
    pub means: Vec<Vec<f64>>,
    /// Per coefficient, the `S x S` posterior covariance across sources.
    pub coefficient_covariances: Vec<DMatrix<f64>>,
}

impl ExactGaussianPosterior {
    pub fn n_sources(&self) -> usize {
        self.means.len()
    }

    pub fn stacked_mean(&self) -> Vec<f64> {
        self.means.concat()
    }

    /// Time-domain marginal variance of each coordinate of source `s`.
    pub fn marginal_variances(&self, s: usize) -> Vec<f64> {
        let d = self.basis.nrows();
        (0..d)
            .map(|n| {
                (0..d)
                    .map(|k| self.basis[(n, k)].powi(2) * self.coefficient_covariances[k][(s, s)])
                    .sum()
            })
            .collect()
    }

    /// Full `(S d) x (S d)` covariance over the stacked sources.
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let d = self.basis.nrows();
        let s = self.n_sources();
        let mut out = DMatrix::zeros(s * d, s * d);
        for a in 0..s {
            for b in 0..s {
                let diag = DVector::from_iterator(d, self.coefficient_covariances.iter().map(|c| c[(a, b)]));
                let block = &self.basis * DMatrix::from_diagonal(&diag) * self.basis.transpose();
                out.view_mut((a * d, b * d), (d, d)).copy_from(&block);
            }
        }
        out
    }

    /// Fails if any per-coefficient covariance has an eigenvalue below `-1e-9`.
    pub fn check_psd(&self) -> Result<()> {
        for c in &self.coefficient_covariances {
            let min = SymmetricEigen::new(c.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min < -1e-9 {
                return Err(OracleError::NotPsd(min));
            }
        }
        Ok(())
    }
}

fn validate(sources: &[GaussianSource], y: &[f64], sigma_z: f64) -> Result<usize> {
    let d = y.len();
    if sources.is_empty() {
        return Err(OracleError::Invalid("no sources".into()));
    }
    if !(sigma_z > 0.0) {
        return Err(OracleError::Invalid(format!("sigma_z = {sigma_z} must be positive")));
    }
    for (i, s) in sources.iter().enumerate() {
        if s.mean.len() != d || s.variances.len() != d {
            return Err(OracleError::Invalid(format!("source {i} does not have dimension {d}")));
        }
        if s.variances.iter().any(|v| *v < 0.0) {
            return Err(OracleError::Invalid(format!("source {i} has a negative variance")));
        }
    }
    Ok(d)
}

/// Per-coefficient solution: each Fourier coefficient is an independent
/// scalar linear-Gaussian problem.
pub fn gaussian_posterior_exact(sources: &[GaussianSource], y: &[f64], sigma_z: f64) -> Result<ExactGaussianPosterior> {
    let d = validate(sources, y, sigma_z)?;
    let basis = dense_fourier_basis(d);
    let y_coeffs = basis.transpose() * DVector::from_column_slice(y);
    let n = sources.len();
    let noise = sigma_z * sigma_z;

    let mut coeff_means = vec![vec![0.0; d]; n];
    let mut covs = Vec::with_capacity(d);
    for k in 0..d {
        let total_var: f64 = sources.iter().map(|s| s.variances[k]).sum::<f64>() + noise;
        let residual = y_coeffs[k] - sources.iter().map(|s| s.mean[k]).sum::<f64>();
        for (i, s) in sources.iter().enumerate() {
            coeff_means[i][k] = s.mean[k] + s.variances[k] * residual / total_var;
        }
        covs.push(DMatrix::from_fn(n, n, |a, b| {
            let (va, vb) = (sources[a].variances[k], sources[b].variances[k]);
            let own = if a == b { va } else { 0.0 };
            own - va * vb / total_var
        }));
    }
    let means = coeff_means
        .iter()
        .map(|c| (&basis * DVector::from_column_slice(c)).as_slice().to_vec())
        .collect();
    Ok(ExactGaussianPosterior {
        basis,
        means,
        coefficient_covariances: covs,
    })
}

/// Posterior from the dense formulation.
#[derive(Clone, Debug)]
pub struct DensePosterior {
    pub means: Vec<Vec<f64>>,
    pub covariance: DMatrix<f64>,
}

/// Textbook dense conjugate update on the stacked vector `h`, with
/// `y = A h + z`, `A = [I I ... I]`.
pub fn gaussian_posterior_dense(sources: &[GaussianSource], y: &[f64], sigma_z: f64) -> Result<DensePosterior> {
    let d = validate(sources, y, sigma_z)?;
    let n = sources.len();
    let basis = dense_fourier_basis(d);
    let mut prior_cov = DMatrix::zeros(n * d, n * d);
    let mut prior_mean = DVector::zeros(n * d);
    for (i, s) in sources.iter().enumerate() {
        let cov = &basis * DMatrix::from_diagonal(&DVector::from_column_slice(&s.variances)) * basis.transpose();
        prior_cov.view_mut((i * d, i * d), (d, d)).copy_from(&cov);
        let mean = &basis * DVector::from_column_slice(&s.mean);
        prior_mean.rows_mut(i * d, d).copy_from(&mean);
    }
    let mut a = DMatrix::zeros(d, n * d);
    for i in 0..n {
        a.view_mut((0, i * d), (d, d)).fill_with_identity();
    }
    let innovation = &a * &prior_cov * a.transpose() + DMatrix::identity(d, d) * (sigma_z * sigma_z);
    let chol = innovation
        .cholesky()
        .ok_or(OracleError::Singular("innovation covariance"))?;
    let gain = (chol.solve(&(&a * &prior_cov))).transpose();
    let residual = DVector::from_column_slice(y) - &a * &prior_mean;
    let mean = &prior_mean + &gain * residual;
    let covariance = &prior_cov - &gain * &a * &prior_cov;
    Ok(DensePosterior {
        means: (0..n).map(|i| mean.rows(i * d, d).as_slice().to_vec()).collect(),
        covariance,
    })
}

/// Gradient of the log density of `x_0 + sigma * N(0, I)` under a Gaussian
/// source, evaluated densely: `-B diag(1 / (v + sigma^2)) B^T (x - B mu)`.
pub fn gaussian_smoothed_score(source: &GaussianSource, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let d = validate(std::slice::from_ref(source), x, sigma)?;
    let basis = dense_fourier_basis(d);
    let inv = DVector::from_iterator(d, source.variances.iter().map(|v| (v + sigma * sigma).recip()));
    let precision = &basis * DMatrix::from_diagonal(&inv) * basis.transpose();
    let centred = DVector::from_column_slice(x) - &basis * DVector::from_column_slice(&source.mean);
    Ok((-(precision * centred)).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_source(rng: &mut ChaCha8Rng, d: usize) -> GaussianSource {
        GaussianSource {
            mean: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            variances: (0..d).map(|_| rng.gen_range(0.05..2.0)).collect(),
        }
    }

    #[test]
    fn single_standard_source() {
        let src = GaussianSource {
            mean: vec![0.0; 4],
            variances: vec![1.0; 4],
        };
        let post = gaussian_posterior_exact(&[src], &[0.0; 4], 1.0).unwrap();
        assert!(post.means[0].iter().all(|m| m.abs() < 1e-15));
        for v in post.marginal_variances(0) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_priors_are_exchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_source(&mut rng, 8);
        let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let post = gaussian_posterior_exact(&[src.clone(), src], &y, 0.3).unwrap();
        for (a, b) in post.means[0].iter().zip(&post.means[1]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_and_dense_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let d = 8 + trial % 3;
            let n = 1 + trial % 3;
            let sources: Vec<_> = (0..n).map(|_| random_source(&mut rng, d)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let sigma_z = rng.gen_range(0.01..1.0);
            let diag = gaussian_posterior_exact(&sources, &y, sigma_z).unwrap();
            let dense = gaussian_posterior_dense(&sources, &y, sigma_z).unwrap();
            diag.check_psd().unwrap();
            for (a, b) in diag.stacked_mean().iter().zip(dense.means.concat()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
            let cov = diag.dense_covariance();
            let scale = dense.covariance.abs().max();
            assert!((cov - &dense.covariance).abs().max() <= 1e-9 * scale);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let src = GaussianSource {
            mean: vec![0.0; 2],
            variances: vec![1.0; 2],
        };
        assert!(gaussian_posterior_exact(std::slice::from_ref(&src), &[0.0; 2], 0.0).is_err());
        assert!(gaussian_posterior_exact(&[src], &[0.0; 3], 1.0).is_err());
        assert!(gaussian_posterior_exact(&[], &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn smoothed_score_of_white_source() {
        let src = GaussianSource {
            mean: vec![0.0; 4],
            variances: vec![3.0; 4],
        };
        let x = [1.0, -2.0, 0.5, 4.0];
        let score = gaussian_smoothed_score(&src, &x, 1.0).unwrap();
        for (s, xi) in score.iter().zip(x) {
            assert!((s + xi / 4.0).abs() < 1e-12);
        }
    }
}
