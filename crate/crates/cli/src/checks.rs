//! Oracle agreement checks shared by `oracle-check` and the acceptance
//! suite. Each routine takes its problem size so callers can trade runtime
//! for resolution.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use ssnaps::basis::FourierBasis;
use ssnaps::priors::{
    BasisKind, Condition, DiagonalGmmPrior, GmmComponent, GuidedPrior, NfeCounter, Prior, ScorePrior,
    SpectralGaussianPrior,
};
use ssnaps::rng::{self, Phase};
use ssnaps::sampler::{ssnaps_separate, LikelihoodKind, SamplerConfig};
use ssnaps::schedules::{karras_schedule, Denominator, LangevinConfig, RPolicy, INNER_RHO};
use ssnaps::spectral::{crosstalk_grad, crosstalk_loss, rec_loss, rec_loss_grad, stft, StftConfig};
use ssnaps_oracle::{
    gaussian_posterior_dense, gaussian_posterior_exact, gaussian_smoothed_score, grid_posterior, tv_distance,
    GaussianSource, GridSpec, Mixture1d,
};

use crate::CliError;

/// One pass/fail line.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    /// Passes when `value < tolerance`.
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (limit {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn seeded(seed: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    rng::substream(seed, Phase::Synthesis, index, 0)
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative disagreement between the per-coefficient and dense
/// Gaussian posterior solutions over random problems.
pub fn posterior_paths(trials: usize, seed: u64) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut r = seeded(seed, t);
        let d = 6 + t % 4;
        let sources: Vec<GaussianSource> = (0..1 + t % 3)
            .map(|_| GaussianSource {
                mean: (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
                variances: (0..d).map(|_| r.gen_range(0.05..2.0)).collect(),
            })
            .collect();
        let y: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let sigma_z = r.gen_range(0.05..1.0);
        let diag = gaussian_posterior_exact(&sources, &y, sigma_z).map_err(oracle)?;
        let dense = gaussian_posterior_dense(&sources, &y, sigma_z).map_err(oracle)?;
        for (a, b) in diag.stacked_mean().iter().zip(dense.means.concat()) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
        let cov = diag.dense_covariance();
        worst = worst.max((cov - &dense.covariance).abs().max() / dense.covariance.abs().max());
    }
    Ok(worst)
}

fn oracle(e: ssnaps_oracle::OracleError) -> CliError {
    CliError::Usage(format!("oracle: {e}"))
}

/// Largest relative error between the prior's denoiser-based score and the
/// analytic gradient of the smoothed Gaussian log density.
pub fn tweedie(trials: usize, seed: u64) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut r = seeded(seed, t);
        let d = 8 + 4 * (t % 5);
        let mean: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let variances: Vec<f64> = (0..d).map(|_| r.gen_range(0.01..3.0)).collect();
        let prior = SpectralGaussianPrior::new(mean.clone(), variances.clone())?;
        let sigma = 10f64.powf(r.gen_range(-2.0..1.0));
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
        let score = prior.score(&x, sigma, &Condition::Null, &NfeCounter::new())?;
        let exact = gaussian_smoothed_score(&GaussianSource { mean, variances }, &x, sigma).map_err(oracle)?;
        let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = score
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err / norm);
    }
    Ok(worst)
}

/// Finite-difference agreement of the spectral gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReport {
    pub trials: usize,
    /// Worst relative error of the reconstruction-loss gradient.
    pub rec: f64,
    /// Worst relative error of the crosstalk gradient.
    pub crosstalk: f64,
    /// Smallest STFT magnitude met at any evaluation point.
    pub min_magnitude: f64,
}

/// Step of the finite-difference stencil.
pub const FD_STEP: f64 = 1e-3;

/// Magnitudes below this are redrawn so the check stays off the floor.
pub const FD_MIN_MAGNITUDE: f64 = 1e-3;

fn min_magnitude(x: &[f64], cfg: StftConfig) -> Result<f64, CliError> {
    Ok(stft(x, cfg)?
        .data
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min))
}

/// Fourth-order central difference of `f` at 0 along the step `h`.
pub fn central_difference(f: impl Fn(f64) -> Result<f64, CliError>, h: f64) -> Result<f64, CliError> {
    let near = f(h)? - f(-h)?;
    let far = f(2.0 * h)? - f(-2.0 * h)?;
    Ok((8.0 * near - far) / (12.0 * h))
}

/// Directional central differences against `<grad L(x), v>` for random
/// unit directions, on random signals of length `len`. The error is
/// relative to the larger of the two values.
pub fn gradients(trials: usize, len: usize, seed: u64) -> Result<GradientReport, CliError> {
    let cfg = StftConfig::default();
    let mut report = GradientReport {
        trials,
        rec: 0.0,
        crosstalk: 0.0,
        min_magnitude: f64::INFINITY,
    };
    let mut t = 0;
    let mut draw = 0;
    while t < trials {
        let mut r = seeded(seed, draw);
        draw += 1;
        let y = rng::standard_normal_vec(&mut r, len);
        let a = rng::standard_normal_vec(&mut r, len);
        let b = rng::standard_normal_vec(&mut r, len);
        let mut v = rng::standard_normal_vec(&mut r, len);
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vn);
        let shifted = |x: &[f64], h: f64| -> Vec<f64> { x.iter().zip(&v).map(|(x, d)| x + h * d).collect() };

        let mut lowest = f64::INFINITY;
        for h in [-2.0 * FD_STEP, -FD_STEP, 0.0, FD_STEP, 2.0 * FD_STEP] {
            let ah = shifted(&a, h);
            let sum: Vec<f64> = ah.iter().zip(&b).map(|(x, y)| x + y).collect();
            lowest = lowest.min(min_magnitude(&sum, cfg)?).min(min_magnitude(&ah, cfg)?);
        }
        lowest = lowest.min(min_magnitude(&b, cfg)?);
        if lowest < FD_MIN_MAGNITUDE {
            continue;
        }
        report.min_magnitude = report.min_magnitude.min(lowest);

        let g = rec_loss_grad(&y, &[&a, &b], cfg)?;
        let analytic: f64 = g[0].iter().zip(&v).map(|(g, d)| g * d).sum();
        let fd = central_difference(|h| Ok(rec_loss(&y, &[&shifted(&a, h), &b], cfg)?), FD_STEP)?;
        report.rec = report.rec.max(relative(analytic, fd));

        let g = crosstalk_grad(&a, &b, cfg)?;
        let analytic: f64 = g.iter().zip(&v).map(|(g, d)| g * d).sum();
        let fd = central_difference(|h| Ok(crosstalk_loss(&shifted(&a, h), &b, cfg)?), FD_STEP)?;
        report.crosstalk = report.crosstalk.max(relative(analytic, fd));
        t += 1;
    }
    Ok(report)
}

/// Mean-estimate agreement with the exact Gaussian posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianReport {
    pub runs: usize,
    /// RMSE of the sample mean of speech, over the average prior standard
    /// deviation.
    pub rmse_ratio: f64,
    /// The same ratio expected from Monte Carlo error alone.
    pub mc_floor: f64,
    /// Largest |sample mean - exact mean| in standard errors.
    pub worst_z: f64,
    /// Coordinates further than three standard errors from the exact mean.
    pub outside_3se: usize,
    /// Average of sample variance over exact posterior variance.
    pub variance_ratio: f64,
}

/// `d`-dimensional speech-plus-noise problem with low-pass speech and
/// high-pass noise spectra and residual noise `sigma_z = 1e-3`.
pub fn linear_gaussian(d: usize, runs: usize, seed: u64) -> Result<LinearGaussianReport, CliError> {
    let sigma_z = 1e-3;
    let basis = FourierBasis::new(d)?;
    let shape = |j: usize| (basis.normalized_frequency(j) / 0.3).powi(6);
    let speech_var: Vec<f64> = (0..d).map(|j| 1.5 / (1.0 + shape(j)) + 0.01).collect();
    let noise_var: Vec<f64> = (0..d).map(|j| 0.8 * shape(j) / (1.0 + shape(j)) + 0.01).collect();
    let speech = SpectralGaussianPrior::new(vec![0.0; d], speech_var.clone())?;
    let noise = SpectralGaussianPrior::new(vec![0.0; d], noise_var.clone())?;

    let mut r = seeded(seed, 0);
    let s = speech.sample(&mut r);
    let n = noise.sample(&mut r);
    let z = rng::standard_normal_vec(&mut r, d);
    let y: Vec<f64> = (0..d).map(|i| s[i] + n[i] + sigma_z * z[i]).collect();
    let exact = gaussian_posterior_exact(
        &[
            GaussianSource {
                mean: vec![0.0; d],
                variances: speech_var.clone(),
            },
            GaussianSource {
                mean: vec![0.0; d],
                variances: noise_var,
            },
        ],
        &y,
        sigma_z,
    )
    .map_err(oracle)?;

    let config = |run_seed: u64| -> Result<SamplerConfig, CliError> {
        Ok(SamplerConfig {
            schedule: karras_schedule(4.0, 0.01, 100, 10.0)?,
            langevin: LangevinConfig {
                eta0: 1e-6,
                delta: 0.01,
                n_mc: 50,
                alpha: 2f64.sqrt() * sigma_z,
                r_policy: RPolicy::default(),
                likelihood_denominator: Denominator::Squared,
            },
            n_ode: 2,
            inner_rho: INNER_RHO,
            speech_prior: GuidedPrior::unguided(Prior::SpectralGaussian(speech.clone())),
            noise_prior: Prior::SpectralGaussian(noise.clone()),
            conditions: vec![Condition::Null],
            likelihood: LikelihoodKind::Waveform,
            rng_seed: run_seed,
            trace: false,
        })
    };
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for run in 0..runs as u64 {
        let out = ssnaps_separate(&y, &config(seed.wrapping_add(1 + run))?)?;
        for (i, v) in out.state.speech[0].iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }

    let m = runs as f64;
    let post_var = exact.marginal_variances(0);
    let prior_std = (speech_var.iter().sum::<f64>() / d as f64).sqrt();
    let mut sq_err = 0.0;
    let mut worst_z = 0.0f64;
    let mut outside_3se = 0;
    let mut variance_ratio = 0.0;
    for i in 0..d {
        let mean = sum[i] / m;
        let sample_var = (sum_sq[i] / m - mean * mean) * m / (m - 1.0);
        let dev = (mean - exact.means[0][i]).abs();
        let se = (sample_var / m).sqrt();
        sq_err += dev * dev;
        worst_z = worst_z.max(dev / se);
        outside_3se += usize::from(dev > 3.0 * se);
        variance_ratio += sample_var / post_var[i];
    }
    Ok(LinearGaussianReport {
        runs,
        rmse_ratio: (sq_err / d as f64).sqrt() / prior_std,
        mc_floor: (post_var.iter().sum::<f64>() / d as f64 / m).sqrt() / prior_std,
        worst_z,
        outside_3se,
        variance_ratio: variance_ratio / d as f64,
    })
}

/// Sampler law against the tabulated posterior of a scalar problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarGmmReport {
    pub samples: usize,
    pub tv: f64,
    pub sample_mean: f64,
    pub reference_mean: f64,
}

/// Two-component scalar GMM prior observed once through Gaussian noise.
pub fn scalar_gmm(samples: usize, seed: u64) -> Result<ScalarGmmReport, CliError> {
    let (y, sigma_z) = (0.4, 0.6);
    let mixture = Mixture1d {
        weights: vec![0.4, 0.6],
        means: vec![-1.5, 1.2],
        variances: vec![0.25, 0.4],
    };
    let components = (0..2)
        .map(|i| GmmComponent {
            weight: mixture.weights[i],
            mean: vec![mixture.means[i]],
            variances: vec![mixture.variances[i]],
        })
        .collect();
    let prior = Prior::DiagGmm(DiagonalGmmPrior::new(BasisKind::Identity, components, BTreeMap::new())?);
    let reference = grid_posterior(
        &[mixture],
        y,
        sigma_z,
        &GridSpec {
            lo: -5.0,
            hi: 5.0,
            points: 81,
        },
    )
    .map_err(oracle)?
    .marginal(0);

    let base = SamplerConfig {
        schedule: karras_schedule(4.0, 0.05, 100, 10.0)?,
        langevin: LangevinConfig {
            eta0: 1e-3,
            delta: 0.01,
            n_mc: 500,
            alpha: 2f64.sqrt() * sigma_z,
            r_policy: RPolicy {
                r_scale: 1.0,
                denominator: Denominator::TwiceSquared,
            },
            likelihood_denominator: Denominator::Squared,
        },
        n_ode: 2,
        inner_rho: INNER_RHO,
        speech_prior: GuidedPrior::unguided(prior.clone()),
        noise_prior: prior,
        conditions: Vec::new(),
        likelihood: LikelihoodKind::Waveform,
        rng_seed: 0,
        trace: false,
    };
    let draws: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut cfg = base.clone();
            cfg.rng_seed = seed.wrapping_add(i);
            Ok(ssnaps_separate(&[y], &cfg)?.state.noise[0])
        })
        .collect::<Result<_, CliError>>()?;
    let reference_mean = reference.x.iter().zip(reference.bin_masses()).map(|(x, m)| x * m).sum();
    Ok(ScalarGmmReport {
        samples,
        tv: tv_distance(&draws, &reference).map_err(oracle)?,
        sample_mean: draws.iter().sum::<f64>() / samples as f64,
        reference_mean,
    })
}

/// The quick suite behind `ssnaps oracle-check`.
pub fn run_all() -> Result<Vec<CheckResult>, CliError> {
    let mut out = vec![
        CheckResult::below("gaussian posterior: diagonal vs dense", posterior_paths(10, 1)?, 1e-9),
        CheckResult::below("score vs smoothed Gaussian density", tweedie(20, 2)?, 1e-10),
    ];
    let g = gradients(10, 1024, 3)?;
    out.push(CheckResult::below(
        "reconstruction gradient vs finite differences",
        g.rec,
        1e-6,
    ));
    out.push(CheckResult::below(
        "crosstalk gradient vs finite differences",
        g.crosstalk,
        1e-5,
    ));
    let lg = linear_gaussian(64, 100, 4)?;
    out.push(CheckResult::below(
        "linear-Gaussian mean RMSE / prior std",
        lg.rmse_ratio,
        0.05,
    ));
    let gmm = scalar_gmm(500, 5)?;
    out.push(CheckResult::below(
        "scalar GMM total variation (500 samples)",
        gmm.tv,
        0.2,
    ));
    Ok(out)
}
