//! Score priors with closed-form denoisers.
//!
//! Every prior answers `E[x_0 | x_tau]` for `x_tau = x_0 + sigma * eps`
//! exactly, so the Tweedie score `(D(x_tau) - x_tau) / sigma^2` is the true
//! score of the smoothed density. Priors are immutable once built; the only
//! mutable state touched during evaluation is the caller's [`NfeCounter`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::error::{Error, Result};

/// Tolerance on mixture-weight normalization.
const WEIGHT_TOL: f64 = 1e-9;

/// A per-source conditioning token; `Null` selects the unconditional prior.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum Condition {
    #[default]
    Null,
    Token(String),
}

impl Condition {
    pub fn token(label: impl Into<String>) -> Self {
        Condition::Token(label.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }
}

impl From<Option<String>> for Condition {
    fn from(value: Option<String>) -> Self {
        value.map_or(Condition::Null, Condition::Token)
    }
}

impl From<Condition> for Option<String> {
    fn from(value: Condition) -> Self {
        match value {
            Condition::Null => None,
            Condition::Token(t) => Some(t),
        }
    }
}

/// Counts denoiser evaluations. Shareable across threads.
#[derive(Debug, Default)]
pub struct NfeCounter(AtomicU64);

impl NfeCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// A prior that exposes a denoiser and, through Tweedie's formula, a score.
pub trait ScorePrior: Send + Sync {
    fn dim(&self) -> usize;

    /// Posterior mean `E[x_0 | x_tau]` at noise level `sigma`.
    fn denoise(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>>;

    /// `(denoise(x_tau) - x_tau) / sigma^2`.
    fn score(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>> {
        let denoised = self.denoise(x_tau, sigma, cond, nfe)?;
        let inv_var = (sigma * sigma).recip();
        Ok(denoised.iter().zip(x_tau).map(|(d, x)| (d - x) * inv_var).collect())
    }
}

fn check_input(dim: usize, x: &[f64], sigma: f64) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("{sigma} must be positive")));
    }
    Ok(())
}

/// Which coordinates a diagonal covariance is diagonal in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Identity,
    Fourier,
}

#[derive(Clone, Debug)]
enum Coordinates {
    Identity(usize),
    Fourier(FourierBasis),
}

impl Coordinates {
    fn new(kind: BasisKind, dim: usize) -> Result<Self> {
        Ok(match kind {
            BasisKind::Identity => Coordinates::Identity(dim),
            BasisKind::Fourier => Coordinates::Fourier(FourierBasis::new(dim)?),
        })
    }

    fn kind(&self) -> BasisKind {
        match self {
            Coordinates::Identity(_) => BasisKind::Identity,
            Coordinates::Fourier(_) => BasisKind::Fourier,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Coordinates::Identity(d) => *d,
            Coordinates::Fourier(b) => b.dim(),
        }
    }

    fn analyze(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Coordinates::Identity(_) => x.to_vec(),
            Coordinates::Fourier(b) => b.analyze(x),
        }
    }

    fn synthesize(&self, c: Vec<f64>) -> Vec<f64> {
        match self {
            Coordinates::Identity(_) => c,
            Coordinates::Fourier(b) => b.synthesize(&c),
        }
    }

    fn normalized_frequency(&self, j: usize) -> Option<f64> {
        match self {
            Coordinates::Identity(_) => None,
            Coordinates::Fourier(b) => Some(b.normalized_frequency(j)),
        }
    }
}

/// Independent Gaussian coefficients in the real Fourier basis.
#[derive(Clone, Debug)]
pub struct SpectralGaussianPrior {
    basis: FourierBasis,
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl SpectralGaussianPrior {
    /// `mean` and `variances` are in the coefficient domain.
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let dim = variances.len();
        if dim == 0 {
            return Err(Error::Schema("empty variance vector".into()));
        }
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mean.len(),
            });
        }
        validate_variances(&variances)?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Schema("non-finite mean".into()));
        }
        Ok(SpectralGaussianPrior {
            basis: FourierBasis::new(dim)?,
            mean,
            variances,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    /// Mean in the signal domain.
    pub fn signal_mean(&self) -> Vec<f64> {
        self.basis.synthesize(&self.mean)
    }

    fn denoise_unchecked(&self, x_tau: &[f64], sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        let coeffs = self.basis.analyze(x_tau);
        let post: Vec<f64> = coeffs
            .iter()
            .zip(self.mean.iter().zip(&self.variances))
            .map(|(&c, (&m, &v))| (v * c + s2 * m) / (v + s2))
            .collect();
        self.basis.synthesize(&post)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.variances)
            .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.basis.synthesize(&coeffs)
    }
}

impl ScorePrior for SpectralGaussianPrior {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn denoise(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>> {
        check_input(self.dim(), x_tau, sigma)?;
        if let Condition::Token(t) = cond {
            return Err(Error::UnknownCondition(t.clone()));
        }
        nfe.add(1);
        Ok(self.denoise_unchecked(x_tau, sigma))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Mixture of Gaussians with diagonal covariance in a fixed basis.
///
/// Conditional views reweight the components; a view is selected by a
/// condition token and the null token uses the base weights.
#[derive(Clone, Debug)]
pub struct DiagonalGmmPrior {
    coords: Coordinates,
    components: Vec<GmmComponent>,
    views: BTreeMap<String, Vec<f64>>,
}

impl DiagonalGmmPrior {
    pub fn new(basis: BasisKind, components: Vec<GmmComponent>, views: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Schema("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Schema("empty component mean".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.variances.len() != dim {
                return Err(Error::Schema(format!(
                    "component {i} has mean/variance lengths {}/{}; expected {dim}",
                    c.mean.len(),
                    c.variances.len()
                )));
            }
            validate_variances(&c.variances)?;
        }
        let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
        validate_weights("weights", &weights)?;
        for (token, w) in &views {
            if w.len() != components.len() {
                return Err(Error::Schema(format!(
                    "view `{token}` has {} weights for {} components",
                    w.len(),
                    components.len()
                )));
            }
            validate_weights("conditional_views", w)?;
        }
        Ok(DiagonalGmmPrior {
            coords: Coordinates::new(basis, dim)?,
            components,
            views,
        })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn basis_kind(&self) -> BasisKind {
        self.coords.kind()
    }

    pub fn views(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.views
    }

    pub fn weights(&self, cond: &Condition) -> Result<Vec<f64>> {
        match cond {
            Condition::Null => Ok(self.components.iter().map(|c| c.weight).collect()),
            Condition::Token(t) => self
                .views
                .get(t)
                .cloned()
                .ok_or_else(|| Error::UnknownCondition(t.clone())),
        }
    }

    fn denoise_unchecked(&self, x_tau: &[f64], sigma: f64, weights: &[f64]) -> Vec<f64> {
        let s2 = sigma * sigma;
        let coeffs = self.coords.analyze(x_tau);
        // Log responsibilities under N(mean, diag(v) + s2 I), max-shifted.
        let log_resp: Vec<f64> = self
            .components
            .iter()
            .zip(weights)
            .map(|(c, &w)| {
                if w <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let quad: f64 = coeffs
                    .iter()
                    .zip(c.mean.iter().zip(&c.variances))
                    .map(|(&x, (&m, &v))| {
                        let var = v + s2;
                        var.ln() + (x - m) * (x - m) / var
                    })
                    .sum();
                w.ln() - 0.5 * quad
            })
            .collect();
        let max = log_resp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = log_resp.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();

        let mut post = vec![0.0; coeffs.len()];
        for (c, r) in self.components.iter().zip(&resp) {
            if *r == 0.0 {
                continue;
            }
            let r = r / total;
            for (k, out) in post.iter_mut().enumerate() {
                let v = c.variances[k];
                *out += r * (v * coeffs[k] + s2 * c.mean[k]) / (v + s2);
            }
        }
        self.coords.synthesize(post)
    }

    /// Draws from the view selected by `cond`.
    pub fn sample<R: Rng + ?Sized>(&self, cond: &Condition, rng: &mut R) -> Result<Vec<f64>> {
        let weights = self.weights(cond)?;
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| Error::Schema(format!("cannot sample weights: {e}")))?
            .sample(rng);
        let c = &self.components[pick];
        let coeffs = c
            .mean
            .iter()
            .zip(&c.variances)
            .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(self.coords.synthesize(coeffs))
    }
}

impl ScorePrior for DiagonalGmmPrior {
    fn dim(&self) -> usize {
        self.coords.dim()
    }

    fn denoise(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>> {
        check_input(self.dim(), x_tau, sigma)?;
        let weights = self.weights(cond)?;
        nfe.add(1);
        Ok(self.denoise_unchecked(x_tau, sigma, &weights))
    }
}

fn validate_variances(v: &[f64]) -> Result<()> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Schema(format!("variance[{i}] = {x} is negative or non-finite")));
    }
    Ok(())
}

fn validate_weights(what: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Schema(format!("{what}: negative or non-finite weight in {w:?}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Schema(format!("{what}: weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Any of the supported prior families.
#[derive(Clone, Debug)]
pub enum Prior {
    SpectralGaussian(SpectralGaussianPrior),
    DiagGmm(DiagonalGmmPrior),
}

impl Prior {
    pub fn as_gaussian(&self) -> Option<&SpectralGaussianPrior> {
        match self {
            Prior::SpectralGaussian(g) => Some(g),
            Prior::DiagGmm(_) => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, cond: &Condition, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Prior::SpectralGaussian(g) => match cond {
                Condition::Null => Ok(g.sample(rng)),
                Condition::Token(t) => Err(Error::UnknownCondition(t.clone())),
            },
            Prior::DiagGmm(m) => m.sample(cond, rng),
        }
    }

    pub fn to_document(&self) -> PriorDocument {
        match self {
            Prior::SpectralGaussian(g) => PriorDocument::SpectralGaussian {
                dim: g.dim(),
                mean: Some(g.mean.clone()),
                variances: VarianceSpec::Dense(g.variances.clone()),
            },
            Prior::DiagGmm(m) => PriorDocument::DiagGmm {
                dim: m.dim(),
                basis: m.basis_kind(),
                components: m
                    .components
                    .iter()
                    .map(|c| ComponentDocument {
                        weight: c.weight,
                        mean: Some(c.mean.clone()),
                        variances: VarianceSpec::Dense(c.variances.clone()),
                    })
                    .collect(),
                conditional_views: m.views.clone(),
            },
        }
    }

    pub fn from_document(doc: &PriorDocument) -> Result<Self> {
        match doc {
            PriorDocument::SpectralGaussian { dim, mean, variances } => {
                let basis = Coordinates::new(BasisKind::Fourier, *dim)?;
                let variances = variances.resolve(*dim, &basis)?;
                let mean = resolve_mean(mean.as_deref(), *dim)?;
                Ok(Prior::SpectralGaussian(SpectralGaussianPrior::new(mean, variances)?))
            }
            PriorDocument::DiagGmm {
                dim,
                basis,
                components,
                conditional_views,
            } => {
                let coords = Coordinates::new(*basis, *dim)?;
                let components = components
                    .iter()
                    .map(|c| {
                        Ok(GmmComponent {
                            weight: c.weight,
                            mean: resolve_mean(c.mean.as_deref(), *dim)?,
                            variances: c.variances.resolve(*dim, &coords)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prior::DiagGmm(DiagonalGmmPrior::new(
                    *basis,
                    components,
                    conditional_views.clone(),
                )?))
            }
        }
    }
}

impl ScorePrior for Prior {
    fn dim(&self) -> usize {
        match self {
            Prior::SpectralGaussian(g) => g.dim(),
            Prior::DiagGmm(m) => m.dim(),
        }
    }

    fn denoise(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>> {
        match self {
            Prior::SpectralGaussian(g) => g.denoise(x_tau, sigma, cond, nfe),
            Prior::DiagGmm(m) => m.denoise(x_tau, sigma, cond, nfe),
        }
    }
}

/// How conditional and unconditional denoiser outputs are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceRule {
    /// `D_null + omega * (D_cond - D_null)`.
    #[default]
    Interpolate,
    /// `(1 + omega) * D_cond - omega * D_null`.
    Extrapolate,
}

/// Classifier-free guidance wrapper around a conditional prior.
#[derive(Clone, Debug)]
pub struct GuidedPrior {
    pub base: Prior,
    pub omega: f64,
    pub rule: GuidanceRule,
}

impl GuidedPrior {
    pub fn new(base: Prior, omega: f64, rule: GuidanceRule) -> Result<Self> {
        if !omega.is_finite() {
            return Err(Error::invalid("omega", "must be finite"));
        }
        Ok(GuidedPrior { base, omega, rule })
    }

    /// Guidance disabled: every evaluation is a plain denoise.
    pub fn unguided(base: Prior) -> Self {
        GuidedPrior {
            base,
            omega: 1.0,
            rule: GuidanceRule::Interpolate,
        }
    }
}

impl ScorePrior for GuidedPrior {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Two base evaluations for a real token, one for the null token.
    fn denoise(&self, x_tau: &[f64], sigma: f64, cond: &Condition, nfe: &NfeCounter) -> Result<Vec<f64>> {
        if cond.is_null() {
            return self.base.denoise(x_tau, sigma, cond, nfe);
        }
        let uncond = self.base.denoise(x_tau, sigma, &Condition::Null, nfe)?;
        let guided = self.base.denoise(x_tau, sigma, cond, nfe)?;
        let w = self.omega;
        Ok(uncond
            .iter()
            .zip(&guided)
            .map(|(&u, &c)| match self.rule {
                GuidanceRule::Interpolate => u + w * (c - u),
                GuidanceRule::Extrapolate => (1.0 + w) * c - w * u,
            })
            .collect())
    }
}

/// Variance vector, either explicit or described by frequency bands.
///
/// Band edges are fractions of Nyquist; a band covers `lo <= f < hi`, except
/// that `hi == 1` also includes the Nyquist coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarianceSpec {
    Dense(Vec<f64>),
    Banded {
        #[serde(default)]
        floor: f64,
        bands: Vec<Band>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub variance: f64,
}

impl VarianceSpec {
    fn resolve(&self, dim: usize, coords: &Coordinates) -> Result<Vec<f64>> {
        match self {
            VarianceSpec::Dense(v) => {
                if v.len() != dim {
                    return Err(Error::Schema(format!(
                        "variance array has {} entries; dim is {dim}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
            VarianceSpec::Banded { floor, bands } => {
                let mut out = vec![*floor; dim];
                for (j, slot) in out.iter_mut().enumerate() {
                    let f = coords
                        .normalized_frequency(j)
                        .ok_or_else(|| Error::Schema("banded variances require the fourier basis".into()))?;
                    for b in bands {
                        if !(b.lo <= b.hi) {
                            return Err(Error::Schema(format!("band [{}, {}) is reversed", b.lo, b.hi)));
                        }
                        if f >= b.lo && (f < b.hi || (b.hi >= 1.0 && f <= 1.0)) {
                            *slot += b.variance;
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

fn resolve_mean(mean: Option<&[f64]>, dim: usize) -> Result<Vec<f64>> {
    match mean {
        None => Ok(vec![0.0; dim]),
        Some(m) if m.len() == dim => Ok(m.to_vec()),
        Some(m) => Err(Error::Schema(format!("mean has {} entries; dim is {dim}", m.len()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    pub variances: VarianceSpec,
}

/// On-disk prior description (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorDocument {
    SpectralGaussian {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        variances: VarianceSpec,
    },
    DiagGmm {
        dim: usize,
        #[serde(default)]
        basis: BasisKind,
        components: Vec<ComponentDocument>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        conditional_views: BTreeMap<String, Vec<f64>>,
    },
}

pub fn parse_prior(json: &str) -> Result<Prior> {
    let doc: PriorDocument = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    Prior::from_document(&doc)
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<Prior> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prior(&text)
}

pub fn save_prior(prior: &Prior, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&prior.to_document())?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
