//! The annealed decoupled posterior sampler.
//!
//! Each outer step at level `sigma` runs three phases:
//!
//! 1. every source is mapped to a prior-only anchor by an Euler solve of the
//!    probability-flow ODE from `sigma` down to [`TAU_MIN`];
//! 2. a block of Langevin iterations samples each source from the product of
//!    a Gaussian around its anchor and the shared mixture likelihood;
//! 3. the Langevin output is re-noised to the next level.
//!
//! The prior term of a source only touches that source. The likelihood
//! depends on the sources only through their sum, so its gradient is computed
//! once per iteration and applied to every source.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{Condition, GuidedPrior, NfeCounter, Prior, ScorePrior};
use crate::rng::{self, Phase};
use crate::schedules::{langevin_step_size, DiffusionSchedule, LangevinConfig, TAU_MIN};
use crate::spectral::{Crosstalk, SpectralLikelihood, StftConfig};

/// Estimates for the `K` speech sources and the noise source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceState {
    pub speech: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

impl SourceState {
    pub fn new(speech: Vec<Vec<f64>>, noise: Vec<f64>) -> Result<Self> {
        let d = noise.len();
        if let Some(bad) = speech.iter().find(|s| s.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(SourceState { speech, noise })
    }

    pub fn k(&self) -> usize {
        self.speech.len()
    }

    pub fn dim(&self) -> usize {
        self.noise.len()
    }

    /// Speech sources followed by the noise source.
    pub fn sources(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.speech.iter().chain(std::iter::once(&self.noise))
    }

    pub fn sources_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.speech.iter_mut().chain(std::iter::once(&mut self.noise))
    }

    pub fn source(&self, index: usize) -> &[f64] {
        if index < self.k() {
            &self.speech[index]
        } else {
            &self.noise
        }
    }

    pub fn sum(&self) -> Vec<f64> {
        let mut sum = self.noise.clone();
        for s in &self.speech {
            for (acc, v) in sum.iter_mut().zip(s) {
                *acc += v;
            }
        }
        sum
    }

    fn check_finite(&self, sigma: f64, iteration: usize) -> Result<()> {
        for (i, s) in self.sources().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    sigma,
                    iteration,
                    source_index: i,
                });
            }
        }
        Ok(())
    }
}

/// Data-fidelity term `L` of the Langevin updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LikelihoodKind {
    /// `||S(y) - S(sum)||^2` on the compressed STFT.
    CompressedSpectral {
        #[serde(default)]
        stft: StftConfig,
    },
    /// `||y - sum||^2` in the time domain. With Gaussian priors the exact
    /// posterior is available in closed form.
    Waveform,
}

impl Default for LikelihoodKind {
    fn default() -> Self {
        LikelihoodKind::CompressedSpectral {
            stft: StftConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Likelihood {
    Spectral(SpectralLikelihood),
    Waveform(Vec<f64>),
}

impl Likelihood {
    pub fn new(y: &[f64], kind: LikelihoodKind) -> Result<Self> {
        Ok(match kind {
            LikelihoodKind::CompressedSpectral { stft } => Likelihood::Spectral(SpectralLikelihood::new(y, stft)?),
            LikelihoodKind::Waveform => Likelihood::Waveform(y.to_vec()),
        })
    }

    pub fn loss_and_grad(&self, sum: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Likelihood::Spectral(s) => s.loss_and_grad(sum),
            Likelihood::Waveform(y) => {
                if sum.len() != y.len() {
                    return Err(Error::DimensionMismatch {
                        expected: y.len(),
                        got: sum.len(),
                    });
                }
                let mut loss = 0.0;
                let grad = sum
                    .iter()
                    .zip(y)
                    .map(|(s, y)| {
                        let r = s - y;
                        loss += r * r;
                        2.0 * r
                    })
                    .collect();
                Ok((loss, grad))
            }
        }
    }
}

/// Everything the sampler needs besides the mixture.
#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub schedule: DiffusionSchedule,
    pub langevin: LangevinConfig,
    pub n_ode: usize,
    /// Curvature exponent of the inner ODE grids.
    pub inner_rho: f64,
    pub speech_prior: GuidedPrior,
    pub noise_prior: Prior,
    /// One condition per speech source; the length fixes `K`.
    pub conditions: Vec<Condition>,
    pub likelihood: LikelihoodKind,
    pub rng_seed: u64,
    /// Record per-outer-step loss traces.
    pub trace: bool,
}

impl SamplerConfig {
    pub fn k(&self) -> usize {
        self.conditions.len()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.langevin.validate()?;
        if self.n_ode == 0 {
            return Err(Error::invalid("n_ode", "must be at least 1"));
        }
        if !(self.inner_rho > 0.0) {
            return Err(Error::invalid("inner_rho", "must be positive"));
        }
        if self.schedule.sigma_min() <= TAU_MIN {
            return Err(Error::invalid(
                "sigma_min",
                format!("{} must exceed tau_min = {TAU_MIN}", self.schedule.sigma_min()),
            ));
        }
        for (what, dim) in [
            ("speech_prior", self.speech_prior.dim()),
            ("noise_prior", self.noise_prior.dim()),
        ] {
            if dim != d {
                return Err(Error::invalid(
                    what,
                    format!("dimension {dim} does not match the mixture ({d})"),
                ));
            }
        }
        if let LikelihoodKind::CompressedSpectral { stft } = self.likelihood {
            stft.validate()?;
            if d < stft.window {
                return Err(Error::SignalTooShort {
                    len: d,
                    window: stft.window,
                });
            }
        }
        Ok(())
    }
}

/// Crosstalk penalty for the single off-screen speaker, which is the last
/// speech source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffscreenConfig {
    pub g_ctss: f64,
    pub sigma_os: f64,
}

impl OffscreenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_ctss >= 0.0) || !self.g_ctss.is_finite() {
            return Err(Error::invalid(
                "g_ctss",
                format!("{} must be non-negative", self.g_ctss),
            ));
        }
        if !(self.sigma_os > 0.0) {
            return Err(Error::invalid(
                "sigma_os",
                format!("{} must be positive", self.sigma_os),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeReport {
    /// Denoiser evaluations charged to each speech source.
    pub speech_per_source: Vec<u64>,
    pub noise: u64,
    /// Crosstalk gradient evaluations (off-screen mode only).
    pub crosstalk_evals: u64,
}

impl NfeReport {
    pub fn speech_total(&self) -> u64 {
        self.speech_per_source.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.speech_total() + self.noise
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub sigma: f64,
    /// Likelihood loss at the last Langevin iteration of the block.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationOutput {
    pub state: SourceState,
    pub nfe: NfeReport,
    pub trace: Vec<TraceEntry>,
}

/// Per-iteration view handed to a [`LangevinObserver`].
pub struct IterationProbe<'a> {
    pub outer: usize,
    pub sigma: f64,
    pub iteration: usize,
    pub eta: f64,
    /// Likelihood-side gradient applied to each source (speech then noise),
    /// already divided by the likelihood denominator.
    pub likelihood_grads: &'a [Vec<f64>],
    /// Prior-anchor gradient applied to each source.
    pub prior_grads: &'a [Vec<f64>],
}

/// Instrumentation hooks; all methods default to no-ops.
pub trait LangevinObserver {
    fn on_outer_step(&mut self, _outer: usize, _sigma: f64) {}

    fn on_iteration(&mut self, _probe: &IterationProbe<'_>) {}

    /// Called for one source after the perturbation to the next level.
    fn on_renoise(&mut self, _sigma_next: f64, _anchor: &[f64], _noised: &[f64]) {}

    /// Whether per-source gradient vectors should be materialized.
    fn wants_gradients(&self) -> bool {
        false
    }
}

struct NoObserver;

impl LangevinObserver for NoObserver {}

/// Euler integration of `dx = -s(x, tau) tau dtau` from `sigma_start` down
/// the inner grid to [`TAU_MIN`]. Uses `n_ode` denoiser calls.
pub fn solve_prior_ode(
    prior: &dyn ScorePrior,
    x_tau: &[f64],
    sigma_start: f64,
    n_ode: usize,
    inner_rho: f64,
    cond: &Condition,
    nfe: &NfeCounter,
) -> Result<Vec<f64>> {
    let grid = DiffusionSchedule::inner_ode(sigma_start, n_ode, inner_rho)?;
    let mut x = x_tau.to_vec();
    for (step, w) in grid.levels().windows(2).enumerate() {
        let (tau, tau_next) = (w[0], w[1]);
        // -s tau = (x - D) / tau
        let denoised = prior.denoise(&x, tau, cond, nfe)?;
        let h = (tau_next - tau) / tau;
        for (xi, di) in x.iter_mut().zip(&denoised) {
            *xi += h * (*xi - di);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sigma: tau,
                iteration: step,
                source_index: 0,
            });
        }
    }
    Ok(x)
}

/// Gradient of `||state - anchor||^2 / den`.
pub fn prior_gradient(state: &[f64], anchor: &[f64], den: f64) -> Vec<f64> {
    let scale = 2.0 / den;
    state.iter().zip(anchor).map(|(s, a)| scale * (s - a)).collect()
}

/// `x0 + sigma * eps`.
pub fn renoise<R: Rng + ?Sized>(x0: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut out = rng::standard_normal_vec(rng, x0.len());
    for (o, x) in out.iter_mut().zip(x0) {
        *o = x + sigma * *o;
    }
    out
}

struct CrosstalkHook {
    cfg: OffscreenConfig,
    crosstalk: Crosstalk,
}

/// One Langevin block context, reused across outer steps.
struct Engine<'a> {
    likelihood: &'a Likelihood,
    langevin: &'a LangevinConfig,
    hook: Option<CrosstalkHook>,
    seed: u64,
    divergence_limit: f64,
    crosstalk_evals: u64,
}

impl Engine<'_> {
    /// Runs `n_mc` iterations starting from `anchors`. Returns the final
    /// state and the loss seen at the last iteration.
    fn block(
        &mut self,
        outer: usize,
        sigma: f64,
        anchors: &SourceState,
        observer: &mut dyn LangevinObserver,
    ) -> Result<(SourceState, f64)> {
        let cfg = self.langevin;
        let k = anchors.k();
        let n_sources = k + 1;
        let d = anchors.dim();
        let den_prior = cfg.r_policy.prior_denominator(sigma);
        let den_lik = cfg.likelihood_denominator();

        let mut state = anchors.clone();
        let mut streams: Vec<_> = (0..n_sources)
            .map(|s| rng::substream(self.seed, Phase::Langevin, s, outer))
            .collect();
        let mut eps = vec![0.0; d];
        let mut last_loss = f64::NAN;
        let gated = self
            .hook
            .as_ref()
            .is_some_and(|h| h.cfg.g_ctss > 0.0 && sigma < h.cfg.sigma_os && k >= 2);
        let want = observer.wants_gradients();

        for j in 0..cfg.n_mc {
            let eta = langevin_step_size(cfg, j)?;
            let noise_scale = (2.0 * eta).sqrt();
            let (loss, mut shared) = self.likelihood.loss_and_grad(&state.sum())?;
            last_loss = loss;
            shared.iter_mut().for_each(|g| *g /= den_lik);

            // Crosstalk against the off-screen estimate as it stands at the
            // start of the iteration.
            let mut extra: Vec<Option<Vec<f64>>> = vec![None; n_sources];
            if gated {
                let hook = self.hook.as_ref().expect("gated implies hook");
                let offscreen = hook.crosstalk.magnitudes(&state.speech[k - 1])?;
                let weight = hook.cfg.g_ctss / den_lik;
                for (i, slot) in extra.iter_mut().enumerate().take(k - 1) {
                    let mut g = hook.crosstalk.grad(&state.speech[i], &offscreen)?;
                    g.iter_mut().for_each(|v| *v *= weight);
                    *slot = Some(g);
                    self.crosstalk_evals += 1;
                }
            }

            let mut lik_probe = Vec::new();
            let mut prior_probe = Vec::new();
            for (s, (x, anchor)) in state.sources_mut().zip(anchors.sources()).enumerate() {
                let prior_grad = prior_gradient(x, anchor, den_prior);
                rng::fill_standard_normal(&mut streams[s], &mut eps);
                let extra_s = extra[s].as_deref();
                for i in 0..d {
                    let lik = shared[i] + extra_s.map_or(0.0, |e| e[i]);
                    x[i] += -eta * (prior_grad[i] + lik) + noise_scale * eps[i];
                }
                if want {
                    let lik: Vec<f64> = match extra_s {
                        Some(e) => shared.iter().zip(e).map(|(a, b)| a + b).collect(),
                        None => shared.clone(),
                    };
                    lik_probe.push(lik);
                    prior_probe.push(prior_grad);
                }
            }
            if want {
                observer.on_iteration(&IterationProbe {
                    outer,
                    sigma,
                    iteration: j,
                    eta,
                    likelihood_grads: &lik_probe,
                    prior_grads: &prior_probe,
                });
            }

            state.check_finite(sigma, j)?;
            for (s, x) in state.sources().enumerate() {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > self.divergence_limit {
                    return Err(Error::Divergence {
                        sigma,
                        iteration: j,
                        source_index: s,
                        norm,
                        limit: self.divergence_limit,
                    });
                }
            }
        }
        Ok((state, last_loss))
    }
}

/// Runs a Langevin block at level `sigma` from `anchors`, sampling the
/// product of per-source Gaussians around the anchors and the likelihood.
/// `outer` selects the random sub-streams.
#[allow(clippy::too_many_arguments)]
pub fn langevin_posterior(
    y: &[f64],
    anchors: &SourceState,
    sigma: f64,
    langevin: &LangevinConfig,
    likelihood: LikelihoodKind,
    offscreen: Option<&OffscreenConfig>,
    seed: u64,
    outer: usize,
    observer: Option<&mut dyn LangevinObserver>,
) -> Result<SourceState> {
    langevin.validate()?;
    let lik = Likelihood::new(y, likelihood)?;
    let hook = offscreen_hook(offscreen, likelihood)?;
    let mut engine = Engine {
        likelihood: &lik,
        langevin,
        hook,
        seed,
        divergence_limit: f64::INFINITY,
        crosstalk_evals: 0,
    };
    let mut fallback = NoObserver;
    let observer = observer.unwrap_or(&mut fallback);
    Ok(engine.block(outer, sigma, anchors, observer)?.0)
}

fn offscreen_hook(offscreen: Option<&OffscreenConfig>, likelihood: LikelihoodKind) -> Result<Option<CrosstalkHook>> {
    let Some(cfg) = offscreen else {
        return Ok(None);
    };
    cfg.validate()?;
    let stft = match likelihood {
        LikelihoodKind::CompressedSpectral { stft } => stft,
        LikelihoodKind::Waveform => {
            return Err(Error::invalid(
                "likelihood",
                "the crosstalk loss needs the compressed spectral likelihood",
            ))
        }
    };
    Ok(Some(CrosstalkHook {
        cfg: *cfg,
        crosstalk: Crosstalk::new(stft)?,
    }))
}

/// Full annealed separation of `y` into `K` speech sources and noise.
pub fn ssnaps_separate(y: &[f64], cfg: &SamplerConfig) -> Result<SeparationOutput> {
    run(y, cfg, None, None)
}

/// Separation where the last speech source has no condition and on-screen
/// updates add the gated crosstalk penalty.
pub fn ssnaps_offscreen(y: &[f64], cfg: &SamplerConfig, off: &OffscreenConfig) -> Result<SeparationOutput> {
    run(y, cfg, Some(off), None)
}

/// [`ssnaps_separate`] / [`ssnaps_offscreen`] with instrumentation.
pub fn run(
    y: &[f64],
    cfg: &SamplerConfig,
    offscreen: Option<&OffscreenConfig>,
    observer: Option<&mut dyn LangevinObserver>,
) -> Result<SeparationOutput> {
    let d = y.len();
    if d == 0 {
        return Err(Error::invalid("y", "empty mixture"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("y", "mixture contains non-finite samples"));
    }
    cfg.validate(d)?;
    let k = cfg.k();
    if offscreen.is_some() {
        if k < 2 {
            return Err(Error::invalid(
                "conditions",
                format!("off-screen mode needs K >= 2, got {k}"),
            ));
        }
        if !cfg.conditions[k - 1].is_null() {
            return Err(Error::invalid(
                "conditions",
                "the off-screen (last) speech source must carry the null condition",
            ));
        }
    }

    let likelihood = Likelihood::new(y, cfg.likelihood)?;
    let sigma_max = cfg.schedule.sigma_max();
    let mut engine = Engine {
        likelihood: &likelihood,
        langevin: &cfg.langevin,
        hook: offscreen_hook(offscreen, cfg.likelihood)?,
        seed: cfg.rng_seed,
        divergence_limit: 1e6 * sigma_max * (d as f64).sqrt(),
        crosstalk_evals: 0,
    };
    let mut fallback = NoObserver;
    let observer = observer.unwrap_or(&mut fallback);

    let speech_nfe: Vec<NfeCounter> = (0..k).map(|_| NfeCounter::new()).collect();
    let noise_nfe = NfeCounter::new();
    let levels = cfg.schedule.levels();

    let mut noisy = SourceState {
        speech: (0..k)
            .map(|i| scaled_noise(cfg.rng_seed, Phase::Init, i, d, sigma_max))
            .collect(),
        noise: scaled_noise(cfg.rng_seed, Phase::Init, k, d, sigma_max),
    };
    let mut trace = Vec::new();

    for (m, &sigma) in levels.iter().enumerate() {
        observer.on_outer_step(m, sigma);
        let anchors = SourceState {
            speech: noisy
                .speech
                .iter()
                .zip(&cfg.conditions)
                .zip(&speech_nfe)
                .map(|((x, cond), nfe)| {
                    solve_prior_ode(&cfg.speech_prior, x, sigma, cfg.n_ode, cfg.inner_rho, cond, nfe)
                })
                .collect::<Result<_>>()?,
            noise: solve_prior_ode(
                &cfg.noise_prior,
                &noisy.noise,
                sigma,
                cfg.n_ode,
                cfg.inner_rho,
                &Condition::Null,
                &noise_nfe,
            )?,
        };
        anchors.check_finite(sigma, 0)?;

        let (x0, loss) = engine.block(m, sigma, &anchors, observer)?;
        if cfg.trace {
            trace.push(TraceEntry { step: m, sigma, loss });
        }

        match levels.get(m + 1) {
            Some(&next) => {
                let mut out = x0;
                for (s, x) in out.sources_mut().enumerate() {
                    let mut stream = rng::substream(cfg.rng_seed, Phase::Renoise, s, m);
                    let noised = renoise(x, next, &mut stream);
                    observer.on_renoise(next, x, &noised);
                    *x = noised;
                }
                noisy = out;
            }
            None => {
                return Ok(SeparationOutput {
                    state: x0,
                    nfe: NfeReport {
                        speech_per_source: speech_nfe.iter().map(NfeCounter::get).collect(),
                        noise: noise_nfe.get(),
                        crosstalk_evals: engine.crosstalk_evals,
                    },
                    trace,
                });
            }
        }
    }
    unreachable!("schedules have at least two levels")
}

fn scaled_noise(seed: u64, phase: Phase, source: usize, d: usize, sigma: f64) -> Vec<f64> {
    let mut stream = rng::substream(seed, phase, source, 0);
    let mut v = rng::standard_normal_vec(&mut stream, d);
    v.iter_mut().for_each(|x| *x *= sigma);
    v
}
