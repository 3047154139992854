//! Versioned JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixkit::MixSpec;
use crate::priors::{load_prior, Condition, GuidanceRule, GuidedPrior, Prior};
use crate::sampler::{LikelihoodKind, OffscreenConfig, SamplerConfig};
use crate::schedules::{karras_schedule, Denominator, LangevinConfig, RPolicy, ANNEALING_RHO, INNER_RHO};

pub const SCHEMA_VERSION: u32 = 1;

fn default_sigma_min() -> f64 {
    0.01
}

fn default_schedule_rho() -> f64 {
    ANNEALING_RHO
}

fn default_n_ode() -> usize {
    2
}

fn default_inner_rho() -> f64 {
    INNER_RHO
}

/// Sampler hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    /// Number of annealing levels `N_A`.
    pub n_annealing: usize,
    pub sigma_max: f64,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_schedule_rho")]
    pub schedule_rho: f64,
    pub n_mc: usize,
    pub eta0: f64,
    pub delta: f64,
    pub alpha: f64,
    #[serde(default = "default_n_ode")]
    pub n_ode: usize,
    #[serde(default = "default_inner_rho")]
    pub inner_rho: f64,
    pub omega: f64,
    #[serde(default)]
    pub guidance_rule: GuidanceRule,
    #[serde(default)]
    pub r_policy: RPolicy,
    #[serde(default)]
    pub likelihood_denominator: Denominator,
    #[serde(default)]
    pub likelihood: LikelihoodKind,
}

impl SamplerSettings {
    pub fn langevin(&self) -> LangevinConfig {
        LangevinConfig {
            eta0: self.eta0,
            delta: self.delta,
            n_mc: self.n_mc,
            alpha: self.alpha,
            r_policy: self.r_policy,
            likelihood_denominator: self.likelihood_denominator,
        }
    }
}

/// Prior files, relative to the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorPaths {
    pub speech: PathBuf,
    pub noise: PathBuf,
}

/// Benchmark-only settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub seeds: Vec<u64>,
    /// Tokens used to draw the ground-truth speakers. Defaults to
    /// `conditions`; differs from it when a speaker is off-screen.
    #[serde(default)]
    pub truth_conditions: Option<Vec<Condition>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sampler: SamplerSettings,
    pub priors: PriorPaths,
    /// One entry per speech source; `null` is the unconditional prior.
    pub conditions: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offscreen: Option<OffscreenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSettings>,
    /// Directory that relative prior paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(json)?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let s = &self.sampler;
        self.langevin_checked()?;
        if s.n_annealing < 2 {
            return Err(Error::invalid(
                "n_annealing",
                format!("{} must be at least 2", s.n_annealing),
            ));
        }
        if !(s.sigma_max > s.sigma_min) || !(s.sigma_min > 0.0) {
            return Err(Error::invalid(
                "sigma_max",
                format!(
                    "need sigma_max > sigma_min > 0, got {} and {}",
                    s.sigma_max, s.sigma_min
                ),
            ));
        }
        if !s.omega.is_finite() {
            return Err(Error::invalid("omega", "must be finite"));
        }
        if self.conditions.is_empty() {
            return Err(Error::invalid("conditions", "at least one speech source is required"));
        }
        if let Some(off) = &self.offscreen {
            off.validate()?;
        }
        if let Some(mix) = &self.mix {
            mix.validate()?;
            if mix.k_speakers != self.conditions.len() {
                return Err(Error::invalid(
                    "k_speakers",
                    format!(
                        "{} does not match the {} conditions",
                        mix.k_speakers,
                        self.conditions.len()
                    ),
                ));
            }
        }
        if let Some(bench) = &self.bench {
            if bench.seeds.is_empty() {
                return Err(Error::invalid("seeds", "benchmark needs at least one seed"));
            }
            if let Some(t) = &bench.truth_conditions {
                if t.len() != self.conditions.len() {
                    return Err(Error::invalid(
                        "truth_conditions",
                        "must have one entry per speech source",
                    ));
                }
            }
            if self.mix.is_none() {
                return Err(Error::invalid("mix", "benchmark needs a mixture specification"));
            }
        }
        Ok(())
    }

    fn langevin_checked(&self) -> Result<LangevinConfig> {
        let l = self.sampler.langevin();
        l.validate()?;
        Ok(l)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn load_priors(&self) -> Result<(Prior, Prior)> {
        Ok((
            load_prior(self.resolve(&self.priors.speech))?,
            load_prior(self.resolve(&self.priors.noise))?,
        ))
    }

    /// Assembles the sampler configuration around already-loaded priors.
    pub fn sampler_config(&self, speech: Prior, noise: Prior, seed: u64, trace: bool) -> Result<SamplerConfig> {
        let s = &self.sampler;
        Ok(SamplerConfig {
            schedule: karras_schedule(s.sigma_max, s.sigma_min, s.n_annealing, s.schedule_rho)?,
            langevin: self.langevin_checked()?,
            n_ode: s.n_ode,
            inner_rho: s.inner_rho,
            speech_prior: GuidedPrior::new(speech, s.omega, s.guidance_rule)?,
            noise_prior: noise,
            conditions: self.conditions.clone(),
            likelihood: s.likelihood,
            rng_seed: seed,
            trace,
        })
    }
}
