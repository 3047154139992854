//! Noise-level ladders for annealing and the inner probability-flow solves,
//! plus the Langevin step-size schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal noise level of every inner ODE solve.
pub const TAU_MIN: f64 = 1e-5;

/// Curvature exponent used for the annealing ladder.
pub const ANNEALING_RHO: f64 = 10.0;

/// Default curvature exponent for inner ODE grids (uniform spacing in tau).
pub const INNER_RHO: f64 = 1.0;

/// A strictly decreasing ladder of noise levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionSchedule {
    levels: Vec<f64>,
    rho: f64,
    sigma_max: f64,
    sigma_min: f64,
}

impl DiffusionSchedule {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Grid for one inner solve: `n_ode + 1` levels from `sigma_start` down to [`TAU_MIN`].
    pub fn inner_ode(sigma_start: f64, n_ode: usize, rho: f64) -> Result<Self> {
        if n_ode == 0 {
            return Err(Error::invalid("n_ode", "must be at least 1"));
        }
        if !(sigma_start > TAU_MIN) {
            return Err(Error::invalid(
                "sigma_start",
                format!("{sigma_start} must exceed tau_min = {TAU_MIN}"),
            ));
        }
        karras_schedule(sigma_start, TAU_MIN, n_ode + 1, rho)
    }

    /// One value per line, preceded by a header.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["index", "sigma"])?;
        for (i, level) in self.levels.iter().enumerate() {
            writer.write_record([i.to_string(), format!("{level:.17e}")])?;
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Karras-style ladder interpolating linearly in `sigma^(1/rho)`.
///
/// The first and last entries are assigned directly so they bit-match the
/// requested endpoints.
pub fn karras_schedule(sigma_max: f64, sigma_min: f64, n: usize, rho: f64) -> Result<DiffusionSchedule> {
    if !(sigma_min > 0.0) || !sigma_min.is_finite() {
        return Err(Error::invalid("sigma_min", format!("{sigma_min} must be positive")));
    }
    if !(sigma_max > sigma_min) || !sigma_max.is_finite() {
        return Err(Error::invalid(
            "sigma_max",
            format!("{sigma_max} must exceed sigma_min = {sigma_min}"),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("n", format!("{n} levels; need at least 2")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid("rho", format!("{rho} must be positive")));
    }

    let inv_rho = rho.recip();
    let hi = sigma_max.powf(inv_rho);
    let lo = sigma_min.powf(inv_rho);
    let last = (n - 1) as f64;
    let levels = (0..n)
        .map(|i| match i {
            0 => sigma_max,
            i if i == n - 1 => sigma_min,
            i => (hi + (i as f64 / last) * (lo - hi)).powf(rho),
        })
        .collect();

    Ok(DiffusionSchedule {
        levels,
        rho,
        sigma_max,
        sigma_min,
    })
}

/// Which denominator convention a quadratic energy term uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// `‖·‖² / s²`, as in the algorithm listings.
    #[default]
    Squared,
    /// `‖·‖² / (2 s²)`, as in the Langevin derivation text.
    TwiceSquared,
}

impl Denominator {
    pub fn apply(self, scale: f64) -> f64 {
        match self {
            Denominator::Squared => scale * scale,
            Denominator::TwiceSquared => 2.0 * scale * scale,
        }
    }
}

/// Maps the annealing level `sigma` to the prior-term width `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RPolicy {
    /// `r = r_scale * sigma`.
    #[serde(default = "one")]
    pub r_scale: f64,
    #[serde(default)]
    pub denominator: Denominator,
}

fn one() -> f64 {
    1.0
}

impl Default for RPolicy {
    fn default() -> Self {
        RPolicy {
            r_scale: 1.0,
            denominator: Denominator::Squared,
        }
    }
}

impl RPolicy {
    pub fn prior_denominator(&self, sigma: f64) -> f64 {
        self.denominator.apply(self.r_scale * sigma)
    }
}

/// Hyperparameters of one Langevin block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub eta0: f64,
    pub delta: f64,
    pub n_mc: usize,
    pub alpha: f64,
    #[serde(default)]
    pub r_policy: RPolicy,
    #[serde(default)]
    pub likelihood_denominator: Denominator,
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(Error::invalid("eta0", format!("{} must be positive", self.eta0)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid("delta", format!("{} must lie in (0, 1]", self.delta)));
        }
        if self.n_mc == 0 {
            return Err(Error::invalid("n_mc", "must be at least 1"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("{} must be positive", self.alpha)));
        }
        if !(self.r_policy.r_scale > 0.0) || !self.r_policy.r_scale.is_finite() {
            return Err(Error::invalid(
                "r_scale",
                format!("{} must be positive", self.r_policy.r_scale),
            ));
        }
        Ok(())
    }

    pub fn likelihood_denominator(&self) -> f64 {
        self.likelihood_denominator.apply(self.alpha)
    }
}

/// `eta_j = eta0 * (delta + (j / n_mc) * (1 - delta))`.
pub fn langevin_step_size(cfg: &LangevinConfig, j: usize) -> Result<f64> {
    if j >= cfg.n_mc {
        return Err(Error::invalid(
            "j",
            format!("iteration {j} out of range for n_mc = {}", cfg.n_mc),
        ));
    }
    let frac = j as f64 / cfg.n_mc as f64;
    Ok(cfg.eta0 * (cfg.delta + frac * (1.0 - cfg.delta)))
}
