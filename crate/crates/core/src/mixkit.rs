//! Mixture synthesis at prescribed SIR/SNR, SI-SDR, and the benchmark runner.

use std::fmt::Write as _;
use std::io::Write;

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::priors::{Condition, Prior};
use crate::rng::{self, Phase};
use crate::sampler::{ssnaps_offscreen, ssnaps_separate, NfeReport};

/// SI-SDR values are clipped to `[-SI_SDR_CAP, SI_SDR_CAP]` dB.
pub const SI_SDR_CAP: f64 = 100.0;

/// Relative scale of the residual white noise when `sigma_z` is unset.
pub const DEFAULT_SIGMA_Z_FRACTION: f64 = 1e-3;

const DRAW_STREAM: usize = 1 << 12;
const RESIDUAL_STREAM: usize = DRAW_STREAM + 1;

/// A level in dB, fixed or drawn uniformly from `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DbRange {
    Fixed(f64),
    Range([f64; 2]),
}

impl DbRange {
    fn validate(&self, name: &'static str) -> Result<()> {
        match *self {
            DbRange::Fixed(v) if v.is_finite() => Ok(()),
            DbRange::Range([lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            _ => Err(Error::invalid(
                name,
                format!("{self:?} is not a finite level or ordered range"),
            )),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DbRange::Fixed(v) => v,
            DbRange::Range([lo, hi]) if lo == hi => lo,
            DbRange::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }
}

/// Interferer levels: one spec shared by all, or one per interferer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SirSpec {
    Shared(DbRange),
    PerInterferer(Vec<DbRange>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub k_speakers: usize,
    /// Level of speaker 1 relative to each interferer.
    pub sir_db: SirSpec,
    /// Level of the weakest speaker relative to the noise.
    pub snr_db: DbRange,
    /// Residual white-noise scale; defaults to a fraction of speaker-1 RMS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_z: Option<f64>,
    pub duration: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_speakers == 0 {
            return Err(Error::invalid("k_speakers", "must be at least 1"));
        }
        if self.duration == 0 {
            return Err(Error::invalid("duration", "must be positive"));
        }
        match &self.sir_db {
            SirSpec::Shared(r) => r.validate("sir_db")?,
            SirSpec::PerInterferer(v) => {
                if v.len() != self.k_speakers - 1 {
                    return Err(Error::invalid(
                        "sir_db",
                        format!("{} entries for {} interferers", v.len(), self.k_speakers - 1),
                    ));
                }
                v.iter().try_for_each(|r| r.validate("sir_db"))?;
            }
        }
        self.snr_db.validate("snr_db")?;
        if let Some(s) = self.sigma_z {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid("sigma_z", format!("{s} must be non-negative")));
            }
        }
        Ok(())
    }

    fn sir_range(&self, interferer: usize) -> DbRange {
        match &self.sir_db {
            SirSpec::Shared(r) => *r,
            SirSpec::PerInterferer(v) => v[interferer],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub y: Vec<f64>,
    /// Scaled speakers; speaker 1 is unchanged.
    pub sources: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    /// Drawn SIR of each interferer (speakers 2..K).
    pub sir_db: Vec<f64>,
    pub snr_db: f64,
    pub sigma_z: f64,
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn scaled(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// SIR of each interferer and the SNR, recomputed from scaled signals.
pub fn measured_levels(sources: &[Vec<f64>], noise: &[f64]) -> (Vec<f64>, f64) {
    let powers: Vec<f64> = sources.iter().map(|s| energy(s)).collect();
    let sir = powers[1..].iter().map(|p| db(powers[0] / p)).collect();
    let reference = powers.iter().copied().fold(f64::INFINITY, f64::min);
    (sir, db(reference / energy(noise)))
}

pub fn synth_mixture(sources: &[Vec<f64>], noise: &[f64], spec: &MixSpec) -> Result<Mixture> {
    spec.validate()?;
    if sources.len() != spec.k_speakers {
        return Err(Error::DimensionMismatch {
            expected: spec.k_speakers,
            got: sources.len(),
        });
    }
    for s in sources.iter().map(Vec::as_slice).chain([noise]) {
        if s.len() != spec.duration {
            return Err(Error::DimensionMismatch {
                expected: spec.duration,
                got: s.len(),
            });
        }
    }
    if sources.iter().any(|s| energy(s) == 0.0) {
        return Err(Error::ZeroEnergy("speaker"));
    }
    if energy(noise) == 0.0 {
        return Err(Error::ZeroEnergy("noise"));
    }

    let mut draws = rng::substream(spec.seed, Phase::Synthesis, DRAW_STREAM, 0);
    let p1 = energy(&sources[0]);
    let mut sir_db = Vec::with_capacity(sources.len() - 1);
    let mut scaled_sources = vec![sources[0].clone()];
    for (i, s) in sources.iter().enumerate().skip(1) {
        let sir = spec.sir_range(i - 1).draw(&mut draws);
        let target = p1 / 10f64.powf(sir / 10.0);
        scaled_sources.push(scaled(s, (target / energy(s)).sqrt()));
        sir_db.push(sir);
    }
    let snr_db = spec.snr_db.draw(&mut draws);
    let reference = scaled_sources.iter().map(|s| energy(s)).fold(f64::INFINITY, f64::min);
    let noise_target = reference / 10f64.powf(snr_db / 10.0);
    let scaled_noise = scaled(noise, (noise_target / energy(noise)).sqrt());

    let sigma_z = spec
        .sigma_z
        .unwrap_or_else(|| DEFAULT_SIGMA_Z_FRACTION * (p1 / spec.duration as f64).sqrt());
    let mut residual = rng::substream(spec.seed, Phase::Synthesis, RESIDUAL_STREAM, 0);
    let eps = rng::standard_normal_vec(&mut residual, spec.duration);
    let y = (0..spec.duration)
        .map(|n| scaled_sources.iter().map(|s| s[n]).sum::<f64>() + scaled_noise[n] + sigma_z * eps[n])
        .collect();
    Ok(Mixture {
        y,
        sources: scaled_sources,
        noise: scaled_noise,
        sir_db,
        snr_db,
        sigma_z,
    })
}

/// Scale-invariant SDR in dB, clipped to `±SI_SDR_CAP`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let scale = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let target = ref_energy * scale * scale;
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - scale * r).powi(2))
        .sum();
    let value = if residual == 0.0 {
        if target == 0.0 {
            -SI_SDR_CAP
        } else {
            SI_SDR_CAP
        }
    } else if target == 0.0 {
        -SI_SDR_CAP
    } else {
        db(target / residual)
    };
    Ok(value.clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// Source of the per-speaker estimates scored by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The sampler; off-screen mode when the config has an `offscreen` block.
    Ssnaps,
    /// Every estimate is the mixture itself.
    MixtureCopy,
    /// Every estimate is its reference.
    GroundTruth,
}

impl Estimator {
    pub fn label(self, offscreen: bool) -> &'static str {
        match (self, offscreen) {
            (Estimator::Ssnaps, false) => "SSNAPS",
            (Estimator::Ssnaps, true) => "SSNAPS (off-screen)",
            (Estimator::MixtureCopy, _) => "mixture",
            (Estimator::GroundTruth, _) => "ground truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub seed: u64,
    pub source: usize,
    /// Condition the sampler used for this speaker.
    pub condition: Condition,
    pub mixture_si_sdr: f64,
    pub estimate_si_sdr: f64,
}

impl SourceScore {
    pub fn improvement(&self) -> f64 {
        self.estimate_si_sdr - self.mixture_si_sdr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub k_speakers: usize,
    /// Sorted by seed, then source.
    pub scores: Vec<SourceScore>,
    /// Per-seed sampler cost, in seed order (empty for oracle estimators).
    pub nfe: Vec<NfeReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl BenchReport {
    pub fn mean_mixture(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.mixture_si_sdr))
    }

    pub fn mean_estimate(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.estimate_si_sdr))
    }

    pub fn mean_improvement(&self) -> f64 {
        mean(self.scores.iter().map(SourceScore::improvement))
    }

    /// Mean estimate SI-SDR over conditioned (on-screen) speakers.
    pub fn mean_onscreen(&self) -> f64 {
        mean(
            self.scores
                .iter()
                .filter(|s| !s.condition.is_null())
                .map(|s| s.estimate_si_sdr),
        )
    }

    /// Mean estimate SI-SDR over unconditioned (off-screen) speakers.
    pub fn mean_offscreen(&self) -> f64 {
        mean(
            self.scores
                .iter()
                .filter(|s| s.condition.is_null())
                .map(|s| s.estimate_si_sdr),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "seed",
            "source",
            "condition",
            "mixture_si_sdr",
            "estimate_si_sdr",
            "improvement",
        ])?;
        for s in &self.scores {
            let cond: Option<String> = s.condition.clone().into();
            w.write_record([
                self.method.clone(),
                s.seed.to_string(),
                s.source.to_string(),
                cond.unwrap_or_default(),
                format!("{:.6}", s.mixture_si_sdr),
                format!("{:.6}", s.estimate_si_sdr),
                format!("{:.6}", s.improvement()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// One-row Markdown table: method, speaker count, SI-SDR columns.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let offscreen = self.scores.iter().any(|s| s.condition.is_null());
        out.push_str("| Method | #spk | Mixture SI-SDR | SI-SDR | SI-SDRi |");
        if offscreen {
            out.push_str(" On-screen SI-SDR | Off-screen SI-SDR |");
        }
        out.push('\n');
        out.push_str("|---|---|---|---|---|");
        if offscreen {
            out.push_str("---|---|");
        }
        out.push('\n');
        let _ = write!(
            out,
            "| {} | {} | {:.2} | {:.2} | {:.2} |",
            self.method,
            self.k_speakers,
            self.mean_mixture(),
            self.mean_estimate(),
            self.mean_improvement()
        );
        if offscreen {
            let _ = write!(out, " {:.2} | {:.2} |", self.mean_onscreen(), self.mean_offscreen());
        }
        out.push('\n');
        out
    }
}

/// Ground truth for one benchmark seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchCase {
    pub seed: u64,
    pub mixture: Mixture,
}

/// Draws clean speakers and noise from the priors and mixes them.
pub fn bench_case(cfg: &RunConfig, speech: &Prior, noise: &Prior, seed: u64) -> Result<BenchCase> {
    let mut spec = cfg
        .mix
        .clone()
        .ok_or_else(|| Error::invalid("mix", "benchmark needs a mixture specification"))?;
    spec.seed = seed;
    let truth = cfg
        .bench
        .as_ref()
        .and_then(|b| b.truth_conditions.clone())
        .unwrap_or_else(|| cfg.conditions.clone());
    let k = truth.len();
    let clean = truth
        .iter()
        .enumerate()
        .map(|(i, cond)| speech.sample(cond, &mut rng::substream(seed, Phase::Synthesis, i, 0)))
        .collect::<Result<Vec<_>>>()?;
    let raw_noise = noise.sample(&Condition::Null, &mut rng::substream(seed, Phase::Synthesis, k, 0))?;
    Ok(BenchCase {
        seed,
        mixture: synth_mixture(&clean, &raw_noise, &spec)?,
    })
}

/// Scores estimates against references. Conditioned speakers are matched by
/// index; unconditioned speakers take the best permutation among themselves.
pub fn score_estimates(
    seed: u64,
    conditions: &[Condition],
    mixture: &Mixture,
    estimates: &[Vec<f64>],
) -> Result<Vec<SourceScore>> {
    let refs = &mixture.sources;
    let mut assignment: Vec<usize> = (0..refs.len()).collect();
    let free: Vec<usize> = (0..refs.len()).filter(|&i| conditions[i].is_null()).collect();
    if free.len() > 1 {
        let mut best = (f64::NEG_INFINITY, free.clone());
        for perm in free.iter().copied().permutations(free.len()) {
            let total = free
                .iter()
                .zip(&perm)
                .map(|(&r, &e)| si_sdr(&estimates[e], &refs[r]))
                .sum::<Result<f64>>()?;
            if total > best.0 {
                best = (total, perm);
            }
        }
        for (&r, &e) in free.iter().zip(&best.1) {
            assignment[r] = e;
        }
    }
    (0..refs.len())
        .map(|i| {
            Ok(SourceScore {
                seed,
                source: i,
                condition: conditions[i].clone(),
                mixture_si_sdr: si_sdr(&mixture.y, &refs[i])?,
                estimate_si_sdr: si_sdr(&estimates[assignment[i]], &refs[i])?,
            })
        })
        .collect()
}

/// Runs every benchmark seed (in parallel on the current rayon pool) and
/// aggregates the scores in seed order.
pub fn run_benchmark(cfg: &RunConfig, estimator: Estimator) -> Result<BenchReport> {
    let bench = cfg
        .bench
        .as_ref()
        .ok_or_else(|| Error::invalid("bench", "configuration has no benchmark block"))?;
    let (speech, noise) = cfg.load_priors()?;
    let mut seeds = bench.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let per_seed: Vec<(Vec<SourceScore>, Option<NfeReport>)> = seeds
        .par_iter()
        .map(|&seed| {
            let case = bench_case(cfg, &speech, &noise, seed)?;
            let mix = &case.mixture;
            let (estimates, nfe) = match estimator {
                Estimator::MixtureCopy => (vec![mix.y.clone(); mix.sources.len()], None),
                Estimator::GroundTruth => (mix.sources.clone(), None),
                Estimator::Ssnaps => {
                    let sc = cfg.sampler_config(speech.clone(), noise.clone(), seed, false)?;
                    let out = match &cfg.offscreen {
                        Some(off) => ssnaps_offscreen(&mix.y, &sc, off)?,
                        None => ssnaps_separate(&mix.y, &sc)?,
                    };
                    (out.state.speech, Some(out.nfe))
                }
            };
            Ok((score_estimates(seed, &cfg.conditions, mix, &estimates)?, nfe))
        })
        .collect::<Result<_>>()?;

    let (scores, nfe): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    Ok(BenchReport {
        method: estimator.label(cfg.offscreen.is_some()).to_string(),
        k_speakers: cfg.conditions.len(),
        scores: scores.into_iter().flatten().collect(),
        nfe: nfe.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        rng::standard_normal_vec(rng, n)
    }

    fn spec(k: usize, sir: DbRange, snr: DbRange, seed: u64) -> MixSpec {
        MixSpec {
            k_speakers: k,
            sir_db: SirSpec::Shared(sir),
            snr_db: snr,
            sigma_z: None,
            duration: 256,
            seed,
        }
    }

    #[test]
    fn equal_energy_zero_sir_keeps_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(&mut rng, 256);
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let n = random(&mut rng, 256);
        let m = synth_mixture(
            &[a, b.clone()],
            &n,
            &spec(2, DbRange::Fixed(0.0), DbRange::Fixed(5.0), 1),
        )
        .unwrap();
        let g = m.sources[1][0] / b[0];
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn levels_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..50 {
            let k = 1 + (seed as usize % 3);
            let sources: Vec<_> = (0..k).map(|_| random(&mut rng, 256)).collect();
            let n = random(&mut rng, 256);
            let s = spec(k, DbRange::Range([-5.0, 5.0]), DbRange::Range([-3.0, 3.0]), seed);
            let m = synth_mixture(&sources, &n, &s).unwrap();
            let (sir, snr) = measured_levels(&m.sources, &m.noise);
            for (a, b) in sir.iter().zip(&m.sir_db) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((snr - m.snr_db).abs() < 1e-9);
            assert!(m.sources[0] == sources[0]);
        }
    }

    #[test]
    fn three_speaker_snr_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sources: Vec<_> = (0..3).map(|_| random(&mut rng, 256)).collect();
        let n = random(&mut rng, 256);
        let m = synth_mixture(
            &sources,
            &n,
            &spec(3, DbRange::Range([-5.0, 5.0]), DbRange::Fixed(15.0), 9),
        )
        .unwrap();
        let (_, snr) = measured_levels(&m.sources, &m.noise);
        assert!((snr - 15.0).abs() < 1e-9);
    }

    #[test]
    fn synthesis_errors() {
        let a = vec![1.0; 256];
        let s = spec(1, DbRange::Fixed(0.0), DbRange::Fixed(0.0), 0);
        assert!(matches!(
            synth_mixture(std::slice::from_ref(&a), &[0.0; 256], &s),
            Err(Error::ZeroEnergy(_))
        ));
        assert!(matches!(
            synth_mixture(&[vec![0.0; 256]], &a, &s),
            Err(Error::ZeroEnergy(_))
        ));
        assert!(synth_mixture(std::slice::from_ref(&a), &a[..10], &s).is_err());
        let bad = spec(1, DbRange::Range([3.0, -3.0]), DbRange::Fixed(0.0), 0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn si_sdr_reference_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random(&mut rng, 512);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &r).unwrap(), SI_SDR_CAP);

        // Orthogonalize a random vector against r and match energies.
        let mut n = random(&mut rng, 512);
        let proj = n.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / energy(&r);
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= proj * b);
        let g = (energy(&r) / energy(&n)).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        assert!(si_sdr(&est, &r).unwrap().abs() < 1e-10);

        let noisy: Vec<f64> = est.iter().map(|v| v * 0.5).collect();
        let neg: Vec<f64> = est.iter().map(|v| -3.0 * v).collect();
        let base = si_sdr(&est, &r).unwrap();
        assert!((si_sdr(&noisy, &r).unwrap() - base).abs() < 1e-10);
        assert!((si_sdr(&neg, &r).unwrap() - base).abs() < 1e-10);

        assert!(matches!(si_sdr(&r, &[0.0; 512]), Err(Error::ZeroEnergy(_))));
        assert_eq!(si_sdr(&[0.0; 512], &r).unwrap(), -SI_SDR_CAP);
    }

    #[test]
    fn best_permutation_for_unconditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let refs: Vec<_> = (0..3).map(|_| random(&mut rng, 128)).collect();
        let mixture = Mixture {
            y: refs
                .iter()
                .fold(vec![0.0; 128], |acc, r| acc.iter().zip(r).map(|(a, b)| a + b).collect()),
            sources: refs.clone(),
            noise: vec![0.0; 128],
            sir_db: vec![],
            snr_db: 0.0,
            sigma_z: 0.0,
        };
        let conditions = vec![Condition::token("a"), Condition::Null, Condition::Null];
        let swapped = vec![refs[0].clone(), refs[2].clone(), refs[1].clone()];
        let scores = score_estimates(0, &conditions, &mixture, &swapped).unwrap();
        assert!(scores.iter().all(|s| s.estimate_si_sdr == SI_SDR_CAP));
    }
}
