use std::f64::consts::PI;
use std::io::Write;

use crate::{OracleError, Result};

const MIN_POINTS: usize = 64;

/// One-dimensional Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Mixture1d {
    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&w, (&m, &v))| w * normal_pdf(x, m, v))
            .sum()
    }
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|i| self.lo + i as f64 * h).collect()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
}

/// Density sampled on grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Density1d {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl Density1d {
    pub fn integral(&self) -> f64 {
        let h = self.x[1] - self.x[0];
        trapezoid_weights(self.x.len(), h)
            .iter()
            .zip(&self.p)
            .map(|(w, p)| w * p)
            .sum()
    }

    /// Probability mass of each node's cell, normalized to sum to one.
    pub fn bin_masses(&self) -> Vec<f64> {
        let total: f64 = self.p.iter().sum();
        self.p.iter().map(|p| p / total).collect()
    }

    /// Inverse-CDF draw over the node cells (uniform within a cell).
    pub fn sample_with(&self, u: f64, v: f64) -> f64 {
        let masses = self.bin_masses();
        let h = self.x[1] - self.x[0];
        let mut acc = 0.0;
        for (i, m) in masses.iter().enumerate() {
            acc += m;
            if u < acc {
                return self.x[i] + (v - 0.5) * h;
            }
        }
        *self.x.last().expect("non-empty grid")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density"])?;
        for (x, p) in self.x.iter().zip(&self.p) {
            w.write_record([x.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior density on a regular grid over one or two scalar sources.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub axes: Vec<Vec<f64>>,
    /// Row-major over the axes (last axis fastest).
    pub values: Vec<f64>,
}

impl GridDensity {
    fn weights(&self) -> Vec<Vec<f64>> {
        self.axes
            .iter()
            .map(|a| trapezoid_weights(a.len(), a[1] - a[0]))
            .collect()
    }

    pub fn integral(&self) -> f64 {
        let w = self.weights();
        match self.axes.len() {
            1 => w[0].iter().zip(&self.values).map(|(a, b)| a * b).sum(),
            _ => {
                let n1 = self.axes[1].len();
                self.values
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| w[0][idx / n1] * w[1][idx % n1] * v)
                    .sum()
            }
        }
    }

    pub fn marginal(&self, axis: usize) -> Density1d {
        if self.axes.len() == 1 {
            return Density1d {
                x: self.axes[0].clone(),
                p: self.values.clone(),
            };
        }
        let w = self.weights();
        let (n0, n1) = (self.axes[0].len(), self.axes[1].len());
        let p = if axis == 0 {
            (0..n0)
                .map(|i| (0..n1).map(|j| w[1][j] * self.values[i * n1 + j]).sum())
                .collect()
        } else {
            (0..n1)
                .map(|j| (0..n0).map(|i| w[0][i] * self.values[i * n1 + j]).sum())
                .collect()
        };
        Density1d {
            x: self.axes[axis].clone(),
            p,
        }
    }

    /// One row per node: coordinates then density.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match self.axes.len() {
            1 => {
                w.write_record(["x0", "density"])?;
                for (x, p) in self.axes[0].iter().zip(&self.values) {
                    w.write_record([x.to_string(), p.to_string()])?;
                }
            }
            _ => {
                w.write_record(["x0", "x1", "density"])?;
                let n1 = self.axes[1].len();
                for (idx, p) in self.values.iter().enumerate() {
                    let (i, j) = (idx / n1, idx % n1);
                    w.write_record([self.axes[0][i].to_string(), self.axes[1][j].to_string(), p.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `p(sources | y) ∝ N(y; sum, sigma_z^2) prod p_i(source_i)`, tabulated and
/// normalized by the trapezoidal rule.
pub fn grid_posterior(priors: &[Mixture1d], y: f64, sigma_z: f64, grid: &GridSpec) -> Result<GridDensity> {
    if priors.is_empty() || priors.len() > 2 {
        return Err(OracleError::Invalid(format!(
            "{} sources; grid supports 1 or 2",
            priors.len()
        )));
    }
    if grid.points < MIN_POINTS {
        return Err(OracleError::GridTooCoarse(grid.points));
    }
    if !(grid.hi > grid.lo) || !(sigma_z > 0.0) {
        return Err(OracleError::Invalid("grid bounds or sigma_z".into()));
    }
    for p in priors {
        let total: f64 = p.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || p.weights.len() != p.means.len() || p.means.len() != p.variances.len() {
            return Err(OracleError::Invalid("malformed mixture".into()));
        }
    }
    let nodes = grid.nodes();
    let var_z = sigma_z * sigma_z;
    let mut density = match priors {
        [p] => GridDensity {
            axes: vec![nodes.clone()],
            values: nodes.iter().map(|&x| p.pdf(x) * normal_pdf(y, x, var_z)).collect(),
        },
        [p, q] => {
            let pq: Vec<f64> = nodes.iter().map(|&x| q.pdf(x)).collect();
            let mut values = Vec::with_capacity(nodes.len() * nodes.len());
            for &a in &nodes {
                let pa = p.pdf(a);
                for (j, &b) in nodes.iter().enumerate() {
                    values.push(pa * pq[j] * normal_pdf(y, a + b, var_z));
                }
            }
            GridDensity {
                axes: vec![nodes.clone(), nodes.clone()],
                values,
            }
        }
        _ => unreachable!(),
    };
    let z = density.integral();
    if !(z > 0.0) {
        return Err(OracleError::Invalid("posterior has no mass on the grid".into()));
    }
    density.values.iter_mut().for_each(|v| *v /= z);
    Ok(density)
}

/// Total variation between the histogram of `samples` on the reference's
/// node cells and the reference cell masses. Samples outside the grid land
/// in an overflow bin with zero reference mass.
pub fn tv_distance(samples: &[f64], reference: &Density1d) -> Result<f64> {
    let weights = vec![1.0; samples.len()];
    tv_distance_weighted(samples, &weights, reference)
}

/// [`tv_distance`] with per-sample weights (self-normalized).
pub fn tv_distance_weighted(samples: &[f64], weights: &[f64], reference: &Density1d) -> Result<f64> {
    if samples.is_empty() {
        return Err(OracleError::EmptySamples);
    }
    if weights.len() != samples.len() {
        return Err(OracleError::Invalid("weights and samples differ in length".into()));
    }
    let n = reference.x.len();
    let h = reference.x[1] - reference.x[0];
    let lo = reference.x[0] - 0.5 * h;
    let mut hist = vec![0.0; n];
    let mut overflow = 0.0;
    let total: f64 = weights.iter().sum();
    for (&s, &w) in samples.iter().zip(weights) {
        let idx = ((s - lo) / h).floor();
        if idx >= 0.0 && (idx as usize) < n {
            hist[idx as usize] += w / total;
        } else {
            overflow += w / total;
        }
    }
    let masses = reference.bin_masses();
    let tv = hist.iter().zip(&masses).map(|(a, b)| (a - b).abs()).sum::<f64>() + overflow;
    Ok(0.5 * tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn bimodal() -> Mixture1d {
        Mixture1d {
            weights: vec![0.5, 0.5],
            means: vec![-2.0, 2.0],
            variances: vec![0.1, 0.1],
        }
    }

    fn grid() -> GridSpec {
        GridSpec {
            lo: -6.0,
            hi: 6.0,
            points: 601,
        }
    }

    #[test]
    fn normalized_and_nonnegative() {
        let one = grid_posterior(&[bimodal()], 0.5, 1.0, &grid()).unwrap();
        assert!((one.integral() - 1.0).abs() < 1e-6);
        assert!(one.values.iter().all(|v| *v >= 0.0));
        let two = grid_posterior(&[bimodal(), bimodal()], 0.5, 1.0, &grid()).unwrap();
        assert!((two.integral() - 1.0).abs() < 1e-6);
        assert!((two.marginal(1).integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_modes_have_equal_mass() {
        let post = grid_posterior(&[bimodal()], 0.0, 1.5, &grid()).unwrap().marginal(0);
        let masses = post.bin_masses();
        let left: f64 = post
            .x
            .iter()
            .zip(&masses)
            .filter(|(x, _)| **x < 0.0)
            .map(|(_, m)| m)
            .sum();
        let right: f64 = post
            .x
            .iter()
            .zip(&masses)
            .filter(|(x, _)| **x > 0.0)
            .map(|(_, m)| m)
            .sum();
        assert!((left - right).abs() < 0.01);
    }

    #[test]
    fn weak_likelihood_approaches_prior() {
        let prior = bimodal();
        let deviation = |sigma_z: f64| {
            let post = grid_posterior(std::slice::from_ref(&prior), 1.0, sigma_z, &grid()).unwrap();
            post.axes[0]
                .iter()
                .zip(&post.values)
                .map(|(&x, &p)| (p - prior.pdf(x)).abs())
                .fold(0.0, f64::max)
        };
        let devs: Vec<f64> = [1.0, 3.0, 10.0, 100.0].iter().map(|&s| deviation(s)).collect();
        assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
        assert!(devs[3] < 0.01);
    }

    #[test]
    fn coarse_grid_rejected() {
        let g = GridSpec {
            lo: -1.0,
            hi: 1.0,
            points: 63,
        };
        assert!(matches!(
            grid_posterior(&[bimodal()], 0.0, 1.0, &g),
            Err(OracleError::GridTooCoarse(63))
        ));
    }

    #[test]
    fn importance_sampling_agrees_with_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (y, sigma_z) = (0.7, 0.8);
        let prior = bimodal();
        let other = Mixture1d {
            weights: vec![0.3, 0.7],
            means: vec![-1.0, 1.0],
            variances: vec![0.4, 0.2],
        };
        let draw = |m: &Mixture1d, rng: &mut ChaCha8Rng| {
            let c = if rng.gen::<f64>() < m.weights[0] { 0 } else { 1 };
            m.means[c] + m.variances[c].sqrt() * rng.sample::<f64, _>(StandardNormal)
        };
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for _ in 0..n {
            let a = draw(&prior, &mut rng);
            let b = draw(&other, &mut rng);
            xs.push(a);
            ws.push(normal_pdf(y, a + b, sigma_z * sigma_z));
        }
        let reference = grid_posterior(
            &[prior, other],
            y,
            sigma_z,
            &GridSpec {
                lo: -6.0,
                hi: 6.0,
                points: 121,
            },
        )
        .unwrap()
        .marginal(0);
        let tv = tv_distance_weighted(&xs, &ws, &reference).unwrap();
        assert!(tv < 0.02, "{tv}");
    }

    #[test]
    fn tv_reference_values() {
        let uniform = Density1d {
            x: (0..64).map(|i| i as f64).collect(),
            p: vec![1.0; 64],
        };
        let tv = tv_distance(&[3.1; 50], &uniform).unwrap();
        assert!((tv - (1.0 - 1.0 / 64.0)).abs() < 1e-12);
        let all: Vec<f64> = (0..64).map(|i| i as f64).collect();
        assert!(tv_distance(&all, &uniform).unwrap().abs() < 1e-12);
        assert!(matches!(tv_distance(&[], &uniform), Err(OracleError::EmptySamples)));
        // Everything out of range.
        assert!((tv_distance(&[500.0], &uniform).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_sampling_noise_floor() {
        let reference = grid_posterior(
            &[bimodal()],
            0.3,
            1.0,
            &GridSpec {
                lo: -5.0,
                hi: 5.0,
                points: 64,
            },
        )
        .unwrap()
        .marginal(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| reference.sample_with(rng.gen(), rng.gen()))
            .collect();
        let tv = tv_distance(&samples, &reference).unwrap();
        assert!(tv < 0.05, "{tv}");
    }

    #[test]
    fn csv_export() {
        let post = grid_posterior(
            &[bimodal(), bimodal()],
            0.0,
            1.0,
            &GridSpec {
                lo: -1.0,
                hi: 1.0,
                points: 64,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        post.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 64 * 64);
        assert!(text.starts_with("x0,x1,density\n"));
    }
}
