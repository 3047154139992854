//! Orthonormal real Fourier basis over a length-`d` signal.
//!
//! Coefficient layout: `[dc, cos_1, sin_1, cos_2, sin_2, ..., nyquist]`, the
//! Nyquist entry present only for even `d`. Column `j` of the basis is
//!
//! * `1/sqrt(d)` for the DC term,
//! * `sqrt(2/d) cos(2 pi k n / d)` and `sqrt(2/d) sin(2 pi k n / d)` for the pairs,
//! * `(-1)^n / sqrt(d)` for the Nyquist term.

use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Largest dimension for which orthonormality is verified at construction.
const CHECK_DIM: usize = 64;

#[derive(Clone)]
pub struct FourierBasis {
    dim: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for FourierBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierBasis").field("dim", &self.dim).finish()
    }
}

impl FourierBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let basis = FourierBasis {
            dim,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        };
        if dim <= CHECK_DIM {
            basis.check_orthonormal()?;
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frequency of coefficient `j` in cycles per signal (0 for DC).
    pub fn frequency_index(&self, j: usize) -> usize {
        j.div_ceil(2)
    }

    /// Frequency of coefficient `j` as a fraction of Nyquist, in `[0, 1]`.
    pub fn normalized_frequency(&self, j: usize) -> f64 {
        if self.dim == 1 {
            return 0.0;
        }
        self.frequency_index(j) as f64 / (self.dim as f64 / 2.0)
    }

    /// Signal to coefficients (`B^T x`).
    pub fn analyze(&self, signal: &[f64]) -> Vec<f64> {
        debug_assert_eq!(signal.len(), self.dim);
        let d = self.dim;
        if d == 1 {
            return signal.to_vec();
        }
        let mut input = signal.to_vec();
        let mut spectrum = self.forward.make_output_vec();
        self.forward
            .process(&mut input, &mut spectrum)
            .expect("buffer sizes match the plan");

        let dc_scale = (d as f64).sqrt().recip();
        let pair_scale = (2.0 / d as f64).sqrt();
        let mut coeffs = vec![0.0; d];
        coeffs[0] = spectrum[0].re * dc_scale;
        for k in 1..spectrum.len() {
            if 2 * k < d {
                coeffs[2 * k - 1] = pair_scale * spectrum[k].re;
                coeffs[2 * k] = -pair_scale * spectrum[k].im;
            } else {
                coeffs[d - 1] = spectrum[k].re * dc_scale;
            }
        }
        coeffs
    }

    /// Coefficients to signal (`B c`).
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.dim);
        let d = self.dim;
        if d == 1 {
            return coeffs.to_vec();
        }
        let mut spectrum = self.inverse.make_input_vec();
        let dc_scale = (d as f64).sqrt();
        let pair_scale = (d as f64 / 2.0).sqrt();
        spectrum[0] = Complex64::new(coeffs[0] * dc_scale, 0.0);
        for k in 1..spectrum.len() {
            spectrum[k] = if 2 * k < d {
                Complex64::new(pair_scale * coeffs[2 * k - 1], -pair_scale * coeffs[2 * k])
            } else {
                Complex64::new(coeffs[d - 1] * dc_scale, 0.0)
            };
        }
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spectrum, &mut out)
            .expect("buffer sizes match the plan");
        let norm = (d as f64).recip();
        out.iter_mut().for_each(|v| *v *= norm);
        out
    }

    fn check_orthonormal(&self) -> Result<()> {
        let d = self.dim;
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                self.synthesize(&e)
            })
            .collect();
        for a in 0..d {
            for b in a..d {
                let dot: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-10 {
                    return Err(Error::invalid(
                        "basis",
                        format!("columns {a},{b} inner product {dot} (dim {d})"),
                    ));
                }
            }
        }
        Ok(())
    }
}
