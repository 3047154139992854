//! STFT, the power-law compressed spectrum, and the spectral losses used as
//! likelihood terms, with analytic gradients through the STFT adjoint.
//!
//! Framing: frame `t` covers samples `[t * hop, t * hop + window)`; there is no
//! centre padding and the last frame is zero-padded past the end of the
//! signal. The Hann window is periodic, `w[n] = 0.5 - 0.5 cos(2 pi n / N)`.
//! Transforms are unnormalized (`X_k = sum_n x_n e^{-2 pi i k n / N}`).

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes below this are treated as zero by the compression.
pub const MAG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 510-sample Hann window, hop 160, 256 bins.
    fn default() -> Self {
        StftConfig {
            window: 510,
            hop: 160,
            fft_size: 510,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid("stft.window", "must be at least 2"));
        }
        if self.hop == 0 || self.hop >= self.window {
            return Err(Error::invalid(
                "stft.hop",
                format!("{} must lie in [1, window = {})", self.hop, self.window),
            ));
        }
        if self.fft_size < self.window {
            return Err(Error::invalid(
                "stft.fft_size",
                format!("{} is smaller than the window ({})", self.fft_size, self.window),
            ));
        }
        Ok(())
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + (len - self.window).div_ceil(self.hop)
    }
}

/// Complex grid, frame-major: `data[t * bins + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// `Re <self, other>`.
    pub fn real_inner(&self, other: &Spectrogram) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Binary dump: `u32` bins, `u32` frames (little endian), then for each
    /// bin and each frame within it, `f64` real and `f64` imaginary parts.
    pub fn write_grid(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(8 + 16 * self.data.len());
        buf.extend_from_slice(&(self.bins as u32).to_le_bytes());
        buf.extend_from_slice(&(self.frames as u32).to_le_bytes());
        for k in 0..self.bins {
            for t in 0..self.frames {
                let z = self.get(k, t);
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }
}

/// Planned STFT with its adjoint.
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Stft {
            window: hann(cfg.window),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrogram> {
        let cfg = &self.cfg;
        if x.len() < cfg.window {
            return Err(Error::SignalTooShort {
                len: x.len(),
                window: cfg.window,
            });
        }
        let frames = cfg.frames(x.len());
        let bins = cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut frame = self.forward.make_input_vec();
        let mut spectrum = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for t in 0..frames {
            let start = t * cfg.hop;
            frame.iter_mut().for_each(|v| *v = 0.0);
            let avail = cfg.window.min(x.len() - start);
            for n in 0..avail {
                frame[n] = x[start + n] * self.window[n];
            }
            self.forward
                .process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
                .expect("buffer sizes match the plan");
            data.extend_from_slice(&spectrum);
        }
        Ok(Spectrogram { bins, frames, data })
    }

    /// Adjoint of [`Stft::forward`] for signals of length `len`, under the
    /// real inner product `Re <Z, W>` on spectrograms.
    pub fn adjoint(&self, grid: &Spectrogram, len: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let n = cfg.fft_size;
        let bins = cfg.bins();
        debug_assert_eq!(grid.bins, bins);
        debug_assert_eq!(grid.frames, cfg.frames(len));
        let mut out = vec![0.0; len];
        let mut spectrum = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let has_nyquist = n.is_multiple_of(2);
        for t in 0..grid.frames {
            let src = grid.frame(t);
            // Hermitian synthesis doubles interior bins; halve them so the
            // result is sum_k Re(W_k e^{+2 pi i k n / N}).
            for k in 0..bins {
                spectrum[k] = if k == 0 || (has_nyquist && k == bins - 1) {
                    Complex64::new(src[k].re, 0.0)
                } else {
                    src[k] * 0.5
                };
            }
            self.inverse
                .process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
                .expect("buffer sizes match the plan");
            let start = t * cfg.hop;
            let avail = cfg.window.min(len - start);
            for i in 0..avail {
                out[start + i] += frame[i] * self.window[i];
            }
        }
        out
    }
}

pub fn stft(x: &[f64], cfg: StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg)?.forward(x)
}

/// `z |z|^{-1/3}` with `|z|` floored at [`MAG_FLOOR`].
pub fn compress_value(z: Complex64) -> Complex64 {
    z / z.norm_sqr().sqrt().max(MAG_FLOOR).cbrt()
}

/// `|z|^{2/3}`, zero below the magnitude floor.
fn compressed_magnitude(z: Complex64) -> f64 {
    let mag = z.norm_sqr().sqrt();
    mag / mag.max(MAG_FLOOR).cbrt()
}

pub fn compress(grid: &Spectrogram) -> Spectrogram {
    Spectrogram {
        bins: grid.bins,
        frames: grid.frames,
        data: grid.data.iter().map(|&z| compress_value(z)).collect(),
    }
}

fn check_lengths(expected: usize, signals: &[&[f64]]) -> Result<()> {
    for s in signals {
        if s.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: s.len() });
        }
    }
    Ok(())
}

/// `L_rec = ||S(y) - S(sum)||^2` against a fixed target, with its gradient.
#[derive(Clone, Debug)]
pub struct SpectralLikelihood {
    stft: Stft,
    target: Spectrogram,
    len: usize,
}

impl SpectralLikelihood {
    pub fn new(y: &[f64], cfg: StftConfig) -> Result<Self> {
        let stft = Stft::new(cfg)?;
        let target = compress(&stft.forward(y)?);
        Ok(SpectralLikelihood {
            stft,
            target,
            len: y.len(),
        })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn loss(&self, sum: &[f64]) -> Result<f64> {
        check_lengths(self.len, &[sum])?;
        let z = self.stft.forward(sum)?;
        Ok(z.data
            .iter()
            .zip(&self.target.data)
            .map(|(&z, &s)| (compress_value(z) - s).norm_sqr())
            .sum())
    }

    /// Loss and its gradient with respect to the summed signal.
    ///
    /// With `e = c(z) - S(y)`, the Wirtinger derivatives
    /// `dc/dz = (5/6)|z|^{-1/3}` and `dc/dz̄ = -(1/6) z^2 |z|^{-7/3}` give the
    /// spectral cotangent `2 (dc/dz e + dc/dz̄ ē)`, pulled back through the
    /// STFT adjoint. Below the magnitude floor the cotangent is zero.
    pub fn loss_and_grad(&self, sum: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_lengths(self.len, &[sum])?;
        let z = self.stft.forward(sum)?;
        let mut loss = 0.0;
        let data = z
            .data
            .iter()
            .zip(&self.target.data)
            .map(|(&z, &s)| {
                let mag = z.norm_sqr().sqrt();
                let inv_cbrt = 1.0 / mag.max(MAG_FLOOR).cbrt();
                let e = z * inv_cbrt - s;
                loss += e.norm_sqr();
                if mag < MAG_FLOOR {
                    return Complex64::new(0.0, 0.0);
                }
                let a = (5.0 / 6.0) * inv_cbrt;
                let b = z * z * (-(1.0 / 6.0) * inv_cbrt / (mag * mag));
                (e * a + b * e.conj()) * 2.0
            })
            .collect();
        let cotangent = Spectrogram {
            bins: z.bins,
            frames: z.frames,
            data,
        };
        Ok((loss, self.stft.adjoint(&cotangent, self.len)))
    }
}

fn mixture_sum(len: usize, estimates: &[&[f64]]) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    for e in estimates {
        for (s, v) in sum.iter_mut().zip(e.iter()) {
            *s += v;
        }
    }
    sum
}

/// Reconstruction loss of `y` by the sum of `estimates`.
pub fn rec_loss(y: &[f64], estimates: &[&[f64]], cfg: StftConfig) -> Result<f64> {
    check_lengths(y.len(), estimates)?;
    SpectralLikelihood::new(y, cfg)?.loss(&mixture_sum(y.len(), estimates))
}

/// Gradient of [`rec_loss`] with respect to each estimate. The mixture enters
/// only through the sum, so every returned vector is the same.
pub fn rec_loss_grad(y: &[f64], estimates: &[&[f64]], cfg: StftConfig) -> Result<Vec<Vec<f64>>> {
    check_lengths(y.len(), estimates)?;
    let (_, grad) = SpectralLikelihood::new(y, cfg)?.loss_and_grad(&mixture_sum(y.len(), estimates))?;
    Ok(vec![grad; estimates.len()])
}

/// Cosine similarity between compressed magnitude grids of an on-screen
/// estimate and a held-fixed off-screen estimate.
#[derive(Clone, Debug)]
pub struct Crosstalk {
    stft: Stft,
}

/// Magnitudes `|S(x)|` of a reference signal, precomputed once.
#[derive(Clone, Debug)]
pub struct MagnitudeGrid {
    values: Vec<f64>,
    norm: f64,
}

impl MagnitudeGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Crosstalk {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        Ok(Crosstalk { stft: Stft::new(cfg)? })
    }

    pub fn magnitudes(&self, x: &[f64]) -> Result<MagnitudeGrid> {
        let z = self.stft.forward(x)?;
        let values: Vec<f64> = z.data.iter().map(|&z| compressed_magnitude(z)).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(MagnitudeGrid { values, norm })
    }

    pub fn loss(&self, onscreen: &[f64], offscreen: &MagnitudeGrid) -> Result<f64> {
        let m = self.magnitudes(onscreen)?;
        Ok(cosine(&m, offscreen))
    }

    /// Gradient with respect to `onscreen` only; `offscreen` is a constant.
    pub fn grad(&self, onscreen: &[f64], offscreen: &MagnitudeGrid) -> Result<Vec<f64>> {
        let len = onscreen.len();
        let z = self.stft.forward(onscreen)?;
        if z.data.len() != offscreen.values.len() {
            return Err(Error::DimensionMismatch {
                expected: z.data.len(),
                got: offscreen.values.len(),
            });
        }
        let m: Vec<f64> = z.data.iter().map(|&z| compressed_magnitude(z)).collect();
        let m_norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = offscreen;
        if m_norm == 0.0 || q.norm == 0.0 {
            return Ok(vec![0.0; len]);
        }
        let sim = m.iter().zip(&q.values).map(|(a, b)| a * b).sum::<f64>() / (m_norm * q.norm);
        // d|z|^{2/3} = Re(conj((2/3) z |z|^{-4/3}) dz)
        let data = z
            .data
            .iter()
            .zip(m.iter().zip(&q.values))
            .map(|(&z, (&mk, &qk))| {
                let mag = z.norm_sqr().sqrt();
                if mag < MAG_FLOOR {
                    return Complex64::new(0.0, 0.0);
                }
                let dsim_dm = qk / (m_norm * q.norm) - sim * mk / (m_norm * m_norm);
                z * (dsim_dm * (2.0 / 3.0) / (mag * mag.cbrt()))
            })
            .collect();
        let cotangent = Spectrogram {
            bins: z.bins,
            frames: z.frames,
            data,
        };
        Ok(self.stft.adjoint(&cotangent, len))
    }
}

fn cosine(a: &MagnitudeGrid, b: &MagnitudeGrid) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    (dot / (a.norm * b.norm)).clamp(0.0, 1.0)
}

pub fn crosstalk_loss(onscreen: &[f64], offscreen: &[f64], cfg: StftConfig) -> Result<f64> {
    check_lengths(onscreen.len(), &[offscreen])?;
    let ct = Crosstalk::new(cfg)?;
    ct.loss(onscreen, &ct.magnitudes(offscreen)?)
}

pub fn crosstalk_grad(onscreen: &[f64], offscreen: &[f64], cfg: StftConfig) -> Result<Vec<f64>> {
    check_lengths(onscreen.len(), &[offscreen])?;
    let ct = Crosstalk::new(cfg)?;
    ct.grad(onscreen, &ct.magnitudes(offscreen)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> StftConfig {
        StftConfig {
            window: 32,
            hop: 12,
            fft_size: 32,
        }
    }

    fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// O(n^2) DFT of one windowed frame, written from the definition.
    fn naive_frame(x: &[f64], start: usize, cfg: &StftConfig) -> Vec<Complex64> {
        let w = hann(cfg.window);
        (0..cfg.bins())
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (n, wn) in w.iter().enumerate() {
                    let v = x.get(start + n).copied().unwrap_or(0.0) * wn;
                    let phase = -2.0 * PI * (k * n) as f64 / cfg.fft_size as f64;
                    acc += Complex64::from_polar(v, phase);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn default_config_has_256_bins() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.bins(), 256);
        cfg.validate().unwrap();
        assert!(StftConfig {
            window: 16,
            hop: 16,
            fft_size: 16
        }
        .validate()
        .is_err());
    }

    #[test]
    fn frame_count_covers_signal() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frames(510), 1);
        assert_eq!(cfg.frames(511), 2);
        assert_eq!(cfg.frames(670), 2);
        assert_eq!(cfg.frames(671), 3);
    }

    #[test]
    fn zeros_and_short_input() {
        let z = stft(&[0.0; 600], StftConfig::default()).unwrap();
        assert!(z.data.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(
            stft(&[0.0; 509], StftConfig::default()),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn impulse_gives_windowed_phasor() {
        let cfg = StftConfig::default();
        let w = hann(cfg.window);
        for at in [0usize, 5] {
            let mut x = vec![0.0; 700];
            x[at] = 1.0;
            let z = stft(&x, cfg).unwrap();
            for k in 0..cfg.bins() {
                let expected = Complex64::from_polar(w[at], -2.0 * PI * (k * at) as f64 / 510.0);
                assert!((z.get(k, 0) - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_matches_naive_dft() {
        let cfg = StftConfig::default();
        let bin = 40;
        let x: Vec<f64> = (0..1200)
            .map(|n| (2.0 * PI * bin as f64 * n as f64 / cfg.fft_size as f64).cos())
            .collect();
        let z = stft(&x, cfg).unwrap();
        for t in 0..z.frames {
            let naive = naive_frame(&x, t * cfg.hop, &cfg);
            for (k, nk) in naive.iter().enumerate() {
                assert!((z.get(k, t) - nk).norm() < 1e-9);
            }
        }
        let frame = z.frame(1);
        let peak = (0..cfg.bins())
            .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
            .unwrap();
        assert_eq!(peak, bin);
    }

    #[test]
    fn linearity_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for cfg in [
            small(),
            StftConfig::default(),
            StftConfig {
                window: 31,
                hop: 10,
                fft_size: 40,
            },
        ] {
            let plan = Stft::new(cfg).unwrap();
            let len = cfg.window * 3 + 7;
            let x = random_signal(&mut rng, len);
            let w = random_signal(&mut rng, len);
            let (a, b) = (1.7, -0.4);
            let mix: Vec<f64> = x.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
            let zx = plan.forward(&x).unwrap();
            let zw = plan.forward(&w).unwrap();
            let zm = plan.forward(&mix).unwrap();
            for i in 0..zm.data.len() {
                let expected = zx.data[i] * a + zw.data[i] * b;
                assert!((zm.data[i] - expected).norm() <= 1e-10 * (1.0 + expected.norm()));
            }

            let grid = Spectrogram {
                bins: zx.bins,
                frames: zx.frames,
                data: (0..zx.data.len())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            };
            let lhs = zx.real_inner(&grid);
            let back = plan.adjoint(&grid, len);
            let rhs: f64 = x.iter().zip(&back).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn compression_values() {
        let c = |re, im| compress_value(Complex64::new(re, im));
        assert!((c(1.0, 0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((c(8.0, 0.0) - Complex64::new(4.0, 0.0)).norm() < 1e-14);
        assert_eq!(c(0.0, 0.0), Complex64::new(0.0, 0.0));
        let v = c(0.0, -8.0);
        assert!((v.norm() - 4.0).abs() < 1e-14);
        assert!((v.arg() + PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn rec_loss_basics() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_signal(&mut rng, 80);
        let b = random_signal(&mut rng, 80);
        let y: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        assert!(rec_loss(&y, &[&a, &b], cfg).unwrap() < 1e-20);
        let g = rec_loss_grad(&y, &[&a, &b], cfg).unwrap();
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-9));

        let zero = vec![0.0; 80];
        let direct: f64 = stft(&a, cfg)
            .unwrap()
            .data
            .iter()
            .map(|z| z.norm().powf(4.0 / 3.0))
            .sum();
        let loss = rec_loss(&zero, &[&a], cfg).unwrap();
        assert!((loss - direct).abs() <= 1e-12 * direct);
        assert!(rec_loss(&zero, &[&a[..79]], cfg).is_err());
    }

    #[test]
    fn rec_grads_identical_across_sources() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_signal(&mut rng, 64);
        let e: Vec<Vec<f64>> = (0..3).map(|_| random_signal(&mut rng, 64)).collect();
        let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
        let g = rec_loss_grad(&y, &refs, cfg).unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[1], g[2]);
    }

    #[test]
    fn crosstalk_values() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_signal(&mut rng, 90);
        assert!((crosstalk_loss(&x, &x, cfg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(crosstalk_loss(&x, &[0.0; 90], cfg).unwrap(), 0.0);
        let w = random_signal(&mut rng, 90);
        let ab = crosstalk_loss(&x, &w, cfg).unwrap();
        let ba = crosstalk_loss(&w, &x, cfg).unwrap();
        assert!((0.0..=1.0).contains(&ab));
        assert!((ab - ba).abs() < 1e-12);
        assert!(crosstalk_grad(&x, &[0.0; 90], cfg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn disjoint_bands_have_low_similarity() {
        let cfg = StftConfig::default();
        let tone = |bin: f64| -> Vec<f64> { (0..4000).map(|n| (2.0 * PI * bin * n as f64 / 510.0).sin()).collect() };
        let sim = crosstalk_loss(&tone(20.0), &tone(180.0), cfg).unwrap();
        assert!(sim < 0.2, "{sim}");
    }

    #[test]
    fn grid_dump_layout() {
        let z = stft(&(0..40).map(|i| i as f64).collect::<Vec<_>>(), small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.bin");
        z.write_grid(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 16 * z.bins * z.frames);
        assert_eq!(u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize, z.bins);
        // Second record is bin 0, frame 1.
        let re = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        assert_eq!(re, z.get(0, 1).re);
    }
}
