use std::f64::consts::PI;

use nalgebra::DMatrix;

/// `d x d` matrix whose columns are the real Fourier basis vectors, ordered
/// `[dc, cos_1, sin_1, ..., nyquist]`.
pub fn dense_fourier_basis(d: usize) -> DMatrix<f64> {
    let dn = d as f64;
    DMatrix::from_fn(d, d, |n, j| {
        let t = n as f64;
        if j == 0 {
            return dn.sqrt().recip();
        }
        if d.is_multiple_of(2) && j == d - 1 {
            return if n % 2 == 0 { 1.0 } else { -1.0 } / dn.sqrt();
        }
        let k = j.div_ceil(2) as f64;
        let arg = 2.0 * PI * k * t / dn;
        let scale = (2.0 / dn).sqrt();
        if j % 2 == 1 {
            scale * arg.cos()
        } else {
            scale * arg.sin()
        }
    })
}
