//! Scatterer maps and the FFT circular-convolution measurement model
//! `Y = ifft2(fft2(kappa) * fft2(I))`.
//!
//! Kernels are stored with their peak at `(n/2, n/2)` and rolled so that the
//! peak sits at the origin before the transform; a centered delta kernel is
//! therefore the identity operator.

use rustfft::num_complex::Complex;

use crate::autodiff::{fft2_in_place, CTensor, CVar, Direction, Graph, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Resizes a grayscale image to `n x n` with half-pixel-centered bilinear
/// interpolation (edge-clamped) and scales it so the maximum is 1. An
/// all-zero image stays zero. Equal sizes reproduce the input up to scaling.
pub fn genscat(pixels: &[f64], rows: usize, cols: usize, n: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 || pixels.len() != rows * cols || n == 0 {
        return Err(Error::InvalidShape {
            op: "genscat",
            shape: vec![rows, cols, pixels.len()],
            reason: format!("need a non-empty {rows}x{cols} image and n > 0"),
        });
    }
    let coord = |i: usize, src: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * src as f64 / n as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let (r0, r1, fr) = coord(i, rows);
        for j in 0..n {
            let (c0, c1, fc) = coord(j, cols);
            let top = pixels[r0 * cols + c0] * (1.0 - fc) + pixels[r0 * cols + c1] * fc;
            let bottom = pixels[r1 * cols + c0] * (1.0 - fc) + pixels[r1 * cols + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    let max = out.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v / max).max(0.0));
    }
    Ok(out)
}

/// Scatterer map of an 8-bit image on the `n x n` working grid.
pub fn genscat_u8(image: &[u8], rows: usize, cols: usize, n: usize) -> Result<Vec<f64>> {
    let px: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    genscat(&px, rows, cols, n)
}

fn check_square<T: Real>(g: &Graph<T>, z: CVar, op: &'static str) -> Result<usize> {
    match g.shape(z.re) {
        &[h, w] if h == w && h > 0 => Ok(h),
        s => Err(Error::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a square 2-D field".into(),
        }),
    }
}

/// Spectrum of a centered kernel: `fft2(roll(kappa, -n/2, -n/2))`.
pub fn kernel_spectrum<T: Real>(g: &mut Graph<T>, kappa: CVar) -> Result<CVar> {
    let n = check_square(g, kappa, "kernel_spectrum")?;
    let shift = -((n / 2) as isize);
    let rolled = g.croll2d(kappa, shift, shift)?;
    g.cfft2(rolled)
}

/// `A x = ifft2(K * fft2(x))`.
pub fn apply<T: Real>(g: &mut Graph<T>, spectrum: CVar, x: CVar) -> Result<CVar> {
    if g.shape(spectrum.re) != g.shape(x.re) {
        return Err(Error::ShapeMismatch {
            op: "convolve",
            lhs: g.shape(spectrum.re).to_vec(),
            rhs: g.shape(x.re).to_vec(),
        });
    }
    let xf = g.cfft2(x)?;
    let prod = g.cmul(spectrum, xf)?;
    g.cifft2(prod)
}

/// `A^H y = ifft2(conj(K) * fft2(y))`.
pub fn adjoint<T: Real>(g: &mut Graph<T>, spectrum: CVar, y: CVar) -> Result<CVar> {
    let conj = g.conj(spectrum);
    apply(g, conj, y)
}

/// Circular convolution of a centered kernel with a complex field.
pub fn convolve<T: Real>(g: &mut Graph<T>, kappa: CVar, x: CVar) -> Result<CVar> {
    let k = kernel_spectrum(g, kappa)?;
    apply(g, k, x)
}

/// Spectrum of a centered kernel as plain values.
pub fn kernel_spectrum_values<T: Real>(kappa: &CTensor<T>) -> Result<CTensor<T>> {
    let n = kappa.shape()[0];
    if kappa.shape() != [n, n] {
        return Err(Error::InvalidShape {
            op: "kernel_spectrum",
            shape: kappa.shape().to_vec(),
            reason: "expected a square 2-D field".into(),
        });
    }
    let h = n / 2;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        for j in 0..n {
            let src = i * n + j;
            let dst = ((i + n - h) % n) * n + (j + n - h) % n;
            buf[dst] = Complex::new(kappa.re.data()[src], kappa.im.data()[src]);
        }
    }
    fft2_in_place(&mut buf, n, n, Direction::Forward);
    CTensor::new(
        Tensor::new(vec![n, n], buf.iter().map(|c| c.re).collect())?,
        Tensor::new(vec![n, n], buf.iter().map(|c| c.im).collect())?,
    )
}

/// Lipschitz constant of `A^H A`: `max |fft2(kappa)|^2`.
pub fn lipschitz<T: Real>(kappa: &CTensor<T>) -> Result<f64> {
    let k = kernel_spectrum_values(kappa)?;
    Ok(k.re
        .data()
        .iter()
        .zip(k.im.data())
        .map(|(a, b)| a.f64().powi(2) + b.f64().powi(2))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genscat_identity_size_delta() {
        let mut img = vec![0.0; 25];
        img[12] = 255.0;
        let s = genscat(&img, 5, 5, 5).unwrap();
        let mut want = vec![0.0; 25];
        want[12] = 1.0;
        assert_eq!(s, want);
        assert!(genscat(&[0.0; 9], 3, 3, 7).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let n = 6;
        let mut g = Graph::<f64>::new();
        let mut d = vec![0.0; n * n];
        d[(n / 2) * n + n / 2] = 1.0;
        let k = g.cconstant(CTensor::from_real(Tensor::new(vec![n, n], d).unwrap()));
        let xs: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.3).sin()).collect();
        let x = g.cconstant(CTensor::from_real(Tensor::new(vec![n, n], xs.clone()).unwrap()));
        let y = convolve(&mut g, k, x).unwrap();
        for (a, b) in g.value(y.re).data().iter().zip(&xs) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.value(y.im).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let mut g = Graph::<f64>::new();
        let k = g.cconstant(CTensor::from_real(Tensor::zeros(vec![4, 4])));
        let x = g.cconstant(CTensor::from_real(Tensor::zeros(vec![5, 5])));
        assert!(convolve(&mut g, k, x).is_err());
    }
}
