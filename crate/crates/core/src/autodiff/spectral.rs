use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::Fft;

use super::graph::{Graph, Var};
use super::ops::dims2;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Unnormalized forward transform.
    Forward,
    /// Inverse transform scaled by `1/(H*W)`.
    Inverse,
}

/// In-place 2-D FFT of a row-major `h x w` buffer using the given 1-D plans.
fn fft2_with<T: Real>(
    buf: &mut [Complex<T>],
    h: usize,
    w: usize,
    row_plan: &Arc<dyn Fft<T>>,
    col_plan: &Arc<dyn Fft<T>>,
    dir: Direction,
) {
    row_plan.process(buf);
    let mut col = vec![Complex::new(T::zero(), T::zero()); h * w];
    for i in 0..h {
        for j in 0..w {
            col[j * h + i] = buf[i * w + j];
        }
    }
    col_plan.process(&mut col);
    let scale = match dir {
        Direction::Forward => T::one(),
        Direction::Inverse => T::one() / T::of((h * w) as f64),
    };
    for i in 0..h {
        for j in 0..w {
            buf[i * w + j] = col[j * h + i] * scale;
        }
    }
}

/// Standalone 2-D FFT under the crate's normalization convention.
pub fn fft2_in_place<T: Real>(buf: &mut [Complex<T>], h: usize, w: usize, dir: Direction) {
    assert_eq!(buf.len(), h * w, "fft2 buffer size");
    let mut planner = rustfft::FftPlanner::new();
    let inverse = dir == Direction::Inverse;
    let (rp, cp) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    fft2_with(buf, h, w, &rp, &cp, dir);
}

fn pack<T: Real>(re: &[T], im: &[T]) -> Vec<Complex<T>> {
    re.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect()
}

fn unpack<T: Real>(z: &[Complex<T>]) -> (Vec<T>, Vec<T>) {
    (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
}

impl<T: Real> Graph<T> {
    fn spectral(&mut self, re: Var, im: Var, dir: Direction) -> Result<(Var, Var)> {
        let (h, w) = dims2("fft2", self.shape(re))?;
        if self.shape(im) != [h, w] {
            return Err(Error::ShapeMismatch {
                op: "fft2",
                lhs: vec![h, w],
                rhs: self.shape(im).to_vec(),
            });
        }
        let fwd = (self.fft_plan(w, false), self.fft_plan(h, false));
        let inv = (self.fft_plan(w, true), self.fft_plan(h, true));
        let mut z = pack(self.value(re).data(), self.value(im).data());
        let (plans, adj_plans, adj_dir) = match dir {
            Direction::Forward => (&fwd, inv.clone(), Direction::Inverse),
            Direction::Inverse => (&inv, fwd.clone(), Direction::Forward),
        };
        fft2_with(&mut z, h, w, &plans.0, &plans.1, dir);
        let (zr, zi) = unpack(&z);
        let outs = vec![Tensor::new(vec![h, w], zr)?, Tensor::new(vec![h, w], zi)?];
        // fft2^H = (H*W) ifft2 and ifft2^H = fft2 / (H*W); the adjoint plan
        // applies the opposite transform, then the scale fixes the factor.
        let n = T::of((h * w) as f64);
        let adj_scale = match dir {
            Direction::Forward => n,
            Direction::Inverse => T::one() / n,
        };
        let outs = self.record(&[re, im], outs, move |ctx| {
            let mut g = pack(ctx.grad_out(0), ctx.grad_out(1));
            fft2_with(&mut g, h, w, &adj_plans.0, &adj_plans.1, adj_dir);
            let (gr, gi) = unpack(&g);
            let s = |v: Vec<T>| v.into_iter().map(|x| x * adj_scale).collect::<Vec<T>>();
            vec![ctx.wants(0).then(|| s(gr)), ctx.wants(1).then(|| s(gi))]
        });
        Ok((outs[0], outs[1]))
    }

    /// Unnormalized 2-D DFT of the complex field `(re, im)`.
    pub fn fft2(&mut self, re: Var, im: Var) -> Result<(Var, Var)> {
        self.spectral(re, im, Direction::Forward)
    }

    /// Inverse 2-D DFT including the `1/(H*W)` factor.
    pub fn ifft2(&mut self, re: Var, im: Var) -> Result<(Var, Var)> {
        self.spectral(re, im, Direction::Inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_pair_round_trips() {
        let (h, w) = (6, 8);
        let re: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let im: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(vec![h, w], re.clone()).unwrap());
        let b = g.constant(Tensor::new(vec![h, w], im.clone()).unwrap());
        let (fr, fi) = g.fft2(a, b).unwrap();
        let (rr, ri) = g.ifft2(fr, fi).unwrap();
        for (x, y) in g.value(rr).data().iter().zip(&re) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
        for (x, y) in g.value(ri).data().iter().zip(&im) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }

    #[test]
    fn dc_term_is_plain_sum() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(vec![4, 4], 1.0));
        let b = g.constant(Tensor::zeros(vec![4, 4]));
        let (fr, _) = g.fft2(a, b).unwrap();
        assert!((g.value(fr).data()[0] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn backward_through_fft_ifft_is_identity() {
        let (h, w) = (4, 5);
        let mut g = Graph::<f64>::new();
        let re = g.param(Tensor::new(vec![h, w], (0..20).map(|i| i as f64).collect()).unwrap());
        let im = g.param(Tensor::zeros(vec![h, w]));
        let (fr, fi) = g.fft2(re, im).unwrap();
        let (rr, ri) = g.ifft2(fr, fi).unwrap();
        let c: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).sin()).collect();
        let d: Vec<f64> = (0..20).map(|i| (i as f64 * 0.4).cos()).collect();
        g.backward_seeded(&[(rr, c.clone()), (ri, d.clone())]).unwrap();
        for (x, y) in g.grad(re).unwrap().iter().zip(&c) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in g.grad(im).unwrap().iter().zip(&d) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
