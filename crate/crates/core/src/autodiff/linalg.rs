use std::sync::Arc;

use super::graph::{Graph, Var};
use super::ops::dims2;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds `x` (`[C, H, W]`) into `[C*kh*kw, H*W]` with zero padding so that
/// the output keeps the input's spatial size.
fn im2col<T: Real>(x: &[T], g: ConvGeom) -> Vec<T> {
    let (h, w) = (g.h, g.w);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = h * w;
    let mut cols = vec![T::zero(); g.patch() * hw];
    for c in 0..g.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = &mut cols[((c * g.kh + di) * g.kw + dj) * hw..][..hw];
                let (x0, x1) = (pw.saturating_sub(dj), (w + pw).saturating_sub(dj).min(w));
                for y in 0..h {
                    let sy = y as isize + di as isize - ph as isize;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = sy as usize * w + x0 + dj - pw;
                    row[y * w + x0..y * w + x1].copy_from_slice(&plane[src..src + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], g: ConvGeom) -> Vec<T> {
    let (h, w) = (g.h, g.w);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = h * w;
    let mut x = vec![T::zero(); g.c * hw];
    for c in 0..g.c {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = &cols[((c * g.kh + di) * g.kw + dj) * hw..][..hw];
                let (x0, x1) = (pw.saturating_sub(dj), (w + pw).saturating_sub(dj).min(w));
                for y in 0..h {
                    let sy = y as isize + di as isize - ph as isize;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let dst = sy as usize * w + x0 + dj - pw;
                    for (d, &s) in plane[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    x
}

impl<T: Real> Graph<T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut c = vec![T::zero(); m * n];
        T::gemm(
            false,
            false,
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut c,
        );
        let out = Tensor::new(vec![m, n], c)?;
        Ok(self.record1(&[a, b], out, move |ctx| {
            let g = ctx.grad_out(0);
            let ga = ctx.wants(0).then(|| {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(
                    false,
                    true,
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    ctx.input(1).data(),
                    T::zero(),
                    &mut ga,
                );
                ga
            });
            let gb = ctx.wants(1).then(|| {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(
                    true,
                    false,
                    k,
                    m,
                    n,
                    T::one(),
                    ctx.input(0).data(),
                    g,
                    T::zero(),
                    &mut gb,
                );
                gb
            });
            vec![ga, gb]
        }))
    }

    /// `m x` for a constant matrix `m: [rows, cols]` shared by reference and
    /// `x: [cols]`; the result has shape `[rows]`.
    pub fn matvec_const(&mut self, m: Arc<Tensor<T>>, x: Var) -> Result<Var> {
        let (rows, cols) = dims2("matvec_const", m.shape())?;
        if self.shape(x) != [cols] {
            return Err(Error::ShapeMismatch {
                op: "matvec_const",
                lhs: vec![rows, cols],
                rhs: self.shape(x).to_vec(),
            });
        }
        let mut y = vec![T::zero(); rows];
        T::gemm(
            false,
            false,
            rows,
            cols,
            1,
            T::one(),
            m.data(),
            self.value(x).data(),
            T::zero(),
            &mut y,
        );
        let out = Tensor::new(vec![rows], y)?;
        Ok(self.record1(&[x], out, move |ctx| {
            let mut gx = vec![T::zero(); cols];
            T::gemm(
                true,
                false,
                cols,
                rows,
                1,
                T::one(),
                m.data(),
                ctx.grad_out(0),
                T::zero(),
                &mut gx,
            );
            vec![Some(gx)]
        }))
    }

    /// Same-padded 2-D convolution (cross-correlation) of `x: [C, H, W]` with
    /// `weight: [O, C, kh, kw]` (odd kernel sizes) and optional `bias: [O]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            &[c, h, w] => (c, h, w),
            s => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    shape: s.to_vec(),
                    reason: "input must be [C, H, W]".into(),
                })
            }
        };
        let (o, kh, kw) = match self.shape(weight) {
            &[o, wc, kh, kw] if wc == c && kh % 2 == 1 && kw % 2 == 1 => (o, kh, kw),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![c, h, w],
                    rhs: s.to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![o],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeom { c, h, w, kh, kw };
        let hw = h * w;
        let pointwise = kh == 1 && kw == 1;
        let mut out = vec![T::zero(); o * hw];
        {
            let xd = self.value(x).data();
            let cols;
            let cols_ref = if pointwise {
                xd
            } else {
                cols = im2col(xd, geom);
                &cols
            };
            T::gemm(
                false,
                false,
                o,
                geom.patch(),
                hw,
                T::one(),
                self.value(weight).data(),
                cols_ref,
                T::zero(),
                &mut out,
            );
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for (oc, plane) in out.chunks_mut(hw).enumerate() {
                for v in plane {
                    *v = *v + bd[oc];
                }
            }
        }
        let out = Tensor::new(vec![o, h, w], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record1(&inputs, out, move |ctx| {
            let g = ctx.grad_out(0);
            let xd = ctx.input(0).data();
            let wd = ctx.input(1).data();
            let patch = geom.patch();
            let cols;
            let cols_ref = if pointwise {
                xd
            } else if ctx.wants(1) {
                cols = im2col(xd, geom);
                &cols[..]
            } else {
                &[][..]
            };
            let gw = ctx.wants(1).then(|| {
                let mut gw = vec![T::zero(); o * patch];
                T::gemm(false, true, o, hw, patch, T::one(), g, cols_ref, T::zero(), &mut gw);
                gw
            });
            let gx = ctx.wants(0).then(|| {
                let mut gcols = vec![T::zero(); patch * hw];
                T::gemm(true, false, patch, o, hw, T::one(), wd, g, T::zero(), &mut gcols);
                if pointwise {
                    gcols
                } else {
                    col2im(&gcols, geom)
                }
            });
            let mut grads = vec![gx, gw];
            if ctx.num_inputs() == 3 {
                grads.push(
                    ctx.wants(2)
                        .then(|| g.chunks(hw).map(|plane| plane.iter().copied().sum()).collect()),
                );
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop reference for the same-padded convolution.
    fn conv_ref(x: &[f64], wt: &[f64], c: usize, h: usize, w: usize, o: usize, k: usize) -> Vec<f64> {
        let p = (k / 2) as isize;
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for di in 0..k as isize {
                            for dj in 0..k as isize {
                                let (sy, sx) = (y + di - p, xx + dj - p);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += wt[((oc * c + ic) * k + di as usize) * k + dj as usize]
                                        * x[(ic * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(oc * h + y as usize) * w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        let (c, h, w, o, k) = (2, 5, 4, 3, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new(vec![c, h, w], x.clone()).unwrap());
        let wv = g.constant(Tensor::new(vec![o, c, k, k], wt.clone()).unwrap());
        let y = g.conv2d(xv, wv, None).unwrap();
        let expect = conv_ref(&x, &wt, c, h, w, o, k);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_adjoint_identity() {
        let geom = ConvGeom {
            c: 2,
            h: 4,
            w: 3,
            kh: 3,
            kw: 3,
        };
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..geom.patch() * 12).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, geom).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, geom)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        assert!(g.conv2d(x, w, None).is_err());
    }
}
