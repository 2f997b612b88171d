use std::sync::Arc;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

impl Bcast {
    fn index(self, i: usize) -> (usize, usize) {
        match self {
            Bcast::Same => (i, i),
            Bcast::LeftScalar => (0, i),
            Bcast::RightScalar => (i, 0),
        }
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow for large x
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Column-wise softmax of `logits / tau` restricted to the `allowed` rows;
/// disallowed entries come out exactly zero.
pub(crate) fn masked_softmax_column<T: Real>(
    logits: &[T],
    allowed: &[bool],
    rows: usize,
    cols: usize,
    col: usize,
    tau: T,
    out: &mut [T],
) -> bool {
    let mut max = T::neg_infinity();
    for r in 0..rows {
        if allowed[r * cols + col] {
            max = max.max(logits[r * cols + col] / tau);
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut denom = T::zero();
    for r in 0..rows {
        let idx = r * cols + col;
        let e = if allowed[idx] {
            (logits[idx] / tau - max).exp()
        } else {
            T::zero()
        };
        out[idx] = e;
        denom = denom + e;
    }
    for r in 0..rows {
        out[r * cols + col] = out[r * cols + col] / denom;
    }
    true
}

impl<T: Real> Graph<T> {
    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Bcast)> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok((sa.shape().to_vec(), Bcast::Same))
        } else if sa.numel() == 1 {
            Ok((sb.shape().to_vec(), Bcast::LeftScalar))
        } else if sb.numel() == 1 {
            Ok((sa.shape().to_vec(), Bcast::RightScalar))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.shape().to_vec(),
                rhs: sb.shape().to_vec(),
            })
        }
    }

    /// Elementwise binary op with scalar broadcast. `da`/`db` give the partial
    /// derivatives at `(x, y)`.
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var> {
        let (shape, mode) = self.bcast(op, a, b)?;
        let n: usize = shape.iter().product();
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = (0..n)
            .map(|i| {
                let (ia, ib) = mode.index(i);
                f(xa[ia], xb[ib])
            })
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.record1(&[a, b], out, move |ctx| {
            let (xa, xb) = (ctx.input(0).data(), ctx.input(1).data());
            let g = ctx.grad_out(0);
            let mut ga = ctx.wants(0).then(|| vec![T::zero(); xa.len()]);
            let mut gb = ctx.wants(1).then(|| vec![T::zero(); xb.len()]);
            for (i, &gi) in g.iter().enumerate() {
                let (ia, ib) = mode.index(i);
                if let Some(ga) = ga.as_mut() {
                    ga[ia] = ga[ia] + gi * da(xa[ia], xb[ib]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] = gb[ib] + gi * db(xa[ia], xb[ib]);
                }
            }
            vec![ga, gb]
        }))
    }

    /// Elementwise unary op; `df(x, y)` is the derivative given input and output.
    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let out_id = self.num_nodes();
        self.record1(&[a], out, move |ctx| {
            let x = ctx.input(0).data();
            let y = ctx.value(Var(out_id)).data();
            let g = ctx.grad_out(0);
            let gx = x.iter().zip(y).zip(g).map(|((&x, &y), &g)| g * df(x, y)).collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, |_, y| T::one() / y, |x, y| -x / (y * y))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -T::one())
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |x, _| T::one() / x)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.sqrt(),
            |_, y| {
                if y > T::zero() {
                    T::one() / (y + y)
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Absolute value with subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| x + x)
    }

    /// `max(x, 0)` with subgradient 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `max(x, 0) + slope * min(x, 0)`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            move |x| if x > T::zero() { x } else { slope * x },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, |x, _| sigmoid(x))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().copied().sum();
        let n = x.numel();
        self.record1(&[a], Tensor::scalar(s), move |ctx| {
            vec![Some(vec![ctx.grad_out(0)[0]; n])]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Row sums of a 2-D tensor: `[rows, cols] -> [rows]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = dims2("sum_rows", x.shape())?;
        let data = x.data().chunks(cols).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::new(vec![rows], data)?;
        Ok(self.record1(&[a], out, move |ctx| {
            let g = ctx.grad_out(0);
            let gx = (0..rows * cols).map(|i| g[i / cols]).collect();
            vec![Some(gx)]
        }))
    }

    /// Largest element; the gradient goes to the first maximiser.
    pub fn max_all(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let idx = argmax(x.data()).ok_or(Error::InvalidShape {
            op: "max_all",
            shape: x.shape().to_vec(),
            reason: "empty tensor".into(),
        })?;
        let n = x.numel();
        let out = Tensor::scalar(x.data()[idx]);
        Ok(self.record1(&[a], out, move |ctx| {
            let mut g = vec![T::zero(); n];
            g[idx] = ctx.grad_out(0)[0];
            vec![Some(g)]
        }))
    }

    /// Linear-interpolation quantile of all elements (the `linear` rule:
    /// position `q * (n - 1)` in sorted order). The gradient is split between
    /// the two bracketing order statistics with the interpolation weights; at
    /// an exact order statistic it is an indicator on that element. Ties sort
    /// by index.
    pub fn quantile(&mut self, a: Var, q: f64) -> Result<Var> {
        let x = self.value(a);
        let n = x.numel();
        if n == 0 || !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidShape {
                op: "quantile",
                shape: x.shape().to_vec(),
                reason: format!("need a non-empty tensor and q in [0,1], got q={q}"),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let d = x.data();
        order.sort_by(|&i, &j| {
            d[i].partial_cmp(&d[j])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = T::of(pos - lo as f64);
        let (ilo, ihi) = (order[lo], order[hi]);
        let value = d[ilo] + frac * (d[ihi] - d[ilo]);
        Ok(self.record1(&[a], Tensor::scalar(value), move |ctx| {
            let g = ctx.grad_out(0)[0];
            let mut gx = vec![T::zero(); n];
            gx[ilo] = gx[ilo] + g * (T::one() - frac);
            gx[ihi] = gx[ihi] + g * frac;
            vec![Some(gx)]
        }))
    }

    /// Selects elements of the flattened tensor: result has shape `[idx.len()]`.
    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let n = x.numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: x.shape().to_vec(),
                reason: format!("index {bad} out of range"),
            });
        }
        let data = idx.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::new(vec![idx.len()], data)?;
        Ok(self.record1(&[a], out, move |ctx| {
            let g = ctx.grad_out(0);
            let mut gx = vec![T::zero(); n];
            for (k, &i) in idx.iter().enumerate() {
                gx[i] = gx[i] + g[k];
            }
            vec![Some(gx)]
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.record1(&[a], out, |ctx| vec![Some(ctx.grad_out(0).to_vec())]))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p) != first.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first,
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let part_len: usize = first.iter().product();
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first);
        let out = Tensor::new(shape, data)?;
        let count = parts.len();
        Ok(self.record1(parts, out, move |ctx| {
            let g = ctx.grad_out(0);
            (0..count)
                .map(|k| Some(g[k * part_len..(k + 1) * part_len].to_vec()))
                .collect()
        }))
    }

    /// Circular shift of a 2-D tensor: `out[(i + dr) mod H, (j + dc) mod W] = a[i, j]`.
    pub fn roll2d(&mut self, a: Var, dr: isize, dc: isize) -> Result<Var> {
        let x = self.value(a);
        let (h, w) = dims2("roll2d", x.shape())?;
        let out = Tensor::new(vec![h, w], roll(x.data(), h, w, dr, dc))?;
        Ok(self.record1(&[a], out, move |ctx| vec![Some(roll(ctx.grad_out(0), h, w, -dr, -dc))]))
    }

    /// Column-wise temperature softmax over the rows marked `allowed`
    /// (`[rows, cols]`, same layout as `logits`).
    pub fn softmax_cols(&mut self, logits: Var, tau: T, allowed: Arc<[bool]>) -> Result<Var> {
        let x = self.value(logits);
        let (rows, cols) = dims2("softmax_cols", x.shape())?;
        if allowed.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "softmax_cols",
                lhs: vec![rows, cols],
                rhs: vec![allowed.len()],
            });
        }
        if tau <= T::zero() {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let mut p = vec![T::zero(); rows * cols];
        for c in 0..cols {
            if !masked_softmax_column(x.data(), &allowed, rows, cols, c, tau, &mut p) {
                return Err(Error::Config(format!("softmax column {c} has no selectable rows")));
            }
        }
        let out = Tensor::new(vec![rows, cols], p)?;
        let out_id = self.num_nodes();
        Ok(self.record1(&[logits], out, move |ctx| {
            let p = ctx.value(Var(out_id)).data();
            let g = ctx.grad_out(0);
            let mut gx = vec![T::zero(); rows * cols];
            for c in 0..cols {
                let dot: T = (0..rows).map(|r| g[r * cols + c] * p[r * cols + c]).sum();
                for r in 0..rows {
                    let i = r * cols + c;
                    if allowed[i] {
                        gx[i] = p[i] * (g[i] - dot) / tau;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Value of `hard`, gradient of `soft`: `(hard - soft).detach() + soft`
    /// with the forward value taken bit-exactly from `hard`.
    pub fn straight_through(&mut self, hard: Tensor<T>, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::ShapeMismatch {
                op: "straight_through",
                lhs: hard.shape().to_vec(),
                rhs: self.shape(soft).to_vec(),
            });
        }
        Ok(self.record1(&[soft], hard, |ctx| vec![Some(ctx.grad_out(0).to_vec())]))
    }

    /// Copy of `a` cut off from the tape.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    /// `sqrt(re^2 + im^2)` with zero gradient where the modulus vanishes.
    pub fn cabs(&mut self, re: Var, im: Var) -> Result<Var> {
        if self.shape(re) != self.shape(im) {
            return Err(Error::ShapeMismatch {
                op: "cabs",
                lhs: self.shape(re).to_vec(),
                rhs: self.shape(im).to_vec(),
            });
        }
        let (r, i) = (self.value(re).data(), self.value(im).data());
        let data = r.iter().zip(i).map(|(&a, &b)| a.hypot(b)).collect();
        let out = Tensor::new(self.shape(re).to_vec(), data)?;
        let out_id = self.num_nodes();
        Ok(self.record1(&[re, im], out, move |ctx| {
            let (r, i) = (ctx.input(0).data(), ctx.input(1).data());
            let m = ctx.value(Var(out_id)).data();
            let g = ctx.grad_out(0);
            let part = |src: &[T]| -> Vec<T> {
                src.iter()
                    .zip(m)
                    .zip(g)
                    .map(|((&s, &m), &g)| if m > T::zero() { g * s / m } else { T::zero() })
                    .collect()
            };
            vec![ctx.wants(0).then(|| part(r)), ctx.wants(1).then(|| part(i))]
        }))
    }
}

pub(crate) fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [h, w] => Ok((*h, *w)),
        _ => Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected a 2-D tensor".into(),
        }),
    }
}

/// Index of the first maximum (NaN never wins).
pub(crate) fn argmax<T: Real>(xs: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if x > xs[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

fn roll<T: Real>(x: &[T], h: usize, w: usize, dr: isize, dc: isize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    let sr = dr.rem_euclid(h as isize) as usize;
    let sc = dc.rem_euclid(w as isize) as usize;
    for i in 0..h {
        let oi = (i + sr) % h;
        for j in 0..w {
            out[oi * w + (j + sc) % w] = x[i * w + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.1);
        assert_eq!(g.value(y).data(), &[-0.1, 2.0]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_broadcast_accumulates_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.param(Tensor::scalar(2.0));
        let p = g.mul(a, s).unwrap();
        let r = g.sum(p);
        g.backward(r).unwrap();
        assert_eq!(g.grad(s).unwrap(), &[6.0]);
        assert_eq!(g.grad(a).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn quantile_gradient_is_indicator_at_order_statistic() {
        // n = 5, q = 0.5 -> position 2 exactly: the median element
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[5], &[0.3, 0.9, 0.1, 0.5, 0.7]));
        let q = g.quantile(x, 0.5).unwrap();
        assert_eq!(g.item(q), 0.5);
        g.backward(q).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn quantile_interpolates_like_linear_rule() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[4], &[4.0, 1.0, 3.0, 2.0]));
        // position 0.95 * 3 = 2.85 between sorted[2] = 3 and sorted[3] = 4
        let q = g.quantile(x, 0.95).unwrap();
        assert!((g.item(q) - 3.85).abs() < 1e-12);
        g.backward(q).unwrap();
        let gx = g.grad(x).unwrap();
        assert!((gx[2] - 0.15).abs() < 1e-12 && (gx[0] - 0.85).abs() < 1e-12);
    }

    #[test]
    fn softmax_cols_respects_exclusions() {
        let mut g = Graph::<f64>::new();
        let l = g.param(t(&[3, 2], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let allowed: Arc<[bool]> = vec![true, false, true, true, true, true].into();
        let p = g.softmax_cols(l, 1.0, allowed).unwrap();
        let v = g.value(p).data();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert!((v[3] - 0.5).abs() < 1e-15 && (v[5] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_cols_rejects_empty_column() {
        let mut g = Graph::<f64>::new();
        let l = g.param(t(&[2, 1], &[0.0, 0.0]));
        let allowed: Arc<[bool]> = vec![false, false].into();
        assert!(matches!(g.softmax_cols(l, 1.0, allowed), Err(Error::Config(_))));
    }

    #[test]
    fn roll_then_unroll_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let x = g.constant(t(&[3, 4], &data));
        let y = g.roll2d(x, 1, -2).unwrap();
        assert_eq!(g.value(y).data()[4 + 2], 0.0);
        let z = g.roll2d(y, -1, 2).unwrap();
        assert_eq!(g.value(z).data(), data.as_slice());
    }

    #[test]
    fn cabs_subgradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let re = g.param(t(&[2], &[0.0, 3.0]));
        let im = g.param(t(&[2], &[0.0, 4.0]));
        let m = g.cabs(re, im).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.grad(re).unwrap(), &[0.0, 0.6]);
        assert_eq!(g.grad(im).unwrap(), &[0.0, 0.8]);
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.exp(a);
        let _ = g.sum(b);
        assert_eq!(g.tape_len(), 0);
    }
}
