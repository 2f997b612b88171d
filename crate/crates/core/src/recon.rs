//! Unrolled ISTA deconvolution, feature extraction and the residual CNN head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{CTensor, CVar, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::forward;
use crate::real::Real;

/// Stabilizer of the complex soft threshold.
pub const PROX_EPS: f64 = 1e-8;
/// Stabilizer of the phase features.
pub const FEATURE_EPS: f64 = 1e-8;
/// Input channels produced by [`features`].
pub const FEATURE_CHANNELS: usize = 5;
const LEAKY_SLOPE: f64 = 0.1;

/// Complex soft thresholding `Z / (|Z| + eps) * max(|Z| - lambda, 0)` with a
/// scalar threshold node.
pub fn prox<T: Real>(g: &mut Graph<T>, z: CVar, lambda: Var) -> Result<CVar> {
    let m = g.cmodulus(z)?;
    let denom = g.shift(m, T::of(PROX_EPS));
    let excess = g.sub(m, lambda)?;
    let kept = g.relu(excess);
    let gain = g.div(kept, denom)?;
    g.cscale(z, gain)
}

/// `n` ISTA layers `X <- prox(X - alpha_t A^H (A X - Y), lambda_t)` from
/// `X = 0`, with per-layer step sizes `alpha: [n]` and thresholds
/// `lambda: [n]` used as given.
pub fn ista_iterate<T: Real>(g: &mut Graph<T>, y: CVar, spectrum: CVar, alpha: Var, lambda: Var) -> Result<CVar> {
    let layers = g.shape(alpha)[0];
    if g.shape(lambda) != [layers] {
        return Err(Error::ShapeMismatch {
            op: "ista",
            lhs: vec![layers],
            rhs: g.shape(lambda).to_vec(),
        });
    }
    let shape = g.shape(y.re).to_vec();
    let mut x = g.cconstant(CTensor::from_real(Tensor::zeros(shape)));
    for t in 0..layers {
        let ax = forward::apply(g, spectrum, x)?;
        let resid = g.csub(ax, y)?;
        let grad = forward::adjoint(g, spectrum, resid)?;
        let a_t = g.gather(alpha, [t].as_slice().into())?;
        let step = g.cscale(grad, a_t)?;
        let z = g.csub(x, step)?;
        let l_t = g.gather(lambda, [t].as_slice().into())?;
        x = prox(g, z, l_t)?;
        if !(g.value(x.re).all_finite() && g.value(x.im).all_finite()) {
            return Err(Error::Divergence { layer: t });
        }
    }
    Ok(x)
}

/// ISTA with raw parameters mapped through softplus, so step sizes stay
/// positive and thresholds non-negative.
pub fn ista_unroll<T: Real>(
    g: &mut Graph<T>,
    y: CVar,
    spectrum: CVar,
    alpha_raw: Var,
    lambda_raw: Var,
) -> Result<CVar> {
    let alpha = g.softplus(alpha_raw);
    let lambda = g.softplus(lambda_raw);
    ista_iterate(g, y, spectrum, alpha, lambda)
}

/// Inverse of softplus, for initializing raw parameters from target values.
pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `[Re X, Im X, |X|, Re X / (|X| + eps), Im X / (|X| + eps)]` as `[5, H, W]`.
pub fn features<T: Real>(g: &mut Graph<T>, x: CVar) -> Result<Var> {
    let m = g.cmodulus(x)?;
    let denom = g.shift(m, T::of(FEATURE_EPS));
    let c = g.div(x.re, denom)?;
    let s = g.div(x.im, denom)?;
    g.stack(&[x.re, x.im, m, c, s])
}

/// One convolution of the head: name, output channels, input channels,
/// kernel size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: &'static str,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
}

/// Layer plan for base width `b`: 3x3 encoders 5->b->2b->4b->2b, a 1x1
/// projection 4b->2b, a 3x3 fuse 2b->b, a 3x3 head b->1 and a 1x1 base 5->1.
pub fn conv_plan(b: usize) -> [ConvSpec; 8] {
    let c = |name, out_ch, in_ch, kernel| ConvSpec {
        name,
        out_ch,
        in_ch,
        kernel,
    };
    [
        c("enc1", b, FEATURE_CHANNELS, 3),
        c("enc2", 2 * b, b, 3),
        c("enc3", 4 * b, 2 * b, 3),
        c("enc4", 2 * b, 4 * b, 3),
        c("proj", 2 * b, 4 * b, 1),
        c("fuse", b, 2 * b, 3),
        c("head", 1, b, 3),
        c("base", 1, FEATURE_CHANNELS, 1),
    ]
}

/// Parameter names and shapes of the head in storage order: weight and bias
/// of each convolution in plan order, then the residual scale `eta`.
pub fn head_layout(b: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for c in conv_plan(b) {
        out.push((
            format!("head.{}.w", c.name),
            vec![c.out_ch, c.in_ch, c.kernel, c.kernel],
        ));
        out.push((format!("head.{}.b", c.name), vec![c.out_ch]));
    }
    out.push(("head.eta".to_string(), vec![1]));
    out
}

/// He-initialized head tensors (zero biases) in [`head_layout`] order.
pub fn init_head<T: Real, R: Rng>(b: usize, eta0: f64, rng: &mut R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut out = Vec::new();
    for (name, shape) in head_layout(b) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with(".w") {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
            (0..n).map(|_| normal.sample(rng)).collect()
        } else if name == "head.eta" {
            vec![eta0]
        } else {
            vec![0.0; n]
        };
        out.push((name, Tensor::from_f64(shape, &data)?));
    }
    Ok(out)
}

/// Graph nodes of the head parameters.
#[derive(Debug, Clone)]
pub struct HeadVars {
    /// `(weight, bias)` per convolution in plan order.
    pub convs: Vec<(Var, Var)>,
    pub eta: Var,
}

impl HeadVars {
    /// Splits nodes given in [`head_layout`] order and checks their shapes.
    pub fn from_slice<T: Real>(g: &Graph<T>, b: usize, vars: &[Var]) -> Result<Self> {
        let layout = head_layout(b);
        if vars.len() != layout.len() {
            return Err(Error::InvalidShape {
                op: "cnn_head",
                shape: vec![vars.len()],
                reason: format!("expected {} parameter tensors", layout.len()),
            });
        }
        for ((name, shape), &v) in layout.iter().zip(vars) {
            if g.shape(v) != shape.as_slice() {
                return Err(Error::InvalidShape {
                    op: "cnn_head",
                    shape: g.shape(v).to_vec(),
                    reason: format!("{name} must be {shape:?}"),
                });
            }
        }
        let convs = vars[..vars.len() - 1].chunks(2).map(|p| (p[0], p[1])).collect();
        Ok(HeadVars {
            convs,
            eta: vars[vars.len() - 1],
        })
    }
}

/// Fig.-2 style head on `feat: [5, H, W]`, returning `b + eta * r` as `[H, W]`.
pub fn cnn_head<T: Real>(g: &mut Graph<T>, feat: Var, head: &HeadVars) -> Result<Var> {
    let (h, w) = match g.shape(feat) {
        &[FEATURE_CHANNELS, h, w] => (h, w),
        s => {
            return Err(Error::InvalidShape {
                op: "cnn_head",
                shape: s.to_vec(),
                reason: format!("input must be [{FEATURE_CHANNELS}, H, W]"),
            })
        }
    };
    let slope = T::of(LEAKY_SLOPE);
    let conv = |g: &mut Graph<T>, x: Var, i: usize| -> Result<Var> {
        let (wt, b) = head.convs[i];
        g.conv2d(x, wt, Some(b))
    };
    let act = |g: &mut Graph<T>, x: Var, i: usize| -> Result<Var> {
        let y = conv(g, x, i)?;
        Ok(g.leaky_relu(y, slope))
    };
    let x1 = act(g, feat, 0)?;
    let x2 = act(g, x1, 1)?;
    let x3 = act(g, x2, 2)?;
    let x4 = act(g, x3, 3)?;
    let p3 = act(g, x3, 4)?;
    let fuse = g.add(x4, x2)?;
    let fuse = g.add(fuse, p3)?;
    let x5 = act(g, fuse, 5)?;
    let skip = g.add(x5, x1)?;
    let r = conv(g, skip, 6)?;
    let base = conv(g, feat, 7)?;
    let scaled = g.mul(r, head.eta)?;
    let out = g.add(base, scaled)?;
    g.reshape(out, vec![h, w])
}
