//! Finite-difference verification of reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step, in `[1e-7, 1e-4]`.
    pub eps: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator.
    pub abs_floor: f64,
    /// Tensors up to this size are checked coordinate by coordinate.
    pub full_threshold: usize,
    /// Random unit directions probed for larger tensors.
    pub random_directions: usize,
    /// Largest-gradient coordinates probed for larger tensors.
    pub top_coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tol: 1e-4,
            abs_floor: 1e-8,
            full_threshold: 64,
            random_directions: 1,
            top_coordinates: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    /// Reverse-mode and finite-difference values at the worst probe.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }
}

enum Probe {
    Coord(usize),
    Dir(Vec<f64>),
}

/// Compares the reverse-mode gradient of the scalar `f` against central
/// differences `(f(x + eps v) - f(x - eps v)) / (2 eps)` along coordinate
/// and random directions for each parameter tensor.
pub fn grad_check<F>(f: F, params: &[(String, Tensor<f64>)], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&cfg.eps) {
        return Err(Error::Config(format!(
            "grad_check eps {} outside [1e-7, 1e-4]",
            cfg.eps
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.item(out).is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    g.backward(out)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, (name, t))| {
            let grad = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            if grad.iter().all(|x| x.is_finite()) {
                Ok(grad)
            } else {
                Err(Error::NonFinite(format!("gradient of {name}")))
            }
        })
        .collect::<Result<_>>()?;
    drop(g);

    let eval = |which: usize, probe: &Probe, step: f64| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                let mut t = t.clone();
                if i == which {
                    let d = t.data_mut();
                    match probe {
                        Probe::Coord(c) => d[*c] += step,
                        Probe::Dir(v) => d.iter_mut().zip(v).for_each(|(x, v)| *x += step * v),
                    }
                }
                g.constant(t)
            })
            .collect();
        let out = f(&mut g, &vars)?;
        let v = g.item(out);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(params[which].0.clone()))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        tol: cfg.tol,
    };
    for (which, ((name, t), grad)) in params.iter().zip(&grads).enumerate() {
        let n = t.numel();
        let mut probes = Vec::new();
        if n <= cfg.full_threshold {
            probes.extend((0..n).map(Probe::Coord));
        } else {
            for _ in 0..cfg.random_directions {
                let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                probes.push(Probe::Dir(unit(v)));
            }
            if grad.iter().any(|&x| x != 0.0) {
                probes.push(Probe::Dir(unit(grad.clone())));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
            probes.extend(order.into_iter().take(cfg.top_coordinates).map(Probe::Coord));
        }

        let mut check = ParamCheck {
            name: name.clone(),
            probes: probes.len(),
            max_rel_err: 0.0,
            worst: (0.0, 0.0),
        };
        for probe in &probes {
            let analytic = match probe {
                Probe::Coord(c) => grad[*c],
                Probe::Dir(v) => grad.iter().zip(v).map(|(a, b)| a * b).sum(),
            };
            let plus = eval(which, probe, cfg.eps)?;
            let minus = eval(which, probe, -cfg.eps)?;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let denom = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel = (analytic - numeric).abs() / denom;
            if rel >= check.max_rel_err {
                check.max_rel_err = rel;
                check.worst = (analytic, numeric);
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
