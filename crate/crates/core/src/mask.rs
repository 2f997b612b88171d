//! Learnable `k`-of-`N_e` element selection.
//!
//! Column `j` of the selection matrix is a temperature softmax over the rows
//! not already taken by columns `0..j` (hard argmax, lowest index on ties).
//! The straight-through combination carries the hard one-hot matrix forward
//! and the softmax gradient backward.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{argmax, masked_softmax_column};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

const ENTROPY_EPS: f64 = 1e-12;

/// Logits `[N_e, k]` of the selection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask<T> {
    pub logits: Tensor<T>,
}

impl<T: Real> SelectionMask<T> {
    /// I.i.d. normal logits with mean zero.
    pub fn init(n_elements: usize, k: usize, std: f64, seed: u64) -> Result<Self> {
        check_dims(n_elements, k)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("mask init std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n_elements * k).map(|_| normal.sample(&mut rng)).collect();
        Ok(SelectionMask {
            logits: Tensor::from_f64(vec![n_elements, k], &data)?,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.logits.shape()[1]
    }

    /// Hard selection at temperature `tau`: element index per column.
    pub fn selection(&self, tau: T) -> Result<Vec<usize>> {
        Ok(exclusion_plan(&self.logits, tau)?.1)
    }
}

fn check_dims(n_elements: usize, k: usize) -> Result<()> {
    if k == 0 || k > n_elements {
        return Err(Error::Config(format!(
            "selection needs 1 <= k <= N_e (got N_e={n_elements}, k={k})"
        )));
    }
    Ok(())
}

/// Runs the sequential selection: returns the `allowed` pattern used by each
/// column's softmax and the row picked by each column.
pub fn exclusion_plan<T: Real>(logits: &Tensor<T>, tau: T) -> Result<(Arc<[bool]>, Vec<usize>)> {
    let (rows, cols) = match logits.shape() {
        &[r, c] => (r, c),
        s => {
            return Err(Error::InvalidShape {
                op: "exclusion_plan",
                shape: s.to_vec(),
                reason: "logits must be [N_e, k]".into(),
            })
        }
    };
    if tau <= T::zero() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut allowed = vec![true; rows * cols];
    let mut taken = vec![false; rows];
    let mut p = vec![T::zero(); rows * cols];
    let mut selected = Vec::with_capacity(cols);
    for c in 0..cols {
        for r in 0..rows {
            allowed[r * cols + c] = !taken[r];
        }
        if !masked_softmax_column(logits.data(), &allowed, rows, cols, c, tau, &mut p) {
            return Err(Error::Config(format!("column {c} has no selectable element (k > N_e)")));
        }
        let column: Vec<T> = (0..rows).map(|r| p[r * cols + c]).collect();
        let r = argmax(&column).expect("non-empty column");
        taken[r] = true;
        selected.push(r);
    }
    Ok((allowed.into(), selected))
}

/// Column softmaxes of `logits / tau` with sequential exclusion of rows
/// chosen by earlier columns. Returns `P_soft` and the chosen rows.
pub fn soft_columns<T: Real>(g: &mut Graph<T>, logits: Var, tau: T) -> Result<(Var, Vec<usize>)> {
    let (allowed, selected) = exclusion_plan(g.value(logits), tau)?;
    let p = g.softmax_cols(logits, tau, allowed)?;
    Ok((p, selected))
}

/// Column-wise argmax one-hot (lowest row index on ties).
pub fn harden<T: Real>(p_soft: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (p_soft.shape()[0], p_soft.shape()[1]);
    let mut out = vec![T::zero(); rows * cols];
    for c in 0..cols {
        let column: Vec<T> = (0..rows).map(|r| p_soft.data()[r * cols + c]).collect();
        if let Some(r) = argmax(&column) {
            out[r * cols + c] = T::one();
        }
    }
    Tensor::new(vec![rows, cols], out).expect("same shape")
}

/// Forward value `P_hard`, gradient path through `P_soft`.
pub fn ste_combine<T: Real>(g: &mut Graph<T>, p_hard: Tensor<T>, p_soft: Var) -> Result<Var> {
    g.straight_through(p_hard, p_soft)
}

/// Selection mass per element: `w = P 1_k`.
pub fn element_weights<T: Real>(g: &mut Graph<T>, p: Var) -> Result<Var> {
    g.sum_rows(p)
}

/// Mean column entropy `(1/k) sum -p log(p + 1e-12)`.
pub fn mask_entropy<T: Real>(g: &mut Graph<T>, p_soft: Var) -> Result<Var> {
    let k = g.shape(p_soft)[1];
    let shifted = g.shift(p_soft, T::of(ENTROPY_EPS));
    let logp = g.ln(shifted);
    let plogp = g.mul(p_soft, logp)?;
    let s = g.sum(plogp);
    Ok(g.scale(s, T::of(-1.0 / k as f64)))
}

/// Squared hinge on element usage: `sum_e max(0, s_e - 1)^2`.
pub fn row_diversity<T: Real>(g: &mut Graph<T>, p_soft: Var) -> Result<Var> {
    let s = g.sum_rows(p_soft)?;
    let excess = g.shift(s, -T::one());
    let hinge = g.relu(excess);
    let sq = g.square(hinge);
    Ok(g.sum(sq))
}

/// Everything the pipeline needs from one evaluation of the mask.
#[derive(Debug, Clone)]
pub struct MaskForward<T> {
    pub p_soft: Var,
    pub p_hard: Tensor<T>,
    pub p_ste: Var,
    /// Element weights from `P_ste` (or `P_soft` on the soft path).
    pub weights: Var,
    /// Element chosen by each column, in column order.
    pub selected: Vec<usize>,
}

/// Builds `P_soft`, `P_hard`, `P_ste` and the element weights. With `soft`
/// set, the weights are taken from `P_soft` instead of the straight-through
/// matrix, which makes the whole path smooth in the logits.
pub fn mask_forward<T: Real>(g: &mut Graph<T>, logits: Var, tau: T, soft: bool) -> Result<MaskForward<T>> {
    let (p_soft, selected) = soft_columns(g, logits, tau)?;
    let p_hard = harden(g.value(p_soft));
    let p_ste = ste_combine(g, p_hard.clone(), p_soft)?;
    let weights = element_weights(g, if soft { p_soft } else { p_ste })?;
    Ok(MaskForward {
        p_soft,
        p_hard,
        p_ste,
        weights,
        selected,
    })
}

/// Sorted distinct element indices of a hard selection.
pub fn active_elements(selected: &[usize]) -> Vec<usize> {
    let mut v = selected.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Cosine temperature decay from `tau0` to `tau_end` over `t_warm` steps,
/// constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub tau0: f64,
    pub tau_end: f64,
    pub t_warm: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            tau0: 6.0,
            tau_end: 1.2,
            t_warm: 1500,
        }
    }
}

impl TemperatureSchedule {
    pub fn tau(&self, step: u64) -> f64 {
        if step == 0 {
            return self.tau0;
        }
        if step >= self.t_warm {
            return self.tau_end;
        }
        let phase = std::f64::consts::PI * step as f64 / self.t_warm as f64;
        0.5 * (self.tau0 + self.tau_end) + 0.5 * (self.tau0 - self.tau_end) * phase.cos()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau_end > 0.0 && self.tau0.is_finite() && self.tau_end.is_finite()) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }
}
