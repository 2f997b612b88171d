//! Loss terms, their weighted total and the composite comparison metric.

use serde::{Deserialize, Serialize};

use crate::autodiff::{CVar, Graph, Var};
use crate::error::{Error, Result};
use crate::psf::Regions;
use crate::real::Real;

/// Added to the main-lobe mean of the contrast ratio.
pub const CONTRAST_EPS: f64 = 1e-12;

/// Scale-invariant error `||a* Yh - Y||^2 / ||Y||^2` with the optimal complex
/// scale `a* = <Yh, Y> / <Yh, Yh>`. Returns 1 when `Yh` is identically zero.
pub fn si_mse<T: Real>(g: &mut Graph<T>, yhat: CVar, y: CVar) -> Result<Var> {
    let y_energy = g.cnorm2(y)?;
    if !(g.item(y_energy) > T::zero()) {
        return Err(Error::UndefinedReference);
    }
    let yh_energy = g.cnorm2(yhat)?;
    if !(g.item(yh_energy) > T::zero()) {
        return Ok(g.scalar(T::one()));
    }
    let ip = g.cinner(yhat, y)?;
    let alpha = g.cdiv_real(ip, yh_energy)?;
    let fit = g.cmul(alpha, yhat)?;
    let resid = g.csub(fit, y)?;
    let e = g.cnorm2(resid)?;
    g.div(e, y_energy)
}

/// `||Yc - Yref||^2` summed over the field.
pub fn conv_loss<T: Real>(g: &mut Graph<T>, yc: CVar, yref: CVar) -> Result<Var> {
    let d = g.csub(yc, yref)?;
    g.cnorm2(d)
}

/// Mean squared error between two real images.
pub fn rec_loss<T: Real>(g: &mut Graph<T>, ihat: Var, iref: Var) -> Result<Var> {
    let d = g.sub(ihat, iref)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

fn region_power<T: Real>(g: &mut Graph<T>, kappa: CVar, regions: &Regions) -> Result<(Var, Var)> {
    let p = g.cabs2(kappa)?;
    let main = g.gather(p, regions.main.clone())?;
    let side = g.gather(p, regions.side.clone())?;
    Ok((main, side))
}

/// Mean side-region power over mean main-lobe power.
pub fn contrast_loss<T: Real>(g: &mut Graph<T>, kappa: CVar, regions: &Regions) -> Result<Var> {
    let (main, side) = region_power(g, kappa, regions)?;
    let m_in = g.mean(main);
    let m_in = g.shift(m_in, T::of(CONTRAST_EPS));
    let m_out = g.mean(side);
    g.div(m_out, m_in)
}

/// Sidelobe ratios of a kernel.
#[derive(Debug, Clone, Copy)]
pub struct SlrTerms {
    /// `quantile_q(|kappa| on side) / max(|kappa| on main)`.
    pub q: Var,
    /// Side energy over main-lobe energy.
    pub i: Var,
    /// Mean of the two.
    pub mean: Var,
}

pub fn slr_losses<T: Real>(g: &mut Graph<T>, kappa: CVar, regions: &Regions, q: f64) -> Result<SlrTerms> {
    let mag = g.cmodulus(kappa)?;
    let main_mag = g.gather(mag, regions.main.clone())?;
    let side_mag = g.gather(mag, regions.side.clone())?;
    let a_main = g.max_all(main_mag)?;
    if !(g.item(a_main) > T::zero()) {
        return Err(Error::DegenerateKernel);
    }
    let a_side = g.quantile(side_mag, q)?;
    let slr_q = g.div(a_side, a_main)?;

    let (main, side) = region_power(g, kappa, regions)?;
    let e_main = g.sum(main);
    let e_side = g.sum(side);
    let slr_i = g.div(e_side, e_main)?;

    let s = g.add(slr_q, slr_i)?;
    let mean = g.scale(s, T::of(0.5));
    Ok(SlrTerms {
        q: slr_q,
        i: slr_i,
        mean,
    })
}

/// Weights of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub psf: f64,
    pub conv: f64,
    pub rec: f64,
    pub contrast: f64,
    pub slr: f64,
    pub ent: f64,
    pub row: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            psf: 10.0,
            conv: 1.0,
            rec: 10.0,
            contrast: 10.0,
            slr: 10.0,
            ent: 1.0,
            row: 10.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            psf: 0.0,
            conv: 0.0,
            rec: 0.0,
            contrast: 0.0,
            slr: 0.0,
            ent: 0.0,
            row: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.psf,
            self.conv,
            self.rec,
            self.contrast,
            self.slr,
            self.ent,
            self.row,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// The four kernel metrics compared across configurations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub psf: f64,
    pub contrast: f64,
    pub slr_q: f64,
    pub slr_i: f64,
}

impl Metrics {
    /// Composite metric: arithmetic mean of the four entries.
    pub fn mean(&self) -> f64 {
        (self.psf + self.contrast + self.slr_q + self.slr_i) / 4.0
    }
}

/// Unweighted value of every term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub psf: f64,
    pub conv: f64,
    pub rec: f64,
    pub contrast: f64,
    pub slr_q: f64,
    pub slr_i: f64,
    pub slr: f64,
    pub ent: f64,
    pub row: f64,
    pub total: f64,
}

impl LossReport {
    /// Fills in `slr` and `total` from the individual terms.
    #[allow(clippy::too_many_arguments)]
    pub fn from_terms(
        w: &LossWeights,
        psf: f64,
        conv: f64,
        rec: f64,
        contrast: f64,
        slr_q: f64,
        slr_i: f64,
        ent: f64,
        row: f64,
    ) -> Self {
        let slr = (slr_q + slr_i) / 2.0;
        let total =
            w.psf * psf + w.conv * conv + w.rec * rec + w.contrast * contrast + w.slr * slr + w.ent * ent + w.row * row;
        LossReport {
            psf,
            conv,
            rec,
            contrast,
            slr_q,
            slr_i,
            slr,
            ent,
            row,
            total,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            psf: self.psf,
            contrast: self.contrast,
            slr_q: self.slr_q,
            slr_i: self.slr_i,
        }
    }
}
