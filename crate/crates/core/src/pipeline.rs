//! End-to-end wiring: mask -> PSF -> measurement -> ISTA -> CNN -> losses.

use crate::autodiff::{grad_check, CTensor, CVar, GradCheckConfig, GradCheckReport, Graph, Tensor, Var};
use crate::config::RunConfig;
use crate::error::Result;
use crate::forward;
use crate::losses::{self, LossWeights, Metrics, SlrTerms};
use crate::mask::{self, MaskForward};
use crate::model::{InitValues, Model, ModelShape, ModelVars};
use crate::psf::{PsfModel, Regions};
use crate::real::Real;
use crate::recon;

/// Everything fixed for a run: the synthesis operator, loss regions and the
/// full-aperture reference kernel.
#[derive(Debug, Clone)]
pub struct Physics<T> {
    pub psf: PsfModel<T>,
    pub regions: Regions,
    pub kappa_ref: CTensor<T>,
    pub ref_spectrum: CTensor<T>,
    pub weights: LossWeights,
    pub slr_quantile: f64,
    /// `max |fft2(kappa_ref)|^2`.
    pub lipschitz: f64,
}

impl<T: Real> Physics<T> {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let psf = PsfModel::new(&cfg.probe, &cfg.grid, &cfg.angles, &cfg.pulse_model())?;
        let regions = psf.regions(cfg.loss.r_main_wl, cfg.loss.r_guard_wl)?;
        let kappa_ref = psf.reference()?;
        let ref_spectrum = forward::kernel_spectrum_values(&kappa_ref)?;
        let lipschitz = forward::lipschitz(&kappa_ref)?;
        Ok(Physics {
            psf,
            regions,
            kappa_ref,
            ref_spectrum,
            weights: cfg.loss.weights,
            slr_quantile: cfg.loss.slr_quantile,
            lipschitz,
        })
    }

    /// Side of the working grid (the kernel window).
    pub fn n(&self) -> usize {
        self.psf.crop()
    }

    /// Kernel metrics of a fixed kernel.
    pub fn metrics(&self, kappa: &CTensor<T>) -> Result<Metrics> {
        let mut g = Graph::new();
        let k = g.cconstant(kappa.clone());
        let (psf, contrast, slr) = kernel_terms(&mut g, self, k)?;
        Ok(Metrics {
            psf: g.item(psf).f64(),
            contrast: g.item(contrast).f64(),
            slr_q: g.item(slr.q).f64(),
            slr_i: g.item(slr.i).f64(),
        })
    }

    /// Kernel metrics of a binary selection.
    pub fn metrics_for(&self, active: &[usize]) -> Result<Metrics> {
        self.metrics(&self.psf.synth_indices(active)?)
    }
}

/// Initial values of the non-random parameters for a run.
pub fn init_values(cfg: &RunConfig, lipschitz: f64) -> InitValues {
    InitValues {
        mask_std: cfg.mask.init_std,
        alpha: cfg.recon.alpha_init.unwrap_or(1.0 / lipschitz),
        lambda: cfg.recon.lambda_init,
        eta: cfg.recon.eta_init,
    }
}

/// `(L_PSF, L_contrast, SLR terms)` of a kernel against the reference.
pub fn kernel_terms<T: Real>(g: &mut Graph<T>, phys: &Physics<T>, kappa: CVar) -> Result<(Var, Var, SlrTerms)> {
    let kref = g.cconstant(phys.kappa_ref.clone());
    let psf = losses::si_mse(g, kappa, kref)?;
    let contrast = losses::contrast_loss(g, kappa, &phys.regions)?;
    let slr = losses::slr_losses(g, kappa, &phys.regions, phys.slr_quantile)?;
    Ok((psf, contrast, slr))
}

/// Batch-constant terms: everything that depends on the mask only.
#[derive(Debug, Clone)]
pub struct PsfTerms {
    pub kappa: CVar,
    pub psf: Var,
    pub contrast: Var,
    pub slr: SlrTerms,
    pub ent: Var,
    pub row: Var,
    /// `w_psf L_PSF + w_contrast L_contrast + w_slr L_SLR + w_ent L_ent + w_row L_row`.
    pub weighted: Var,
}

pub fn psf_terms<T: Real>(g: &mut Graph<T>, phys: &Physics<T>, m: &MaskForward<T>) -> Result<PsfTerms> {
    let kappa = phys.psf.synth(g, m.weights)?;
    let (psf, contrast, slr) = kernel_terms(g, phys, kappa)?;
    let ent = mask::mask_entropy(g, m.p_soft)?;
    let row = mask::row_diversity(g, m.p_soft)?;
    let w = &phys.weights;
    let mut weighted = g.scale(psf, T::of(w.psf));
    for (v, wt) in [(contrast, w.contrast), (slr.mean, w.slr), (ent, w.ent), (row, w.row)] {
        let s = g.scale(v, T::of(wt));
        weighted = g.add(weighted, s)?;
    }
    Ok(PsfTerms {
        kappa,
        psf,
        contrast,
        slr,
        ent,
        row,
        weighted,
    })
}

/// Per-image terms.
#[derive(Debug, Clone)]
pub struct ItemTerms {
    pub conv: Var,
    pub rec: Var,
    /// `w_conv L_conv + w_rec L_rec`.
    pub weighted: Var,
    pub yc: CVar,
    pub xhat: CVar,
    pub ihat: Var,
}

/// Measurement, reconstruction and image-level losses of one scatterer map
/// `scat` (`n x n`, row-major), which is also the reconstruction target.
pub fn item_terms<T: Real>(
    g: &mut Graph<T>,
    phys: &Physics<T>,
    kappa: CVar,
    vars: &ModelVars,
    scat: &[T],
) -> Result<ItemTerms> {
    let n = phys.n();
    let target = g.constant(Tensor::new(vec![n, n], scat.to_vec())?);
    let is = g.complex_from_real(target);
    let k = forward::kernel_spectrum(g, kappa)?;
    let yc = forward::apply(g, k, is)?;
    let kref = g.cconstant(phys.ref_spectrum.clone());
    let yref = forward::apply(g, kref, is)?;
    let conv = losses::conv_loss(g, yc, yref)?;

    let xhat = recon::ista_unroll(g, yc, k, vars.alpha_raw(), vars.lambda_raw())?;
    let feat = recon::features(g, xhat)?;
    let head = vars.head(g)?;
    let ihat = recon::cnn_head(g, feat, &head)?;
    let rec = losses::rec_loss(g, ihat, target)?;

    let w = &phys.weights;
    let a = g.scale(conv, T::of(w.conv));
    let b = g.scale(rec, T::of(w.rec));
    let weighted = g.add(a, b)?;
    Ok(ItemTerms {
        conv,
        rec,
        weighted,
        yc,
        xhat,
        ihat,
    })
}

/// Total objective on a single image, with the mask on the soft or the
/// straight-through path. Used by the gradient check.
pub fn single_image_objective<T: Real>(
    g: &mut Graph<T>,
    phys: &Physics<T>,
    vars: &ModelVars,
    tau: T,
    soft_mask: bool,
    scat: &[T],
) -> Result<Var> {
    let m = mask::mask_forward(g, vars.logits(), tau, soft_mask)?;
    let p = psf_terms(g, phys, &m)?;
    let item = item_terms(g, phys, p.kappa, vars, scat)?;
    g.add(p.weighted, item.weighted)
}

/// Checks reverse-mode gradients of the single-image objective against
/// central differences for every parameter tensor of a freshly initialized
/// 64-bit model. The mask runs on its soft path at the initial temperature.
pub fn gradient_check(cfg: &RunConfig, scat: &[f64], check: &GradCheckConfig) -> Result<GradCheckReport> {
    let phys = Physics::<f64>::from_config(cfg)?;
    let model = Model::<f64>::init(ModelShape::from_config(cfg), init_values(cfg, phys.lipschitz), cfg.seed)?;
    let tau = cfg.mask.temperature.tau0;
    let width = cfg.recon.width;
    grad_check(
        |g, params| {
            let vars = ModelVars::new(params.to_vec(), width);
            single_image_objective(g, &phys, &vars, tau, true, scat)
        },
        &model.named(),
        check,
    )
}
