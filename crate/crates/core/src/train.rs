//! Adam with per-group learning rates and the end-to-end training loop.
//!
//! Each step builds one graph for the mask-dependent terms and one graph per
//! batch item for measurement and reconstruction. Items only see the kernel
//! as a leaf; its gradient is averaged over the batch and pushed back
//! through the synthesis graph together with the kernel-level losses.

use std::fs;
use std::path::Path;

use crate::autodiff::{CTensor, Graph};
use crate::ckpt;
use crate::config::{RunConfig, TrainConfig};
use crate::data::{self, DataSource, ImageSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward;
use crate::imaging;
use crate::losses::LossReport;
use crate::mask::{self, SelectionMask};
use crate::model::{Group, Model, ModelShape, ModelVars};
use crate::pipeline::{self, Physics};
use crate::real::Real;

pub const CURVE_CSV: &str = "curve.csv";
pub const MASK_CSV: &str = "mask.csv";
pub const MASK_PNG: &str = "mask.png";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr_mask: f64,
    pub lr_ista: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn from_train(t: &TrainConfig) -> Self {
        AdamConfig {
            lr_mask: t.lr_mask,
            lr_ista: t.lr_ista,
            lr_head: t.lr_head,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.adam_eps,
        }
    }

    pub fn lr(&self, group: Group) -> f64 {
        match group {
            Group::Mask => self.lr_mask,
            Group::Ista => self.lr_ista,
            Group::Head => self.lr_head,
        }
    }
}

/// Moment estimates of every parameter and the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros: Vec<Vec<T>> = model.params.iter().map(|p| vec![T::of(0.0); p.value.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to `model.params[i]`;
/// `None` leaves a parameter and its moments untouched. Nothing is modified
/// if any gradient is non-finite.
pub fn adam_step<T: Real>(
    model: &mut Model<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != model.params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![grads.len()],
            rhs: vec![model.params.len()],
        });
    }
    for (p, g) in model.params.iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.value.numel() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![g.len()],
                    rhs: p.value.shape().to_vec(),
                });
            }
            if g.iter().any(|v| !v.f64().is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
    }
    let t = state.step as i32 + 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut updates = Vec::with_capacity(grads.len());
    for (p, g) in model.params.iter().zip(grads) {
        let Some(g) = g else {
            updates.push(None);
            continue;
        };
        let i = updates.len();
        let lr = cfg.lr(p.group);
        let (m, v) = (&state.m[i], &state.v[i]);
        let mut out = Vec::with_capacity(g.len());
        for (j, x) in p.value.data().iter().enumerate() {
            let gj = g[j].f64();
            let mj = b1 * m[j].f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].f64() + (1.0 - b2) * gj * gj;
            let upd = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            let next = T::of(x.f64() - upd);
            if !next.f64().is_finite() {
                return Err(Error::NonFinite(format!("updated value of {}", p.name)));
            }
            out.push((T::of(mj), T::of(vj), next));
        }
        updates.push(Some(out));
    }
    state.step += 1;
    for (i, (p, u)) in model.params.iter_mut().zip(updates).enumerate() {
        let Some(u) = u else { continue };
        for (j, (x, (mj, vj, next))) in p.value.data_mut().iter_mut().zip(u).enumerate() {
            state.m[i][j] = mj;
            state.v[i][j] = vj;
            *x = next;
        }
    }
    Ok(())
}

/// Which parameter groups a run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Joint,
    /// Mask and ISTA frozen, only the CNN head trains.
    FinetuneHead,
}

impl Mode {
    pub fn trains(self, group: Group) -> bool {
        match self {
            Mode::Joint => true,
            Mode::FinetuneHead => group == Group::Head,
        }
    }
}

/// Loss report, hard selection and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult<T> {
    pub report: LossReport,
    pub selected: Vec<usize>,
    pub grads: Vec<Option<Vec<T>>>,
}

struct ItemOut<T> {
    conv: f64,
    rec: f64,
    kappa_grad: Option<(Vec<T>, Vec<T>)>,
    grads: Vec<Option<Vec<T>>>,
}

fn item_gradients<T: Real>(
    phys: &Physics<T>,
    model: &Model<T>,
    kappa: &CTensor<T>,
    mode: Mode,
    scat: &[T],
) -> Result<ItemOut<T>> {
    let mut g = Graph::new();
    let learn_mask = mode.trains(Group::Mask);
    let k = if learn_mask {
        g.cparam(kappa.clone())
    } else {
        g.cconstant(kappa.clone())
    };
    let leaves = model.leaves(&mut g, |grp| grp != Group::Mask && mode.trains(grp));
    let vars = ModelVars::new(leaves.clone(), model.shape.width);
    let t = pipeline::item_terms(&mut g, phys, k, &vars, scat)?;
    g.backward(t.weighted)?;
    let kappa_grad = learn_mask.then(|| {
        let grad = |v| {
            g.grad(v)
                .map_or_else(|| vec![T::of(0.0); kappa.re.numel()], <[T]>::to_vec)
        };
        (grad(k.re), grad(k.im))
    });
    Ok(ItemOut {
        conv: g.item(t.conv).f64(),
        rec: g.item(t.rec).f64(),
        kappa_grad,
        grads: leaves.iter().map(|&v| g.grad(v).map(<[T]>::to_vec)).collect(),
    })
}

fn add_into<T: Real>(acc: &mut Option<Vec<T>>, g: Option<&Vec<T>>) {
    match (acc.as_mut(), g) {
        (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
        (None, Some(g)) => *acc = Some(g.clone()),
        _ => {}
    }
}

fn scaled<T: Real>(v: &[T], s: f64) -> Vec<T> {
    v.iter().map(|&x| T::of(x.f64() * s)).collect()
}

/// Forward and backward pass over one batch of scatterer maps. Item results
/// are reduced in index order whatever the execution mode.
pub fn batch_gradients<T: Real>(
    phys: &Physics<T>,
    model: &Model<T>,
    tau: f64,
    mode: Mode,
    items: &[&[T]],
    exec: Execution,
) -> Result<BatchResult<T>> {
    if items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut g = Graph::new();
    let leaves = model.leaves(&mut g, |grp| grp == Group::Mask && mode.trains(grp));
    let vars = ModelVars::new(leaves.clone(), model.shape.width);
    let m = mask::mask_forward(&mut g, vars.logits(), T::of(tau), false)?;
    let p = pipeline::psf_terms(&mut g, phys, &m)?;
    let kappa = g.cvalue(p.kappa);

    let outs = exec.try_map(items.len(), |j| item_gradients(phys, model, &kappa, mode, items[j]))?;
    let inv_b = 1.0 / items.len() as f64;
    let (mut conv, mut rec) = (0.0, 0.0);
    let mut kre: Option<Vec<T>> = None;
    let mut kim: Option<Vec<T>> = None;
    let mut sums: Vec<Option<Vec<T>>> = vec![None; leaves.len()];
    for o in &outs {
        conv += o.conv;
        rec += o.rec;
        if let Some((re, im)) = &o.kappa_grad {
            add_into(&mut kre, Some(re));
            add_into(&mut kim, Some(im));
        }
        for (acc, gi) in sums.iter_mut().zip(&o.grads) {
            add_into(acc, gi.as_ref());
        }
    }
    let mut grads: Vec<Option<Vec<T>>> = sums.iter().map(|s| s.as_ref().map(|v| scaled(v, inv_b))).collect();

    if let (Some(re), Some(im)) = (kre, kim) {
        g.backward_seeded(&[
            (p.weighted, vec![T::of(1.0)]),
            (p.kappa.re, scaled(&re, inv_b)),
            (p.kappa.im, scaled(&im, inv_b)),
        ])?;
        grads[0] = g.grad(vars.logits()).map(<[T]>::to_vec);
    }

    let report = LossReport::from_terms(
        &phys.weights,
        g.item(p.psf).f64(),
        conv * inv_b,
        rec * inv_b,
        g.item(p.contrast).f64(),
        g.item(p.slr.q).f64(),
        g.item(p.slr.i).f64(),
        g.item(p.ent).f64(),
        g.item(p.row).f64(),
    );
    Ok(BatchResult {
        report,
        selected: m.selected,
        grads,
    })
}

/// Rescales all gradients together so their global norm is at most `max`.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Vec<T>>], max: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut().flatten() {
            *g = scaled(g, s);
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub tau: f64,
    pub report: LossReport,
    pub active_elements: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters after the last completed step.
    pub model: Model<f32>,
    pub curve: Vec<StepRecord>,
    /// Hard selection of the final logits, sorted.
    pub selection: Vec<usize>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub halted: Option<Error>,
}

/// Scatterer maps of every image at the kernel window size.
pub fn prepare_scatterers(images: &ImageSet, n: usize) -> Result<Vec<Vec<f32>>> {
    images
        .images
        .iter()
        .map(|img| {
            let s = forward::genscat_u8(img, images.rows, images.cols, n)?;
            Ok(s.into_iter().map(|v| v as f32).collect())
        })
        .collect()
}

/// Loads the configured image set, honouring `data.limit`.
pub fn load_images(cfg: &RunConfig) -> Result<ImageSet> {
    let mut set = DataSource::resolve(cfg.data.path.as_deref()).load()?;
    if let Some(limit) = cfg.data.limit {
        set.truncate(limit);
    }
    if set.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    Ok(set)
}

/// Seeded initial parameters for a run.
pub fn initial_model(cfg: &RunConfig, phys: &Physics<f32>) -> Result<Model<f32>> {
    let init = pipeline::init_values(cfg, phys.lipschitz);
    Model::init(ModelShape::from_config(cfg), init, cfg.seed)
}

/// Runs `epochs` epochs of seeded, shuffled mini-batch Adam from `model`.
pub fn train_loop(
    cfg: &RunConfig,
    phys: &Physics<f32>,
    scats: &[Vec<f32>],
    mut model: Model<f32>,
    mode: Mode,
    epochs: usize,
) -> Result<TrainOutcome> {
    let adam = AdamConfig::from_train(&cfg.train);
    let mut state = AdamState::new(&model);
    let schedule = cfg.mask.temperature;
    let k = cfg.mask.k;
    let mut curve = Vec::new();
    let mut step = 0u64;
    let mut halted = None;

    'outer: for epoch in 0..epochs {
        let order = data::epoch_order(scats.len(), cfg.seed, epoch);
        for batch in data::batches(&order, cfg.train.batch_size) {
            let tau = schedule.tau(step);
            let items: Vec<&[f32]> = batch.iter().map(|&i| scats[i].as_slice()).collect();
            let mut res = match batch_gradients(phys, &model, tau, mode, &items, cfg.execution) {
                Ok(r) => r,
                Err(Error::Divergence { .. }) => {
                    halted = Some(Error::TrainingDiverged { step });
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            let found = mask::active_elements(&res.selected).len();
            if found != k {
                return Err(Error::SelectionCount { step, found, k });
            }
            if !res.report.total.is_finite() {
                halted = Some(Error::TrainingDiverged { step });
                break 'outer;
            }
            if let Some(c) = cfg.train.clip_norm {
                clip_global_norm(&mut res.grads, c);
            }
            if let Err(e) = adam_step(&mut model, &res.grads, &mut state, &adam) {
                halted = Some(e);
                break 'outer;
            }
            curve.push(StepRecord {
                step,
                epoch,
                tau,
                report: res.report,
                active_elements: found,
            });
            step += 1;
        }
    }

    let mask = SelectionMask {
        logits: model.logits().clone(),
    };
    let selection = mask::active_elements(&mask.selection(schedule.tau(step) as f32)?);
    Ok(TrainOutcome {
        model,
        curve,
        selection,
        halted,
    })
}

/// Full training run from a config: data, physics, initialization, loop.
/// `init` replaces the seeded initialization (used for head fine-tuning).
pub fn run_training(cfg: &RunConfig, mode: Mode, init: Option<Model<f32>>) -> Result<TrainOutcome> {
    let phys = Physics::<f32>::from_config(cfg)?;
    let scats = prepare_scatterers(&load_images(cfg)?, phys.n())?;
    let model = match init {
        Some(m) => m,
        None => initial_model(cfg, &phys)?,
    };
    let epochs = match mode {
        Mode::Joint => cfg.train.epochs,
        Mode::FinetuneHead => cfg.train.finetune_epochs,
    };
    train_loop(cfg, &phys, &scats, model, mode, epochs)
}

pub fn write_curve(path: &Path, curve: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "epoch",
        "tau",
        "L_PSF",
        "L_contrast",
        "L_SLR_q",
        "L_SLR_i",
        "L_SLR",
        "L_ent",
        "L_row",
        "L_conv",
        "L_rec",
        "total",
        "active_elements",
    ])?;
    for s in curve {
        let r = &s.report;
        let mut row = vec![s.step.to_string(), s.epoch.to_string(), s.tau.to_string()];
        row.extend(
            [
                r.psf, r.contrast, r.slr_q, r.slr_i, r.slr, r.ent, r.row, r.conv, r.rec, r.total,
            ]
            .map(|v| v.to_string()),
        );
        row.push(s.active_elements.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `element,x_mm,active` for every element.
pub fn write_mask_csv(path: &Path, cfg: &RunConfig, selection: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["element", "x_mm", "active"])?;
    for (e, x) in cfg.probe.element_x().iter().enumerate() {
        let on = selection.contains(&e) as u8;
        w.write_record([e.to_string(), (x * 1e3).to_string(), on.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the active element indices back from a mask CSV.
pub fn read_mask_csv(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut active = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: malformed mask row {rec:?}", path.display())))
        };
        if parse(2)? != 0 {
            active.push(parse(0)?);
        }
    }
    Ok(active)
}

/// Writes the curve, checkpoint and mask artifacts of a run into `dir`.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_curve(&dir.join(CURVE_CSV), &outcome.curve)?;
    ckpt::save_model(&dir.join(CHECKPOINT_DIR), cfg, &outcome.model)?;
    write_mask_csv(&dir.join(MASK_CSV), cfg, &outcome.selection)?;
    imaging::write_mask_png(&dir.join(MASK_PNG), cfg.probe.n_elements, &outcome.selection)?;
    Ok(())
}
