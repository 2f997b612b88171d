//! Named, grouped parameters of the whole pipeline.
//!
//! Storage order is fixed: mask logits, ISTA step sizes, ISTA thresholds,
//! then the CNN head tensors. Checkpoints and the optimizer rely on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mask::SelectionMask;
use crate::real::Real;
use crate::recon::{head_layout, init_head, inv_softplus, HeadVars};

pub const LOGITS: &str = "mask.logits";
pub const ISTA_ALPHA: &str = "ista.alpha_raw";
pub const ISTA_LAMBDA: &str = "ista.lambda_raw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Mask,
    Ista,
    Head,
}

/// Sizes that determine every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n_elements: usize,
    pub k: usize,
    pub n_ista: usize,
    pub width: usize,
}

impl ModelShape {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ModelShape {
            n_elements: cfg.probe.n_elements,
            k: cfg.mask.k,
            n_ista: cfg.recon.n_ista,
            width: cfg.recon.width,
        }
    }

    /// `(name, group, shape)` of every parameter in storage order.
    pub fn layout(&self) -> Vec<(String, Group, Vec<usize>)> {
        let mut out = vec![
            (LOGITS.to_string(), Group::Mask, vec![self.n_elements, self.k]),
            (ISTA_ALPHA.to_string(), Group::Ista, vec![self.n_ista]),
            (ISTA_LAMBDA.to_string(), Group::Ista, vec![self.n_ista]),
        ];
        out.extend(head_layout(self.width).into_iter().map(|(n, s)| (n, Group::Head, s)));
        out
    }
}

/// Initial values that are not drawn at random.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitValues {
    pub mask_std: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub shape: ModelShape,
    pub params: Vec<Param<T>>,
}

impl<T: Real> Model<T> {
    /// Seeded initialization: logits from `seed`, head weights from an
    /// independent stream of the same seed.
    pub fn init(shape: ModelShape, init: InitValues, seed: u64) -> Result<Self> {
        let mask = SelectionMask::<T>::init(shape.n_elements, shape.k, init.mask_std, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let head = init_head::<T, _>(shape.width, init.eta, &mut rng)?;
        let mut values = vec![
            (LOGITS.to_string(), mask.logits),
            (
                ISTA_ALPHA.to_string(),
                Tensor::full(vec![shape.n_ista], T::of(inv_softplus(init.alpha))),
            ),
            (
                ISTA_LAMBDA.to_string(),
                Tensor::full(vec![shape.n_ista], T::of(inv_softplus(init.lambda))),
            ),
        ];
        values.extend(head);
        Model::from_named(shape, values)
    }

    /// Assembles a model from `(name, tensor)` pairs in storage order.
    pub fn from_named(shape: ModelShape, values: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let layout = shape.layout();
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                values.len()
            )));
        }
        let params = layout
            .into_iter()
            .zip(values)
            .map(|((name, group, s), (got, value))| {
                if name != got || value.shape() != s.as_slice() {
                    return Err(Error::Config(format!(
                        "parameter `{got}` {:?} does not match expected `{name}` {s:?}",
                        value.shape()
                    )));
                }
                Ok(Param { name, group, value })
            })
            .collect::<Result<_>>()?;
        Ok(Model { shape, params })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.params[0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            shape: self.shape,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub fn named(&self) -> Vec<(String, Tensor<T>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Adds every parameter to `g`, as a trainable leaf when `trainable`
    /// accepts its group and as a constant otherwise.
    pub fn leaves(&self, g: &mut Graph<T>, trainable: impl Fn(Group) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable(p.group) {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }
}

/// Views into a parameter node list in storage order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub all: Vec<Var>,
    pub width: usize,
}

impl ModelVars {
    pub fn new(all: Vec<Var>, width: usize) -> Self {
        ModelVars { all, width }
    }

    pub fn logits(&self) -> Var {
        self.all[0]
    }

    pub fn alpha_raw(&self) -> Var {
        self.all[1]
    }

    pub fn lambda_raw(&self) -> Var {
        self.all[2]
    }

    pub fn head<T: Real>(&self, g: &Graph<T>) -> Result<HeadVars> {
        HeadVars::from_slice(g, self.width, &self.all[3..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            n_elements: 8,
            k: 4,
            n_ista: 3,
            width: 4,
        }
    }

    fn init() -> InitValues {
        InitValues {
            mask_std: 0.01,
            alpha: 0.05,
            lambda: 1e-3,
            eta: 0.1,
        }
    }

    #[test]
    fn layout_order_and_groups() {
        let m = Model::<f64>::init(shape(), init(), 3).unwrap();
        assert_eq!(m.params[0].name, LOGITS);
        assert_eq!(m.params[1].group, Group::Ista);
        assert_eq!(m.params.last().unwrap().name, "head.eta");
        assert_eq!(m.params.len(), 3 + 17);
        let alpha = m.get(ISTA_ALPHA).unwrap().data()[0];
        assert!((alpha.exp().ln_1p() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Model::<f32>::init(shape(), init(), 11).unwrap();
        let b = Model::<f32>::init(shape(), init(), 11).unwrap();
        let c = Model::<f32>::init(shape(), init(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mismatched_tensors_are_rejected() {
        let m = Model::<f64>::init(shape(), init(), 0).unwrap();
        let mut named = m.named();
        named.swap(1, 2);
        assert!(Model::from_named(shape(), named).is_err());
    }
}
