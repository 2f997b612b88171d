//! Run configuration: one JSON tree with profile defaults underneath.
//!
//! A config file only needs the keys it changes; everything else comes from
//! the selected profile. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::losses::LossWeights;
use crate::mask::TemperatureSchedule;
use crate::probe::{make_desk_profile, AngleSet, GridSpec, ProbeSpec};
use crate::psf::PulseModel;

/// File name written next to every run's outputs.
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Laptop scale: 32 elements, 64x64 kernels, 2 epochs.
    Desk,
    /// Full scale: 64 elements, 400x400 grid, 128x128 kernels, 100 epochs.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Fractional -6 dB bandwidth of the Gaussian pulse.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    /// Number of active elements.
    pub k: usize,
    /// Standard deviation of the initial logits.
    pub init_std: f64,
    pub temperature: TemperatureSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub n_ista: usize,
    /// Base width of the CNN head.
    pub width: usize,
    pub eta_init: f64,
    pub lambda_init: f64,
    /// Initial ISTA step; `null` means `1/L` with `L = max |fft2(kappa_ref)|^2`.
    pub alpha_init: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Quantile of the side-region amplitude in the SLR-q ratio.
    pub slr_quantile: f64,
    /// Main-lobe disk radius in wavelengths.
    pub r_main_wl: f64,
    /// Inner radius of the side region in wavelengths.
    pub r_guard_wl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_mask: f64,
    pub lr_ista: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Epochs of head-only fine-tuning for `train --finetune-head`.
    pub finetune_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Candidates of the best-of-N random search.
    pub best_of_tries: usize,
    /// Random masks whose median composite metric is reported.
    pub random_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// IDX image file; `null` falls back to `DATA_DIR`, then to the bundled
    /// fixture.
    pub path: Option<PathBuf>,
    /// Use only the first `limit` images.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub execution: Execution,
    pub probe: ProbeSpec,
    pub grid: GridSpec,
    pub angles: AngleSet,
    pub pulse: PulseConfig,
    pub mask: MaskConfig,
    pub recon: ReconConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        let (probe, grid, angles) = make_desk_profile();
        RunConfig {
            profile: Profile::Desk,
            seed: 0,
            execution: Execution::default(),
            probe,
            grid,
            angles,
            pulse: PulseConfig { bandwidth: 0.6 },
            mask: MaskConfig {
                k: 16,
                init_std: 1e-4,
                temperature: TemperatureSchedule::default(),
            },
            recon: ReconConfig {
                n_ista: 4,
                width: 32,
                eta_init: 0.1,
                lambda_init: 1e-3,
                alpha_init: None,
            },
            loss: LossConfig {
                weights: LossWeights::default(),
                slr_quantile: 0.95,
                r_main_wl: 1.5,
                r_guard_wl: 2.5,
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                lr_mask: 1e-4,
                lr_ista: 5e-4,
                lr_head: 1e-4,
                beta1: 0.9,
                beta2: 0.999,
                adam_eps: 1e-8,
                clip_norm: None,
                finetune_epochs: 5,
            },
            eval: EvalConfig {
                best_of_tries: 2000,
                random_draws: 20,
            },
            data: DataConfig {
                path: None,
                limit: Some(64),
            },
        }
    }

    pub fn paper() -> Self {
        let mut c = RunConfig::desk();
        c.profile = Profile::Paper;
        c.probe = ProbeSpec::paper();
        c.grid = GridSpec::paper();
        c.angles = AngleSet::paper();
        c.mask.k = 32;
        c.recon.n_ista = 8;
        c.train.epochs = 100;
        c.train.batch_size = 64;
        c.data.limit = None;
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => RunConfig::desk(),
            Profile::Paper => RunConfig::paper(),
        }
    }

    /// Overlays a JSON document on the defaults of its profile. The profile
    /// comes from `profile` if given, else from the document, else desk.
    pub fn from_json(doc: Value, profile: Option<Profile>) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let profile = match (profile, doc.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            (None, None) => Profile::Desk,
        };
        let mut base = serde_json::to_value(RunConfig::for_profile(profile))?;
        merge(&mut base, doc);
        base["profile"] = serde_json::to_value(profile)?;
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file (or just the profile defaults when `path` is
    /// `None`).
    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        RunConfig::from_json(doc, profile)
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.grid.validate()?;
        self.angles.validate()?;
        self.mask.temperature.validate()?;
        self.loss.weights.validate()?;
        if self.mask.k == 0 || self.mask.k > self.probe.n_elements {
            return Err(Error::Config(format!(
                "mask.k must be in 1..={} (got {})",
                self.probe.n_elements, self.mask.k
            )));
        }
        if !(self.mask.init_std > 0.0 && self.mask.init_std.is_finite()) {
            return Err(Error::Config("mask.init_std must be positive".into()));
        }
        if self.recon.n_ista == 0 || self.recon.width == 0 {
            return Err(Error::Config("recon.n_ista and recon.width must be positive".into()));
        }
        if !(self.recon.lambda_init > 0.0) || self.recon.alpha_init.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::Config(
                "recon.lambda_init and recon.alpha_init must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.loss.slr_quantile) {
            return Err(Error::Config("loss.slr_quantile must be in [0, 1]".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        let t = &self.train;
        let rates = [t.lr_mask, t.lr_ista, t.lr_head, t.adam_eps];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !(0.0..1.0).contains(&t.beta1)
            || !(0.0..1.0).contains(&t.beta2)
            || t.clip_norm.is_some_and(|c| !(c > 0.0))
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if self.eval.best_of_tries == 0 {
            return Err(Error::Config("eval.best_of_tries must be positive".into()));
        }
        Ok(())
    }

    pub fn pulse_model(&self) -> PulseModel {
        PulseModel {
            fc_hz: self.probe.fc_hz,
            bandwidth: self.pulse.bandwidth,
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_json_pretty() + "\n")?;
        Ok(path)
    }
}

/// Recursively overlays `over` onto `base`; keys missing from `base` are
/// inserted so that deserialization can reject them.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn partial_overlay_keeps_defaults() {
        let c = RunConfig::from_json(json!({"seed": 7, "train": {"epochs": 3}}), None).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.probe.n_elements, 32);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        assert!(matches!(
            RunConfig::from_json(json!({"bogus": 1}), None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(json!({"probe": {"pitch": 1.0}}), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn profile_selection() {
        let c = RunConfig::from_json(json!({"profile": "paper"}), None).unwrap();
        assert_eq!(
            (c.probe.n_elements, c.mask.k, c.grid.crop, c.recon.n_ista),
            (64, 32, 128, 8)
        );
        let c = RunConfig::from_json(json!({"profile": "paper"}), Some(Profile::Desk)).unwrap();
        assert_eq!(c.profile, Profile::Desk);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::paper();
        let back = RunConfig::from_json(serde_json::from_str(&c.to_json_pretty()).unwrap(), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}
