//! Probe geometry, acoustic constants and imaging grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear array description. Derived quantities (wavelength, element
/// positions, grid pitch) are always recomputed from these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub n_elements: usize,
    /// Element spacing in meters.
    pub pitch_m: f64,
    pub fc_hz: f64,
    pub c_mps: f64,
    pub fs_hz: f64,
    /// Per-element apodization; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apod: Option<Vec<f64>>,
}

impl ProbeSpec {
    /// 64-element phased array at 3.5 MHz.
    pub fn paper() -> Self {
        ProbeSpec {
            n_elements: 64,
            pitch_m: 0.30e-3,
            fc_hz: 3.5e6,
            c_mps: 1540.0,
            fs_hz: 14e6,
            apod: None,
        }
    }

    pub fn wavelength(&self) -> f64 {
        self.c_mps / self.fc_hz
    }

    /// Lateral element positions, centered on zero.
    pub fn element_x(&self) -> Vec<f64> {
        let mid = (self.n_elements as f64 - 1.0) / 2.0;
        (0..self.n_elements).map(|i| (i as f64 - mid) * self.pitch_m).collect()
    }

    /// Axial element positions (the array sits at depth zero).
    pub fn element_z(&self) -> Vec<f64> {
        vec![0.0; self.n_elements]
    }

    pub fn apodization(&self) -> Vec<f64> {
        self.apod.clone().unwrap_or_else(|| vec![1.0; self.n_elements])
    }

    /// Imaging grid pitch: a quarter of the sampling wavelength `c / fs`.
    pub fn grid_pitch(&self) -> f64 {
        self.c_mps / self.fs_hz / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.pitch_m, self.fc_hz, self.c_mps, self.fs_hz];
        if self.n_elements == 0 || positive.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config(
                "probe needs at least one element and positive pitch, fc, c, fs".into(),
            ));
        }
        if let Some(a) = &self.apod {
            if a.len() != self.n_elements || a.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!(
                    "probe.apod must hold {} non-negative values",
                    self.n_elements
                )));
            }
        }
        Ok(())
    }
}

/// Pixel grid: `x` spans `[-p*nx/2, p*nx/2)`, `z` spans `[0, p*nz)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub nz: usize,
    /// Side of the square kernel window, in pixels.
    pub crop: usize,
}

impl GridSpec {
    pub fn paper() -> Self {
        GridSpec {
            nx: 400,
            nz: 400,
            crop: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.nx.min(self.nz) {
            return Err(Error::Config(format!(
                "grid.crop must be in 1..={} (got {})",
                self.nx.min(self.nz),
                self.crop
            )));
        }
        Ok(())
    }
}

/// Uniformly spaced steering angles over `[-span_deg, span_deg]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleSet {
    pub count: usize,
    pub span_deg: f64,
}

impl AngleSet {
    pub fn paper() -> Self {
        AngleSet {
            count: 7,
            span_deg: 10.0,
        }
    }

    /// Angles in radians, ascending.
    pub fn radians(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![0.0];
        }
        let step = 2.0 * self.span_deg / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| (-self.span_deg + i as f64 * step).to_radians())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !self.span_deg.is_finite() || self.span_deg < 0.0 || self.span_deg >= 90.0 {
            return Err(Error::Config(
                "angles.count must be >= 1 and span_deg in [0, 90)".into(),
            ));
        }
        Ok(())
    }
}

pub fn make_paper_probe() -> ProbeSpec {
    ProbeSpec::paper()
}

/// Reduced geometry for laptop-scale runs: 32 elements, 64x64 grid and
/// kernel, three angles.
pub fn make_desk_profile() -> (ProbeSpec, GridSpec, AngleSet) {
    let probe = ProbeSpec {
        n_elements: 32,
        ..ProbeSpec::paper()
    };
    let grid = GridSpec {
        nx: 64,
        nz: 64,
        crop: 64,
    };
    let angles = AngleSet {
        count: 3,
        span_deg: 10.0,
    };
    (probe, grid, angles)
}
