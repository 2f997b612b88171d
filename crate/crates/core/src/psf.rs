//! Narrowband plane-wave PSF synthesis.
//!
//! For steering angles `a`, elements `e` and pixels `r` of the kernel window
//! around the scatterer `r0`:
//!
//! ```text
//! T_a(w)   = sum_e w_e env(eps_ae) exp(-j 2 pi fc eps_ae)
//! R_a(w,r) = sum_e w_e env(D_aer) exp(-j 2 pi fc D_aer)
//! kappa(r) = sum_a |T_a(w)| R_a(w, r)
//! ```
//!
//! `eps` are the transmit timing residuals at `r0` (centered over the full
//! aperture) and `D` the receive residuals between `r0` and `r`. The transmit
//! factor enters through its modulus so that every angle adds coherently at
//! `r0`. The kernel is normalized to unit energy, which makes it invariant to
//! a global scaling of `w`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CTensor, CVar, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::probe::{AngleSet, GridSpec, ProbeSpec};
use crate::real::Real;

/// Gaussian-envelope pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseModel {
    pub fc_hz: f64,
    /// Fractional -6 dB bandwidth.
    pub bandwidth: f64,
}

impl PulseModel {
    pub fn sigma_t(&self) -> f64 {
        pulse_sigma(self.fc_hz, self.bandwidth)
    }

    /// `exp(-t^2 / (2 sigma_t^2))`.
    pub fn envelope(&self, t: f64) -> f64 {
        let s = self.sigma_t();
        (-t * t / (2.0 * s * s)).exp()
    }
}

/// Envelope time constant whose spectrum has the given fractional -6 dB
/// bandwidth: `sqrt(2 ln 2) / (pi B fc)`.
pub fn pulse_sigma(fc_hz: f64, bandwidth: f64) -> f64 {
    (2.0 * std::f64::consts::LN_2).sqrt() / (PI * bandwidth * fc_hz)
}

/// Flat pixel indices of the main-lobe disk and the sidelobe region of a
/// kernel window. Pixels in the guard ring between them belong to neither.
#[derive(Debug, Clone, PartialEq)]
pub struct Regions {
    pub main: Arc<[usize]>,
    pub side: Arc<[usize]>,
}

/// Precomputed synthesis operator for one probe/grid/angle configuration.
#[derive(Debug, Clone)]
pub struct PsfModel<T> {
    n_elements: usize,
    n_angles: usize,
    crop: usize,
    pixel_pitch: f64,
    wavelength: f64,
    apod: Vec<f64>,
    tx_re: Arc<Tensor<T>>,
    tx_im: Arc<Tensor<T>>,
    rx_re: Arc<Tensor<T>>,
    rx_im: Arc<Tensor<T>>,
}

impl<T: Real> PsfModel<T> {
    pub fn new(probe: &ProbeSpec, grid: &GridSpec, angles: &AngleSet, pulse: &PulseModel) -> Result<Self> {
        probe.validate()?;
        grid.validate()?;
        angles.validate()?;
        if !(pulse.bandwidth > 0.0 && pulse.bandwidth < 2.0 && pulse.fc_hz > 0.0) {
            return Err(Error::Config(format!(
                "pulse bandwidth must be in (0, 2) and fc positive (got {}, {})",
                pulse.bandwidth, pulse.fc_hz
            )));
        }
        let c = probe.c_mps;
        let fc = pulse.fc_hz;
        let p = probe.grid_pitch();
        let xe = probe.element_x();
        let thetas = angles.radians();
        let (ne, na, crop) = (probe.n_elements, thetas.len(), grid.crop);
        let npix = crop * crop;

        // scatterer at the grid's central pixel
        let (ci, cz) = (grid.nx / 2, grid.nz / 2);
        let x0 = -p * grid.nx as f64 / 2.0 + ci as f64 * p;
        let z0 = cz as f64 * p;
        let half = (crop / 2) as f64;
        let pixel = |i: usize| -> (f64, f64) {
            let (row, col) = (i / crop, i % crop);
            (x0 + (col as f64 - half) * p, z0 + (row as f64 - half) * p)
        };

        let tau_pw = |s: f64, co: f64, x: f64, z: f64| (x * s + z * co) / c;
        let tau_sph = |xe: f64, x: f64, z: f64| (x - xe).hypot(z) / c;
        let phasor = |t: f64| {
            let env = pulse.envelope(t);
            let ph = -2.0 * PI * fc * t;
            (env * ph.cos(), env * ph.sin())
        };

        let mut tx_re = vec![0.0; na * ne];
        let mut tx_im = vec![0.0; na * ne];
        let mut rx_re = vec![0.0; na * npix * ne];
        let mut rx_im = vec![0.0; na * npix * ne];
        let sph0: Vec<f64> = xe.iter().map(|&x| tau_sph(x, x0, z0)).collect();
        for (a, &th) in thetas.iter().enumerate() {
            let (s, co) = th.sin_cos();
            let pw0 = tau_pw(s, co, x0, z0);
            let eps: Vec<f64> = xe.iter().zip(&sph0).map(|(&x, &sph)| x * s / c + sph - pw0).collect();
            let mean = eps.iter().sum::<f64>() / ne as f64;
            for (e, &v) in eps.iter().enumerate() {
                let (re, im) = phasor(v - mean);
                tx_re[a * ne + e] = re;
                tx_im[a * ne + e] = im;
            }
            for i in 0..npix {
                let (x, z) = pixel(i);
                let pw = tau_pw(s, co, x, z);
                let row = (a * npix + i) * ne;
                for e in 0..ne {
                    let d = (pw0 + sph0[e]) - (pw + tau_sph(xe[e], x, z));
                    let (re, im) = phasor(d);
                    rx_re[row + e] = re;
                    rx_im[row + e] = im;
                }
            }
        }

        let t =
            |shape: Vec<usize>, v: Vec<f64>| -> Result<Arc<Tensor<T>>> { Ok(Arc::new(Tensor::from_f64(shape, &v)?)) };
        Ok(PsfModel {
            n_elements: ne,
            n_angles: na,
            crop,
            pixel_pitch: p,
            wavelength: probe.wavelength(),
            apod: probe.apodization(),
            tx_re: t(vec![na, ne], tx_re)?,
            tx_im: t(vec![na, ne], tx_im)?,
            rx_re: t(vec![na * npix, ne], rx_re)?,
            rx_im: t(vec![na * npix, ne], rx_im)?,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn crop(&self) -> usize {
        self.crop
    }

    /// Flat index of the kernel center (row `crop/2`, column `crop/2`).
    pub fn center_index(&self) -> usize {
        (self.crop / 2) * self.crop + self.crop / 2
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    /// Disk regions around the kernel center; radii in wavelengths, boundaries
    /// inclusive.
    pub fn regions(&self, r_main_wl: f64, r_guard_wl: f64) -> Result<Regions> {
        if !(r_main_wl > 0.0 && r_guard_wl >= r_main_wl) {
            return Err(Error::Config(format!(
                "region radii must satisfy 0 < r_main <= r_guard (got {r_main_wl}, {r_guard_wl})"
            )));
        }
        let (r_main, r_guard) = (r_main_wl * self.wavelength, r_guard_wl * self.wavelength);
        let tol = 1e-9 * self.wavelength;
        let half = (self.crop / 2) as f64;
        let mut main = Vec::new();
        let mut side = Vec::new();
        for i in 0..self.crop * self.crop {
            let dr = (i / self.crop) as f64 - half;
            let dc = (i % self.crop) as f64 - half;
            let r = dr.hypot(dc) * self.pixel_pitch;
            if r <= r_main + tol {
                main.push(i);
            } else if r >= r_guard - tol {
                side.push(i);
            }
        }
        if main.is_empty() || side.is_empty() {
            return Err(Error::Config(format!(
                "kernel window of {} px is too small for the main/side regions",
                self.crop
            )));
        }
        Ok(Regions {
            main: main.into(),
            side: side.into(),
        })
    }

    /// Unnormalized kernel `[crop, crop]` for element weights `w: [N_e]`.
    pub fn synth_raw(&self, g: &mut Graph<T>, w: Var) -> Result<CVar> {
        if g.shape(w) != [self.n_elements] {
            return Err(Error::ShapeMismatch {
                op: "synth_psf",
                lhs: vec![self.n_elements],
                rhs: g.shape(w).to_vec(),
            });
        }
        if g.value(w).data().iter().all(|&v| v == T::zero()) {
            return Err(Error::DegenerateAperture);
        }
        let t_re = g.matvec_const(self.tx_re.clone(), w)?;
        let t_im = g.matvec_const(self.tx_im.clone(), w)?;
        let t_mag = g.cabs(t_re, t_im)?;
        let t_mag = g.reshape(t_mag, vec![1, self.n_angles])?;
        let npix = self.crop * self.crop;
        let mut parts = Vec::with_capacity(2);
        for m in [&self.rx_re, &self.rx_im] {
            let r = g.matvec_const(m.clone(), w)?;
            let r = g.reshape(r, vec![self.n_angles, npix])?;
            let k = g.matmul(t_mag, r)?;
            parts.push(g.reshape(k, vec![self.crop, self.crop])?);
        }
        let (re, im) = (parts[0], parts[1]);
        Ok(CVar { re, im })
    }

    /// Energy-normalized kernel for element weights `w: [N_e]`.
    pub fn synth(&self, g: &mut Graph<T>, w: Var) -> Result<CVar> {
        let k = self.synth_raw(g, w)?;
        let e = g.cnorm2(k)?;
        if !(g.item(e) > T::zero()) {
            return Err(Error::DegenerateAperture);
        }
        let norm = g.sqrt(e);
        g.cdiv_real(k, norm)
    }

    /// Kernel values for fixed weights, without recording gradients.
    pub fn synth_values(&self, w: &[T]) -> Result<CTensor<T>> {
        let mut g = Graph::new();
        let wv = g.constant(Tensor::new(vec![w.len()], w.to_vec())?);
        let k = self.synth(&mut g, wv)?;
        Ok(g.cvalue(k))
    }

    /// Kernel for a set of active elements (binary weights).
    pub fn synth_indices(&self, active: &[usize]) -> Result<CTensor<T>> {
        let mut w = vec![T::zero(); self.n_elements];
        for &i in active {
            if i >= self.n_elements {
                return Err(Error::Config(format!("element index {i} out of range")));
            }
            w[i] = T::one();
        }
        self.synth_values(&w)
    }

    /// Full-aperture kernel weighted by the probe apodization.
    pub fn reference(&self) -> Result<CTensor<T>> {
        let w: Vec<T> = self.apod.iter().map(|&a| T::of(a)).collect();
        self.synth_values(&w)
    }
}
