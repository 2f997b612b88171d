#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usarray::autodiff::{CTensor, Tensor};
use usarray::config::RunConfig;
use usarray::pipeline::Physics;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n)).unwrap()
}

pub fn ctensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> CTensor<f64> {
    CTensor::new(tensor(rng, shape), tensor(rng, shape)).unwrap()
}

/// Complex values as `(re, im)` pairs.
pub fn pairs(z: &CTensor<f64>) -> Vec<(f64, f64)> {
    z.re.data().iter().copied().zip(z.im.data().iter().copied()).collect()
}

/// Direct circular convolution with a center-origin kernel:
/// `y[i,j] = sum_{a,b} x[a,b] k[(i-a+h) mod n, (j-b+h) mod n]`, `h = n/2`.
pub fn direct_circular(k: &CTensor<f64>, x: &CTensor<f64>) -> Vec<(f64, f64)> {
    let n = k.shape()[0];
    let h = n / 2;
    let (k, x) = (pairs(k), pairs(x));
    let mut y = vec![(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let (kr, ki) = k[((i + n + h - a) % n) * n + (j + n + h - b) % n];
                    let (xr, xi) = x[a * n + b];
                    acc.0 += kr * xr - ki * xi;
                    acc.1 += kr * xi + ki * xr;
                }
            }
            y[i * n + j] = acc;
        }
    }
    y
}

pub fn max_abs_diff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1))
        .fold(0.0, f64::max)
}

/// `sum a * conj(b)`.
pub fn inner(a: &[(f64, f64)], b: &[(f64, f64)]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0, 0.0), |acc, (p, q)| {
        (acc.0 + p.0 * q.0 + p.1 * q.1, acc.1 + p.1 * q.0 - p.0 * q.1)
    })
}

pub fn desk_physics() -> (RunConfig, Physics<f64>) {
    let cfg = RunConfig::desk();
    let phys = Physics::from_config(&cfg).unwrap();
    (cfg, phys)
}
