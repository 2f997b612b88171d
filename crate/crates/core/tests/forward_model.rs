mod common;

use common::{ctensor, direct_circular, inner, max_abs_diff, pairs, rng};
use usarray::autodiff::{CTensor, Graph, Tensor};
use usarray::forward;

fn convolve(k: &CTensor<f64>, x: &CTensor<f64>) -> CTensor<f64> {
    let mut g = Graph::new();
    let (kv, xv) = (g.cconstant(k.clone()), g.cconstant(x.clone()));
    let y = forward::convolve(&mut g, kv, xv).unwrap();
    g.cvalue(y)
}

fn adjoint(k: &CTensor<f64>, y: &CTensor<f64>) -> CTensor<f64> {
    let mut g = Graph::new();
    let kv = g.cconstant(k.clone());
    let spec = forward::kernel_spectrum(&mut g, kv).unwrap();
    let yv = g.cconstant(y.clone());
    let x = forward::adjoint(&mut g, spec, yv).unwrap();
    g.cvalue(x)
}

#[test]
fn fft_convolution_matches_spatial_sum() {
    let mut r = rng(10);
    for n in [4, 7, 8] {
        for _ in 0..5 {
            let k = ctensor(&mut r, &[n, n]);
            let x = ctensor(&mut r, &[n, n]);
            let err = max_abs_diff(&pairs(&convolve(&k, &x)), &direct_circular(&k, &x));
            assert!(err < 1e-10, "n={n}: {err:e}");
        }
    }
}

#[test]
fn delta_at_center_sifts_the_kernel() {
    let mut r = rng(11);
    let n = 8;
    let k = ctensor(&mut r, &[n, n]);
    let mut d = vec![0.0; n * n];
    d[(n / 2) * n + n / 2] = 1.0;
    let x = CTensor::from_real(Tensor::new(vec![n, n], d).unwrap());
    let y = convolve(&k, &x);
    assert!(max_abs_diff(&pairs(&y), &pairs(&k)) < 1e-12);
}

#[test]
fn centered_delta_kernel_is_identity() {
    let mut r = rng(12);
    let n = 8;
    let x = ctensor(&mut r, &[n, n]);
    let mut d = vec![0.0; n * n];
    d[(n / 2) * n + n / 2] = 1.0;
    let k = CTensor::from_real(Tensor::new(vec![n, n], d).unwrap());
    assert!(max_abs_diff(&pairs(&convolve(&k, &x)), &pairs(&x)) < 1e-12);
}

#[test]
fn convolution_is_linear_and_adjoint_consistent() {
    let mut r = rng(13);
    let n = 16;
    for _ in 0..10 {
        let k = ctensor(&mut r, &[n, n]);
        let x1 = ctensor(&mut r, &[n, n]);
        let x2 = ctensor(&mut r, &[n, n]);
        let (a, b) = (0.7, -1.3);
        let mix = CTensor::new(
            Tensor::new(
                vec![n, n],
                x1.re
                    .data()
                    .iter()
                    .zip(x2.re.data())
                    .map(|(p, q)| a * p + b * q)
                    .collect(),
            )
            .unwrap(),
            Tensor::new(
                vec![n, n],
                x1.im
                    .data()
                    .iter()
                    .zip(x2.im.data())
                    .map(|(p, q)| a * p + b * q)
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let lhs = pairs(&convolve(&k, &mix));
        let (y1, y2) = (pairs(&convolve(&k, &x1)), pairs(&convolve(&k, &x2)));
        let rhs: Vec<(f64, f64)> = y1
            .iter()
            .zip(&y2)
            .map(|(p, q)| (a * p.0 + b * q.0, a * p.1 + b * q.1))
            .collect();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-9);

        let y = ctensor(&mut r, &[n, n]);
        let ax_y = inner(&y1, &pairs(&y));
        let x_ahy = inner(&pairs(&x1), &pairs(&adjoint(&k, &y)));
        assert!((ax_y.0 - x_ahy.0).abs() < 1e-9 && (ax_y.1 - x_ahy.1).abs() < 1e-9);
    }
}

#[test]
fn output_energy_is_bounded_by_spectral_peak() {
    let mut r = rng(14);
    let n = 16;
    for _ in 0..10 {
        let k = ctensor(&mut r, &[n, n]);
        let x = ctensor(&mut r, &[n, n]);
        let y = convolve(&k, &x);
        let bound = x.energy() * forward::lipschitz(&k).unwrap();
        assert!(y.energy() <= bound + 1e-9);
    }
}

#[test]
fn genscat_zero_and_delta_cases() {
    assert!(forward::genscat(&[0.0; 9], 3, 3, 5).unwrap().iter().all(|&v| v == 0.0));
    let n = 9;
    let mut img = vec![0.0; n * n];
    img[(n / 2) * n + n / 2] = 255.0;
    let s = forward::genscat(&img, n, n, n).unwrap();
    let mut expect = vec![0.0; n * n];
    expect[(n / 2) * n + n / 2] = 1.0;
    assert_eq!(s, expect);
}

#[test]
fn genscat_support_scales_with_area() {
    let fixture = usarray::data::mini_fixture();
    let (src, n) = (28usize, 128usize);
    for img in fixture.images.iter().take(16) {
        let s = forward::genscat_u8(img, src, src, n).unwrap();
        assert_eq!(s.iter().cloned().fold(0.0, f64::max), 1.0);
        assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));

        // nearest-neighbour source pixel under the half-pixel mapping, and
        // the 2x2 bilinear footprint around it
        let src_of = |o: usize| ((o as f64 + 0.5) * src as f64 / n as f64 - 0.5).max(0.0);
        let on = |r: usize, c: usize| img[r.min(src - 1) * src + c.min(src - 1)] > 0;
        let (mut nn, mut foot, mut got) = (0usize, 0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (src_of(i), src_of(j));
                let (r0, c0) = (u.floor() as usize, v.floor() as usize);
                if on(u.round() as usize, v.round() as usize) {
                    nn += 1;
                }
                if on(r0, c0) || on(r0 + 1, c0) || on(r0, c0 + 1) || on(r0 + 1, c0 + 1) {
                    foot += 1;
                }
                if s[i * n + j] > 0.0 {
                    got += 1;
                }
            }
        }
        assert!(nn <= got && got <= foot, "{nn} <= {got} <= {foot}");
        let src_support = img.iter().filter(|&&v| v > 0).count() as f64;
        let ratio = nn as f64 / (src_support * (n as f64 / src as f64).powi(2));
        assert!((ratio - 1.0).abs() < 0.15, "area ratio {ratio}");
    }
}
