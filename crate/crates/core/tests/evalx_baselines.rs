mod common;

use common::desk_physics;
use usarray::evalx::{self, Baseline, RANDOM_DRAW_OFFSET};
use usarray::exec::Execution;
use usarray::Error;

#[test]
fn uniform_baseline_takes_even_elements() {
    assert_eq!(
        evalx::uniform_mask(64, 32).unwrap(),
        (0..64).step_by(2).collect::<Vec<_>>()
    );
    assert_eq!(evalx::uniform_mask(4, 2).unwrap(), vec![0, 2]);
    assert!(matches!(
        evalx::uniform_mask(64, 16),
        Err(Error::UnsupportedUniform { n_elements: 64, k: 16 })
    ));
}

#[test]
fn random_masks_are_seeded_subsets() {
    assert_eq!(evalx::random_mask(12, 12, 99), (0..12).collect::<Vec<_>>());
    assert_eq!(evalx::random_mask(32, 16, 5), evalx::random_mask(32, 16, 5));
    assert_ne!(evalx::random_mask(32, 16, 5), evalx::random_mask(32, 16, 6));
    let m = evalx::random_mask(32, 16, 7);
    assert_eq!(m.len(), 16);
    assert!(m.windows(2).all(|w| w[0] < w[1]) && m[15] < 32);
}

#[test]
fn inclusion_frequencies_follow_the_hypergeometric_law() {
    let (n, k, draws) = (8usize, 4usize, 10_000usize);
    let mut single = [0usize; 8];
    let mut pair = 0usize;
    for s in 0..draws {
        let m = evalx::random_mask(n, k, s as u64);
        for &e in &m {
            single[e] += 1;
        }
        if m.contains(&0) && m.contains(&1) {
            pair += 1;
        }
    }
    // P(e in S) = k/n; P(a, b in S) = k(k-1) / (n(n-1))
    for c in single {
        assert!((c as f64 / draws as f64 - 0.5).abs() < 0.02);
    }
    let joint = (k * (k - 1)) as f64 / (n * (n - 1)) as f64;
    assert!((pair as f64 / draws as f64 - joint).abs() < 0.02);
}

#[test]
fn single_try_equals_the_random_mask() {
    let (_, phys) = desk_physics();
    let best = evalx::best_of_n(&phys, 16, 1, 42, Execution::Sequential).unwrap();
    assert_eq!(best.elements, evalx::random_mask(32, 16, 42));
    assert_eq!(best.metrics, phys.metrics_for(&best.elements).unwrap());
    assert!(evalx::best_of_n(&phys, 16, 0, 42, Execution::Sequential).is_err());
}

#[test]
fn more_tries_never_do_worse() {
    let (_, phys) = desk_physics();
    let cands = evalx::random_candidates(&phys, 16, 64, 3, Execution::Sequential).unwrap();
    let mut prev = f64::INFINITY;
    for tries in [1, 2, 5, 16, 40, 64] {
        let best = evalx::best_of_n(&phys, 16, tries, 3, Execution::Sequential).unwrap();
        let prefix_min = cands[..tries]
            .iter()
            .map(|c| c.metrics.mean())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.metrics.mean(), prefix_min);
        assert!(best.metrics.mean() <= prev);
        prev = best.metrics.mean();
    }
}

#[test]
fn search_beats_the_median_random_draw() {
    let (cfg, phys) = desk_physics();
    let best = evalx::best_of_n(&phys, 16, cfg.eval.best_of_tries, 0, Execution::Parallel).unwrap();
    let draws = evalx::random_candidates(&phys, 16, 20, RANDOM_DRAW_OFFSET, Execution::Parallel).unwrap();
    let med = evalx::median(&draws.iter().map(|c| c.metrics.mean()).collect::<Vec<_>>());
    assert_eq!(cfg.eval.best_of_tries, 2000);
    assert!(best.metrics.mean() <= med, "{} > {med}", best.metrics.mean());
}

#[test]
fn search_is_identical_across_execution_modes() {
    let (_, phys) = desk_physics();
    let a = evalx::random_candidates(&phys, 16, 24, 11, Execution::Sequential).unwrap();
    let b = evalx::random_candidates(&phys, 16, 24, 11, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn table_rows_are_sorted_and_exact() {
    let (_, phys) = desk_physics();
    let configs = vec![
        ("uniform".to_string(), evalx::uniform_mask(32, 16).unwrap()),
        ("full".to_string(), evalx::full_mask(32)),
        ("pick".to_string(), vec![3, 1, 2]),
        ("pick".to_string(), vec![30, 31]),
    ];
    let rows = evalx::evaluate_configs(&phys, &configs).unwrap();
    assert!(rows.windows(2).all(|w| w[0].mean() <= w[1].mean()));
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    assert!(names.contains(&"pick") && names.contains(&"pick#2"));
    assert_eq!(rows.iter().find(|r| r.name == "pick").unwrap().elements, vec![1, 2, 3]);
    let full = rows.iter().find(|r| r.name == "full").unwrap();
    assert!(full.metrics.psf.abs() < 1e-10);
    assert_eq!(rows[0].name, "full");
    for r in &rows {
        let m = r.metrics;
        assert!(m.psf >= 0.0 && m.contrast >= 0.0 && m.slr_q >= 0.0 && m.slr_i >= 0.0);
        assert_eq!(r.mean(), (m.psf + m.contrast + m.slr_q + m.slr_i) / 4.0);
    }

    let bad = vec![("dup".to_string(), vec![1, 1])];
    assert!(evalx::evaluate_configs(&phys, &bad).is_err());
    let out_of_range = vec![("far".to_string(), vec![32])];
    assert!(evalx::evaluate_configs(&phys, &out_of_range).is_err());
}

#[test]
fn table_csv_is_idempotent() {
    let (_, phys) = desk_physics();
    let configs = vec![
        ("full".to_string(), evalx::full_mask(32)),
        ("random".to_string(), evalx::random_mask(32, 16, RANDOM_DRAW_OFFSET)),
    ];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    evalx::write_table(&a, &evalx::evaluate_configs(&phys, &configs).unwrap()).unwrap();
    evalx::write_table(&b, &evalx::evaluate_configs(&phys, &configs).unwrap()).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,elements,L_PSF,L_contrast,L_SLR_q,L_SLR_i,mean"
    );
    assert!(lines.next().unwrap().starts_with("full,0 1 2 3 "));
    assert!(text.contains(",0.00000000,"));
}

#[test]
fn baseline_parsing_and_sets() {
    assert_eq!("uniform".parse::<Baseline>().unwrap(), Baseline::Uniform);
    assert_eq!(" full ".parse::<Baseline>().unwrap(), Baseline::Full);
    assert_eq!("bestof:25".parse::<Baseline>().unwrap(), Baseline::BestOf(25));
    for bad in ["bestof:0", "bestof:x", "learned", ""] {
        assert!(matches!(bad.parse::<Baseline>(), Err(Error::Config(_))), "{bad}");
    }
    let (_, phys) = desk_physics();
    let sets = evalx::baseline_sets(
        &phys,
        &[Baseline::Full, Baseline::Random, Baseline::BestOf(3)],
        16,
        9,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(sets[0], ("full".to_string(), (0..32).collect()));
    assert_eq!(sets[1].1, evalx::random_mask(32, 16, 9 + RANDOM_DRAW_OFFSET));
    assert_eq!(sets[2].0, "best-of-3");
    assert_eq!(evalx::median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(evalx::median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}
