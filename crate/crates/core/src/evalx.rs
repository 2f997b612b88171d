//! Baseline element sets and the configuration comparison table.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::losses::Metrics;
use crate::pipeline::Physics;
use crate::real::Real;

pub const TABLE_CSV: &str = "table1.csv";
pub const RANDOM_DRAWS_CSV: &str = "random_draws.csv";

/// Offset separating the seeds of the random-row draws from best-of-N
/// candidate seeds.
pub const RANDOM_DRAW_OFFSET: u64 = 1 << 32;

/// Every other element: `{0, 2, ..., N_e - 2}`.
pub fn uniform_mask(n_elements: usize, k: usize) -> Result<Vec<usize>> {
    if !n_elements.is_multiple_of(2) || 2 * k != n_elements {
        return Err(Error::UnsupportedUniform { n_elements, k });
    }
    Ok((0..n_elements).step_by(2).collect())
}

pub fn full_mask(n_elements: usize) -> Vec<usize> {
    (0..n_elements).collect()
}

/// Seeded uniform `k`-subset: the first `k` slots of a Fisher-Yates
/// shuffle, returned sorted.
pub fn random_mask(n_elements: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(n_elements);
    let mut idx: Vec<usize> = (0..n_elements).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..n_elements);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Seed of the `i`-th draw of a random-mask sequence.
pub fn draw_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub elements: Vec<usize>,
    pub metrics: Metrics,
}

/// Metrics of `tries` random masks with seeds `seed, seed + 1, ...`.
pub fn random_candidates<T: Real>(
    phys: &Physics<T>,
    k: usize,
    tries: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Candidate>> {
    let n = phys.psf.n_elements();
    exec.try_map(tries, |i| {
        let elements = random_mask(n, k, draw_seed(seed, i));
        let metrics = phys.metrics_for(&elements)?;
        Ok(Candidate {
            index: i,
            elements,
            metrics,
        })
    })
}

/// Best of `tries` random masks by composite mean; ties go to the lowest
/// try index.
pub fn best_of_n<T: Real>(phys: &Physics<T>, k: usize, tries: usize, seed: u64, exec: Execution) -> Result<Candidate> {
    if tries == 0 {
        return Err(Error::Config("best_of_n needs at least one try".into()));
    }
    let all = random_candidates(phys, k, tries, seed, exec)?;
    let best = all
        .into_iter()
        .min_by(|a, b| {
            a.metrics
                .mean()
                .total_cmp(&b.metrics.mean())
                .then(a.index.cmp(&b.index))
        })
        .expect("tries >= 1");
    Ok(best)
}

/// Median composite mean (average of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRow {
    pub name: String,
    pub elements: Vec<usize>,
    pub metrics: Metrics,
}

impl ConfigRow {
    pub fn mean(&self) -> f64 {
        self.metrics.mean()
    }
}

/// Evaluates named element sets with hard binary weights. Rows come back
/// sorted by composite mean (stable, so equal means keep input order) and
/// repeated names get `#2`, `#3`, ... suffixes.
pub fn evaluate_configs<T: Real>(phys: &Physics<T>, configs: &[(String, Vec<usize>)]) -> Result<Vec<ConfigRow>> {
    let n = phys.psf.n_elements();
    let mut rows = Vec::with_capacity(configs.len());
    for (i, (name, elements)) in configs.iter().enumerate() {
        let mut sorted = elements.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != elements.len() || sorted.iter().any(|&e| e >= n) {
            return Err(Error::Config(format!(
                "config `{name}`: element indices must be distinct and below {n}"
            )));
        }
        let seen = configs[..i].iter().filter(|(other, _)| other == name).count();
        let name = if seen == 0 {
            name.clone()
        } else {
            format!("{name}#{}", seen + 1)
        };
        let metrics = phys.metrics_for(&sorted)?;
        rows.push(ConfigRow {
            name,
            elements: sorted,
            metrics,
        });
    }
    rows.sort_by(|a, b| a.mean().total_cmp(&b.mean()));
    Ok(rows)
}

fn fmt(v: f64) -> String {
    format!("{v:.8}")
}

fn join(elements: &[usize]) -> String {
    elements.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// `name,elements,L_PSF,L_contrast,L_SLR_q,L_SLR_i,mean`; elements are
/// space-separated.
pub fn write_table(path: &Path, rows: &[ConfigRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "elements", "L_PSF", "L_contrast", "L_SLR_q", "L_SLR_i", "mean"])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.name.clone(),
            join(&r.elements),
            fmt(m.psf),
            fmt(m.contrast),
            fmt(m.slr_q),
            fmt(m.slr_i),
            fmt(r.mean()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `draw,seed,elements,mean` for a list of random candidates.
pub fn write_candidates(path: &Path, seed: u64, cands: &[Candidate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["draw", "seed", "elements", "mean"])?;
    for c in cands {
        w.write_record([
            c.index.to_string(),
            draw_seed(seed, c.index).to_string(),
            join(&c.elements),
            fmt(c.metrics.mean()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A baseline requested on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Uniform,
    Random,
    Full,
    BestOf(usize),
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Baseline::Uniform),
            "random" => Ok(Baseline::Random),
            "full" => Ok(Baseline::Full),
            other => match other.strip_prefix("bestof:").map(str::parse) {
                Some(Ok(n)) if n > 0 => Ok(Baseline::BestOf(n)),
                _ => Err(Error::Config(format!(
                    "unknown baseline `{other}` (expected uniform, random, full or bestof:N)"
                ))),
            },
        }
    }
}

/// Element sets of the requested baselines. The random row is the first
/// draw of the random-row seed sequence.
pub fn baseline_sets<T: Real>(
    phys: &Physics<T>,
    baselines: &[Baseline],
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<(String, Vec<usize>)>> {
    let n = phys.psf.n_elements();
    baselines
        .iter()
        .map(|b| {
            Ok(match *b {
                Baseline::Uniform => ("uniform".to_string(), uniform_mask(n, k)?),
                Baseline::Random => (
                    "random".to_string(),
                    random_mask(n, k, seed.wrapping_add(RANDOM_DRAW_OFFSET)),
                ),
                Baseline::Full => ("full".to_string(), full_mask(n)),
                Baseline::BestOf(tries) => (
                    format!("best-of-{tries}"),
                    best_of_n(phys, k, tries, seed, exec)?.elements,
                ),
            })
        })
        .collect()
}
