//! Command-line front end: training, evaluation, kernel rendering,
//! gradient checks, random search and reconstruction export.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing, unreadable or malformed files), 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use usarray::autodiff::{GradCheckConfig, Graph, Tensor};
use usarray::config::{Profile, RunConfig};
use usarray::data::{self, DataSource};
use usarray::evalx::{self, Baseline, ConfigRow};
use usarray::exec::Execution;
use usarray::mask::{self, SelectionMask};
use usarray::model::ModelVars;
use usarray::pipeline::{self, Physics};
use usarray::{ckpt, forward, imaging, train, Error};

#[derive(Parser)]
#[command(
    name = "usarray",
    version,
    about = "Sparse ultrasound array selection and reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly train the element mask and the reconstruction network.
    Train(TrainArgs),
    /// Compare a trained mask against baseline configurations.
    Eval(EvalArgs),
    /// Render the kernel of a mask (or the full aperture) in dB.
    Psf(PsfArgs),
    /// Verify reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Best-of-N random mask search.
    BaselineSearch(SearchArgs),
    /// Reference, measurement and reconstruction of one image.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config; keys not given fall back to the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// IDX image file (overrides the config and DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run batch items and search candidates sequentially.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Fine-tune only the CNN head, starting from --checkpoint.
    #[arg(long, requires = "checkpoint")]
    finetune_head: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated list of uniform, random, full, bestof:N.
    #[arg(long, value_delimiter = ',')]
    baselines: Option<Vec<Baseline>>,
}

#[derive(Args)]
struct PsfArgs {
    #[command(flatten)]
    common: Common,
    /// Mask CSV as written by `train`.
    #[arg(long, conflicts_with = "full", required_unless_present = "full")]
    mask: Option<PathBuf>,
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tries: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// IDX file or 8-bit grayscale PNG.
    #[arg(long)]
    image: PathBuf,
    /// Image index inside an IDX file.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

enum Failure {
    Usage(String),
    Core(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numeric(_) => 3,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::UnsupportedUniform { .. } => 1,
                Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Image(_)
                | Error::IdxBadMagic { .. }
                | Error::IdxTruncated { .. }
                | Error::Integrity { .. }
                | Error::Migration { .. } => 2,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Psf(a) => cmd_psf(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::BaselineSearch(a) => cmd_search(a),
        Command::Export(a) => cmd_export(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

/// Applies command-line overrides to a loaded config, validates it and
/// writes `resolved_config.json`.
fn finish_config(mut cfg: RunConfig, c: &Common) -> Result<RunConfig, Failure> {
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = &c.data {
        cfg.data.path = Some(d.clone());
    }
    if c.sequential {
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    let path = cfg.write_resolved(&c.out)?;
    println!("config: {} (sha256 {})", path.display(), &cfg.hash()[..12]);
    Ok(cfg)
}

fn resolve(c: &Common) -> Result<RunConfig, Failure> {
    finish_config(RunConfig::load(c.config.as_deref(), c.profile)?, c)
}

/// The config stored in a checkpoint; `--config` and `--profile` would
/// contradict it.
fn resolve_from_checkpoint(c: &Common, dir: &Path) -> Result<(RunConfig, usarray::model::Model<f32>), Failure> {
    if c.config.is_some() || c.profile.is_some() {
        return Err(Failure::Usage(
            "--config/--profile conflict with --checkpoint, which carries its own config".into(),
        ));
    }
    let (cfg, model) = ckpt::load_model(dir)?;
    Ok((finish_config(cfg, c)?, model))
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let t0 = Instant::now();
    let (cfg, mode, init) = match (&a.checkpoint, a.finetune_head) {
        (Some(dir), true) => {
            let (cfg, model) = resolve_from_checkpoint(&a.common, dir)?;
            (cfg, train::Mode::FinetuneHead, Some(model))
        }
        (Some(_), false) => return Err(Failure::Usage("--checkpoint is only used with --finetune-head".into())),
        (None, _) => (resolve(&a.common)?, train::Mode::Joint, None),
    };
    println!(
        "training: profile {:?}, data {}, seed {}",
        cfg.profile,
        DataSource::resolve(cfg.data.path.as_deref()).describe(),
        cfg.seed
    );
    let outcome = train::run_training(&cfg, mode, init)?;
    train::write_outputs(&a.common.out, &cfg, &outcome)?;
    if let Some(last) = outcome.curve.last() {
        println!(
            "steps: {}, final total loss {:.6}",
            outcome.curve.len(),
            last.report.total
        );
    }
    println!("selected elements: {:?}", outcome.selection);
    println!(
        "outputs in {} ({:.1} s)",
        a.common.out.display(),
        t0.elapsed().as_secs_f64()
    );
    match outcome.halted {
        Some(e) => Err(Failure::Numeric(format!("{e}; last good checkpoint saved"))),
        None => Ok(()),
    }
}

fn print_rows(rows: &[ConfigRow]) {
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "name", "L_PSF", "contrast", "SLR_q", "SLR_i", "mean"
    );
    for r in rows {
        let m = &r.metrics;
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.name,
            m.psf,
            m.contrast,
            m.slr_q,
            m.slr_i,
            r.mean()
        );
    }
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let (cfg, learned) = match &a.checkpoint {
        Some(dir) => {
            let (cfg, model) = resolve_from_checkpoint(&a.common, dir)?;
            let m = SelectionMask {
                logits: model.logits().clone(),
            };
            let sel = mask::active_elements(&m.selection(cfg.mask.temperature.tau_end as f32)?);
            (cfg, Some(sel))
        }
        None => (resolve(&a.common)?, None),
    };
    let phys = Physics::<f64>::from_config(&cfg)?;
    let baselines = a.baselines.clone().unwrap_or_else(|| {
        vec![
            Baseline::Uniform,
            Baseline::Random,
            Baseline::Full,
            Baseline::BestOf(cfg.eval.best_of_tries),
        ]
    });
    let mut configs = Vec::new();
    if let Some(sel) = learned {
        configs.push(("learned".to_string(), sel));
    }
    configs.extend(evalx::baseline_sets(
        &phys,
        &baselines,
        cfg.mask.k,
        cfg.seed,
        cfg.execution,
    )?);
    if configs.is_empty() {
        return Err(Failure::Usage(
            "nothing to evaluate: give --checkpoint or --baselines".into(),
        ));
    }
    let rows = evalx::evaluate_configs(&phys, &configs)?;
    evalx::write_table(&a.common.out.join(evalx::TABLE_CSV), &rows)?;
    print_rows(&rows);

    if baselines.contains(&Baseline::Random) && cfg.eval.random_draws > 0 {
        let seed = cfg.seed.wrapping_add(evalx::RANDOM_DRAW_OFFSET);
        let draws = evalx::random_candidates(&phys, cfg.mask.k, cfg.eval.random_draws, seed, cfg.execution)?;
        evalx::write_candidates(&a.common.out.join(evalx::RANDOM_DRAWS_CSV), seed, &draws)?;
        let means: Vec<f64> = draws.iter().map(|c| c.metrics.mean()).collect();
        println!(
            "median mean of {} random masks: {:.4}",
            draws.len(),
            evalx::median(&means)
        );
    }
    Ok(())
}

fn cmd_psf(a: PsfArgs) -> Outcome {
    let cfg = resolve(&a.common)?;
    let phys = Physics::<f64>::from_config(&cfg)?;
    let active = match &a.mask {
        Some(p) => train::read_mask_csv(p)?,
        None => evalx::full_mask(cfg.probe.n_elements),
    };
    let kappa = phys.psf.synth_indices(&active)?;
    imaging::write_psf_outputs(&a.common.out, &kappa, phys.psf.pixel_pitch())?;
    let mag = kappa.abs();
    let peak = (0..mag.len()).max_by(|&i, &j| mag[i].total_cmp(&mag[j])).unwrap_or(0);
    let n = phys.n();
    let m = phys.metrics(&kappa)?;
    println!("elements: {}", active.len());
    println!("peak pixel: ({}, {}) of {n}x{n}", peak / n, peak % n);
    println!(
        "L_PSF {:.4}  contrast {:.4}  SLR_q {:.4}  SLR_i {:.4}  mean {:.4}",
        m.psf,
        m.contrast,
        m.slr_q,
        m.slr_i,
        m.mean()
    );
    Ok(())
}

fn first_scatterer(cfg: &RunConfig, n: usize) -> Result<Vec<f64>, Failure> {
    let set = DataSource::resolve(cfg.data.path.as_deref()).load()?;
    let img = set
        .images
        .first()
        .ok_or_else(|| Failure::Core(Error::Config("dataset is empty".into())))?;
    Ok(forward::genscat_u8(img, set.rows, set.cols, n)?)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Outcome {
    let t0 = Instant::now();
    let cfg = resolve(&a.common)?;
    let mut check = GradCheckConfig {
        full_threshold: 16,
        seed: cfg.seed,
        ..GradCheckConfig::default()
    };
    if let Some(e) = a.eps {
        check.eps = e;
    }
    if let Some(t) = a.tol {
        check.tol = t;
    }
    let scat = first_scatterer(&cfg, cfg.grid.crop)?;
    let report = pipeline::gradient_check(&cfg, &scat, &check)?;
    println!("{:<20} {:>6} {:>12}", "parameter", "probes", "max rel err");
    for p in &report.params {
        println!("{:<20} {:>6} {:>12.3e}", p.name, p.probes, p.max_rel_err);
    }
    println!(
        "max relative error {:.3e} (tol {:.0e}) in {:.1} s",
        report.max_rel_err(),
        report.tol,
        t0.elapsed().as_secs_f64()
    );
    if report.passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Failure::Numeric("gradcheck failed".into()))
    }
}

fn cmd_search(a: SearchArgs) -> Outcome {
    let cfg = resolve(&a.common)?;
    let tries = a.tries.unwrap_or(cfg.eval.best_of_tries);
    if tries == 0 {
        return Err(Failure::Usage("--tries must be at least 1".into()));
    }
    let phys = Physics::<f64>::from_config(&cfg)?;
    let best = evalx::best_of_n(&phys, cfg.mask.k, tries, cfg.seed, cfg.execution)?;
    let row = ConfigRow {
        name: format!("best-of-{tries}"),
        elements: best.elements.clone(),
        metrics: best.metrics,
    };
    evalx::write_table(&a.common.out.join("baseline_search.csv"), std::slice::from_ref(&row))?;
    print_rows(std::slice::from_ref(&row));
    println!(
        "winning try {} (seed {})",
        best.index,
        evalx::draw_seed(cfg.seed, best.index)
    );
    Ok(())
}

fn load_image(path: &Path, index: usize) -> Result<(Vec<u8>, usize, usize), Failure> {
    let bytes = std::fs::read(path).map_err(Error::from)?;
    if bytes.starts_with(&data::IMAGE_MAGIC.to_be_bytes()) {
        let set = data::parse_idx_images(&bytes)?;
        let n = set.len();
        let img = set
            .images
            .into_iter()
            .nth(index)
            .ok_or_else(|| Failure::Usage(format!("--index {index} out of range ({n} images)")))?;
        return Ok((img, set.rows, set.cols));
    }
    Ok(imaging::decode_gray(&bytes)?)
}

fn cmd_export(a: ExportArgs) -> Outcome {
    let (cfg, model) = resolve_from_checkpoint(&a.common, &a.checkpoint)?;
    let (pixels, rows, cols) = load_image(&a.image, a.index)?;
    let phys = Physics::<f32>::from_config(&cfg)?;
    let n = phys.n();
    let scat: Vec<f32> = forward::genscat_u8(&pixels, rows, cols, n)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let mut g = Graph::<f32>::new();
    let leaves = model.leaves(&mut g, |_| false);
    let vars = ModelVars::new(leaves, cfg.recon.width);
    let tau = cfg.mask.temperature.tau_end as f32;
    let m = mask::mask_forward(&mut g, vars.logits(), tau, false)?;
    let kappa = phys.psf.synth(&mut g, m.weights)?;
    let t = pipeline::item_terms(&mut g, &phys, kappa, &vars, &scat)?;
    let y = g.cvalue(t.yc).abs();
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let ihat: &Tensor<f32> = g.value(t.ihat);
    let panels = vec![to64(&scat), to64(&y), to64(ihat.data())];
    std::fs::create_dir_all(&a.common.out).map_err(Error::from)?;
    let path = a.common.out.join("triptych.png");
    imaging::write_triptych(&path, n, &panels)?;
    println!("L_conv {:.6}  L_rec {:.6}", g.item(t.conv), g.item(t.rec));
    println!("wrote {}", path.display());
    Ok(())
}
