//! The `mtd` command line. Every numeric flag may also come from a TOML run
//! configuration given with `--config`; flags take precedence.
//!
//! Exit codes: 0 success, 2 usage or bad parameters, 3 numerical failure,
//! 4 I/O or malformed files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::em::{self, GammaSchedule};
use crate::error::{MtdError, Result};
use crate::eval::{self, derive_seed, SweepPlan, SweepPrior};
use crate::io::{self, GridFile, RunConfig};
use crate::likelihood::TablePath;
use crate::plot;
use crate::prior::{self, GaussianLaw, GaussianPrior, MlpScoreNet, NetPrior, OptimizerKind, ScorePrior, VpSchedule, ZeroPrior};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "mtd", version, about = "Multi-target detection with score-based priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plant rotated copies of a target in a noisy measurement.
    Synth(SynthArgs),
    /// Draw a target from the Gaussian image law.
    MakeTarget(MakeTargetArgs),
    /// Train a score network by denoising score matching.
    TrainPrior(TrainArgs),
    /// Estimate the target from a measurement by approximate EM.
    Reconstruct(ReconstructArgs),
    /// Compare EM with and without a prior over a range of SNRs.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, conflicts_with = "sigma")]
    pub snr: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub area: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeTargetArgs {
    #[arg(long = "L", default_value_t = 5)]
    pub l: usize,
    /// Seed of the law; the mean is drawn uniformly from {0,..,4}.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this mean instead of drawing one.
    #[arg(long)]
    pub mean: Option<PathBuf>,
    /// Which draw from the law to write.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the law mean.
    #[arg(long)]
    pub mean_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training rows as a grid file, one flattened image per row.
    #[arg(long, conflicts_with_all = ["mean", "law_seed"])]
    pub dataset: Option<PathBuf>,
    /// Draw training data from N(mean, I) with this mean grid.
    #[arg(long, conflicts_with = "law_seed")]
    pub mean: Option<PathBuf>,
    /// Draw training data from the Gaussian law with this seed.
    #[arg(long)]
    pub law_seed: Option<u64>,
    #[arg(long = "L", default_value_t = 5)]
    pub l: usize,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub no_time: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the weight path with extension `loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub measurement: PathBuf,
    /// `none`, `gaussian:<mean-grid>` or `net:<weights>`.
    #[arg(long, default_value = "none")]
    pub prior: String,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// A number or `linear`.
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub table_path: Option<String>,
    #[arg(long)]
    pub noiseless_sigma_rel: Option<f64>,
    #[arg(long, default_value_t = prior::DEFAULT_T_EVAL)]
    pub t_eval: f64,
    /// Initial estimate; otherwise drawn from U[0, 1] with `--init-seed`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Ground-truth target; the final error is printed when given.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the estimate path with extension `log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Record wall time per iteration (makes the log run-dependent).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub snrs: Option<Vec<f64>>,
    #[arg(long)]
    pub targets: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `net` or `exact`.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub timing: bool,
}

pub fn exit_code(err: &MtdError) -> i32 {
    if err.is_io() {
        4
    } else if err.is_numeric() {
        3
    } else {
        2
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::MakeTarget(a) => make_target_cmd(a),
        Command::TrainPrior(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?.measurement;
    let target = io::read_image(&a.target)?;
    cfg.l = target.side();
    if let Some(l) = a.l {
        if l != target.side() {
            return Err(MtdError::InvalidParameter(format!(
                "--L {l} but the target is {0}x{0}",
                target.side()
            )));
        }
    }
    if let Some(s) = a.snr {
        cfg.snr = Some(s);
        cfg.sigma = None;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = Some(s);
        cfg.snr = None;
    }
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.density = a.density.unwrap_or(cfg.density);
    cfg.area = a.area.or(cfg.area);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let spec = cfg.to_spec()?;
    let m = synth::synthesize(&spec, &target)?;
    io::write_measurement(&a.out, &m)?;
    println!("{} occurrences, sigma {}", m.truth.len(), m.sigma);
    Ok(())
}

fn make_target_cmd(a: MakeTargetArgs) -> Result<()> {
    let plan = SweepPlan {
        l: a.l,
        seed: a.seed,
        ..SweepPlan::default()
    };
    let law = match &a.mean {
        Some(p) => GaussianLaw::new(io::read_image(p)?.into_values()),
        None => plan.law(),
    };
    let target = plan.target(&law, a.index);
    io::write_image(&a.out, &target)?;
    if let Some(p) = &a.mean_out {
        io::write_image(p, &crate::Grid::from_vec(law.side(), law.mean().to_vec())?)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let mut train_cfg = cfg.train.clone();
    let mut net_cfg = cfg.network.clone();
    train_cfg.steps = a.steps.unwrap_or(train_cfg.steps);
    train_cfg.batch_size = a.batch_size.unwrap_or(train_cfg.batch_size);
    train_cfg.learning_rate = a.lr.unwrap_or(train_cfg.learning_rate);
    if let Some(o) = &a.optimizer {
        train_cfg.optimizer = match o.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(MtdError::InvalidParameter(format!("unknown optimizer '{other}'"))),
        };
    }
    let seed = a.seed.unwrap_or(train_cfg.seed);
    net_cfg.hidden = a.hidden.unwrap_or(net_cfg.hidden);
    net_cfg.samples = a.samples.unwrap_or(net_cfg.samples);
    if a.no_time {
        net_cfg.time_conditioned = false;
    }

    let data = if let Some(p) = &a.dataset {
        GridFile::read(p)?.into_array()
    } else {
        let law = match (&a.mean, a.law_seed) {
            (Some(p), _) => GaussianLaw::new(io::read_image(p)?.into_values()),
            (None, Some(s)) => SweepPlan {
                l: a.l,
                seed: s,
                ..SweepPlan::default()
            }
            .law(),
            (None, None) => {
                return Err(MtdError::InvalidParameter(
                    "one of --dataset, --mean or --law-seed is required".into(),
                ))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4]));
        law.sample_rows(net_cfg.samples, &mut rng)
    };
    let d = data.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[5]));
    let net = MlpScoreNet::new(&[d, net_cfg.hidden, net_cfg.hidden, d], net_cfg.time_conditioned, &mut rng)?;
    train_cfg.seed = derive_seed(seed, &[6]);
    let out = prior::train(net, data.view(), &VpSchedule::default(), &train_cfg)?;
    io::write_weights(&a.out, &out.net)?;

    let loss_path = a.loss_csv.unwrap_or_else(|| with_ext(&a.out, "loss.csv"));
    let mut w = csv::Writer::from_path(&loss_path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in out.history.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| MtdError::io(&loss_path, e))?;
    if let Some(last) = out.history.last() {
        println!("final loss {last}");
    }
    Ok(())
}

fn parse_prior(spec: &str, t_eval: f64) -> Result<Box<dyn ScorePrior>> {
    if spec == "none" {
        return Ok(Box::new(ZeroPrior));
    }
    if let Some(p) = spec.strip_prefix("gaussian:") {
        return Ok(Box::new(GaussianPrior::new(io::read_image(Path::new(p))?.into_values())));
    }
    if let Some(p) = spec.strip_prefix("net:") {
        return Ok(Box::new(NetPrior::new(io::read_weights(Path::new(p))?).with_t_eval(t_eval)));
    }
    Err(MtdError::InvalidParameter(format!(
        "prior must be none, gaussian:<file> or net:<file>, got '{spec}'"
    )))
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?.em;
    cfg.max_iters = a.iters.unwrap_or(cfg.max_iters);
    cfg.inner_steps = a.inner_steps.unwrap_or(cfg.inner_steps);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    cfg.stop_eps = a.eps.unwrap_or(cfg.stop_eps);
    cfg.rotations = a.k.unwrap_or(cfg.rotations);
    cfg.noiseless_sigma_rel = a.noiseless_sigma_rel.unwrap_or(cfg.noiseless_sigma_rel);
    if let Some(g) = &a.gamma {
        cfg.gamma = g.parse::<GammaSchedule>()?;
    }
    if let Some(p) = &a.table_path {
        cfg.table_path = p.parse::<TablePath>()?;
    }
    cfg.time_limit = a.time_limit.map(Duration::from_secs_f64);

    let measurement = io::read_measurement(&a.measurement)?;
    let l = measurement.spec.l;
    let prior = parse_prior(&a.prior, a.t_eval)?;
    let init = match &a.init {
        Some(p) => io::read_image(p)?,
        None => em::uniform_init(l, a.init_seed),
    };
    let state = em::run(&measurement, &init, prior.as_ref(), &cfg)?;
    io::write_image(&a.out, &state.estimate)?;
    let log_path = a.log.unwrap_or_else(|| with_ext(&a.out, "log.csv"));
    em::write_log_csv(&state.log, &log_path, a.timing)?;
    println!("iterations {} converged {}", state.iterations, state.converged);
    if let Some(p) = &a.truth {
        let truth = io::read_image(p)?;
        println!("error {}", eval::relative_error(&truth, &state.estimate, cfg.rotations)?);
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let mut plan = load_config(&a.config)?.sweep;
    if let Some(s) = a.snrs {
        plan.snrs = s;
    }
    plan.targets = a.targets.unwrap_or(plan.targets);
    plan.trials = a.trials.unwrap_or(plan.trials);
    plan.seed = a.seed.unwrap_or(plan.seed);
    plan.train.steps = a.steps.unwrap_or(plan.train.steps);
    plan.em.max_iters = a.iters.unwrap_or(plan.em.max_iters);
    if let Some(g) = &a.gamma {
        plan.em.gamma = g.parse::<GammaSchedule>()?;
    }
    if let Some(p) = &a.prior {
        plan.prior = match p.as_str() {
            "net" => SweepPrior::Net,
            "exact" => SweepPrior::Exact,
            other => return Err(MtdError::InvalidParameter(format!("unknown sweep prior '{other}'"))),
        };
    }
    plan.validate()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| MtdError::io(&a.out_dir, e))?;

    let law = plan.law();
    let prior = plan.build_prior(&law)?;
    let rows = eval::run_sweep(&plan, &law, prior.as_ref())?;
    let summary = eval::summarize(&rows);
    eval::write_rows_csv(&rows, &a.out_dir.join("rows.csv"), a.timing)?;
    eval::write_summary_csv(&summary, &a.out_dir.join("summary.csv"))?;
    plot::write_error_plot(&summary, &a.out_dir.join("error_vs_snr.svg"))?;
    for s in &summary {
        println!("snr {} {} mean {} std {} n {}", s.snr, s.method.name(), s.mean, s.std, s.n);
    }
    let failed = rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        log::warn!("{failed} sweep runs failed");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&MtdError::InvalidParameter("x".into())), 2);
        assert_eq!(exit_code(&MtdError::ZeroImage), 3);
        assert_eq!(exit_code(&MtdError::MissingMetadata("x".into())), 4);
    }

    #[test]
    fn missing_target_is_usage_error() {
        assert_eq!(run_from_args(["mtd", "synth", "--out", "x.grid", "--snr", "1"]), 2);
    }

    #[test]
    fn prior_choices() {
        assert!(parse_prior("none", 0.01).unwrap().is_uninformative());
        assert!(parse_prior("laplace", 0.01).is_err());
    }
}
