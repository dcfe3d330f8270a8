//! Command-line driver: dataset generation, base-model training,
//! calibration, evaluation, hyperparameter sweeps, and theory verification.
//!
//! Every stage is a pure function of its input files, flags, and `--seed`;
//! re-running a stage rewrites its outputs byte-identically. Exit codes:
//! 0 success, 1 usage error, 2 data/schema error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::calibrators::{
    fit_dirichlet, fit_linear_scaling, fit_ms_odir, fit_temperature_grid, fit_temperature_nll,
    FitConfig, LinearCalib, LogitSet, ScalingFamily,
};
use crate::clamping::{
    apply_clamping, fit_neural_clamping, sweep_hyper, ClampHyper, ClampParams, DeltaInit,
};
use crate::data::{gen_synthetic_split_seed, read_dataset, split_batch, write_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::files;
use crate::metrics::{ece, metric_report, softmax_rows, ProbBatch};
use crate::network::{train_base_classifier, Batch, LayerPlan, Network};
use crate::tensor::Tensor;
use crate::theory::{
    bruteforce_box_argmax, first_order_check, first_order_test_net,
    sample_feasible_lemma_instance, verify_lemma1, FirstOrderReport, Lemma1Report, Lemma1Status,
};

#[derive(Parser)]
#[command(
    name = "nclamp",
    version,
    about = "Confidence calibration for fixed classifiers: joint input-output clamping, post-hoc baselines, and calibration metrics",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded Gaussian-mixture dataset (binary NCDS format).
    GenData(GenDataArgs),
    /// Train and freeze a dense relu classifier on a dataset.
    TrainBase(TrainBaseArgs),
    /// Fit a calibrator on the calibration half of a dataset.
    Calibrate(CalibrateArgs),
    /// Evaluate calibration metrics on the held-out half.
    Evaluate(EvaluateArgs),
    /// Grid-sweep clamping hyperparameters, keeping the lowest-ECE cell.
    Sweep(SweepArgs),
    /// Numerically verify the entropy-maximization and first-order claims.
    VerifyTheory(VerifyTheoryArgs),
    /// Export reliability bins as CSV for the held-out half.
    Reliability(ReliabilityArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Std of the per-class mean positions.
    #[arg(long, default_value_t = 1.0)]
    class_sep: f64,
    /// Std of samples around their class mean.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Probability of flipping a label to a random other class.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long)]
    seed: u64,
    /// Seed for the sample draws only; defaults to --seed. Two datasets
    /// sharing --seed but differing here come from the same mixture, which
    /// is how a training file and a held-out calibration/evaluation file
    /// are produced.
    #[arg(long)]
    sample_seed: Option<u64>,
}

#[derive(Args)]
struct TrainBaseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated hidden widths, relu between layers.
    #[arg(long, default_value = "32,32", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 800)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    TempNll,
    TempGrid,
    Vector,
    Matrix,
    MsOdir,
    DirOdir,
    ClampCe,
    ClampFl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitKind {
    Random,
    DataDriven,
}

#[derive(Args)]
struct SplitFlags {
    /// Fraction of the dataset used for calibration (rest is held out).
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitFlags,
    /// Equal-width bin count for ECE-based selection.
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Gradient-descent epochs (clamp methods default to 100).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Focal focusing parameter for clamp-fl.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Weight-decay strength for clamp methods.
    #[arg(long, default_value_t = 0.0)]
    lam: f64,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    init: InitKind,
    /// Feasible input box for the data-driven init.
    #[arg(long, default_value_t = 0.0)]
    box_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    box_hi: f64,
    /// Regularization weights tried by ms-odir / dir-odir.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.01,0.1,1,10,100,1000,10000"
    )]
    odir_lambdas: Vec<f64>,
    /// Grid bounds/resolution for temp-grid.
    #[arg(long, default_value_t = 0.0)]
    grid_lo: f64,
    #[arg(long, default_value_t = 5.0)]
    grid_hi: f64,
    #[arg(long, default_value_t = 0.001)]
    grid_step: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    None,
    InputOnly,
    OutputOnly,
    Joint,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output-space calibrator JSON (temperature/vector/matrix/dirichlet).
    #[arg(long)]
    calibrator: Option<PathBuf>,
    /// Clamp parameters JSON ({"delta", "T"}).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Ablation mode for --params; defaults to joint.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitFlags,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, default_value_t = 15)]
    ranges: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2,2.25,2.5,2.75,3"
    )]
    gamma_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
    lambda_grid: Vec<f64>,
    /// CSV destination for the full sweep table.
    #[arg(long)]
    out_table: PathBuf,
    /// JSON destination for the winning cell's clamp parameters.
    #[arg(long)]
    out_params: PathBuf,
    #[command(flatten)]
    split: SplitFlags,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    init: InitKind,
    #[arg(long, default_value_t = 0.0)]
    box_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    box_hi: f64,
}

#[derive(Args)]
struct VerifyTheoryArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Number of random feasible instances per check.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Solver tolerance for the entropy-maximization oracle.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Pass threshold on oracle-vs-softmax max deviation.
    #[arg(long, default_value_t = 1e-3)]
    dev_tol: f64,
    /// Pass threshold on constraint residuals.
    #[arg(long, default_value_t = 1e-8)]
    residual_tol: f64,
}

#[derive(Args)]
struct ReliabilityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    calibrator: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitFlags,
    #[arg(long, default_value_t = 15)]
    bins: usize,
}

/// Parses `argv` and runs the selected command, returning the process exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are successes; anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::GenData(args) => run_gen_data(&args),
        Command::TrainBase(args) => run_train_base(&args),
        Command::Calibrate(args) => run_calibrate(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Sweep(args) => run_sweep(&args),
        Command::VerifyTheory(args) => run_verify_theory(&args),
        Command::Reliability(args) => run_reliability(&args),
    };
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_gen_data(args: &GenDataArgs) -> Result<String> {
    let spec = SyntheticSpec {
        class_count: args.classes,
        input_dim: args.dim,
        samples: args.samples,
        class_sep: args.class_sep,
        spread: args.spread,
        label_noise: args.label_noise,
    };
    let sample_seed = args.sample_seed.unwrap_or(args.seed);
    let batch = gen_synthetic_split_seed(&spec, args.seed, sample_seed)?;
    write_dataset(&args.out, &batch, args.classes)?;
    Ok(format!(
        "gen-data: wrote {} (n={}, m={}, K={}, seed={}, sample_seed={})",
        args.out.display(),
        args.samples,
        args.dim,
        args.classes,
        args.seed,
        sample_seed
    ))
}

fn run_train_base(args: &TrainBaseArgs) -> Result<String> {
    let (batch, k) = read_dataset(&args.data)?;
    let m = batch.features.cols();
    if args.hidden.is_empty() {
        return Err(Error::Usage("--hidden needs at least one width".into()));
    }
    let mut arch = Vec::new();
    let mut cur = m;
    for &width in &args.hidden {
        arch.push(LayerPlan::Dense {
            in_dim: cur,
            out_dim: width,
        });
        arch.push(LayerPlan::Relu);
        cur = width;
    }
    arch.push(LayerPlan::Dense {
        in_dim: cur,
        out_dim: k,
    });
    let net = train_base_classifier(&batch, &arch, args.epochs, args.lr, args.seed)?;
    let probs = softmax_rows(&net.forward(&batch.features)?, 1.0)?;
    let p = ProbBatch::new(probs, batch.labels.clone())?;
    let acc = crate::metrics::accuracy(&p);
    files::save_model(&args.out, &net)?;
    Ok(format!(
        "train-base: wrote {} (train accuracy {:.4}, epochs={}, seed={})",
        args.out.display(),
        acc,
        args.epochs,
        args.seed
    ))
}

fn load_split(
    model: &Path,
    data: &Path,
    split: &SplitFlags,
) -> Result<(Network, Batch, Batch)> {
    let net = files::load_model(model)?;
    let (batch, k) = read_dataset(data)?;
    if batch.features.cols() != net.input_dim() || k != net.class_count() {
        return Err(Error::Schema(format!(
            "dataset is {}-dim/{}-class, model expects {}/{}",
            batch.features.cols(),
            k,
            net.input_dim(),
            net.class_count()
        )));
    }
    let (calib, test) = split_batch(&batch, split.split, split.seed)?;
    Ok((net, calib, test))
}

fn clamp_hyper_from(
    m: usize,
    gamma: f64,
    lam: f64,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    init: InitKind,
    box_lo: f64,
    box_hi: f64,
    seed: u64,
) -> ClampHyper {
    ClampHyper {
        gamma,
        lambda: lam,
        learning_rate: lr,
        batch_size,
        epochs,
        init: match init {
            InitKind::Random => DeltaInit::Random { seed },
            InitKind::DataDriven => DeltaInit::DataDriven,
        },
        alpha: vec![box_lo; m],
        beta: vec![box_hi; m],
        freeze_delta: false,
    }
}

fn run_calibrate(args: &CalibrateArgs) -> Result<String> {
    let (net, calib, _) = load_split(&args.model, &args.data, &args.split)?;
    if calib.len() < net.class_count() {
        eprintln!(
            "warning: calibration half has {} samples for {} classes",
            calib.len(),
            net.class_count()
        );
    }
    let logits = LogitSet::new(net.forward(&calib.features)?, calib.labels.clone())?;
    let cfg = FitConfig {
        learning_rate: args.lr,
        epochs: args.epochs.unwrap_or(1000),
        odir_lambdas: args.odir_lambdas.clone(),
        selection_bins: args.bins,
    };
    let summary = match args.method {
        Method::TempNll
        | Method::TempGrid
        | Method::Vector
        | Method::Matrix
        | Method::MsOdir
        | Method::DirOdir => {
            let fitted = match args.method {
                Method::TempNll => fit_temperature_nll(&logits, &cfg)?,
                Method::TempGrid => fit_temperature_grid(
                    &logits,
                    args.grid_lo,
                    args.grid_hi,
                    args.grid_step,
                    args.bins,
                )?,
                Method::Vector => fit_linear_scaling(&logits, ScalingFamily::Vector, None, &cfg)?,
                Method::Matrix => fit_linear_scaling(&logits, ScalingFamily::Matrix, None, &cfg)?,
                Method::MsOdir => fit_ms_odir(&logits, &cfg)?,
                Method::DirOdir => fit_dirichlet(&logits, &cfg)?,
                _ => unreachable!(),
            };
            files::save_calibrator(&args.out, &fitted)?;
            let probs = fitted.apply(&logits.logits)?;
            let p = ProbBatch::new(probs, calib.labels.clone())?;
            let (e, _) = ece(&p, args.bins)?;
            match &fitted {
                LinearCalib::Temperature { t } => format!(
                    "calibrate: {} -> {} (T={t}, calib ECE {e:.4})",
                    method_name(args.method),
                    args.out.display()
                ),
                other => format!(
                    "calibrate: {} -> {} (family {}, calib ECE {e:.4})",
                    method_name(args.method),
                    args.out.display(),
                    other.family()
                ),
            }
        }
        Method::ClampCe | Method::ClampFl => {
            let gamma = if args.method == Method::ClampCe {
                0.0
            } else {
                args.gamma
            };
            let hyper = clamp_hyper_from(
                net.input_dim(),
                gamma,
                args.lam,
                args.lr,
                args.batch_size,
                args.epochs.unwrap_or(100),
                args.init,
                args.box_lo,
                args.box_hi,
                args.split.seed,
            );
            let fit = fit_neural_clamping(&net, &calib, &hyper, args.split.seed)?;
            files::save_clamp_params(&args.out, &fit.params)?;
            let probs = apply_clamping(&net, &fit.params, &calib.features)?;
            let p = ProbBatch::new(probs, calib.labels.clone())?;
            let (e, _) = ece(&p, args.bins)?;
            format!(
                "calibrate: {} -> {} (T={:.4}, |delta|={:.4}, calib ECE {e:.4})",
                method_name(args.method),
                args.out.display(),
                fit.params.temperature,
                fit.params.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
            )
        }
    };
    Ok(summary)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::TempNll => "temp-nll",
        Method::TempGrid => "temp-grid",
        Method::Vector => "vector",
        Method::Matrix => "matrix",
        Method::MsOdir => "ms-odir",
        Method::DirOdir => "dir-odir",
        Method::ClampCe => "clamp-ce",
        Method::ClampFl => "clamp-fl",
    }
}

/// Resolves the evaluated probabilities for the test half according to the
/// calibrator/params/mode flags.
fn evaluated_probs(
    net: &Network,
    test: &Batch,
    calibrator: &Option<PathBuf>,
    params: &Option<PathBuf>,
    mode: Option<Mode>,
) -> Result<(Tensor, &'static str)> {
    if calibrator.is_some() && params.is_some() {
        return Err(Error::Usage(
            "--calibrator and --params are mutually exclusive".into(),
        ));
    }
    if let Some(path) = calibrator {
        if mode.is_some() {
            return Err(Error::Usage(
                "--mode applies to --params; an output calibrator is always output-only".into(),
            ));
        }
        let calib = files::load_calibrator(path)?;
        let z = net.forward(&test.features)?;
        return Ok((calib.apply(&z)?, "output-only"));
    }
    if let Some(path) = params {
        let p = files::load_clamp_params(path)?;
        let mode = mode.unwrap_or(Mode::Joint);
        let effective = match mode {
            Mode::None => ClampParams::identity(p.delta.len()),
            Mode::InputOnly => ClampParams::new(p.delta.clone(), 1.0)?,
            Mode::OutputOnly => ClampParams::new(vec![0.0; p.delta.len()], p.temperature)?,
            Mode::Joint => p,
        };
        let probs = apply_clamping(net, &effective, &test.features)?;
        return Ok((probs, mode_name(mode)));
    }
    match mode {
        None | Some(Mode::None) => {}
        Some(_) => {
            return Err(Error::Usage(
                "modes other than 'none' need --params".into(),
            ))
        }
    }
    let z = net.forward(&test.features)?;
    Ok((softmax_rows(&z, 1.0)?, "none"))
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::None => "none",
        Mode::InputOnly => "input-only",
        Mode::OutputOnly => "output-only",
        Mode::Joint => "joint",
    }
}

fn run_evaluate(args: &EvaluateArgs) -> Result<String> {
    let (net, _, test) = load_split(&args.model, &args.data, &args.split)?;
    let (probs, mode) =
        evaluated_probs(&net, &test, &args.calibrator, &args.params, args.mode)?;
    let p = ProbBatch::new(probs, test.labels.clone())?;
    let report = metric_report(&p, args.bins, args.ranges)?;
    files::save_metric_report(&args.out, &report)?;
    Ok(format!(
        "evaluate: mode={mode} acc={:.4} entropy={:.4} ece={:.4} ace={:.4} sce={:.4} nll={:.4} -> {}",
        report.accuracy,
        report.mean_entropy,
        report.ece,
        report.ace,
        report.sce,
        report.nll,
        args.out.display()
    ))
}

fn run_sweep(args: &SweepArgs) -> Result<String> {
    let (net, calib, _) = load_split(&args.model, &args.data, &args.split)?;
    let base = clamp_hyper_from(
        net.input_dim(),
        0.0,
        0.0,
        args.lr,
        args.batch_size,
        args.epochs,
        args.init,
        args.box_lo,
        args.box_hi,
        args.split.seed,
    );
    let sweep = sweep_hyper(
        &net,
        &calib,
        &args.gamma_grid,
        &args.lambda_grid,
        &base,
        args.bins,
        args.split.seed,
    )?;
    std::fs::write(&args.out_table, sweep.table_csv())?;
    files::save_clamp_params(&args.out_params, &sweep.params)?;
    let best = sweep
        .table
        .iter()
        .find(|r| r.gamma == sweep.best_gamma && r.lambda == sweep.best_lambda)
        .expect("winning cell is in the table");
    Ok(format!(
        "sweep: best gamma={} lambda={} (calib ECE {:.4}) -> {}, {}",
        sweep.best_gamma,
        sweep.best_lambda,
        best.ece,
        args.out_table.display(),
        args.out_params.display()
    ))
}

/// One Lemma-1 instance in the theory report.
#[derive(Debug, Serialize, Deserialize)]
pub struct Lemma1Instance {
    pub index: usize,
    pub report: Lemma1Report,
    pub passed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoxArgmaxSummary {
    pub instances: usize,
    pub mismatches: usize,
    pub passed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FirstOrderSummary {
    pub report: FirstOrderReport,
    pub gap_ratios: Vec<f64>,
    pub passed: bool,
}

/// Combined pass/fail report emitted by `verify-theory`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TheoryReport {
    pub lemma1: Vec<Lemma1Instance>,
    pub box_argmax: BoxArgmaxSummary,
    pub first_order: FirstOrderSummary,
    pub all_passed: bool,
}

/// Runs both theory checks and assembles the report. Shared by the CLI and
/// the acceptance suite.
pub fn build_theory_report(
    seed: u64,
    instances: usize,
    tol: f64,
    dev_tol: f64,
    residual_tol: f64,
) -> Result<TheoryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lemma1 = Vec::with_capacity(instances);
    for index in 0..instances {
        let (z, labels) = sample_feasible_lemma_instance(5, 3, &mut rng);
        let report = verify_lemma1(&z, &labels, tol)?;
        let passed = report.meets(dev_tol, residual_tol)
            && matches!(report.status, Lemma1Status::Converged);
        lemma1.push(Lemma1Instance {
            index,
            report,
            passed,
        });
    }

    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut mismatches = 0;
    for _ in 0..instances {
        let m = 1 + rng.random_range(0..8usize);
        let g: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
        let alpha = vec![0.0; m];
        let beta = vec![1.0; m];
        let lower: Vec<f64> = (0..m)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardUniform))
            .collect();
        let upper: Vec<f64> = lower
            .iter()
            .map(|&l| l + (1.0 - l) * rng.sample::<f64, _>(StandardUniform))
            .collect();
        let brute = bruteforce_box_argmax(&g, &alpha, &beta, &lower, &upper)?;
        let (_, closed) = crate::clamping::init_from_gradient(&g, &alpha, &beta, &lower, &upper);
        if brute != closed {
            mismatches += 1;
        }
    }
    let box_argmax = BoxArgmaxSummary {
        instances,
        mismatches,
        passed: mismatches == 0,
    };

    let (net, batch, direction) = first_order_test_net(seed.wrapping_add(1), 4, 3);
    let scales: Vec<f64> = (0..8).map(|i| 1e-2 / 2f64.powi(i)).collect();
    let report = first_order_check(&net, &batch, &direction, 1.5, &scales)?;
    let gap_ratios = report.gap_ratios();
    let checked = &gap_ratios[gap_ratios.len().saturating_sub(4)..];
    let fo_passed = checked.iter().all(|&r| (0.15..=0.35).contains(&r));
    let first_order = FirstOrderSummary {
        report,
        gap_ratios,
        passed: fo_passed,
    };

    let all_passed =
        lemma1.iter().all(|i| i.passed) && box_argmax.passed && first_order.passed;
    Ok(TheoryReport {
        lemma1,
        box_argmax,
        first_order,
        all_passed,
    })
}

fn run_verify_theory(args: &VerifyTheoryArgs) -> Result<String> {
    let report = build_theory_report(
        args.seed,
        args.instances,
        args.tol,
        args.dev_tol,
        args.residual_tol,
    )?;
    files::save_report(&args.out, &report)?;
    let lemma_passed = report.lemma1.iter().filter(|i| i.passed).count();
    let summary = format!(
        "verify-theory: lemma1 {}/{} passed, box-argmax {}, first-order {} -> {}",
        lemma_passed,
        report.lemma1.len(),
        if report.box_argmax.passed { "ok" } else { "FAILED" },
        if report.first_order.passed { "ok" } else { "FAILED" },
        args.out.display()
    );
    if report.all_passed {
        Ok(summary)
    } else {
        println!("{summary}");
        Err(Error::Numerical("theory verification failed".into()))
    }
}

fn run_reliability(args: &ReliabilityArgs) -> Result<String> {
    let (net, _, test) = load_split(&args.model, &args.data, &args.split)?;
    let (probs, mode) =
        evaluated_probs(&net, &test, &args.calibrator, &args.params, args.mode)?;
    let p = ProbBatch::new(probs, test.labels.clone())?;
    let (e, report) = ece(&p, args.bins)?;
    std::fs::write(&args.out, report.to_csv())?;
    Ok(format!(
        "reliability: mode={mode} ece={e:.4} bins={} -> {}",
        args.bins,
        args.out.display()
    ))
}
