//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical degeneracy.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{
    calibrate_none, calibrate_plts, evaluate_calibrated, CalibrationResult, Polarity, Target, TsmReference,
    UpaReference,
};
use crate::error::{Error, Result};
use crate::experiment::{load_model, summarize, write_rows_csv, Experiment, ExperimentConfig, MethodName};
use crate::metrics::{auc, roc_curve, sensitivity, specificity, write_roc_csv};
use crate::mil::{train_predictor, Cohort, TrainConfig};
use crate::synthdata::{generate_cohort, CohortSpec};

#[derive(Debug, Parser)]
#[command(name = "tsm", version, about = "Sensitivity-preserving calibration of MIL slide classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort as JSON Lines.
    Gen(GenArgs),
    /// Fit a Chowder predictor head on a labeled cohort.
    Train(TrainArgs),
    /// Fit a calibration (tsm, upa, plts+, plts-, none).
    Calibrate(CalibrateArgs),
    /// Evaluate a calibrated model on a labeled cohort.
    Eval(EvalArgs),
    /// Run the repeated-sampling calibration experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Cohort spec (JSON); defaults to the desk-scale spec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_slides: Option<usize>,
    #[arg(long)]
    pub prevalence: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub method: String,
    /// Reference (training) cohort.
    #[arg(long)]
    pub train: PathBuf,
    /// Calibration cohort from the deployment site.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub sigma: f64,
    /// Calibration prevalence for TSM; defaults to the labeled-positive fraction of the calibration set.
    #[arg(long)]
    pub omega_c: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// ROC curve of calibrated scores (threshold,fpr,tpr).
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Sensitivity against threshold on a 0.00..=1.00 grid, before and after calibration.
    #[arg(long)]
    pub sens_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the base seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Experiment(a) => cmd_experiment(&a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<CohortSpec>(&text)
                .map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?
        }
        None => CohortSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n_slides {
        spec.n_slides = n;
    }
    if let Some(p) = args.prevalence {
        spec.prevalence = p;
    }
    let cohort = generate_cohort(&spec)?;
    cohort.write_jsonl(&args.out)?;
    println!(
        "wrote {} slides to {} (empirical prevalence {:.4})",
        cohort.len(),
        args.out.display(),
        cohort.prevalence().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cohort = Cohort::read_jsonl(&args.cohort)?;
    let config = TrainConfig {
        k: args.k,
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: args.seed,
    };
    let (model, report) = train_predictor(&cohort, &config)?;
    let scores = cohort
        .slides()
        .iter()
        .map(|s| model.predict(s))
        .collect::<Result<Vec<_>>>()?;
    let labels = cohort.labels().expect("trainer checked labels");
    let train_auc = auc(&scores, &labels)?;
    write_json(&args.out, &model)?;
    println!("final loss {:.6}", report.final_loss());
    println!("training AUC {train_auc:.6}");
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let method = MethodName::parse(&args.method)?;
    let train = Cohort::read_jsonl(&args.train)?;
    let calib = Cohort::read_jsonl(&args.calib)?;
    let model = load_model(&args.model)?;
    let target = Target::sensitivity(args.sigma);

    let result = match method {
        MethodName::Tsm => TsmReference::new(&train, &model)?.calibrate(&calib, args.omega_c, target)?,
        MethodName::Upa => UpaReference::new(&train, &model)?.calibrate(&calib, &model, target)?,
        MethodName::PltsPos | MethodName::PltsNeg => {
            let positive = method == MethodName::PltsPos;
            let keep = calib
                .slides()
                .iter()
                .filter(|s| if positive { s.is_positive() } else { s.is_negative() });
            let scores = keep.map(|s| model.predict(s)).collect::<Result<Vec<_>>>()?;
            let dropped = calib.len() - scores.len();
            if dropped > 0 {
                eprintln!(
                    "warning: {method} ignores {dropped} calibration slide(s) without a {} label",
                    if positive { "positive" } else { "negative" }
                );
            }
            let polarity = if positive { Polarity::Positive } else { Polarity::Negative };
            calibrate_plts(&scores, args.sigma, polarity)?
        }
        MethodName::None => calibrate_none(&train, &model, target)?,
    };
    write_json(&args.out, &result)?;

    print!("{method}: threshold {:.6}", result.threshold);
    if let Some(w) = result.omega_c {
        print!(", omega_c {w:.4}");
    }
    if let Some(map) = &result.map {
        let max_shift = map
            .source_knots()
            .iter()
            .zip(map.target_knots())
            .map(|(s, t)| (t - s).abs())
            .fold(0.0, f64::max);
        print!(", {} knots, max |map(x) - x| {max_shift:.6}", map.source_knots().len());
    }
    println!();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub method: crate::calibration::Method,
    pub threshold: f64,
    pub n_slides: usize,
    pub n_positive: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc_before: Option<f64>,
    pub auc_after: Option<f64>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalMetrics> {
    let model = load_model(&args.model)?;
    let text = fs::read_to_string(&args.calibration).map_err(|e| Error::io(&args.calibration, e))?;
    let result: CalibrationResult =
        serde_json::from_str(&text).map_err(|e| Error::json(args.calibration.display().to_string(), e))?;
    let cohort = Cohort::read_jsonl(&args.cohort)?;
    let labels = cohort
        .labels()
        .ok_or_else(|| Error::DegenerateLabels("evaluation cohort must be fully labeled".into()))?;
    let ev = evaluate_calibrated(&result, &model, &cohort)?;

    let sens = sensitivity(&ev.scores, &labels, result.threshold);
    let spec = specificity(&ev.scores, &labels, result.threshold);
    let (sens, spec) = match (sens, spec) {
        (Err(e), Err(_)) => return Err(e),
        (sens, spec) => (sens, spec),
    };
    let metrics = EvalMetrics {
        method: result.method,
        threshold: result.threshold,
        n_slides: cohort.len(),
        n_positive: cohort.n_positive(),
        sensitivity: sens.ok(),
        specificity: spec.ok(),
        auc_before: auc(&ev.raw_scores, &labels).ok(),
        auc_after: auc(&ev.scores, &labels).ok(),
    };
    write_json(&args.out, &metrics)?;

    if let Some(path) = &args.roc {
        write_roc_csv(&roc_curve(&ev.scores, &labels)?, create(path)?)?;
    }
    if let Some(path) = &args.sens_curve {
        #[derive(Serialize)]
        struct Row {
            threshold: f64,
            sensitivity_before: f64,
            sensitivity_after: f64,
        }
        let mut w = csv::Writer::from_writer(create(path)?);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            w.serialize(Row {
                threshold: t,
                sensitivity_before: sensitivity(&ev.raw_scores, &labels, t)?,
                sensitivity_after: sensitivity(&ev.scores, &labels, t)?,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:?} threshold {:.6}: sensitivity {}, specificity {}, AUC {} -> {}",
        metrics.method,
        metrics.threshold,
        show(metrics.sensitivity),
        show(metrics.specificity),
        show(metrics.auc_before),
        show(metrics.auc_after)
    );
    Ok(metrics)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    let base_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let experiment = Experiment::prepare(config, &base_dir)?;
    let rows = experiment.run()?;
    write_rows_csv(&rows, create(&args.out)?)?;

    println!("method  runs  failed  mean_sens  std_sens  mean_spec  mean_auc");
    for s in summarize(&rows) {
        println!(
            "{:<6} {:>5} {:>7} {:>10.4} {:>9.4} {:>10.4} {:>9.4}",
            s.method.as_str(),
            s.runs,
            s.failed,
            s.mean_sensitivity,
            s.std_sensitivity,
            s.mean_specificity,
            s.mean_auc_after
        );
    }
    Ok(())
}
