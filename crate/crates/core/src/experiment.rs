//! Repeated-sampling experiment harness.
//!
//! Each repetition draws a calibration set from the validation cohort, fits
//! every requested method, and evaluates the resulting threshold on the
//! validation cohort. Repetition `r` is seeded with `base_seed + r`, so runs are
//! reproducible and repetitions can execute in parallel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_plts, CalibrationResult, LevelKind, Method, Polarity, Target, TsmReference,
    UpaReference,
};
use crate::error::{Error, Result};
use crate::metrics::{auc, sensitivity, specificity};
use crate::mil::{train_predictor, ChowderModel, Cohort, TrainConfig};
use crate::synthdata::{apply_shift, generate_cohort, CohortSpec, ShiftSpec};

/// Where a cohort comes from: a JSONL file, a generator spec, or another source plus a shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    Path(PathBuf),
    Spec(CohortSpec),
    Shifted { base: Box<CohortSource>, shift: ShiftSpec },
}

impl CohortSource {
    pub fn load(&self, base_dir: &Path) -> Result<Cohort> {
        match self {
            CohortSource::Path(p) => Cohort::read_jsonl(&base_dir.join(p)),
            CohortSource::Spec(spec) => generate_cohort(spec),
            CohortSource::Shifted { base, shift } => {
                shift.validate()?;
                Ok(apply_shift(&base.load(base_dir)?, shift))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Path(PathBuf),
    /// Train on the reference cohort.
    Train(TrainConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "tsm")]
    Tsm,
    #[serde(rename = "upa")]
    Upa,
    #[serde(rename = "plts+")]
    PltsPos,
    #[serde(rename = "plts-")]
    PltsNeg,
    #[serde(rename = "none")]
    None,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Tsm => "tsm",
            MethodName::Upa => "upa",
            MethodName::PltsPos => "plts+",
            MethodName::PltsNeg => "plts-",
            MethodName::None => "none",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            MethodName::PltsPos => "plts_pos",
            MethodName::PltsNeg => "plts_neg",
            other => other.as_str(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tsm" => Ok(MethodName::Tsm),
            "upa" => Ok(MethodName::Upa),
            "plts+" => Ok(MethodName::PltsPos),
            "plts-" => Ok(MethodName::PltsNeg),
            "none" => Ok(MethodName::None),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected tsm, upa, plts+, plts- or none)"
            ))),
        }
    }
}

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How calibration slides are drawn from the validation cohort (without replacement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplingPlan {
    Stratified { n_pos: usize, n_neg: usize },
    Total { n_total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaPolicy {
    /// Labeled-positive fraction of the sampled calibration set.
    #[default]
    FromSample,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: CohortSource,
    pub validation: CohortSource,
    pub model: ModelSource,
    pub methods: Vec<MethodName>,
    pub sigma: f64,
    /// Specificity target for `plts-`; defaults to `sigma`.
    #[serde(default)]
    pub specificity_level: Option<f64>,
    pub plan: SamplingPlan,
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub omega_c: OmegaPolicy,
    #[serde(default)]
    pub exclude_calib_from_eval: bool,
    /// When set, every fitted calibration is written there as JSON.
    #[serde(default)]
    pub artifacts_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        for level in [Some(self.sigma), self.specificity_level].into_iter().flatten() {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::InvalidLevel(level));
            }
        }
        if let OmegaPolicy::Explicit(w) = self.omega_c {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidProbability(w));
            }
        }
        Ok(())
    }
}

/// One CSV row: outcome of one method in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub repetition: usize,
    pub method: MethodName,
    pub threshold: f64,
    pub omega_c: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc_before: f64,
    pub auc_after: f64,
}

/// Everything a repetition needs, computed once.
pub struct Experiment {
    config: ExperimentConfig,
    validation: Cohort,
    model: ChowderModel,
    tsm: TsmReference,
    upa: UpaReference,
    uncalibrated_threshold: f64,
    labels: Vec<bool>,
    raw_scores: Vec<f64>,
    selections: Vec<Vec<f64>>,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl Experiment {
    /// Loads cohorts and model; relative paths resolve against `base_dir`.
    pub fn prepare(mut config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        config.artifacts_dir = config.artifacts_dir.map(|d| base_dir.join(d));
        let train = config.train.load(base_dir)?;
        let validation = config.validation.load(base_dir)?;
        let model = match &config.model {
            ModelSource::Path(p) => load_model(&base_dir.join(p))?,
            ModelSource::Train(cfg) => train_predictor(&train, cfg)?.0,
        };
        Self::with_model(config, &train, validation, model)
    }

    pub fn with_model(config: ExperimentConfig, train: &Cohort, validation: Cohort, model: ChowderModel) -> Result<Self> {
        config.validate()?;
        let labels = validation.labels().ok_or_else(|| {
            Error::DegenerateLabels("validation cohort must be fully labeled".into())
        })?;
        let tsm = TsmReference::new(train, &model)?;
        let upa = UpaReference::new(train, &model)?;
        let uncalibrated_threshold = tsm.threshold(Target::sensitivity(config.sigma))?;

        let mut raw_scores = Vec::with_capacity(validation.len());
        let mut selections = Vec::with_capacity(validation.len());
        for slide in validation.slides() {
            let pred = model.predict_detailed(slide, None)?;
            raw_scores.push(pred.score);
            selections.push(pred.selected.iter().map(|&i| slide.tile_scores[i]).collect());
        }
        let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
        let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();

        let exp = Self {
            config,
            validation,
            model,
            tsm,
            upa,
            uncalibrated_threshold,
            labels,
            raw_scores,
            selections,
            positives,
            negatives,
        };
        exp.check_plan()?;
        Ok(exp)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &ChowderModel {
        &self.model
    }

    pub fn validation(&self) -> &Cohort {
        &self.validation
    }

    fn check_plan(&self) -> Result<()> {
        let n = self.labels.len();
        match self.config.plan {
            SamplingPlan::Total { n_total } => {
                if n_total == 0 || n_total > n {
                    return Err(Error::InfeasiblePlan(format!(
                        "{n_total} calibration slides requested, validation cohort has {n}"
                    )));
                }
            }
            SamplingPlan::Stratified { n_pos, n_neg } => {
                if n_pos + n_neg == 0 {
                    return Err(Error::InfeasiblePlan("empty calibration set".into()));
                }
                if n_pos > self.positives.len() {
                    return Err(Error::InfeasiblePlan(format!(
                        "{n_pos} positives requested, {} available",
                        self.positives.len()
                    )));
                }
                if n_neg > self.negatives.len() {
                    return Err(Error::InfeasiblePlan(format!(
                        "{n_neg} negatives requested, {} available",
                        self.negatives.len()
                    )));
                }
            }
        }
        if self.config.exclude_calib_from_eval {
            let drawn = match self.config.plan {
                SamplingPlan::Total { n_total } => n_total,
                SamplingPlan::Stratified { n_pos, n_neg } => n_pos + n_neg,
            };
            if drawn == n {
                return Err(Error::InfeasiblePlan(
                    "excluding calibration slides leaves nothing to evaluate".into(),
                ));
            }
        }
        Ok(())
    }

    /// Validation indices of the calibration set for repetition `r`, sorted.
    pub fn sample_calibration(&self, repetition: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.base_seed.wrapping_add(repetition as u64));
        let mut picked = match self.config.plan {
            SamplingPlan::Total { n_total } => sample_indices(&mut rng, self.labels.len(), n_total).into_vec(),
            SamplingPlan::Stratified { n_pos, n_neg } => {
                let mut v: Vec<usize> = sample_indices(&mut rng, self.positives.len(), n_pos)
                    .into_iter()
                    .map(|i| self.positives[i])
                    .collect();
                v.extend(
                    sample_indices(&mut rng, self.negatives.len(), n_neg)
                        .into_iter()
                        .map(|i| self.negatives[i]),
                );
                v
            }
        };
        picked.sort_unstable();
        picked
    }

    fn calibrate(&self, method: MethodName, calib: &Cohort, calib_idx: &[usize]) -> Result<CalibrationResult> {
        let sigma = self.config.sigma;
        let target = Target::sensitivity(sigma);
        match method {
            MethodName::Tsm => {
                let omega = match self.config.omega_c {
                    OmegaPolicy::Explicit(w) => Some(w),
                    OmegaPolicy::FromSample => None,
                };
                self.tsm.calibrate(calib, omega, target)
            }
            MethodName::Upa => self.upa.calibrate(calib, &self.model, target),
            MethodName::PltsPos | MethodName::PltsNeg => {
                let want_positive = method == MethodName::PltsPos;
                let scores: Vec<f64> = calib_idx
                    .iter()
                    .filter(|&&i| self.labels[i] == want_positive)
                    .map(|&i| self.raw_scores[i])
                    .collect();
                if want_positive {
                    calibrate_plts(&scores, sigma, Polarity::Positive)
                } else {
                    let level = self.config.specificity_level.unwrap_or(sigma);
                    calibrate_plts(&scores, level, Polarity::Negative)
                }
            }
            MethodName::None => Ok(CalibrationResult {
                method: Method::None,
                threshold: self.uncalibrated_threshold,
                target_level: sigma,
                level_kind: LevelKind::Sensitivity,
                omega_c: None,
                map: None,
            }),
        }
    }

    fn calibrated_score(&self, result: &CalibrationResult, i: usize) -> f64 {
        match (result.method, &result.map) {
            (Method::Tsm, Some(map)) => {
                let z: Vec<f64> = self.selections[i].iter().map(|&x| map.eval(x)).collect();
                self.model.head(&z)
            }
            (Method::Upa, Some(map)) => map.eval(self.raw_scores[i]),
            _ => self.raw_scores[i],
        }
    }

    fn row(&self, repetition: usize, method: MethodName, result: &CalibrationResult, eval_idx: &[usize]) -> ExperimentRow {
        let labels: Vec<bool> = eval_idx.iter().map(|&i| self.labels[i]).collect();
        let before: Vec<f64> = eval_idx.iter().map(|&i| self.raw_scores[i]).collect();
        let after: Vec<f64> = eval_idx.iter().map(|&i| self.calibrated_score(result, i)).collect();
        let tau = result.threshold;
        ExperimentRow {
            repetition,
            method,
            threshold: tau,
            omega_c: result.omega_c,
            sensitivity: sensitivity(&after, &labels, tau).unwrap_or(f64::NAN),
            specificity: specificity(&after, &labels, tau).unwrap_or(f64::NAN),
            auc_before: auc(&before, &labels).unwrap_or(f64::NAN),
            auc_after: auc(&after, &labels).unwrap_or(f64::NAN),
        }
    }

    /// Runs one repetition; a method that cannot be fitted on this draw yields a NaN row.
    pub fn run_repetition(&self, repetition: usize) -> Result<Vec<(ExperimentRow, Option<CalibrationResult>)>> {
        let calib_idx = self.sample_calibration(repetition);
        let calib = self.validation.subset("calibration", &calib_idx)?;
        let eval_idx: Vec<usize> = if self.config.exclude_calib_from_eval {
            (0..self.labels.len())
                .filter(|i| calib_idx.binary_search(i).is_err())
                .collect()
        } else {
            (0..self.labels.len()).collect()
        };

        let mut out = Vec::with_capacity(self.config.methods.len());
        for &method in &self.config.methods {
            match self.calibrate(method, &calib, &calib_idx) {
                Ok(result) => {
                    let row = self.row(repetition, method, &result, &eval_idx);
                    out.push((row, Some(result)));
                }
                Err(
                    Error::NoSamples
                    | Error::NoPositives
                    | Error::NoNegatives
                    | Error::DegenerateDistribution(_),
                ) => {
                    out.push((
                        ExperimentRow {
                            repetition,
                            method,
                            threshold: f64::NAN,
                            omega_c: None,
                            sensitivity: f64::NAN,
                            specificity: f64::NAN,
                            auc_before: auc(
                                &eval_idx.iter().map(|&i| self.raw_scores[i]).collect::<Vec<_>>(),
                                &eval_idx.iter().map(|&i| self.labels[i]).collect::<Vec<_>>(),
                            )
                            .unwrap_or(f64::NAN),
                            auc_after: f64::NAN,
                        },
                        None,
                    ));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Runs all repetitions in parallel; rows are ordered by (repetition, method order in config).
    pub fn run(&self) -> Result<Vec<ExperimentRow>> {
        let per_rep: Vec<Vec<(ExperimentRow, Option<CalibrationResult>)>> = (0..self.config.repetitions)
            .into_par_iter()
            .map(|r| self.run_repetition(r))
            .collect::<Result<_>>()?;

        if let Some(dir) = &self.config.artifacts_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (row, result) in per_rep.iter().flatten() {
                if let Some(result) = result {
                    let path = dir.join(format!("rep{:04}_{}.json", row.repetition, row.method.file_stem()));
                    let json = serde_json::to_string(result).map_err(|e| Error::json("calibration artifact", e))?;
                    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        Ok(per_rep.into_iter().flatten().map(|(row, _)| row).collect())
    }

    /// Threshold selected on the reference positives, used as is by `none`.
    pub fn reference_threshold(&self) -> f64 {
        self.uncalibrated_threshold
    }
}

pub fn load_model(path: &Path) -> Result<ChowderModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes rows as CSV with header
/// `repetition,method,threshold,omega_c,sensitivity,specificity,auc_before,auc_after`.
pub fn write_rows_csv(rows: &[ExperimentRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and standard deviation of achieved sensitivity for one method, NaN rows skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: MethodName,
    pub runs: usize,
    pub failed: usize,
    pub mean_sensitivity: f64,
    pub std_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_auc_after: f64,
}

pub fn summarize(rows: &[ExperimentRow]) -> Vec<MethodSummary> {
    let mut methods: Vec<MethodName> = Vec::new();
    for row in rows {
        if !methods.contains(&row.method) {
            methods.push(row.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let subset: Vec<&ExperimentRow> = rows.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&&ExperimentRow> = subset.iter().filter(|r| !r.sensitivity.is_nan()).collect();
            let n = ok.len() as f64;
            let mean = |f: &dyn Fn(&ExperimentRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_sens = mean(&|r| r.sensitivity);
            let var = ok.iter().map(|r| (r.sensitivity - mean_sens).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            MethodSummary {
                method,
                runs: subset.len(),
                failed: subset.len() - ok.len(),
                mean_sensitivity: mean_sens,
                std_sensitivity: var.sqrt(),
                mean_specificity: mean(&|r| r.specificity),
                mean_auc_after: mean(&|r| r.auc_after),
            }
        })
        .collect()
}
