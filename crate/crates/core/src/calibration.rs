//! Threshold calibration under distribution shift: tile-score matching (TSM),
//! slide-score alignment (UPA) and patient-level threshold selection (PLTS).
//!
//! TSM and UPA leave the threshold chosen on the reference cohort untouched and
//! instead transport new-cohort scores onto the reference score distribution.
//! TSM does so at the tile level, before the predictor head, against the
//! reference tile distribution reweighted to the calibration prevalence. UPA
//! does so on slide-level scores. PLTS re-selects the threshold directly from
//! calibration slides sharing a single label.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    build_empirical, build_monge_map, build_target_mixture, EmpiricalDistribution, MongeMap,
};
use crate::error::{Error, Result};
use crate::mil::{ChowderModel, Cohort};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Tsm,
    Upa,
    PltsPos,
    PltsNeg,
    None,
}

impl Method {
    pub fn uses_map(self) -> bool {
        matches!(self, Method::Tsm | Method::Upa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Sensitivity,
    Specificity,
}

/// Prescribed operating point: a sensitivity or specificity level in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub level: f64,
    pub kind: LevelKind,
}

impl Target {
    pub fn sensitivity(level: f64) -> Self {
        Self {
            level,
            kind: LevelKind::Sensitivity,
        }
    }

    pub fn specificity(level: f64) -> Self {
        Self {
            level,
            kind: LevelKind::Specificity,
        }
    }
}

/// Positive / negative polarity for PLTS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationResultRepr")]
pub struct CalibrationResult {
    pub method: Method,
    pub threshold: f64,
    pub target_level: f64,
    pub level_kind: LevelKind,
    pub omega_c: Option<f64>,
    pub map: Option<MongeMap>,
}

#[derive(Deserialize)]
struct CalibrationResultRepr {
    method: Method,
    threshold: f64,
    target_level: f64,
    level_kind: LevelKind,
    #[serde(default)]
    omega_c: Option<f64>,
    #[serde(default)]
    map: Option<MongeMap>,
}

impl TryFrom<CalibrationResultRepr> for CalibrationResult {
    type Error = Error;

    fn try_from(r: CalibrationResultRepr) -> Result<Self> {
        let result = CalibrationResult {
            method: r.method,
            threshold: r.threshold,
            target_level: r.target_level,
            level_kind: r.level_kind,
            omega_c: r.omega_c,
            map: r.map,
        };
        result.validate()?;
        Ok(result)
    }
}

impl CalibrationResult {
    pub fn validate(&self) -> Result<()> {
        check_level(self.target_level)?;
        if self.method.uses_map() != self.map.is_some() {
            return Err(Error::Config(format!(
                "method {:?} {} a transport map",
                self.method,
                if self.method.uses_map() {
                    "requires"
                } else {
                    "must not carry"
                }
            )));
        }
        if self.threshold.is_nan() {
            return Err(Error::NonFinite(self.threshold));
        }
        Ok(())
    }

    pub fn target(&self) -> Target {
        Target {
            level: self.target_level,
            kind: self.level_kind,
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

/// Smallest count `c` in `1..=m` with `c / m >= level`.
fn required_count(m: usize, level: f64) -> usize {
    let mf = m as f64;
    let mut c = ((level * mf).ceil() as usize).clamp(1, m);
    while c > 1 && (c - 1) as f64 / mf >= level {
        c -= 1;
    }
    while c < m && (c as f64 / mf) < level {
        c += 1;
    }
    c
}

fn sorted_finite(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted)
}

/// Largest threshold whose `>=`-rule sensitivity on `scores_pos` is at least `sigma`:
/// the `ceil(sigma * m)`-th largest score.
pub fn select_threshold(scores_pos: &[f64], sigma: f64) -> Result<f64> {
    check_level(sigma)?;
    if scores_pos.is_empty() {
        return Err(Error::NoPositives);
    }
    let sorted = sorted_finite(scores_pos)?;
    let m = sorted.len();
    Ok(sorted[m - required_count(m, sigma)])
}

/// Threshold reaching specificity `level` on `scores_neg`: the smallest score `t` among the
/// negatives with `#{s < t} / m >= level`, or the next float above the maximum when no
/// observed score qualifies.
pub fn select_threshold_specificity(scores_neg: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if scores_neg.is_empty() {
        return Err(Error::NoNegatives);
    }
    let sorted = sorted_finite(scores_neg)?;
    let m = sorted.len();
    let c = required_count(m, level);
    // #{s < sorted[i]} is the index of the first occurrence of sorted[i].
    let mut first = 0;
    for i in 0..m {
        if sorted[i] != sorted[first] {
            first = i;
        }
        if first >= c {
            return Ok(sorted[i]);
        }
    }
    Ok(sorted[m - 1].next_up())
}

fn select_for_target(pos: &[f64], neg: &[f64], target: Target) -> Result<f64> {
    match target.kind {
        LevelKind::Sensitivity => select_threshold(pos, target.level),
        LevelKind::Specificity => select_threshold_specificity(neg, target.level),
    }
}

/// PLTS: threshold taken directly from calibration slide scores with a constant label.
///
/// With positives the ascending order statistic `pi_i`, `i = m - ceil(sigma m) + 1`, is the
/// largest threshold keeping calibration sensitivity at or above `sigma`. With negatives the
/// smallest threshold reaching calibration specificity `sigma` is returned.
pub fn calibrate_plts(calib_scores: &[f64], sigma: f64, polarity: Polarity) -> Result<CalibrationResult> {
    check_level(sigma)?;
    if calib_scores.is_empty() {
        return Err(Error::NoSamples);
    }
    let (method, threshold, level_kind) = match polarity {
        Polarity::Positive => (
            Method::PltsPos,
            select_threshold(calib_scores, sigma)?,
            LevelKind::Sensitivity,
        ),
        Polarity::Negative => (
            Method::PltsNeg,
            select_threshold_specificity(calib_scores, sigma)?,
            LevelKind::Specificity,
        ),
    };
    Ok(CalibrationResult {
        method,
        threshold,
        target_level: sigma,
        level_kind,
        omega_c: None,
        map: None,
    })
}

fn slide_scores(model: &ChowderModel, cohort: &Cohort) -> Result<Vec<f64>> {
    cohort.slides().iter().map(|s| model.predict(s)).collect()
}

/// Reference-cohort slide scores split by label; the threshold source for every method.
#[derive(Debug, Clone)]
struct ReferenceScores {
    positive: Vec<f64>,
    negative: Vec<f64>,
    all: Vec<f64>,
}

impl ReferenceScores {
    fn new(reference: &Cohort, model: &ChowderModel) -> Result<Self> {
        let labels = reference.labels().ok_or_else(|| {
            Error::DegenerateLabels("reference cohort contains unlabeled slides".into())
        })?;
        let all = slide_scores(model, reference)?;
        let (mut positive, mut negative) = (Vec::new(), Vec::new());
        for (&s, &y) in all.iter().zip(&labels) {
            if y {
                positive.push(s);
            } else {
                negative.push(s);
            }
        }
        if positive.is_empty() {
            return Err(Error::NoPositives);
        }
        if negative.is_empty() {
            return Err(Error::NoNegatives);
        }
        Ok(Self {
            positive,
            negative,
            all,
        })
    }

    fn threshold(&self, target: Target) -> Result<f64> {
        select_for_target(&self.positive, &self.negative, target)
    }
}

/// Reference side of tile-score matching, precomputed once per model.
#[derive(Debug, Clone)]
pub struct TsmReference {
    positive_tiles: Option<EmpiricalDistribution>,
    negative_tiles: Option<EmpiricalDistribution>,
    scores: ReferenceScores,
}

impl TsmReference {
    /// Pools reference tile scores by slide label; the reference must be fully labeled with both classes.
    pub fn new(reference: &Cohort, model: &ChowderModel) -> Result<Self> {
        let scores = ReferenceScores::new(reference, model)?;
        let positive_tiles = build_empirical(&reference.pooled_tile_scores(|s| s.is_positive()), None).ok();
        let negative_tiles = build_empirical(&reference.pooled_tile_scores(|s| s.is_negative()), None).ok();
        Ok(Self {
            positive_tiles,
            negative_tiles,
            scores,
        })
    }

    pub fn positive_tiles(&self) -> Option<&EmpiricalDistribution> {
        self.positive_tiles.as_ref()
    }

    pub fn negative_tiles(&self) -> Option<&EmpiricalDistribution> {
        self.negative_tiles.as_ref()
    }

    /// Reference tile distribution reweighted to prevalence `omega_c`.
    pub fn target_distribution(&self, omega_c: f64) -> Result<EmpiricalDistribution> {
        build_target_mixture(
            self.positive_tiles.as_ref(),
            self.negative_tiles.as_ref(),
            omega_c,
        )
    }

    pub fn threshold(&self, target: Target) -> Result<f64> {
        self.scores.threshold(target)
    }

    /// Fits the tile-level transport map from `calib` onto the reweighted reference.
    ///
    /// `omega_c` falls back to the labeled-positive fraction of `calib`.
    pub fn calibrate(&self, calib: &Cohort, omega_c: Option<f64>, target: Target) -> Result<CalibrationResult> {
        check_level(target.level)?;
        let omega = match omega_c {
            Some(w) if (0.0..=1.0).contains(&w) => w,
            Some(w) => return Err(Error::InvalidProbability(w)),
            None => calib.prevalence().ok_or(Error::MissingPrevalence)?,
        };
        let source = build_empirical(&calib.pooled_tile_scores(|_| true), None)?;
        let map = build_monge_map(&source, &self.target_distribution(omega)?);
        Ok(CalibrationResult {
            method: Method::Tsm,
            threshold: self.threshold(target)?,
            target_level: target.level,
            level_kind: target.kind,
            omega_c: Some(omega),
            map: Some(map),
        })
    }
}

pub fn calibrate_tsm(
    reference: &Cohort,
    calib: &Cohort,
    model: &ChowderModel,
    omega_c: Option<f64>,
    sigma: f64,
) -> Result<CalibrationResult> {
    TsmReference::new(reference, model)?.calibrate(calib, omega_c, Target::sensitivity(sigma))
}

/// Reference side of slide-score alignment.
#[derive(Debug, Clone)]
pub struct UpaReference {
    slide_distribution: EmpiricalDistribution,
    scores: ReferenceScores,
}

impl UpaReference {
    pub fn new(reference: &Cohort, model: &ChowderModel) -> Result<Self> {
        let scores = ReferenceScores::new(reference, model)?;
        let slide_distribution = build_empirical(&scores.all, None)?;
        Ok(Self {
            slide_distribution,
            scores,
        })
    }

    pub fn threshold(&self, target: Target) -> Result<f64> {
        self.scores.threshold(target)
    }

    /// Labels in `calib` are ignored.
    pub fn calibrate(&self, calib: &Cohort, model: &ChowderModel, target: Target) -> Result<CalibrationResult> {
        check_level(target.level)?;
        let source = build_empirical(&slide_scores(model, calib)?, None)?;
        Ok(CalibrationResult {
            method: Method::Upa,
            threshold: self.threshold(target)?,
            target_level: target.level,
            level_kind: target.kind,
            omega_c: None,
            map: Some(build_monge_map(&source, &self.slide_distribution)),
        })
    }
}

pub fn calibrate_upa(reference: &Cohort, calib: &Cohort, model: &ChowderModel, sigma: f64) -> Result<CalibrationResult> {
    UpaReference::new(reference, model)?.calibrate(calib, model, Target::sensitivity(sigma))
}

/// No calibration: the reference threshold applied as is.
pub fn calibrate_none(reference: &Cohort, model: &ChowderModel, target: Target) -> Result<CalibrationResult> {
    check_level(target.level)?;
    let threshold = ReferenceScores::new(reference, model)?.threshold(target)?;
    Ok(CalibrationResult {
        method: Method::None,
        threshold,
        target_level: target.level,
        level_kind: target.kind,
        omega_c: None,
        map: None,
    })
}

/// Per-member TSM maps for an ensemble plus a threshold on the ensemble reference scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCalibration {
    pub maps: Vec<MongeMap>,
    pub threshold: f64,
    pub omega_c: f64,
}

/// Calibrates every ensemble member independently from its own tile scores.
///
/// `references[i]` is the reference cohort as scored at tile level by member `i`, and
/// `calibs[i]` likewise for the calibration cohort.
pub fn calibrate_tsm_ensemble(
    models: &[ChowderModel],
    references: &[Cohort],
    calibs: &[Cohort],
    omega_c: Option<f64>,
    target: Target,
) -> Result<EnsembleCalibration> {
    if models.is_empty() || references.len() != models.len() || calibs.len() != models.len() {
        return Err(Error::EnsembleMismatch {
            models: models.len(),
            maps: references.len().min(calibs.len()),
        });
    }
    let mut maps = Vec::with_capacity(models.len());
    let mut omega = 0.0;
    for ((model, reference), calib) in models.iter().zip(references).zip(calibs) {
        let result = TsmReference::new(reference, model)?.calibrate(calib, omega_c, target)?;
        omega = result.omega_c.unwrap_or_default();
        maps.push(result.map.expect("TSM result carries a map"));
    }

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..references[0].len() {
        let score = models
            .iter()
            .zip(references)
            .map(|(m, r)| m.predict(&r.slides()[i]))
            .sum::<Result<f64>>()?
            / models.len() as f64;
        if references[0].slides()[i].is_positive() {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    Ok(EnsembleCalibration {
        maps,
        threshold: select_for_target(&pos, &neg, target)?,
        omega_c: omega,
    })
}

/// Calibrated slide scores and decisions for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub raw_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub predicted: Vec<bool>,
}

/// Scores `cohort` under `result`: TSM maps the selected tile scores, UPA maps slide scores,
/// PLTS and NONE use raw slide scores. A slide is predicted positive when its score is `>= tau`.
pub fn evaluate_calibrated(result: &CalibrationResult, model: &ChowderModel, cohort: &Cohort) -> Result<Evaluation> {
    let n = cohort.len();
    let mut raw_scores = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for slide in cohort.slides() {
        let raw = model.predict(slide)?;
        let calibrated = match (result.method, &result.map) {
            (Method::Tsm, Some(map)) => model.predict_detailed(slide, Some(map))?.score,
            (Method::Upa, Some(map)) => map.eval(raw),
            _ => raw,
        };
        raw_scores.push(raw);
        scores.push(calibrated);
    }
    let predicted = scores.iter().map(|&s| s >= result.threshold).collect();
    Ok(Evaluation {
        raw_scores,
        scores,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::{Label, Slide};
    use proptest::prelude::*;

    fn tenths() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    /// Largest candidate threshold with `>=`-rule sensitivity at least `sigma`.
    fn enumerate_sensitivity_threshold(scores: &[f64], sigma: f64) -> f64 {
        let m = scores.len() as f64;
        scores
            .iter()
            .copied()
            .filter(|&t| scores.iter().filter(|&&s| s >= t).count() as f64 / m >= sigma)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn sens(scores: &[f64], tau: f64) -> f64 {
        scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
    }

    #[test]
    fn select_threshold_examples() {
        let s = tenths();
        let tau = select_threshold(&s, 0.9).unwrap();
        assert_eq!(tau, 0.2);
        assert_eq!(sens(&s, tau), 0.9);
        assert_eq!(select_threshold(&[0.7], 0.42).unwrap(), 0.7);
        assert_eq!(select_threshold(&[0.5, 0.5, 0.5], 0.9).unwrap(), 0.5);
        assert!(matches!(select_threshold(&[], 0.9), Err(Error::NoPositives)));
        assert!(matches!(select_threshold(&[0.1], 1.0), Err(Error::InvalidLevel(_))));
        assert!(matches!(select_threshold(&[0.1], 0.0), Err(Error::InvalidLevel(_))));
    }

    #[test]
    fn plts_examples() {
        let r = calibrate_plts(&tenths(), 0.9, Polarity::Positive).unwrap();
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.method, Method::PltsPos);
        assert!(r.map.is_none());

        let five = [0.3, 0.9, 0.4, 0.7, 0.6];
        let r = calibrate_plts(&five, 0.9, Polarity::Positive).unwrap();
        assert_eq!(r.threshold, 0.3);
        assert_eq!(sens(&five, r.threshold), 1.0);

        let r = calibrate_plts(&[0.42], 0.9, Polarity::Positive).unwrap();
        assert_eq!(r.threshold, 0.42);
        assert!(matches!(calibrate_plts(&[], 0.9, Polarity::Positive), Err(Error::NoSamples)));
    }

    #[test]
    fn plts_negative_controls_specificity() {
        let s = tenths();
        let r = calibrate_plts(&s, 0.9, Polarity::Negative).unwrap();
        assert_eq!(r.method, Method::PltsNeg);
        assert_eq!(r.level_kind, LevelKind::Specificity);
        // 9 of 10 negatives strictly below 1.0
        assert_eq!(r.threshold, 1.0);
        let r = calibrate_plts(&[0.5], 0.9, Polarity::Negative).unwrap();
        assert!(r.threshold > 0.5);
        assert_eq!(r.threshold, 0.5f64.next_up());
    }

    #[test]
    fn result_json_shape() {
        let r = calibrate_plts(&tenths(), 0.9, Polarity::Positive).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"method":"PLTS_POS","threshold":0.2,"target_level":0.9,"level_kind":"sensitivity","omega_c":null,"map":null}"#
        );
        assert_eq!(serde_json::from_str::<CalibrationResult>(&json).unwrap(), r);
        let tsm_without_map = json.replace("PLTS_POS", "TSM");
        assert!(serde_json::from_str::<CalibrationResult>(&tsm_without_map).is_err());
        let bad_level = json.replace("0.9", "1.5");
        assert!(serde_json::from_str::<CalibrationResult>(&bad_level).is_err());
    }

    fn cohort(name: &str, slides: &[(Option<bool>, Vec<f64>)]) -> Cohort {
        Cohort::new(
            name,
            slides
                .iter()
                .enumerate()
                .map(|(i, (y, t))| Slide::new(format!("{name}-{i}"), y.map(Label::from), t.clone()))
                .collect(),
        )
        .unwrap()
    }

    fn small_reference() -> Cohort {
        cohort(
            "ref",
            &[
                (Some(true), vec![0.9, 0.7, 0.2, 0.4]),
                (Some(true), vec![0.8, 0.3, 0.6, 0.1]),
                (Some(false), vec![0.3, 0.2, 0.1, 0.25]),
                (Some(false), vec![0.35, 0.15, 0.05, 0.2]),
            ],
        )
    }

    fn model() -> ChowderModel {
        ChowderModel::new(1, vec![4.0, 1.0], -2.0).unwrap()
    }

    #[test]
    fn tsm_with_full_prevalence_targets_positive_tiles() {
        let reference = small_reference();
        let calib = reference.filter("pos", |s| s.is_positive());
        let r = calibrate_tsm(&reference, &calib, &model(), Some(1.0), 0.9).unwrap();
        let tsm = TsmReference::new(&reference, &model()).unwrap();
        let expected = build_empirical(&reference.pooled_tile_scores(|s| s.is_positive()), None).unwrap();
        assert_eq!(tsm.target_distribution(1.0).unwrap(), expected);
        // calibrating positives onto themselves is the identity on their support
        let map = r.map.unwrap();
        for &v in expected.values() {
            assert_eq!(map.eval(v), v);
        }
        assert_eq!(r.omega_c, Some(1.0));
    }

    #[test]
    fn tsm_prevalence_sources() {
        let reference = small_reference();
        let r = calibrate_tsm(&reference, &reference, &model(), None, 0.9).unwrap();
        assert_eq!(r.omega_c, Some(0.5));
        let unlabeled = cohort("u", &[(None, vec![0.1, 0.2]), (None, vec![0.3, 0.4])]);
        assert!(matches!(
            calibrate_tsm(&reference, &unlabeled, &model(), None, 0.9),
            Err(Error::MissingPrevalence)
        ));
        assert!(calibrate_tsm(&reference, &unlabeled, &model(), Some(0.3), 0.9).is_ok());
    }

    #[test]
    fn tsm_degenerate_calibration() {
        let reference = small_reference();
        let tiny = cohort("t", &[(Some(true), vec![0.5])]);
        assert!(matches!(
            calibrate_tsm(&reference, &tiny, &model(), None, 0.9),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn upa_self_and_degenerate() {
        let reference = small_reference();
        let r = calibrate_upa(&reference, &reference, &model(), 0.9).unwrap();
        let map = r.map.as_ref().unwrap();
        for s in reference.slides() {
            let raw = model().predict(s).unwrap();
            assert_eq!(map.eval(raw), raw);
        }
        let single = reference.subset("one", &[0]).unwrap();
        assert!(matches!(
            calibrate_upa(&reference, &single, &model(), 0.9),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn evaluate_examples() {
        let none = CalibrationResult {
            method: Method::None,
            threshold: 0.5,
            target_level: 0.9,
            level_kind: LevelKind::Sensitivity,
            omega_c: None,
            map: None,
        };
        // constant head: score = sigmoid(bias)
        let low = ChowderModel::new(1, vec![0.0, 0.0], (0.4f64 / 0.6).ln()).unwrap();
        let c = cohort("c", &[(Some(true), vec![0.1, 0.2])]);
        let ev = evaluate_calibrated(&none, &low, &c).unwrap();
        assert!((ev.scores[0] - 0.4).abs() < 1e-12);
        assert_eq!(ev.predicted, vec![false]);
        let high = ChowderModel::new(1, vec![0.0, 0.0], (0.6f64 / 0.4).ln()).unwrap();
        assert_eq!(evaluate_calibrated(&none, &high, &c).unwrap().predicted, vec![true]);

        let reference = small_reference();
        let tsm_identity = CalibrationResult {
            method: Method::Tsm,
            map: Some(MongeMap::identity(0.0, 1.0).unwrap()),
            ..none.clone()
        };
        let a = evaluate_calibrated(&tsm_identity, &model(), &reference).unwrap();
        let b = evaluate_calibrated(&none, &model(), &reference).unwrap();
        assert_eq!(a, b);

        let upa = CalibrationResult {
            method: Method::Upa,
            threshold: 0.4,
            map: Some(MongeMap::new(vec![0.0, 1.0], vec![0.0, 0.5]).unwrap()),
            ..none
        };
        let m = ChowderModel::new(1, vec![0.0, 0.0], (0.9f64 / 0.1).ln()).unwrap();
        let ev = evaluate_calibrated(&upa, &m, &c).unwrap();
        assert!((ev.raw_scores[0] - 0.9).abs() < 1e-12);
        assert!((ev.scores[0] - 0.45).abs() < 1e-12);
        assert_eq!(ev.predicted, vec![true]);
    }

    #[test]
    fn ensemble_identity_maps_from_self_calibration() {
        let reference = small_reference();
        let m2 = ChowderModel::new(1, vec![1.0, -1.0], 0.0).unwrap();
        let models = [model(), m2];
        let refs = [reference.clone(), reference.clone()];
        let cal = calibrate_tsm_ensemble(&models, &refs, &refs, None, Target::sensitivity(0.5)).unwrap();
        assert_eq!(cal.maps.len(), 2);
        assert_eq!(cal.omega_c, 0.5);
        assert!(calibrate_tsm_ensemble(&models, &refs[..1], &refs, None, Target::sensitivity(0.5)).is_err());
    }

    proptest! {
        #[test]
        fn threshold_matches_enumeration(
            scores in prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.3, 0.4, 0.5]), 1..50),
            sigma in prop::sample::select(vec![0.5, 0.8, 0.9, 0.95]),
        ) {
            let tau = select_threshold(&scores, sigma).unwrap();
            prop_assert_eq!(tau, enumerate_sensitivity_threshold(&scores, sigma));
            prop_assert!(sens(&scores, tau) >= sigma);
        }
    }
}
