//! Chowder-style multiple instance learning: slides are bags of tile scores,
//! ranked by a top-k/bottom-k selection layer and fed to a logistic predictor.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::MongeMap;
use crate::error::{Error, Result};

/// Logits are clamped to this magnitude so predictions stay strictly inside (0, 1).
pub const LOGIT_LIMIT: f64 = 36.0;

/// Binary slide label, serialized as `0` or `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// A whole-slide image reduced to its tile scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slide {
    pub slide_id: String,
    pub label: Option<Label>,
    pub tile_scores: Vec<f64>,
}

impl Slide {
    pub fn new(slide_id: impl Into<String>, label: Option<Label>, tile_scores: Vec<f64>) -> Self {
        Self {
            slide_id: slide_id.into(),
            label,
            tile_scores,
        }
    }

    /// Scores per-tile feature vectors with a linear tile scorer.
    pub fn from_features(
        slide_id: impl Into<String>,
        label: Option<Label>,
        features: &[Vec<f64>],
        scorer: &LinearTileScorer,
    ) -> Result<Self> {
        let scores = features
            .iter()
            .map(|f| scorer.score(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(slide_id, label, scores))
    }

    pub fn is_positive(&self) -> bool {
        self.label == Some(Label::Positive)
    }

    pub fn is_negative(&self) -> bool {
        self.label == Some(Label::Negative)
    }

    /// Applies `f` to every tile score, keeping id and label.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Slide {
        Slide {
            slide_id: self.slide_id.clone(),
            label: self.label,
            tile_scores: self.tile_scores.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// A named collection of slides with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    name: String,
    slides: Vec<Slide>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, slides: Vec<Slide>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(slides.len());
        for s in &slides {
            if !seen.insert(s.slide_id.as_str()) {
                return Err(Error::DuplicateSlideId(s.slide_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            slides,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slides(&self) -> &[Slide] {
        &self.slides
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }

    pub fn into_slides(self) -> Vec<Slide> {
        self.slides
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.slides.iter().all(|s| s.label.is_some())
    }

    pub fn n_positive(&self) -> usize {
        self.slides.iter().filter(|s| s.is_positive()).count()
    }

    pub fn n_negative(&self) -> usize {
        self.slides.iter().filter(|s| s.is_negative()).count()
    }

    /// Fraction of positive slides; `None` if the cohort is empty or has unlabeled slides.
    pub fn prevalence(&self) -> Option<f64> {
        if self.slides.is_empty() || !self.is_fully_labeled() {
            return None;
        }
        Some(self.n_positive() as f64 / self.slides.len() as f64)
    }

    /// Sub-cohort made of the slides at `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Cohort> {
        Cohort::new(
            name,
            indices.iter().map(|&i| self.slides[i].clone()).collect(),
        )
    }

    pub fn filter(&self, name: impl Into<String>, keep: impl Fn(&Slide) -> bool) -> Cohort {
        Cohort {
            name: name.into(),
            slides: self.slides.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// All tile scores of the selected slides, concatenated in slide order.
    pub fn pooled_tile_scores(&self, keep: impl Fn(&Slide) -> bool) -> Vec<f64> {
        self.slides
            .iter()
            .filter(|s| keep(s))
            .flat_map(|s| s.tile_scores.iter().copied())
            .collect()
    }

    pub fn labels(&self) -> Option<Vec<bool>> {
        self.slides
            .iter()
            .map(|s| s.label.map(Label::is_positive))
            .collect()
    }

    /// Reads a cohort stored as JSON Lines, one slide per line.
    pub fn read_jsonl(path: &Path) -> Result<Cohort> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut slides = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let slide: Slide = serde_json::from_str(&line).map_err(|e| {
                Error::json(format!("{}:{}", path.display(), lineno + 1), e)
            })?;
            slides.push(slide);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Cohort::new(name, slides)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_jsonl_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for slide in &self.slides {
            serde_json::to_writer(&mut *out, slide)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Output of the selection layer: top-k scores descending, then bottom-k ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub values: Vec<f64>,
    pub indices: Vec<usize>,
}

/// Selects the `k` highest and `k` lowest tile scores.
///
/// Tiles are totally ordered by score descending, ties by lower index first;
/// the top set is the first `k` of that order and the bottom set the last `k`,
/// so the two never overlap. Bottom tiles are reported in ascending score order.
pub fn rank_select(tile_scores: &[f64], k: usize) -> Result<Selection> {
    let n = tile_scores.len();
    if k == 0 || n < 2 * k {
        return Err(Error::TooFewTiles {
            slide_id: String::new(),
            tiles: n,
            needed: 2 * k.max(1),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| {
        tile_scores[j]
            .total_cmp(&tile_scores[i])
            .then_with(|| i.cmp(&j))
    });
    let mut indices = Vec::with_capacity(2 * k);
    indices.extend_from_slice(&order[..k]);
    let mut bottom = order[n - k..].to_vec();
    bottom.sort_unstable_by(|&i, &j| {
        tile_scores[i]
            .total_cmp(&tile_scores[j])
            .then_with(|| i.cmp(&j))
    });
    indices.extend(bottom);
    let values = indices.iter().map(|&i| tile_scores[i]).collect();
    Ok(Selection { values, indices })
}

/// Linear tile scorer `g(t) = w . t + b` over per-tile feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTileScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearTileScorer {
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                what: "tile features and scorer weights",
                left: features.len(),
                right: self.weights.len(),
            });
        }
        Ok(dot(&self.weights, features) + self.bias)
    }
}

/// Slide-level score together with the tiles that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub selected: Vec<usize>,
}

/// `f(S) = h(r(g(T_1), ..., g(T_N)))` with `h(z) = sigmoid(h_weights . z + h_bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChowderModelRepr")]
pub struct ChowderModel {
    k: usize,
    g_weights: Option<LinearTileScorer>,
    h_weights: Vec<f64>,
    h_bias: f64,
}

#[derive(Deserialize)]
struct ChowderModelRepr {
    k: usize,
    #[serde(default)]
    g_weights: Option<LinearTileScorer>,
    h_weights: Vec<f64>,
    h_bias: f64,
}

impl TryFrom<ChowderModelRepr> for ChowderModel {
    type Error = Error;

    fn try_from(r: ChowderModelRepr) -> Result<Self> {
        let mut model = ChowderModel::new(r.k, r.h_weights, r.h_bias)?;
        model.g_weights = r.g_weights;
        Ok(model)
    }
}

impl ChowderModel {
    pub fn new(k: usize, h_weights: Vec<f64>, h_bias: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("k must be at least 1".into()));
        }
        if h_weights.len() != 2 * k {
            return Err(Error::InvalidModel(format!(
                "expected {} predictor weights for k = {k}, got {}",
                2 * k,
                h_weights.len()
            )));
        }
        if !h_bias.is_finite() || h_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidModel("non-finite predictor parameters".into()));
        }
        Ok(Self {
            k,
            g_weights: None,
            h_weights,
            h_bias,
        })
    }

    pub fn with_tile_scorer(mut self, scorer: LinearTileScorer) -> Self {
        self.g_weights = Some(scorer);
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tile_scorer(&self) -> Option<&LinearTileScorer> {
        self.g_weights.as_ref()
    }

    pub fn h_weights(&self) -> &[f64] {
        &self.h_weights
    }

    pub fn h_bias(&self) -> f64 {
        self.h_bias
    }

    /// Applies `g` to feature vectors; without a scorer each tile must carry a single score.
    pub fn score_tiles(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        features
            .iter()
            .map(|f| match &self.g_weights {
                Some(g) => g.score(f),
                None if f.len() == 1 => Ok(f[0]),
                None => Err(Error::LengthMismatch {
                    what: "identity scorer expects one value per tile",
                    left: f.len(),
                    right: 1,
                }),
            })
            .collect()
    }

    /// Predictor `h` applied to a selection vector.
    pub fn head(&self, z: &[f64]) -> f64 {
        sigmoid(dot(&self.h_weights, z) + self.h_bias)
    }

    fn select(&self, slide: &Slide) -> Result<Selection> {
        rank_select(&slide.tile_scores, self.k).map_err(|e| match e {
            Error::TooFewTiles { tiles, needed, .. } => Error::TooFewTiles {
                slide_id: slide.slide_id.clone(),
                tiles,
                needed,
            },
            other => other,
        })
    }

    pub fn predict(&self, slide: &Slide) -> Result<f64> {
        Ok(self.predict_detailed(slide, None)?.score)
    }

    /// Prediction with an optional transport map applied after ranking.
    ///
    /// Because the map is monotone, mapping the `2k` selected scores is the same as
    /// mapping all `N` tiles and ranking afterwards, and the selected tiles do not change.
    pub fn predict_detailed(&self, slide: &Slide, map: Option<&MongeMap>) -> Result<Prediction> {
        let Selection { mut values, indices } = self.select(slide)?;
        if let Some(map) = map {
            for v in &mut values {
                *v = map.eval(*v);
            }
        }
        Ok(Prediction {
            score: self.head(&values),
            selected: indices,
        })
    }

    /// Reference path: maps every tile first, then ranks. Costs `N` map evaluations.
    pub fn predict_map_all(&self, slide: &Slide, map: &MongeMap) -> Result<Prediction> {
        let mapped = slide.map_scores(|x| map.eval(x));
        self.predict_detailed(&mapped, None)
    }
}

pub fn predict_slide(model: &ChowderModel, slide: &Slide) -> Result<f64> {
    model.predict(slide)
}

/// Prediction after transporting only the `2k` selected tile scores.
pub fn predict_slide_mapped(model: &ChowderModel, slide: &Slide, map: &MongeMap) -> Result<f64> {
    Ok(model.predict_detailed(slide, Some(map))?.score)
}

/// Unweighted mean of member predictions, each member optionally paired with its own map.
pub fn ensemble_predict(
    models: &[ChowderModel],
    slide: &Slide,
    maps: Option<&[MongeMap]>,
) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::EnsembleMismatch { models: 0, maps: 0 });
    }
    if let Some(maps) = maps {
        if maps.len() != models.len() {
            return Err(Error::EnsembleMismatch {
                models: models.len(),
                maps: maps.len(),
            });
        }
    }
    let mut total = 0.0;
    for (i, model) in models.iter().enumerate() {
        let map = maps.map(|m| &m[i]);
        total += model.predict_detailed(slide, map)?.score;
    }
    Ok(total / models.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Loss trace of a training run; `losses[e]` is the loss before update `e`, the last entry is final.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss value")
    }
}

/// Fits the predictor head by full-batch gradient descent on binary cross-entropy.
///
/// The tile scorer is the identity, so the selection features are fixed across
/// epochs. Initial weights are drawn from `N(0, 0.01^2)` with `seed`; the bias
/// starts at the log-odds of the training prevalence.
pub fn train_predictor(cohort: &Cohort, config: &TrainConfig) -> Result<(ChowderModel, TrainingReport)> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidModel("k must be at least 1".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    let labels = cohort.labels().ok_or_else(|| {
        Error::DegenerateLabels("training cohort contains unlabeled slides".into())
    })?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if labels.is_empty() || n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels(
            "training requires both positive and negative slides".into(),
        ));
    }

    let probe = ChowderModel::new(k, vec![0.0; 2 * k], 0.0)?;
    let features = cohort
        .slides()
        .iter()
        .map(|s| probe.select(s).map(|sel| sel.values))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..2 * k).map(|_| init.sample(&mut rng)).collect();
    let mut b = (n_pos as f64 / (labels.len() - n_pos) as f64).ln();

    let n = features.len() as f64;
    let mut losses = Vec::with_capacity(config.epochs + 1);
    let mut grad_w = vec![0.0; 2 * k];
    for _ in 0..=config.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (z, &y) in features.iter().zip(&targets) {
            let logit = dot(&w, z) + b;
            loss += log1p_exp(logit) - y * logit;
            let residual = sigmoid_raw(logit) - y;
            for (g, &zi) in grad_w.iter_mut().zip(z) {
                *g += residual * zi;
            }
            grad_b += residual;
        }
        losses.push(loss / n);
        if losses.len() > config.epochs {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&grad_w) {
            *wi -= config.learning_rate * g / n;
        }
        b -= config.learning_rate * grad_b / n;
    }

    let model = ChowderModel::new(k, w, b).map_err(|_| {
        Error::DegenerateDistribution("training diverged to non-finite weights".into())
    })?;
    Ok((model, TrainingReport { losses }))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid_raw(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic function with the logit clamped to `[-LOGIT_LIMIT, LOGIT_LIMIT]`.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_raw(x.clamp(-LOGIT_LIMIT, LOGIT_LIMIT))
}

fn log1p_exp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use proptest::prelude::*;

    fn slide(scores: &[f64]) -> Slide {
        Slide::new("s", None, scores.to_vec())
    }

    #[test]
    fn rank_select_examples() {
        let sel = rank_select(&[0.1, 0.9, 0.5], 1).unwrap();
        assert_eq!(sel.values, vec![0.9, 0.1]);
        assert_eq!(sel.indices, vec![1, 0]);
        let sel = rank_select(&[4.0, 3.0, 2.0, 1.0], 2).unwrap();
        assert_eq!(sel.values, vec![4.0, 3.0, 1.0, 2.0]);
        assert!(matches!(
            rank_select(&[0.5], 1),
            Err(Error::TooFewTiles { tiles: 1, needed: 2, .. })
        ));
    }

    #[test]
    fn rank_select_ties_by_index() {
        let sel = rank_select(&[0.5, 0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2, 3]);
        let sel = rank_select(&[0.2, 0.7, 0.7, 0.2, 0.2], 1).unwrap();
        assert_eq!(sel.indices, vec![1, 4]);
        assert_eq!(sel.values, vec![0.7, 0.2]);
    }

    #[test]
    fn predict_examples() {
        let m = ChowderModel::new(1, vec![1.0, 1.0], -1.0).unwrap();
        assert_eq!(m.predict(&slide(&[0.1, 0.9, 0.5])).unwrap(), 0.5);

        let m = ChowderModel::new(1, vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(m.predict(&slide(&[0.3, 0.2])).unwrap(), 0.5);

        let m = ChowderModel::new(1, vec![10.0, 0.0], -5.0).unwrap();
        let p = m.predict(&slide(&[1.0, 0.0, 0.0])).unwrap();
        assert!((p - 1.0 / (1.0 + (-5.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.9933).abs() < 1e-4);
    }

    #[test]
    fn predict_too_few_tiles_names_slide() {
        let m = ChowderModel::new(2, vec![0.0; 4], 0.0).unwrap();
        let s = Slide::new("tiny", None, vec![0.1, 0.2, 0.3]);
        match m.predict(&s) {
            Err(Error::TooFewTiles { slide_id, tiles: 3, needed: 4 }) => assert_eq!(slide_id, "tiny"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predictions_stay_inside_unit_interval() {
        let m = ChowderModel::new(1, vec![1e6, 1e6], 0.0).unwrap();
        let hi = m.predict(&slide(&[1.0, 1.0])).unwrap();
        let lo = m.predict(&slide(&[-1.0, -1.0])).unwrap();
        assert!(hi < 1.0 && hi > 0.0);
        assert!(lo > 0.0 && lo < 1.0);
    }

    #[test]
    fn model_validation_and_json() {
        assert!(ChowderModel::new(0, vec![], 0.0).is_err());
        assert!(ChowderModel::new(2, vec![1.0, 2.0], 0.0).is_err());
        let m = ChowderModel::new(1, vec![0.5, -0.25], 0.125).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"k":1,"g_weights":null,"h_weights":[0.5,-0.25],"h_bias":0.125}"#);
        assert_eq!(serde_json::from_str::<ChowderModel>(&json).unwrap(), m);
        assert!(serde_json::from_str::<ChowderModel>(r#"{"k":2,"h_weights":[1.0],"h_bias":0}"#).is_err());
    }

    #[test]
    fn linear_tile_scorer() {
        let g = LinearTileScorer { weights: vec![1.0, -1.0], bias: 0.5 };
        let s = Slide::from_features("f", None, &[vec![1.0, 0.0], vec![0.0, 1.0]], &g).unwrap();
        assert_eq!(s.tile_scores, vec![1.5, -0.5]);
        let m = ChowderModel::new(1, vec![1.0, 1.0], 0.0).unwrap().with_tile_scorer(g);
        assert_eq!(m.score_tiles(&[vec![2.0, 1.0]]).unwrap(), vec![1.5]);
        assert!(m.score_tiles(&[vec![1.0]]).is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ChowderModel>(&json).unwrap(), m);
    }

    #[test]
    fn identity_map_matches_plain_prediction() {
        let m = ChowderModel::new(2, vec![0.3, -1.0, 2.0, 0.1], 0.2).unwrap();
        let s = slide(&[0.1, 0.8, 0.35, 0.6, 0.05]);
        let id = MongeMap::identity(0.0, 1.0).unwrap();
        assert_eq!(predict_slide_mapped(&m, &s, &id).unwrap(), m.predict(&s).unwrap());
    }

    #[test]
    fn monotone_map_keeps_selection() {
        let m = ChowderModel::new(1, vec![1.0, 1.0], 0.0).unwrap();
        let s = slide(&[0.1, 0.9, 0.5]);
        let map = MongeMap::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 1.0]).unwrap();
        let post = m.predict_detailed(&s, Some(&map)).unwrap();
        let all = m.predict_map_all(&s, &map).unwrap();
        assert_eq!(post.selected, m.predict_detailed(&s, None).unwrap().selected);
        assert_eq!(post, all);
    }

    #[test]
    fn ensemble_behaviour() {
        let s = slide(&[0.2, 0.4]);
        let m1 = ChowderModel::new(1, vec![0.0, 0.0], 0.0).unwrap();
        let m2 = ChowderModel::new(1, vec![1.0, -2.0], 0.3).unwrap();
        assert_eq!(ensemble_predict(std::slice::from_ref(&m2), &s, None).unwrap(), m2.predict(&s).unwrap());

        let low = ChowderModel::new(1, vec![0.0, 0.0], -(4.0f64).ln()).unwrap();
        let high = ChowderModel::new(1, vec![0.0, 0.0], (4.0f64).ln()).unwrap();
        let mean = ensemble_predict(&[low, high], &s, None).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);

        let ids = vec![MongeMap::identity(0.0, 1.0).unwrap(); 2];
        let models = [m1, m2];
        assert_eq!(
            ensemble_predict(&models, &s, Some(&ids)).unwrap(),
            ensemble_predict(&models, &s, None).unwrap()
        );
        assert!(matches!(
            ensemble_predict(&models, &s, Some(&ids[..1])),
            Err(Error::EnsembleMismatch { models: 2, maps: 1 })
        ));
        assert!(ensemble_predict(&[], &s, None).is_err());
    }

    fn toy_cohort() -> Cohort {
        let mut slides = Vec::new();
        for i in 0..20 {
            let positive = i % 2 == 0;
            let mut tiles: Vec<f64> = (0..6).map(|t| 0.05 + 0.04 * ((i + t) % 6) as f64).collect();
            if positive {
                tiles[i % 6] = 0.95;
            }
            slides.push(Slide::new(format!("toy-{i}"), Some(positive.into()), tiles));
        }
        Cohort::new("toy", slides).unwrap()
    }

    #[test]
    fn trainer_separates_toy_cohort() {
        let cohort = toy_cohort();
        let cfg = TrainConfig { k: 1, epochs: 500, learning_rate: 0.5, seed: 7 };
        let (model, report) = train_predictor(&cohort, &cfg).unwrap();
        let scores: Vec<f64> = cohort.slides().iter().map(|s| model.predict(s).unwrap()).collect();
        let labels = cohort.labels().unwrap();
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(report.losses.len(), 501);
        assert!(report.final_loss() < report.losses[0]);
    }

    #[test]
    fn trainer_is_deterministic() {
        let cohort = toy_cohort();
        let cfg = TrainConfig { k: 2, epochs: 50, learning_rate: 0.3, seed: 11 };
        let (a, ra) = train_predictor(&cohort, &cfg).unwrap();
        let (b, rb) = train_predictor(&cohort, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        for (x, y) in a.h_weights().iter().zip(b.h_weights()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn trainer_loss_nonincreasing_small_lr() {
        let cfg = TrainConfig { k: 1, epochs: 300, learning_rate: 0.01, seed: 3 };
        let (_, report) = train_predictor(&toy_cohort(), &cfg).unwrap();
        for w in report.losses.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn trainer_rejects_bad_cohorts() {
        let one_class = toy_cohort().filter("pos", |s| s.is_positive());
        let cfg = TrainConfig { k: 1, epochs: 5, learning_rate: 0.1, seed: 0 };
        assert!(matches!(train_predictor(&one_class, &cfg), Err(Error::DegenerateLabels(_))));

        let unlabeled = Cohort::new("u", vec![Slide::new("a", None, vec![0.1, 0.2])]).unwrap();
        assert!(matches!(train_predictor(&unlabeled, &cfg), Err(Error::DegenerateLabels(_))));

        let cfg = TrainConfig { k: 4, ..cfg };
        assert!(matches!(train_predictor(&toy_cohort(), &cfg), Err(Error::TooFewTiles { .. })));
    }

    #[test]
    fn cohort_ids_unique_and_prevalence() {
        let dup = vec![Slide::new("a", None, vec![]), Slide::new("a", None, vec![])];
        assert!(matches!(Cohort::new("d", dup), Err(Error::DuplicateSlideId(_))));
        let c = toy_cohort();
        assert_eq!(c.prevalence(), Some(0.5));
        let partly = Cohort::new(
            "p",
            vec![Slide::new("a", Some(Label::Positive), vec![]), Slide::new("b", None, vec![])],
        )
        .unwrap();
        assert_eq!(partly.prevalence(), None);
    }

    #[test]
    fn slide_json_line_shape() {
        let s = Slide::new("x1", Some(Label::Positive), vec![0.25, 0.5]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"slide_id":"x1","label":1,"tile_scores":[0.25,0.5]}"#);
        let u: Slide = serde_json::from_str(r#"{"slide_id":"u","label":null,"tile_scores":[]}"#).unwrap();
        assert_eq!(u.label, None);
        assert!(serde_json::from_str::<Slide>(r#"{"slide_id":"u","label":2,"tile_scores":[]}"#).is_err());
    }

    proptest! {
        #[test]
        fn affine_map_post_rank_equals_map_all(
            scores in prop::collection::vec(0.0f64..1.0, 4..40),
            k in 1usize..3,
        ) {
            let map = MongeMap::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
            let model = ChowderModel::new(k, (0..2 * k).map(|i| i as f64 - 1.5).collect(), 0.1).unwrap();
            let s = slide(&scores);
            let post = model.predict_detailed(&s, Some(&map)).unwrap();
            let all = model.predict_map_all(&s, &map).unwrap();
            prop_assert!((post.score - all.score).abs() <= 1e-12);
            prop_assert_eq!(post.selected, all.selected);
        }
    }
}
