//! Synthetic cohorts of tile scores with controllable prevalence, evidence
//! structure and train-to-deployment score shift.
//!
//! Tiles are i.i.d. given the slide label. Negative slides draw every tile from
//! `neg_dist`; each tile of a positive slide comes from `pos_dist` with
//! probability `evidence_fraction` and from `neg_dist` otherwise.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil::{Cohort, Label, Slide};

/// Parametric tile-score law on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreDist {
    Beta { alpha: f64, beta: f64 },
    /// Normal draw clamped to [0, 1].
    Gaussian { mean: f64, std: f64 },
}

impl ScoreDist {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            ScoreDist::Beta { alpha, beta } => alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite(),
            ScoreDist::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid {what}: {self:?}")))
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            ScoreDist::Beta { alpha, beta } => Sampler::Beta(Beta::new(alpha, beta).expect("validated")),
            ScoreDist::Gaussian { mean, std } => Sampler::Gaussian(Normal::new(mean, std).expect("validated")),
        }
    }
}

enum Sampler {
    Beta(Beta<f64>),
    Gaussian(Normal<f64>),
}

impl Sampler {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Sampler::Beta(d) => d.sample(rng),
            Sampler::Gaussian(d) => d.sample(rng).clamp(0.0, 1.0),
        }
    }
}

/// Score transformation between a reference and a deployment cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    #[default]
    None,
    /// `clamp(scale * x + offset, 0, 1)`.
    Affine { scale: f64, offset: f64 },
    /// `sigmoid(logit(x) / temperature + shift)`.
    LogitWarp { temperature: f64, shift: f64 },
    /// `clamp(x + amplitude * exp(-((x - center) / width)^2), 0, 1)`; not monotone in general.
    NonmonotoneBump { center: f64, width: f64, amplitude: f64 },
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShiftSpec::None => true,
            ShiftSpec::Affine { scale, offset } => scale > 0.0 && scale.is_finite() && offset.is_finite(),
            ShiftSpec::LogitWarp { temperature, shift } => {
                temperature > 0.0 && temperature.is_finite() && shift.is_finite()
            }
            ShiftSpec::NonmonotoneBump { center, width, amplitude } => {
                width > 0.0 && width.is_finite() && center.is_finite() && amplitude.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid shift {self:?}")))
        }
    }

    /// Whether the transformation is nondecreasing on [0, 1] (strictly, away from clamping).
    pub fn is_monotone(&self) -> bool {
        !matches!(self, ShiftSpec::NonmonotoneBump { .. })
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ShiftSpec::None => x,
            ShiftSpec::Affine { scale, offset } => (scale * x + offset).clamp(0.0, 1.0),
            ShiftSpec::LogitWarp { temperature, shift } => {
                let logit = x.ln() - (-x).ln_1p();
                let z = logit / temperature + shift;
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            ShiftSpec::NonmonotoneBump { center, width, amplitude } => {
                let u = (x - center) / width;
                (x + amplitude * (-u * u).exp()).clamp(0.0, 1.0)
            }
        }
    }
}

/// Tile count per slide: fixed, or uniform over an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TileCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

fn default_name() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_slides: usize,
    pub tiles_per_slide: TileCount,
    pub prevalence: f64,
    pub evidence_fraction: f64,
    pub neg_dist: ScoreDist,
    pub pos_dist: ScoreDist,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub seed: u64,
    /// Keep at most this many randomly chosen tiles per slide.
    #[serde(default)]
    pub subsample_tiles: Option<usize>,
}

impl Default for CohortSpec {
    /// Desk-scale low-prevalence cohort: 500 slides of 150 tiles, 20% positive.
    fn default() -> Self {
        Self {
            name: default_name(),
            n_slides: 500,
            tiles_per_slide: TileCount::Fixed(150),
            prevalence: 0.2,
            evidence_fraction: 0.1,
            neg_dist: ScoreDist::Beta { alpha: 2.0, beta: 5.0 },
            pos_dist: ScoreDist::Beta { alpha: 5.0, beta: 2.0 },
            shift: ShiftSpec::None,
            seed: 0,
            subsample_tiles: None,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_slides == 0 {
            return Err(Error::InvalidSpec("n_slides must be positive".into()));
        }
        match self.tiles_per_slide {
            TileCount::Fixed(0) => return Err(Error::InvalidSpec("tiles_per_slide must be positive".into())),
            TileCount::Range { min, max } if min == 0 || min > max => {
                return Err(Error::InvalidSpec(format!("invalid tile range {min}..={max}")))
            }
            _ => {}
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "prevalence must lie strictly inside (0, 1), got {}",
                self.prevalence
            )));
        }
        if !(self.evidence_fraction > 0.0 && self.evidence_fraction <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "evidence_fraction must lie in (0, 1], got {}",
                self.evidence_fraction
            )));
        }
        if self.subsample_tiles == Some(0) {
            return Err(Error::InvalidSpec("subsample_tiles must be positive".into()));
        }
        self.neg_dist.validate("neg_dist")?;
        self.pos_dist.validate("pos_dist")?;
        self.shift.validate()
    }
}

/// Draws a cohort; identical specs (seed included) give identical cohorts.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let neg = spec.neg_dist.sampler();
    let pos = spec.pos_dist.sampler();
    let width = spec.n_slides.to_string().len();

    let mut slides = Vec::with_capacity(spec.n_slides);
    for i in 0..spec.n_slides {
        let positive = rng.random_bool(spec.prevalence);
        let n_tiles = match spec.tiles_per_slide {
            TileCount::Fixed(n) => n,
            TileCount::Range { min, max } => rng.random_range(min..=max),
        };
        let mut tiles: Vec<f64> = (0..n_tiles)
            .map(|_| {
                let evidence = positive && rng.random_bool(spec.evidence_fraction);
                let raw = if evidence { pos.draw(&mut rng) } else { neg.draw(&mut rng) };
                spec.shift.apply(raw)
            })
            .collect();
        if let Some(keep) = spec.subsample_tiles {
            if keep < tiles.len() {
                let mut picked = sample_indices(&mut rng, tiles.len(), keep).into_vec();
                picked.sort_unstable();
                tiles = picked.into_iter().map(|j| tiles[j]).collect();
            }
        }
        slides.push(Slide::new(
            format!("{}-{:0width$}", spec.name, i),
            Some(Label::from(positive)),
            tiles,
        ));
    }
    Cohort::new(spec.name.clone(), slides)
}

/// Transforms every tile score; ids and labels are kept.
pub fn apply_shift(cohort: &Cohort, shift: &ShiftSpec) -> Cohort {
    let slides = cohort.slides().iter().map(|s| s.map_scores(|x| shift.apply(x))).collect();
    Cohort::new(cohort.name(), slides).expect("ids unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::rank_select;
    use proptest::prelude::*;

    fn small(seed: u64) -> CohortSpec {
        CohortSpec {
            n_slides: 40,
            tiles_per_slide: TileCount::Fixed(20),
            seed,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_cohort(&small(5)).unwrap();
        let b = generate_cohort(&small(5)).unwrap();
        let c = generate_cohort(&small(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let spec = CohortSpec {
            neg_dist: ScoreDist::Gaussian { mean: 0.1, std: 0.5 },
            pos_dist: ScoreDist::Gaussian { mean: 0.9, std: 0.5 },
            shift: ShiftSpec::Affine { scale: 1.5, offset: 0.2 },
            tiles_per_slide: TileCount::Range { min: 5, max: 30 },
            ..small(1)
        };
        let cohort = generate_cohort(&spec).unwrap();
        for s in cohort.slides() {
            assert!((5..=30).contains(&s.tile_scores.len()));
            assert!(s.tile_scores.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            CohortSpec { prevalence: 0.0, ..small(0) },
            CohortSpec { prevalence: 1.0, ..small(0) },
            CohortSpec { evidence_fraction: 0.0, ..small(0) },
            CohortSpec { n_slides: 0, ..small(0) },
            CohortSpec { tiles_per_slide: TileCount::Range { min: 4, max: 2 }, ..small(0) },
            CohortSpec { neg_dist: ScoreDist::Beta { alpha: -1.0, beta: 1.0 }, ..small(0) },
            CohortSpec { shift: ShiftSpec::LogitWarp { temperature: 0.0, shift: 0.0 }, ..small(0) },
        ] {
            assert!(matches!(generate_cohort(&spec), Err(Error::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn prevalence_within_binomial_interval() {
        let spec = CohortSpec {
            n_slides: 1000,
            tiles_per_slide: TileCount::Fixed(4),
            seed: 99,
            ..CohortSpec::default()
        };
        let p = generate_cohort(&spec).unwrap().prevalence().unwrap();
        // 4-sigma binomial interval around 0.2 at n = 1000
        let half_width = 4.0 * (0.2f64 * 0.8 / 1000.0).sqrt();
        assert!((p - 0.2).abs() <= half_width, "prevalence {p}");
    }

    #[test]
    fn separable_construction() {
        let spec = CohortSpec {
            n_slides: 200,
            tiles_per_slide: TileCount::Fixed(10),
            evidence_fraction: 1.0,
            neg_dist: ScoreDist::Gaussian { mean: 0.1, std: 0.01 },
            pos_dist: ScoreDist::Gaussian { mean: 0.9, std: 0.01 },
            ..small(3)
        };
        let cohort = generate_cohort(&spec).unwrap();
        let max_score: Vec<f64> = cohort
            .slides()
            .iter()
            .map(|s| rank_select(&s.tile_scores, 1).unwrap().values[0])
            .collect();
        let labels = cohort.labels().unwrap();
        assert_eq!(crate::metrics::auc(&max_score, &labels).unwrap(), 1.0);
    }

    #[test]
    fn shift_examples() {
        let c = Cohort::new("c", vec![Slide::new("a", Some(Label::Positive), vec![0.2, 0.8])]).unwrap();
        assert_eq!(apply_shift(&c, &ShiftSpec::None), c);
        let shifted = apply_shift(&c, &ShiftSpec::Affine { scale: 0.5, offset: 0.0 });
        assert_eq!(shifted.slides()[0].tile_scores, vec![0.1, 0.4]);
        assert_eq!(shifted.slides()[0].label, Some(Label::Positive));
        assert_eq!(shifted.slides()[0].slide_id, "a");

        let warp = ShiftSpec::LogitWarp { temperature: 1.0, shift: 0.0 };
        assert!((warp.apply(0.3) - 0.3).abs() < 1e-15);
        assert_eq!(warp.apply(0.0), 0.0);
        assert_eq!(warp.apply(1.0), 1.0);
        assert!(!ShiftSpec::NonmonotoneBump { center: 0.5, width: 0.05, amplitude: 0.3 }.is_monotone());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = CohortSpec {
            shift: ShiftSpec::LogitWarp { temperature: 1.3, shift: -1.0 },
            tiles_per_slide: TileCount::Range { min: 100, max: 200 },
            ..CohortSpec::default()
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<CohortSpec>(&json).unwrap(), spec);
        let minimal = r#"{"n_slides":3,"tiles_per_slide":5,"prevalence":0.5,"evidence_fraction":0.5,
            "neg_dist":{"family":"beta","alpha":2,"beta":5},"pos_dist":{"family":"gaussian","mean":0.8,"std":0.1}}"#;
        let parsed: CohortSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.shift, ShiftSpec::None);
        assert_eq!(parsed.tiles_per_slide, TileCount::Fixed(5));
    }

    #[test]
    fn subsampling_caps_tile_count() {
        let spec = CohortSpec { subsample_tiles: Some(7), ..small(2) };
        let c = generate_cohort(&spec).unwrap();
        assert!(c.slides().iter().all(|s| s.tile_scores.len() == 7));
    }

    proptest! {
        #[test]
        fn monotone_shifts_preserve_selection(
            tiles in prop::collection::vec(0.001f64..0.999, 6..50),
            temperature in 0.3f64..3.0,
            shift in -2.0f64..2.0,
            k in 1usize..3,
        ) {
            let s = ShiftSpec::LogitWarp { temperature, shift };
            let warped: Vec<f64> = tiles.iter().map(|&x| s.apply(x)).collect();
            prop_assert_eq!(
                rank_select(&tiles, k).unwrap().indices,
                rank_select(&warped, k).unwrap().indices
            );
        }
    }
}
