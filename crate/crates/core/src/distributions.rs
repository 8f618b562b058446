//! Weighted empirical distributions on the real line and exact 1D Monge maps.
//!
//! The CDF of an [`EmpiricalDistribution`] is the piecewise-linear interpolation
//! of the midpoint plotting positions: at support point `v_i` the CDF equals
//! `W_{i-1} + w_i / 2`, where `W_{i-1}` is the cumulative weight strictly below
//! `v_i`. For `n` uniformly weighted points this is `(i - 0.5) / n`. Between
//! support points the CDF is linear and outside the support it is clamped, so
//! it is strictly increasing and exactly invertible on `[v_1, v_n]`.
//!
//! The optimal transport map between two such distributions is the monotone
//! rearrangement `x -> F_b^{-1}(F_a(x))`, stored as a [`MongeMap`] with one knot
//! per support point of the source distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability measure made of finitely many weighted point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    weights: Vec<f64>,
    cum: Vec<f64>,
    positions: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Builds a distribution from samples with uniform weights `1/n`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        build_empirical(samples, None)
    }

    /// Builds a distribution from `(value, weight)` pairs; weights need not be normalized.
    pub fn from_weighted_points<I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut points: Vec<(f64, f64)> = points.into_iter().collect();
        for &(v, w) in &points {
            if !v.is_finite() {
                return Err(Error::NonFinite(v));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidWeight(w));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut values: Vec<f64> = Vec::with_capacity(points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(points.len());
        for (v, w) in points {
            match values.last() {
                Some(&last) if last == v => *weights.last_mut().unwrap() += w,
                _ => {
                    values.push(v);
                    weights.push(w);
                }
            }
        }
        if values.len() < 2 {
            return Err(Error::DegenerateDistribution(format!(
                "{} distinct support point(s), at least 2 required",
                values.len()
            )));
        }

        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }

        let mut cum = Vec::with_capacity(weights.len());
        let mut positions = Vec::with_capacity(weights.len());
        let mut below = 0.0;
        for &w in &weights {
            positions.push(below + w / 2.0);
            below += w;
            cum.push(below);
        }

        Ok(Self {
            values,
            weights,
            cum,
            positions,
        })
    }

    /// Strictly increasing support points.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Normalized weights, one per support point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cumulative weight up to and including each support point.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// CDF values at the support points (midpoint plotting positions).
    pub fn plotting_positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Interpolated CDF, clamped to the first and last plotting positions.
    pub fn cdf(&self, x: f64) -> f64 {
        interpolate(&self.values, &self.positions, x)
    }

    /// Exact inverse of [`cdf`](Self::cdf) on its range; clamps to the support outside it.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(interpolate(&self.positions, &self.values, p))
    }
}

/// Piecewise-linear interpolation through `(xs[i], ys[i])`, flat outside `[xs[0], xs[n-1]]`.
///
/// `xs` must be strictly increasing and `ys` nondecreasing. The result is exact at the
/// knots and never leaves `[ys[i], ys[i+1]]` inside a segment, so it is monotone even
/// under rounding.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x.is_nan() {
        return x;
    }
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&k| k <= x) - 1;
    let (x0, x1) = (xs[i], xs[i + 1]);
    let (y0, y1) = (ys[i], ys[i + 1]);
    let t = (x - x0) / (x1 - x0);
    (y0 + t * (y1 - y0)).clamp(y0, y1)
}

/// Builds an empirical distribution, merging duplicate values and normalizing weights.
pub fn build_empirical(samples: &[f64], weights: Option<&[f64]>) -> Result<EmpiricalDistribution> {
    match weights {
        None => {
            let w = 1.0 / samples.len().max(1) as f64;
            EmpiricalDistribution::from_weighted_points(samples.iter().map(|&v| (v, w)))
        }
        Some(weights) => {
            if weights.len() != samples.len() {
                return Err(Error::LengthMismatch {
                    what: "samples and weights",
                    left: samples.len(),
                    right: weights.len(),
                });
            }
            EmpiricalDistribution::from_weighted_points(
                samples.iter().copied().zip(weights.iter().copied()),
            )
        }
    }
}

/// Prevalence-reweighted mixture `omega_c * pos + (1 - omega_c) * neg`.
///
/// `None` marks a class whose distribution could not be built. It is only an
/// error when that class receives positive mass. At `omega_c = 1` (resp. `0`)
/// the positive (resp. negative) distribution is returned unchanged.
pub fn build_target_mixture(
    pos: Option<&EmpiricalDistribution>,
    neg: Option<&EmpiricalDistribution>,
    omega_c: f64,
) -> Result<EmpiricalDistribution> {
    if !(0.0..=1.0).contains(&omega_c) {
        return Err(Error::InvalidProbability(omega_c));
    }
    let missing = |class: &str| {
        Error::DegenerateDistribution(format!(
            "{class} reference distribution is required for omega_c = {omega_c}"
        ))
    };
    if omega_c == 1.0 {
        return pos.cloned().ok_or_else(|| missing("positive"));
    }
    if omega_c == 0.0 {
        return neg.cloned().ok_or_else(|| missing("negative"));
    }
    let pos = pos.ok_or_else(|| missing("positive"))?;
    let neg = neg.ok_or_else(|| missing("negative"))?;

    let pos_points = pos
        .values()
        .iter()
        .zip(pos.weights())
        .map(|(&v, &w)| (v, omega_c * w));
    let neg_points = neg
        .values()
        .iter()
        .zip(neg.weights())
        .map(|(&v, &w)| (v, (1.0 - omega_c) * w));
    EmpiricalDistribution::from_weighted_points(pos_points.chain(neg_points))
}

/// Monotone piecewise-linear transport map, flat outside the source range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MongeMapRepr")]
pub struct MongeMap {
    source_knots: Vec<f64>,
    target_knots: Vec<f64>,
}

#[derive(Deserialize)]
struct MongeMapRepr {
    source_knots: Vec<f64>,
    target_knots: Vec<f64>,
}

impl TryFrom<MongeMapRepr> for MongeMap {
    type Error = Error;

    fn try_from(repr: MongeMapRepr) -> Result<Self> {
        MongeMap::new(repr.source_knots, repr.target_knots)
    }
}

impl MongeMap {
    /// Source knots must be strictly increasing, target knots nondecreasing.
    pub fn new(source_knots: Vec<f64>, target_knots: Vec<f64>) -> Result<Self> {
        if source_knots.len() != target_knots.len() {
            return Err(Error::LengthMismatch {
                what: "source and target knots",
                left: source_knots.len(),
                right: target_knots.len(),
            });
        }
        if source_knots.len() < 2 {
            return Err(Error::DegenerateDistribution(
                "a transport map needs at least 2 knots".into(),
            ));
        }
        if let Some(&bad) = source_knots
            .iter()
            .chain(&target_knots)
            .find(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(bad));
        }
        if source_knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateDistribution(
                "source knots must be strictly increasing".into(),
            ));
        }
        if target_knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::DegenerateDistribution(
                "target knots must be nondecreasing".into(),
            ));
        }
        Ok(Self {
            source_knots,
            target_knots,
        })
    }

    /// Identity on `[lo, hi]`, clamped outside.
    pub fn identity(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo, hi], vec![lo, hi])
    }

    pub fn source_knots(&self) -> &[f64] {
        &self.source_knots
    }

    pub fn target_knots(&self) -> &[f64] {
        &self.target_knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        interpolate(&self.source_knots, &self.target_knots, x)
    }

    /// Elementwise evaluation, order preserved.
    pub fn apply(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// True when every segment has positive slope, i.e. the map is injective on its source range.
    pub fn is_strictly_increasing(&self) -> bool {
        self.target_knots.windows(2).all(|w| w[0] < w[1])
    }
}

/// Optimal 1D transport map pushing `a` forward onto `b`: `x -> F_b^{-1}(F_a(x))`.
pub fn build_monge_map(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> MongeMap {
    let target = a
        .plotting_positions()
        .iter()
        .map(|&p| interpolate(&b.positions, &b.values, p))
        .collect();
    MongeMap {
        source_knots: a.values.clone(),
        target_knots: target,
    }
}

/// Elementwise map application.
pub fn apply_map(map: &MongeMap, xs: &[f64]) -> Vec<f64> {
    map.apply(xs)
}
