//! Observed and simulated well series and the weighted NRMSE objective.
//!
//! Each series contributes `weight * rmse / mean(hist)` after the simulated
//! values are interpolated onto the historical times. Rate weights are the
//! well's share of the quantity's cumulative history (trapezoidal); pressure
//! weights are `1 / N` over wells with nonzero pressure history. The
//! objective is the sum of all contributions.

mod csvio;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{read_csv, read_csv_path, write_csv};

/// Series whose historical mean is below this (in series units) are excluded.
pub const MIN_ABS_MEAN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MisfitError {
    #[error("series {0} is empty")]
    EmptySeries(String),
    #[error("series {0}: times and values differ in length")]
    LengthMismatch(String),
    #[error("series {0}: times must be strictly increasing")]
    UnorderedTimes(String),
    #[error("series {0}: values must be finite")]
    NonFinite(String),
    #[error("series {0}: historical mean is zero")]
    ZeroMeanHistory(String),
    #[error("duplicate series {0}")]
    DuplicateSeries(String),
    #[error("unknown quantity `{0}`")]
    UnknownQuantity(String),
    #[error("results file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityClass {
    Pressure,
    ProductionRate,
    InjectionRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QuantityKind {
    Wbhp,
    Wopr,
    Wwpr,
    Wgpr,
    Woir,
    Wwir,
    Wgir,
}

impl QuantityKind {
    pub const ALL: [QuantityKind; 7] = [
        QuantityKind::Wbhp,
        QuantityKind::Wopr,
        QuantityKind::Wwpr,
        QuantityKind::Wgpr,
        QuantityKind::Woir,
        QuantityKind::Wwir,
        QuantityKind::Wgir,
    ];

    pub fn code(self) -> &'static str {
        match self {
            QuantityKind::Wbhp => "WBHP",
            QuantityKind::Wopr => "WOPR",
            QuantityKind::Wwpr => "WWPR",
            QuantityKind::Wgpr => "WGPR",
            QuantityKind::Woir => "WOIR",
            QuantityKind::Wwir => "WWIR",
            QuantityKind::Wgir => "WGIR",
        }
    }

    pub fn class(self) -> QuantityClass {
        match self {
            QuantityKind::Wbhp => QuantityClass::Pressure,
            QuantityKind::Wopr | QuantityKind::Wwpr | QuantityKind::Wgpr => QuantityClass::ProductionRate,
            QuantityKind::Woir | QuantityKind::Wwir | QuantityKind::Wgir => QuantityClass::InjectionRate,
        }
    }

    pub fn default_unit(self) -> &'static str {
        match self.class() {
            QuantityClass::Pressure => "bar",
            _ => "sm3/day",
        }
    }
}

impl fmt::Display for QuantityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for QuantityKind {
    type Err = MisfitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuantityKind::ALL
            .into_iter()
            .find(|q| q.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| MisfitError::UnknownQuantity(s.to_string()))
    }
}

/// (well, quantity) identifying a series. Displays as `QTY:WELL`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub well: String,
    pub quantity: QuantityKind,
}

impl SeriesKey {
    pub fn new(well: impl Into<String>, quantity: QuantityKind) -> Self {
        Self {
            well: well.into(),
            quantity,
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.quantity, self.well)
    }
}

impl FromStr for SeriesKey {
    type Err = MisfitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (q, well) = s
            .split_once(':')
            .ok_or_else(|| MisfitError::Format(format!("column `{s}` is not QUANTITY:WELL")))?;
        if well.is_empty() {
            return Err(MisfitError::Format(format!("column `{s}` has no well name")));
        }
        Ok(SeriesKey::new(well, q.parse()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub well: String,
    pub quantity: QuantityKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub unit: String,
}

impl Series {
    pub fn new(
        well: impl Into<String>,
        quantity: QuantityKind,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Series, MisfitError> {
        let s = Series {
            well: well.into(),
            quantity,
            times,
            values,
            unit: quantity.default_unit().to_string(),
        };
        s.check()?;
        Ok(s)
    }

    pub fn key(&self) -> SeriesKey {
        SeriesKey::new(self.well.clone(), self.quantity)
    }

    pub fn check(&self) -> Result<(), MisfitError> {
        let key = || self.key().to_string();
        if self.times.is_empty() {
            return Err(MisfitError::EmptySeries(key()));
        }
        if self.times.len() != self.values.len() {
            return Err(MisfitError::LengthMismatch(key()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MisfitError::UnorderedTimes(key()));
        }
        if !self.times.iter().chain(&self.values).all(|v| v.is_finite()) {
            return Err(MisfitError::NonFinite(key()));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Trapezoidal integral over time. A single sample counts as one day at
    /// its rate.
    pub fn cumulative(&self) -> f64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
            .sum()
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Interpolate `sim` linearly onto `hist.times`, clamping outside its range.
pub fn align(hist: &Series, sim: &Series) -> Result<Series, MisfitError> {
    if hist.times.is_empty() {
        return Err(MisfitError::EmptySeries(hist.key().to_string()));
    }
    if sim.times.is_empty() || sim.times.len() != sim.values.len() {
        return Err(MisfitError::EmptySeries(sim.key().to_string()));
    }
    let values = hist.times.iter().map(|&t| interpolate(sim, t)).collect();
    Ok(Series {
        well: sim.well.clone(),
        quantity: sim.quantity,
        times: hist.times.clone(),
        values,
        unit: sim.unit.clone(),
    })
}

fn interpolate(s: &Series, t: f64) -> f64 {
    let (ts, vs) = (&s.times, &s.values);
    if t <= ts[0] {
        return vs[0];
    }
    let last = ts.len() - 1;
    if t >= ts[last] {
        return vs[last];
    }
    let hi = ts.partition_point(|&x| x < t);
    if ts[hi] == t {
        return vs[hi];
    }
    let lo = hi - 1;
    let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
    vs[lo] + w * (vs[hi] - vs[lo])
}

/// Root mean square difference of two equally long value vectors.
pub fn rmse(hist: &[f64], sim: &[f64]) -> f64 {
    let sum: f64 = hist.iter().zip(sim).map(|(h, s)| (s - h) * (s - h)).sum();
    (sum / hist.len() as f64).sqrt()
}

/// `weight * rmse(sim, hist) / mean(hist)`; `sim` must already be on the
/// historical times.
pub fn wnrmse(hist: &Series, sim: &Series, weight: f64) -> Result<f64, MisfitError> {
    if hist.values.len() != sim.values.len() {
        return Err(MisfitError::LengthMismatch(hist.key().to_string()));
    }
    if hist.values.is_empty() {
        return Err(MisfitError::EmptySeries(hist.key().to_string()));
    }
    let mean = hist.mean();
    if mean.abs() < MIN_ABS_MEAN {
        return Err(MisfitError::ZeroMeanHistory(hist.key().to_string()));
    }
    Ok(weight * rmse(&hist.values, &sim.values) / mean.abs())
}

/// How rate weights are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    /// Each rate quantity's well weights sum to 1.
    #[default]
    PerQuantity,
    /// All production (or injection) quantities share one normalization.
    PerClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub well: String,
    pub quantity: QuantityKind,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    series: Vec<Series>,
    weights: Vec<f64>,
    skipped: Vec<Skipped>,
    #[serde(default)]
    scope: WeightScope,
    penalty_nrmse: f64,
}

impl ObservationSet {
    /// Build a set and derive its weights.
    pub fn new(series: Vec<Series>) -> Result<ObservationSet, MisfitError> {
        Self::with_scope(series, WeightScope::PerQuantity)
    }

    pub fn with_scope(mut series: Vec<Series>, scope: WeightScope) -> Result<ObservationSet, MisfitError> {
        for s in &series {
            s.check()?;
        }
        series.sort_by_key(Series::key);
        if let Some(w) = series.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(MisfitError::DuplicateSeries(w[0].key().to_string()));
        }
        let mut obs = ObservationSet {
            weights: vec![0.0; series.len()],
            series,
            skipped: Vec::new(),
            scope,
            penalty_nrmse: 10.0,
        };
        obs.compute_weights();
        Ok(obs)
    }

    pub fn with_penalty(mut self, penalty_nrmse: f64) -> Self {
        self.penalty_nrmse = penalty_nrmse;
        self
    }

    pub fn penalty_nrmse(&self) -> f64 {
        self.penalty_nrmse
    }

    /// Objective charged for a failed simulation: every weighted series
    /// missing.
    pub fn failure_penalty(&self) -> f64 {
        self.weighted().map(|(_, w)| w * self.penalty_nrmse).sum()
    }

    pub fn scope(&self) -> WeightScope {
        self.scope
    }

    pub fn series(&self) -> &[Series] {
        &self.series
    }

    pub fn get(&self, well: &str, quantity: QuantityKind) -> Option<&Series> {
        self.series.iter().find(|s| s.well == well && s.quantity == quantity)
    }

    pub fn weight(&self, well: &str, quantity: QuantityKind) -> f64 {
        self.series
            .iter()
            .position(|s| s.well == well && s.quantity == quantity)
            .map_or(0.0, |i| self.weights[i])
    }

    /// (series, weight) pairs with nonzero weight.
    pub fn weighted(&self) -> impl Iterator<Item = (&Series, f64)> {
        self.series
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }

    /// Series excluded from the objective, with reasons.
    pub fn skipped(&self) -> &[Skipped] {
        &self.skipped
    }

    /// Derive weights: cumulative share per rate quantity (or class), and
    /// `1 / N` for pressure.
    pub fn compute_weights(&mut self) {
        self.skipped.clear();
        let mut weights = vec![0.0; self.series.len()];
        let mut eligible = vec![false; self.series.len()];
        for (i, s) in self.series.iter().enumerate() {
            if s.is_zero() {
                self.skipped.push(skip(s, "zero history"));
            } else if s.mean().abs() < MIN_ABS_MEAN {
                self.skipped.push(skip(s, "degenerate mean"));
            } else {
                eligible[i] = true;
            }
        }
        let group = |s: &Series| match (s.quantity.class(), self.scope) {
            (QuantityClass::Pressure, _) | (_, WeightScope::PerQuantity) => {
                format!("{}", s.quantity)
            }
            (class, WeightScope::PerClass) => format!("{class:?}"),
        };
        let mut totals: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (s, _) in self.series.iter().zip(&eligible).filter(|(_, e)| **e) {
            let entry = totals.entry(group(s)).or_default();
            entry.1 += 1;
            if s.quantity.class() != QuantityClass::Pressure {
                entry.0 += s.cumulative().abs();
            }
        }
        for (i, s) in self.series.iter().enumerate().filter(|(i, _)| eligible[*i]) {
            let (total, count) = totals[&group(s)];
            weights[i] = match s.quantity.class() {
                QuantityClass::Pressure => 1.0 / count as f64,
                _ if total > 0.0 => s.cumulative().abs() / total,
                _ => 0.0,
            };
            if weights[i] == 0.0 {
                self.skipped.push(skip(s, "zero cumulative"));
            }
        }
        self.weights = weights;
    }
}

fn skip(s: &Series, reason: &str) -> Skipped {
    Skipped {
        well: s.well.clone(),
        quantity: s.quantity,
        reason: reason.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMisfit {
    pub well: String,
    pub quantity: QuantityKind,
    pub weight: f64,
    /// Absent when the simulated series was missing and a penalty applied.
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
    pub wnrmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MisfitReport {
    pub total: f64,
    pub per_series: Vec<SeriesMisfit>,
    pub skipped: Vec<Skipped>,
    /// Set when the whole evaluation failed (simulator error) and `total`
    /// is a penalty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl MisfitReport {
    pub fn failed(penalty: f64, cause: impl Into<String>) -> Self {
        Self {
            total: penalty,
            failure: Some(cause.into()),
            ..Self::default()
        }
    }

    pub fn entry(&self, well: &str, quantity: QuantityKind) -> Option<&SeriesMisfit> {
        self.per_series
            .iter()
            .find(|e| e.well == well && e.quantity == quantity)
    }
}

/// Sum of weighted NRMSE over every weighted observation.
pub fn objective(obs: &ObservationSet, sim: &[Series]) -> MisfitReport {
    let lookup: BTreeMap<SeriesKey, &Series> = sim.iter().map(|s| (s.key(), s)).collect();
    let mut report = MisfitReport {
        skipped: obs.skipped.clone(),
        ..MisfitReport::default()
    };
    for (hist, weight) in obs.weighted() {
        let entry = match lookup.get(&hist.key()) {
            Some(s) => match align(hist, s) {
                Ok(aligned) => {
                    let r = rmse(&hist.values, &aligned.values);
                    let nrmse = r / hist.mean().abs();
                    SeriesMisfit {
                        well: hist.well.clone(),
                        quantity: hist.quantity,
                        weight,
                        rmse: Some(r),
                        nrmse: Some(nrmse),
                        wnrmse: weight * nrmse,
                    }
                }
                Err(_) => penalized(obs, hist, weight, &mut report.skipped, "empty simulation output"),
            },
            None => penalized(obs, hist, weight, &mut report.skipped, "missing simulation output"),
        };
        report.per_series.push(entry);
    }
    report.total = report.per_series.iter().map(|e| e.wnrmse).sum();
    report
}

fn penalized(
    obs: &ObservationSet,
    hist: &Series,
    weight: f64,
    skipped: &mut Vec<Skipped>,
    reason: &str,
) -> SeriesMisfit {
    skipped.push(skip(hist, reason));
    SeriesMisfit {
        well: hist.well.clone(),
        quantity: hist.quantity,
        weight,
        rmse: None,
        nrmse: None,
        wnrmse: weight * obs.penalty_nrmse,
    }
}
