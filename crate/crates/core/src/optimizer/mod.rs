//! Budgeted ask/tell minimization over the unit cube: a Latin hypercube
//! initial design followed by Gaussian-process guided asks (EI, PI, LCB or
//! a GP-Hedge portfolio of the three).
//!
//! Every random draw comes from a ChaCha8 stream derived from the seed and
//! the draw's role (initial design, n-th model ask, fit with n points), so a
//! session restored from its serialized form continues exactly as the
//! original would have.

mod acquisition;
mod gp;
mod lhs;
pub mod testfns;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};

pub use acquisition::{
    ei, expected_improvement, hedge_probabilities, hedge_select, neg_lcb, norm_cdf, norm_pdf, pi, score, Acquisition,
    AcquisitionParams,
};
pub use gp::{
    fit_gp, gp_with_hyperparameters, GpError, GpModel, Hyperparameters, Kernel, JITTER_CAP, JITTER_START,
    LENGTH_SCALE_BOUNDS, SIGNAL_VARIANCE_BOUNDS,
};
pub use lhs::{lhs_sample, random_search_baseline};

/// Asks closer than this (infinity norm) to a known point are resampled.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;
const ASK_STREAM_BASE: u64 = 1 << 32;
const REFINE_STEPS: usize = 20;
const REFINE_STARTS: usize = 5;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("point was not asked or was already told")]
    UnknownPoint,
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies outside the unit cube")]
    OutsideUnitCube,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub dimension: usize,
    pub n_initial: usize,
    pub n_total: usize,
    pub acquisition: Acquisition,
    pub seed: u64,
    #[serde(default)]
    pub kernel: Kernel,
    pub ei_xi: f64,
    pub lcb_kappa: f64,
    pub hedge_eta: f64,
    pub candidate_pool: usize,
    /// Stored in place of NaN or infinite values.
    pub penalty_value: f64,
    #[serde(default)]
    pub exec: ExecMode,
}

impl OptimizerConfig {
    pub fn new(dimension: usize, n_initial: usize, n_total: usize, acquisition: Acquisition, seed: u64) -> Self {
        Self {
            dimension,
            n_initial,
            n_total,
            acquisition,
            seed,
            kernel: Kernel::Matern52,
            ei_xi: 0.01,
            lcb_kappa: 1.96,
            hedge_eta: 1.0,
            candidate_pool: 1024,
            penalty_value: 1e6,
            exec: ExecMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.dimension == 0 {
            return bad("dimension must be at least 1");
        }
        if self.n_total == 0 {
            return bad("n_total must be at least 1");
        }
        if self.n_initial == 0 || self.n_initial > self.n_total {
            return bad("n_initial must be between 1 and n_total");
        }
        if self.candidate_pool == 0 {
            return bad("candidate_pool must be at least 1");
        }
        if !(self.ei_xi >= 0.0) {
            return bad("ei_xi must be non-negative");
        }
        if !(self.lcb_kappa > 0.0) || !(self.hedge_eta > 0.0) {
            return bad("lcb_kappa and hedge_eta must be positive");
        }
        if !self.penalty_value.is_finite() {
            return bad("penalty_value must be finite");
        }
        Ok(())
    }

    fn params(&self) -> AcquisitionParams {
        AcquisitionParams {
            ei_xi: self.ei_xi,
            lcb_kappa: self.lcb_kappa,
        }
    }
}

/// Where an asked point came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "acquisition")]
pub enum Source {
    Enqueued,
    Initial,
    Model(Acquisition),
    /// The surrogate could not be built; a uniform point was used instead.
    Random,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::Enqueued => "enqueued",
            Source::Initial => "lhs",
            Source::Model(a) => a.label(),
            Source::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asked {
    pub point: Vec<f64>,
    pub source: Source,
    /// GP-Hedge nominees of every portfolio member, in portfolio order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nominees: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub value: f64,
    /// The told value was NaN or infinite and `value` is the penalty.
    #[serde(default)]
    pub non_finite: bool,
    pub source: Source,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerSession {
    config: OptimizerConfig,
    evaluated: Vec<Evaluation>,
    pending: Vec<Asked>,
    queued: Vec<Vec<f64>>,
    lhs_issued: usize,
    model_asks: u64,
    hedge_gains: Vec<f64>,
    #[serde(skip)]
    lhs: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    model: Option<(usize, Option<GpModel>)>,
}

impl PartialEq for OptimizerSession {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.evaluated == other.evaluated
            && self.pending == other.pending
            && self.queued == other.queued
            && self.lhs_issued == other.lhs_issued
            && self.model_asks == other.model_asks
            && self.hedge_gains == other.hedge_gains
    }
}

impl OptimizerSession {
    pub fn new(config: OptimizerConfig) -> Result<Self, OptimizerError> {
        config.validate()?;
        Ok(Self {
            config,
            evaluated: Vec::new(),
            pending: Vec::new(),
            queued: Vec::new(),
            lhs_issued: 0,
            model_asks: 0,
            hedge_gains: vec![0.0; Acquisition::PORTFOLIO.len()],
            lhs: None,
            model: None,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn evaluated(&self) -> &[Evaluation] {
        &self.evaluated
    }

    pub fn pending(&self) -> &[Asked] {
        &self.pending
    }

    pub fn hedge_gains(&self) -> &[f64] {
        &self.hedge_gains
    }

    /// Evaluations still allowed, counting pending asks as spent.
    pub fn remaining(&self) -> usize {
        self.config
            .n_total
            .saturating_sub(self.evaluated.len() + self.pending.len() + self.queued.len())
    }

    pub fn best(&self) -> Option<&Evaluation> {
        self.evaluated
            .iter()
            .reduce(|a, b| if b.value < a.value { b } else { a })
    }

    /// Make `point` the next ask, ahead of the initial design. Counts
    /// against the budget.
    pub fn enqueue(&mut self, point: Vec<f64>) -> Result<(), OptimizerError> {
        self.check_point(&point)?;
        if self.remaining() == 0 {
            return Err(OptimizerError::BudgetExhausted(self.config.n_total));
        }
        self.queued.push(point);
        Ok(())
    }

    pub fn ask(&mut self) -> Result<Vec<f64>, OptimizerError> {
        if self.evaluated.len() + self.pending.len() >= self.config.n_total {
            return Err(OptimizerError::BudgetExhausted(self.config.n_total));
        }
        let asked = if !self.queued.is_empty() {
            Asked {
                point: self.queued.remove(0),
                source: Source::Enqueued,
                nominees: Vec::new(),
            }
        } else if self.lhs_issued < self.config.n_initial {
            let (n, d, seed) = (self.config.n_initial, self.config.dimension, self.config.seed);
            let design = self.lhs.get_or_insert_with(|| lhs_sample(n, d, seed));
            let point = design[self.lhs_issued].clone();
            self.lhs_issued += 1;
            Asked {
                point,
                source: Source::Initial,
                nominees: Vec::new(),
            }
        } else {
            self.model_ask()
        };
        let point = asked.point.clone();
        self.pending.push(asked);
        Ok(point)
    }

    pub fn tell(&mut self, point: &[f64], value: f64) -> Result<bool, OptimizerError> {
        let idx = self
            .pending
            .iter()
            .position(|a| a.point == point)
            .ok_or(OptimizerError::UnknownPoint)?;
        let asked = self.pending.remove(idx);
        let non_finite = !value.is_finite();
        self.evaluated.push(Evaluation {
            point: asked.point,
            value: if non_finite { self.config.penalty_value } else { value },
            non_finite,
            source: asked.source,
        });
        if !asked.nominees.is_empty() {
            if let Some(model) = self.model() {
                for (gain, nominee) in self.hedge_gains.iter_mut().zip(&asked.nominees) {
                    *gain -= model.predict_standardized(nominee).0;
                }
            }
        }
        Ok(non_finite)
    }

    /// The surrogate for the current evaluations; fitted at most once per
    /// evaluation count.
    pub fn model(&mut self) -> Option<GpModel> {
        let n = self.evaluated.len();
        if let Some((m, model)) = &self.model {
            if *m == n {
                return model.clone();
            }
        }
        let (points, values): (Vec<Vec<f64>>, Vec<f64>) = self
            .evaluated
            .iter()
            .filter(|e| !e.non_finite)
            .map(|e| (e.point.clone(), e.value))
            .unzip();
        let model = fit_gp(&points, &values, self.config.kernel, self.config.seed, self.config.exec)
            .ok()
            .filter(|m| !m.is_degenerate());
        self.model = Some((n, model.clone()));
        model
    }

    fn model_ask(&mut self) -> Asked {
        let mut rng = rng_for(self.config.seed, ASK_STREAM_BASE + self.model_asks);
        self.model_asks += 1;
        let d = self.config.dimension;
        let Some(model) = self.model() else {
            let point = self.fresh_uniform(&mut rng);
            return Asked {
                point,
                source: Source::Random,
                nominees: Vec::new(),
            };
        };
        let incumbent = self
            .evaluated
            .iter()
            .filter(|e| !e.non_finite)
            .reduce(|a, b| if b.value < a.value { b } else { a })
            .expect("a fitted model has data");
        let best = model.standardize(incumbent.value);
        let pool: Vec<Vec<f64>> = (0..self.config.candidate_pool)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let preds = exec::map(self.config.exec, &pool, |p| model.predict_standardized(p));
        let members: Vec<Acquisition> = match self.config.acquisition {
            Acquisition::GpHedge => Acquisition::PORTFOLIO.to_vec(),
            a => vec![a],
        };
        let params = self.config.params();
        let nominees: Vec<Vec<f64>> = members
            .iter()
            .map(|&a| {
                let f = |x: &[f64]| {
                    let (mu, var) = model.predict_standardized(x);
                    (score(a, mu, var, best, params), -mu)
                };
                let scores: Vec<Score> = preds
                    .iter()
                    .map(|&(mu, var)| (score(a, mu, var, best, params), -mu))
                    .collect();
                maximize(&f, &pool, &scores, &incumbent.point, self.config.exec)
                    .into_iter()
                    .find(|x| !self.is_known(x))
            })
            .collect::<Option<_>>()
            .unwrap_or_default();
        if nominees.is_empty() {
            let point = self.fresh_uniform(&mut rng);
            return Asked {
                point,
                source: Source::Random,
                nominees: Vec::new(),
            };
        }
        let (choice, point, nominees) = if members.len() > 1 {
            let i = hedge_select(&self.hedge_gains, self.config.hedge_eta, &mut rng);
            (i, nominees[i].clone(), nominees)
        } else {
            (0, nominees.into_iter().next().expect("one member"), Vec::new())
        };
        Asked {
            point,
            source: Source::Model(members[choice]),
            nominees,
        }
    }

    fn is_known(&self, point: &[f64]) -> bool {
        let near = |q: &[f64]| q.iter().zip(point).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOLERANCE);
        self.evaluated.iter().any(|e| near(&e.point)) || self.pending.iter().any(|a| near(&a.point))
    }

    fn fresh_uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let p: Vec<f64> = (0..self.config.dimension).map(|_| rng.random::<f64>()).collect();
            if !self.is_known(&p) {
                return p;
            }
        }
    }

    fn check_point(&self, point: &[f64]) -> Result<(), OptimizerError> {
        if point.len() != self.config.dimension {
            return Err(OptimizerError::DimensionMismatch {
                expected: self.config.dimension,
                got: point.len(),
            });
        }
        if !point.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(OptimizerError::OutsideUnitCube);
        }
        Ok(())
    }

    /// `iter,x0..,value,is_best_so_far,acquisition_used`
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter");
        for j in 0..self.config.dimension {
            out.push_str(&format!(",x{j}"));
        }
        out.push_str(",value,is_best_so_far,acquisition_used\n");
        let mut best = f64::INFINITY;
        for (i, e) in self.evaluated.iter().enumerate() {
            let improved = e.value < best;
            best = best.min(e.value);
            out.push_str(&(i + 1).to_string());
            for x in &e.point {
                out.push_str(&format!(",{x}"));
            }
            out.push_str(&format!(",{},{},{}\n", e.value, improved, e.source.label()));
        }
        out
    }
}

/// Best of the top pool candidates and the incumbent after coordinate
/// refinement.
/// Acquisition value, then negated posterior mean. Once the surrogate
/// interpolates its data, EI and PI underflow to zero everywhere and the
/// mean breaks the tie toward exploitation instead of an arbitrary point.
type Score = (f64, f64);

fn better(a: Score, b: Score) -> bool {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).is_gt()
}

/// Candidates best first: refined starts, then the pool in score order.
fn maximize<F>(f: &F, pool: &[Vec<f64>], scores: &[Score], incumbent: &[f64], mode: ExecMode) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Score + Sync,
{
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (scores[a], scores[b]);
        sb.0.total_cmp(&sa.0).then(sb.1.total_cmp(&sa.1)).then(a.cmp(&b))
    });
    let mut starts: Vec<(Vec<f64>, Score)> = order
        .iter()
        .take(REFINE_STARTS)
        .map(|&i| (pool[i].clone(), scores[i]))
        .collect();
    starts.push((incumbent.to_vec(), f(incumbent)));
    let mut refined = exec::map(mode, &starts, |(x, fx)| refine(f, x.clone(), *fx));
    refined.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(b.1 .1.total_cmp(&a.1 .1)));
    refined
        .into_iter()
        .map(|(x, _)| x)
        .chain(order.iter().map(|&i| pool[i].clone()))
        .collect()
}

/// Coordinate search with steps shrinking geometrically from 0.1 to 1e-3.
fn refine<F>(f: &F, mut x: Vec<f64>, mut fx: Score) -> (Vec<f64>, Score)
where
    F: Fn(&[f64]) -> Score,
{
    let ratio = (1e-3f64 / 0.1).powf(1.0 / (REFINE_STEPS - 1) as f64);
    let mut step = 0.1;
    for _ in 0..REFINE_STEPS {
        for j in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[j] = (x[j] + sign * step).clamp(0.0, 1.0);
                if cand[j] == x[j] {
                    continue;
                }
                let fc = f(&cand);
                if better(fc, fx) {
                    x = cand;
                    fx = fc;
                }
            }
        }
        step *= ratio;
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> f64 {
        (x[0] - 0.3).powi(2)
    }

    #[test]
    fn initial_asks_follow_lhs() {
        let mut s = OptimizerSession::new(OptimizerConfig::new(3, 6, 10, Acquisition::Ei, 5)).unwrap();
        let design = lhs_sample(6, 3, 5);
        for p in &design {
            let q = s.ask().unwrap();
            assert_eq!(&q, p);
            s.tell(&q, quad(&q)).unwrap();
        }
    }

    #[test]
    fn budget_and_bookkeeping() {
        let mut s = OptimizerSession::new(OptimizerConfig::new(1, 2, 3, Acquisition::Ei, 1)).unwrap();
        let p = s.ask().unwrap();
        assert_eq!(s.pending().len(), 1);
        assert!(s.tell(&p, f64::NAN).unwrap());
        assert_eq!(s.evaluated()[0].value, 1e6);
        assert!(s.evaluated()[0].non_finite);
        assert_eq!(s.tell(&p, 1.0), Err(OptimizerError::UnknownPoint));
        for _ in 0..2 {
            let p = s.ask().unwrap();
            s.tell(&p, quad(&p)).unwrap();
        }
        assert_eq!(s.ask(), Err(OptimizerError::BudgetExhausted(3)));
    }

    #[test]
    fn enqueued_point_comes_first() {
        let mut s = OptimizerSession::new(OptimizerConfig::new(2, 2, 4, Acquisition::Ei, 1)).unwrap();
        s.enqueue(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.ask().unwrap(), vec![0.5, 0.5]);
        assert_eq!(s.ask().unwrap(), lhs_sample(2, 2, 1)[0]);
    }

    #[test]
    fn serialized_session_continues_identically() {
        let cfg = OptimizerConfig::new(2, 4, 12, Acquisition::GpHedge, 3);
        let mut a = OptimizerSession::new(cfg).unwrap();
        for _ in 0..6 {
            let p = a.ask().unwrap();
            a.tell(&p, quad(&p)).unwrap();
        }
        let mut b: OptimizerSession = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        for _ in 0..6 {
            let (pa, pb) = (a.ask().unwrap(), b.ask().unwrap());
            assert_eq!(pa, pb);
            a.tell(&pa, quad(&pa)).unwrap();
            b.tell(&pb, quad(&pb)).unwrap();
        }
        assert_eq!(a, b);
    }
}
