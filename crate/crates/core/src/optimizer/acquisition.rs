//! Acquisition functions (minimization convention) and the GP-Hedge
//! portfolio selector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::gp::GpModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Acquisition {
    #[serde(rename = "EI")]
    Ei,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "LCB")]
    Lcb,
    #[serde(rename = "GP_HEDGE")]
    GpHedge,
}

impl Acquisition {
    /// The members GP-Hedge chooses among.
    pub const PORTFOLIO: [Acquisition; 3] = [Acquisition::Ei, Acquisition::Pi, Acquisition::Lcb];

    pub fn label(self) -> &'static str {
        match self {
            Acquisition::Ei => "EI",
            Acquisition::Pi => "PI",
            Acquisition::Lcb => "LCB",
            Acquisition::GpHedge => "GP_HEDGE",
        }
    }
}

impl std::str::FromStr for Acquisition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EI" => Ok(Acquisition::Ei),
            "PI" => Ok(Acquisition::Pi),
            "LCB" => Ok(Acquisition::Lcb),
            "GP_HEDGE" | "HEDGE" => Ok(Acquisition::GpHedge),
            other => Err(format!("unknown acquisition `{other}`")),
        }
    }
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` for a normal posterior `(mu, sigma)`.
pub fn ei(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gap = best - mu - xi;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// Probability of improving on `best` by at least `xi`.
pub fn pi(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gap = best - mu - xi;
    if !(sigma > 0.0) {
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    norm_cdf(gap / sigma)
}

/// Negated lower confidence bound, so that larger is better.
pub fn neg_lcb(mu: f64, sigma: f64, kappa: f64) -> f64 {
    -(mu - kappa * sigma)
}

/// Expected improvement of `model` at `point` in the model's original units.
pub fn expected_improvement(model: &GpModel, point: &[f64], best_value: f64, xi: f64) -> f64 {
    let (mu, sigma) = model.predict(point);
    ei(mu, sigma, best_value, xi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub ei_xi: f64,
    pub lcb_kappa: f64,
}

/// Score of one acquisition from a standardized posterior.
pub fn score(a: Acquisition, mu: f64, var: f64, best: f64, p: AcquisitionParams) -> f64 {
    let sigma = var.sqrt();
    match a {
        Acquisition::Ei | Acquisition::GpHedge => ei(mu, sigma, best, p.ei_xi),
        Acquisition::Pi => pi(mu, sigma, best, p.ei_xi),
        Acquisition::Lcb => neg_lcb(mu, sigma, p.lcb_kappa),
    }
}

/// Softmax probabilities of `eta * gains`.
pub fn hedge_probabilities(gains: &[f64], eta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = gains.iter().map(|g| eta * g).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Sample a portfolio index with probability proportional to `exp(eta * gain)`.
pub fn hedge_select(gains: &[f64], eta: f64, rng: &mut ChaCha8Rng) -> usize {
    let probs = hedge_probabilities(gains, eta);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
