//! Markov bidder-behavior models.
//!
//! A bidder is a map `(bid distribution, last-period KPIs) -> next bid distribution`.
//! The map only sees its own inputs, so it is time-homogeneous by construction and
//! the joint transition of several bidders is the product of the individual ones.
//!
//! The concrete families here are parametric stand-ins for a learned model. Any
//! model honoring [`transition`]'s signature can replace them.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::auction::Money;
use crate::error::{Error, Result};

/// Number of uniform bins every bid distribution is discretized into.
pub const NUM_BINS: usize = 100;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Mean and spread of the Gaussian a histogram was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianShape {
    pub mu: Money,
    pub sigma: Money,
}

/// A 100-bin histogram over `[0, b_max]`; bin `k` stands for the bid `(k + 0.5) * b_max / 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidDistribution {
    weights: Vec<f64>,
    b_max: Money,
    /// Set when the histogram came from [`gaussian_histogram`]; parametric models read it back.
    shape: Option<GaussianShape>,
}

impl BidDistribution {
    pub fn from_weights(weights: Vec<f64>, b_max: Money) -> Result<Self> {
        if weights.len() != NUM_BINS {
            return Err(Error::invalid(format!(
                "bid distribution needs {NUM_BINS} weights, got {}",
                weights.len()
            )));
        }
        if !(b_max.is_finite() && b_max > 0.0) {
            return Err(Error::invalid(format!("b_max must be positive, got {b_max}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("bin weight {w} is not a non-negative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!("bin weights sum to {total}, expected 1")));
        }
        Ok(Self {
            weights,
            b_max,
            shape: None,
        })
    }

    /// Rescales arbitrary non-negative weights to sum to one.
    pub fn from_unnormalized(weights: Vec<f64>, b_max: Money) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("histogram weights must have a positive finite sum"));
        }
        Self::from_weights(weights.iter().map(|w| w / total).collect(), b_max)
    }

    /// All mass on one bin.
    pub fn point_mass(bin: usize, b_max: Money) -> Result<Self> {
        if bin >= NUM_BINS {
            return Err(Error::invalid(format!("bin {bin} out of range")));
        }
        let mut weights = vec![0.0; NUM_BINS];
        weights[bin] = 1.0;
        Self::from_weights(weights, b_max)
    }

    pub fn uniform(b_max: Money) -> Result<Self> {
        Self::from_weights(vec![1.0 / NUM_BINS as f64; NUM_BINS], b_max)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn b_max(&self) -> Money {
        self.b_max
    }

    pub fn shape(&self) -> Option<GaussianShape> {
        self.shape
    }

    pub fn bin_width(&self) -> Money {
        self.b_max / NUM_BINS as f64
    }

    pub fn midpoint(&self, bin: usize) -> Money {
        (bin as f64 + 0.5) * self.b_max / NUM_BINS as f64
    }

    pub fn midpoints(&self) -> Vec<Money> {
        (0..NUM_BINS).map(|k| self.midpoint(k)).collect()
    }

    /// Index of the bin whose half-open interval contains `value` (clamped to the grid).
    pub fn bin_of(&self, value: Money) -> usize {
        let k = (value / self.bin_width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(NUM_BINS - 1)
        }
    }

    pub fn mean(&self) -> Money {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.midpoint(k))
            .sum()
    }

    /// Cumulative weights for inverse-CDF sampling. Every entry from the last
    /// non-empty bin onward is exactly 1 so that any `u < 1` maps to a bin with mass.
    pub fn sampling_cdf(&self) -> [f64; NUM_BINS] {
        let mut cdf = [0.0; NUM_BINS];
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            cdf[k] = acc;
        }
        let last = self
            .weights
            .iter()
            .rposition(|w| *w > 0.0)
            .unwrap_or(NUM_BINS - 1);
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        cdf
    }

    /// Stable 64-bit digest of the histogram, used as a memo key.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.b_max.to_bits().hash(&mut h);
        for w in &self.weights {
            w.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Discretizes a Gaussian density onto the bin midpoints, renormalized to one.
pub fn gaussian_histogram(mu: Money, sigma: Money, b_max: Money) -> Result<BidDistribution> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(b_max.is_finite() && b_max > 0.0) {
        return Err(Error::invalid(format!("b_max must be positive, got {b_max}")));
    }
    if !mu.is_finite() {
        return Err(Error::invalid("mu must be finite"));
    }
    Ok(gaussian_unchecked(mu, sigma, b_max))
}

fn gaussian_unchecked(mu: Money, sigma: Money, b_max: Money) -> BidDistribution {
    let width = b_max / NUM_BINS as f64;
    let log_density: Vec<f64> = (0..NUM_BINS)
        .map(|k| {
            let z = ((k as f64 + 0.5) * width - mu) / sigma;
            -0.5 * z * z
        })
        .collect();
    // Shift by the peak so far-off means do not underflow every bin to zero.
    let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_density.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = raw.iter().sum();
    BidDistribution {
        weights: raw.iter().map(|w| w / total).collect(),
        b_max,
        shape: Some(GaussianShape { mu, sigma }),
    }
}

/// One bidder's feedback for a period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub impressions: u64,
    pub clicks: u64,
    pub payment: Money,
}

impl KpiRecord {
    pub fn new(impressions: u64, clicks: u64, payment: Money) -> Result<Self> {
        let kpi = Self {
            impressions,
            clicks,
            payment,
        };
        kpi.check()?;
        Ok(kpi)
    }

    pub fn check(&self) -> Result<()> {
        if self.clicks > self.impressions {
            return Err(Error::invalid(format!(
                "clicks ({}) exceed impressions ({})",
                self.clicks, self.impressions
            )));
        }
        if !(self.payment.is_finite() && self.payment >= 0.0) {
            return Err(Error::invalid(format!("payment {} is negative", self.payment)));
        }
        if self.clicks == 0 && self.payment != 0.0 {
            return Err(Error::invalid("payment without clicks"));
        }
        Ok(())
    }

    /// Cost per click, when there were clicks.
    pub fn cpc(&self) -> Option<Money> {
        (self.clicks > 0).then(|| self.payment / self.clicks as f64)
    }

    /// Sum of several periods, e.g. a multi-day KPI window.
    pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a KpiRecord>) -> KpiRecord {
        records.into_iter().fold(KpiRecord::default(), |acc, r| KpiRecord {
            impressions: acc.impressions + r.impressions,
            clicks: acc.clicks + r.clicks,
            payment: acc.payment + r.payment,
        })
    }
}

/// Bidder that tracks a target cost per click relative to its private value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendResponsiveParams {
    /// Private per-click value.
    pub value: Money,
    /// Fraction of `value` the bidder is content to pay per click.
    pub target_ratio: f64,
    pub learn_rate: f64,
    /// Relative upward step taken after a period without impressions.
    pub probe_rate: f64,
    pub sigma: Money,
    pub mu_min: Money,
    pub mu_max: Money,
}

impl SpendResponsiveParams {
    pub fn with_value(value: Money) -> Self {
        Self {
            value,
            target_ratio: 0.8,
            learn_rate: 0.2,
            probe_rate: 0.05,
            sigma: 0.1 * value,
            mu_min: 0.2 * value,
            mu_max: value,
        }
    }

    pub fn violations(&self, b_max: Money) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.value.is_finite() && self.value > 0.0 && self.value <= b_max) {
            out.push(format!("value must be in (0, b_max={b_max}], got {}", self.value));
        }
        for (name, v) in [
            ("target_ratio", self.target_ratio),
            ("learn_rate", self.learn_rate),
            ("probe_rate", self.probe_rate),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                out.push(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            out.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.mu_min >= 0.0 && self.mu_min <= self.mu_max && self.mu_max <= b_max) {
            out.push(format!(
                "need 0 <= mu_min <= mu_max <= b_max, got mu_min={} mu_max={} b_max={b_max}",
                self.mu_min, self.mu_max
            ));
        }
        out
    }

    /// Next mean of the bid Gaussian given the current one and a period's KPIs.
    pub fn next_mu(&self, mu: Money, kpi: &KpiRecord) -> Money {
        if let Some(cpc) = kpi.cpc() {
            if cpc <= 0.0 {
                // Free clicks: the factor is unbounded, so the mean goes to its cap.
                return self.mu_max;
            }
            let factor = (self.target_ratio * self.value / cpc).powf(self.learn_rate);
            (mu * factor).clamp(self.mu_min, self.mu_max)
        } else if kpi.impressions > 0 {
            mu
        } else {
            let cap = self.mu_max.min(self.value).max(self.mu_min);
            (mu * (1.0 + self.probe_rate)).clamp(self.mu_min, cap)
        }
    }
}

/// Bidder whose mean takes a fixed-size step up or down, the direction given by a
/// hash of `(seed, state, kpi)`. Deterministic, so the Markov contract still holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkParams {
    pub step: Money,
    pub sigma: Money,
    pub mu_min: Money,
    pub mu_max: Money,
    pub seed: u64,
}

impl RandomWalkParams {
    pub fn violations(&self, b_max: Money) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.step.is_finite() && self.step >= 0.0) {
            out.push(format!("step must be non-negative, got {}", self.step));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            out.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.mu_min >= 0.0 && self.mu_min <= self.mu_max && self.mu_max <= b_max) {
            out.push(format!(
                "need 0 <= mu_min <= mu_max <= b_max, got mu_min={} mu_max={}",
                self.mu_min, self.mu_max
            ));
        }
        out
    }

    fn next_mu(&self, mu: Money, state: &BidDistribution, kpi: &KpiRecord) -> Money {
        let mut h = DefaultHasher::new();
        self.seed.hash(&mut h);
        state.fingerprint().hash(&mut h);
        kpi.impressions.hash(&mut h);
        kpi.clicks.hash(&mut h);
        kpi.payment.to_bits().hash(&mut h);
        let up = h.finish() & 1 == 1;
        let next = if up { mu + self.step } else { mu - self.step };
        next.clamp(self.mu_min, self.mu_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BidderModelSpec {
    /// Never changes its distribution.
    Static,
    SpendResponsive(SpendResponsiveParams),
    RandomWalk(RandomWalkParams),
}

impl BidderModelSpec {
    pub fn violations(&self, b_max: Money) -> Vec<String> {
        match self {
            BidderModelSpec::Static => Vec::new(),
            BidderModelSpec::SpendResponsive(p) => p.violations(b_max),
            BidderModelSpec::RandomWalk(p) => p.violations(b_max),
        }
    }
}

/// Mean of the generating Gaussian, or the histogram mean for free-form states.
fn current_mu(state: &BidDistribution) -> Money {
    state.shape().map_or_else(|| state.mean(), |s| s.mu)
}

/// `s' = g(s, h)` for a single bidder.
pub fn transition(model: &BidderModelSpec, state: &BidDistribution, kpi: &KpiRecord) -> BidDistribution {
    match model {
        BidderModelSpec::Static => state.clone(),
        BidderModelSpec::SpendResponsive(p) => {
            let mu = p.next_mu(current_mu(state), kpi);
            gaussian_unchecked(mu, p.sigma, state.b_max())
        }
        BidderModelSpec::RandomWalk(p) => {
            let mu = p.next_mu(current_mu(state), state, kpi);
            gaussian_unchecked(mu, p.sigma, state.b_max())
        }
    }
}

/// Product-form transition: element `i` is `transition(models[i], states[i], kpis[i])`.
pub fn joint_transition(
    models: &[BidderModelSpec],
    states: &[BidDistribution],
    kpis: &[KpiRecord],
) -> Result<Vec<BidDistribution>> {
    if models.len() != states.len() || states.len() != kpis.len() {
        return Err(Error::invalid(format!(
            "joint transition length mismatch: {} models, {} states, {} kpis",
            models.len(),
            states.len(),
            kpis.len()
        )));
    }
    Ok(models
        .iter()
        .zip(states)
        .zip(kpis)
        .map(|((m, s), h)| transition(m, s, h))
        .collect())
}
