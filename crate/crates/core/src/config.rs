//! Configuration file schema.
//!
//! A config is TOML (or JSON, by `.json` extension) describing the market, the
//! bidders and a table of named strategies. Unknown keys are rejected. Every
//! violation is reported at once, prefixed with the path of the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auction::{CtrVector, ReserveProfile};
use crate::bidder::{
    gaussian_histogram, BidDistribution, BidderModelSpec, RandomWalkParams, SpendResponsiveParams, NUM_BINS,
};
use crate::error::{Error, Result};
use crate::harness::{BidderSetup, SimulationConfig};
use crate::mcts::{MctsParams, UnvisitedOrder};
use crate::strategies::{StrategyKind, StrategySpec};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_HORIZON: u32 = 120;
pub const DEFAULT_QUERIES_PER_DAY: u64 = 1000;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_NORMALIZATION_WINDOW: usize = 14;
pub const DEFAULT_GREEDY_SAMPLES: usize = 10_000;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_horizon() -> u32 {
    DEFAULT_HORIZON
}
fn default_queries() -> u64 {
    DEFAULT_QUERIES_PER_DAY
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_one() -> u32 {
    1
}
fn default_window() -> usize {
    DEFAULT_NORMALIZATION_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Explicit seed list for multi-seed commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_queries")]
    pub queries_per_day: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub b_max: f64,
    pub ctrs: Vec<f64>,
    #[serde(default = "default_one")]
    pub kpi_window: u32,
    #[serde(default = "default_window")]
    pub normalization_window: usize,
    /// Strategy whose converged revenue normalizes the others.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    /// Strategy used by `run` when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub bidders: Vec<BidderConfig>,
    pub strategies: BTreeMap<String, StrategyConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Static,
    SpendResponsive,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderConfig {
    pub family: Option<Family>,
    /// Private per-click value (spend_responsive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Initial Gaussian mean; `initial_mu` is accepted as an alias.
    #[serde(default, alias = "initial_mu", skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Explicit 100-bin histogram (static only), instead of `mu`/`sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    /// Random-walk step size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    StaticOpt,
    Greedy,
    FixedProfile,
    ConstantReserve,
    Mcts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: KindName,
    #[serde(default = "default_one")]
    pub update_period: u32,
    /// fixed_profile
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserves: Option<Vec<f64>>,
    /// constant_reserve
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve: Option<f64>,
    /// Starting reserves for static_opt, greedy and mcts (default: static optimum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_reserves: Option<Vec<f64>>,
    /// Auctions per revenue estimate (greedy and mcts).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unvisited: Option<UnvisitedOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_returns: Option<bool>,
}

impl StrategyConfig {
    pub fn new(kind: KindName) -> Self {
        Self {
            kind,
            update_period: 1,
            reserves: None,
            reserve: None,
            initial_reserves: None,
            n_samples: None,
            depth: None,
            iterations: None,
            c_p: None,
            lambda: None,
            multipliers: None,
            unvisited: None,
            normalize_returns: None,
        }
    }

    /// Keys set on this strategy that its kind does not read.
    fn stray_keys(&self) -> Vec<&'static str> {
        let mcts_only = [
            ("depth", self.depth.is_some()),
            ("iterations", self.iterations.is_some()),
            ("c_p", self.c_p.is_some()),
            ("lambda", self.lambda.is_some()),
            ("multipliers", self.multipliers.is_some()),
            ("unvisited", self.unvisited.is_some()),
            ("normalize_returns", self.normalize_returns.is_some()),
        ];
        let mut stray = Vec::new();
        let k = self.kind;
        if self.reserves.is_some() && k != KindName::FixedProfile {
            stray.push("reserves");
        }
        if self.reserve.is_some() && k != KindName::ConstantReserve {
            stray.push("reserve");
        }
        if self.initial_reserves.is_some() && matches!(k, KindName::FixedProfile | KindName::ConstantReserve) {
            stray.push("initial_reserves");
        }
        if self.n_samples.is_some() && !matches!(k, KindName::Greedy | KindName::Mcts) {
            stray.push("n_samples");
        }
        if k != KindName::Mcts {
            stray.extend(mcts_only.iter().filter(|(_, set)| *set).map(|(name, _)| *name));
        }
        stray
    }

    fn with_defaults(&self) -> Self {
        let mut s = self.clone();
        match s.kind {
            KindName::Greedy => {
                s.n_samples.get_or_insert(DEFAULT_GREEDY_SAMPLES);
            }
            KindName::Mcts => {
                let d = MctsParams::default();
                s.n_samples.get_or_insert(d.n_auction_samples);
                s.depth.get_or_insert(d.depth);
                s.iterations.get_or_insert(d.iterations);
                s.c_p.get_or_insert(d.c_p);
                s.lambda.get_or_insert(d.lambda);
                s.multipliers.get_or_insert(d.multipliers);
                s.unvisited.get_or_insert(d.unvisited);
                s.normalize_returns.get_or_insert(d.normalize_returns);
            }
            _ => {}
        }
        s
    }

    fn to_spec(&self, path: &str, n_bidders: usize, errors: &mut Vec<String>) -> Option<StrategySpec> {
        for key in self.stray_keys() {
            errors.push(format!("{path}.{key} is not used by kind {:?}", self.kind));
        }
        let s = self.with_defaults();
        let kind = match s.kind {
            KindName::StaticOpt => StrategyKind::StaticOpt,
            KindName::Greedy => StrategyKind::Greedy {
                n_samples: s.n_samples.unwrap_or_default(),
            },
            KindName::FixedProfile => match &s.reserves {
                None => {
                    errors.push(format!("{path}.reserves is required for fixed_profile"));
                    return None;
                }
                Some(r) => match ReserveProfile::new(r.clone()) {
                    Ok(p) => StrategyKind::FixedProfile(p),
                    Err(e) => {
                        errors.push(format!("{path}.reserves: {e}"));
                        return None;
                    }
                },
            },
            KindName::ConstantReserve => match s.reserve {
                None => {
                    errors.push(format!("{path}.reserve is required for constant_reserve"));
                    return None;
                }
                Some(c) => StrategyKind::ConstantReserve(c),
            },
            KindName::Mcts => StrategyKind::Mcts(MctsParams {
                depth: s.depth.unwrap_or_default(),
                iterations: s.iterations.unwrap_or_default(),
                c_p: s.c_p.unwrap_or_default(),
                lambda: s.lambda.unwrap_or_default(),
                n_auction_samples: s.n_samples.unwrap_or_default(),
                multipliers: s.multipliers.clone().unwrap_or_default(),
                unvisited: s.unvisited.unwrap_or_default(),
                normalize_returns: s.normalize_returns.unwrap_or_default(),
            }),
        };
        let spec = StrategySpec::new(kind, s.update_period);
        errors.extend(spec.violations(n_bidders).into_iter().map(|v| format!("{path}: {v}")));
        Some(spec)
    }
}

impl BidderConfig {
    fn with_defaults(&self) -> Self {
        let mut b = self.clone();
        match b.family {
            Some(Family::SpendResponsive) => {
                if let Some(v) = b.value {
                    let d = SpendResponsiveParams::with_value(v);
                    b.mu.get_or_insert(d.mu_max);
                    b.sigma.get_or_insert(d.sigma);
                    b.target_ratio.get_or_insert(d.target_ratio);
                    b.learn_rate.get_or_insert(d.learn_rate);
                    b.probe_rate.get_or_insert(d.probe_rate);
                    b.mu_min.get_or_insert(d.mu_min);
                    b.mu_max.get_or_insert(d.mu_max);
                }
            }
            Some(Family::RandomWalk) => {
                b.walk_seed.get_or_insert(0);
            }
            _ => {}
        }
        b
    }

    fn to_setup(&self, path: &str, b_max: f64, errors: &mut Vec<String>) -> Option<BidderSetup> {
        let b = self.with_defaults();
        let Some(family) = b.family else {
            errors.push(format!("{path}.family is required"));
            return None;
        };
        let mut missing = |key: &str, v: Option<f64>| -> Option<f64> {
            if v.is_none() {
                errors.push(format!("{path}.{key} is required for {family:?} bidders"));
            }
            v
        };
        let stray = |key: &'static str, set: bool| set.then_some(key);
        let strays: Vec<&str> = match family {
            Family::Static => vec![
                stray("value", b.value.is_some()),
                stray("target_ratio", b.target_ratio.is_some()),
                stray("learn_rate", b.learn_rate.is_some()),
                stray("probe_rate", b.probe_rate.is_some()),
                stray("mu_min", b.mu_min.is_some()),
                stray("mu_max", b.mu_max.is_some()),
                stray("step", b.step.is_some()),
                stray("walk_seed", b.walk_seed.is_some()),
            ],
            Family::SpendResponsive => vec![
                stray("weights", b.weights.is_some()),
                stray("step", b.step.is_some()),
                stray("walk_seed", b.walk_seed.is_some()),
            ],
            Family::RandomWalk => vec![
                stray("weights", b.weights.is_some()),
                stray("value", b.value.is_some()),
                stray("target_ratio", b.target_ratio.is_some()),
                stray("learn_rate", b.learn_rate.is_some()),
                stray("probe_rate", b.probe_rate.is_some()),
            ],
        }
        .into_iter()
        .flatten()
        .collect();

        let (model, mu, sigma) = match family {
            Family::Static => {
                if let Some(w) = &b.weights {
                    if b.mu.is_some() || b.sigma.is_some() {
                        errors.push(format!("{path}: give either weights or mu/sigma, not both"));
                    }
                    for key in strays {
                        errors.push(format!("{path}.{key} is not used by Static bidders"));
                    }
                    return match BidDistribution::from_unnormalized(w.clone(), b_max) {
                        Ok(d) if w.len() == NUM_BINS => Some(BidderSetup {
                            model: BidderModelSpec::Static,
                            initial: d,
                        }),
                        Ok(_) | Err(_) => {
                            errors.push(format!(
                                "{path}.weights must be {NUM_BINS} non-negative numbers with a positive sum"
                            ));
                            None
                        }
                    };
                }
                (BidderModelSpec::Static, missing("mu", b.mu), missing("sigma", b.sigma))
            }
            Family::SpendResponsive => {
                let value = missing("value", b.value);
                let model = value.map(|v| {
                    BidderModelSpec::SpendResponsive(SpendResponsiveParams {
                        value: v,
                        target_ratio: b.target_ratio.unwrap_or_default(),
                        learn_rate: b.learn_rate.unwrap_or_default(),
                        probe_rate: b.probe_rate.unwrap_or_default(),
                        sigma: b.sigma.unwrap_or_default(),
                        mu_min: b.mu_min.unwrap_or_default(),
                        mu_max: b.mu_max.unwrap_or_default(),
                    })
                });
                match model {
                    Some(m) => (m, b.mu, b.sigma),
                    None => return None,
                }
            }
            Family::RandomWalk => {
                let (step, sigma, lo, hi) = (
                    missing("step", b.step),
                    missing("sigma", b.sigma),
                    missing("mu_min", b.mu_min),
                    missing("mu_max", b.mu_max),
                );
                let mu = missing("mu", b.mu);
                let (Some(step), Some(sigma), Some(mu_min), Some(mu_max)) = (step, sigma, lo, hi) else {
                    return None;
                };
                let model = BidderModelSpec::RandomWalk(RandomWalkParams {
                    step,
                    sigma,
                    mu_min,
                    mu_max,
                    seed: b.walk_seed.unwrap_or_default(),
                });
                (model, mu, Some(sigma))
            }
        };
        for key in strays {
            errors.push(format!("{path}.{key} is not used by {family:?} bidders"));
        }
        let (Some(mu), Some(sigma)) = (mu, sigma) else {
            return None;
        };
        errors.extend(model.violations(b_max).into_iter().map(|v| format!("{path}: {v}")));
        let bounds = match model {
            BidderModelSpec::SpendResponsive(p) => Some((p.mu_min, p.mu_max)),
            BidderModelSpec::RandomWalk(p) => Some((p.mu_min, p.mu_max)),
            BidderModelSpec::Static => None,
        };
        if let Some((lo, hi)) = bounds {
            if !(lo..=hi).contains(&mu) {
                errors.push(format!("{path}.mu = {mu} lies outside [mu_min={lo}, mu_max={hi}]"));
            }
        }
        match gaussian_histogram(mu, sigma, b_max) {
            Ok(initial) => Some(BidderSetup { model, initial }),
            Err(e) => {
                errors.push(format!("{path}: {e}"));
                None
            }
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses JSON when the path ends in `.json`, TOML otherwise.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| parse_err(e.to_string()))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// The same document with every defaulted field written out.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.bidders = c.bidders.iter().map(BidderConfig::with_defaults).collect();
        c.strategies = c
            .strategies
            .iter()
            .map(|(k, v)| (k.clone(), v.with_defaults()))
            .collect();
        c
    }

    pub fn strategy_names(&self) -> Vec<String> {
        self.strategies.keys().cloned().collect()
    }

    /// Validates the whole document, including every strategy.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let names: Vec<String> = self.strategies.keys().cloned().collect();
        self.build_all(&names, &mut errors);
        for (key, name) in [("baseline", &self.baseline), ("strategy", &self.strategy)] {
            if let Some(n) = name {
                if !self.strategies.contains_key(n) {
                    errors.push(format!("{key} = {n:?} names no entry in [strategies]"));
                }
            }
        }
        if self.normalization_window == 0 || self.normalization_window > self.horizon as usize {
            errors.push(format!(
                "normalization_window = {} must be in 1..=horizon ({})",
                self.normalization_window, self.horizon
            ));
        }
        if self.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            errors.push("seeds must not be empty".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The simulation configuration for one named strategy.
    pub fn simulation(&self, strategy: &str) -> Result<SimulationConfig> {
        let mut errors = Vec::new();
        let built = self.build_all(&[strategy.to_string()], &mut errors);
        match built {
            Some(mut v) if errors.is_empty() => Ok(v.remove(0)),
            _ => Err(Error::Config(errors)),
        }
    }

    fn build_all(&self, names: &[String], errors: &mut Vec<String>) -> Option<Vec<SimulationConfig>> {
        let ctrs = match CtrVector::new(self.ctrs.clone()) {
            Ok(c) => Some(c),
            Err(e) => {
                errors.push(format!("ctrs: {e}"));
                None
            }
        };
        if !(self.b_max.is_finite() && self.b_max > 0.0) {
            errors.push(format!("b_max must be positive, got {}", self.b_max));
            return None;
        }
        let bidders: Vec<Option<BidderSetup>> = self
            .bidders
            .iter()
            .enumerate()
            .map(|(i, b)| b.to_setup(&format!("bidders[{i}]"), self.b_max, errors))
            .collect();
        let n = self.bidders.len();
        let mut out = Vec::new();
        for name in names {
            let path = format!("strategies.{name}");
            let Some(sc) = self.strategies.get(name) else {
                errors.push(format!("unknown strategy {name:?}; defined: {:?}", self.strategy_names()));
                continue;
            };
            let Some(spec) = sc.to_spec(&path, n, errors) else {
                continue;
            };
            let initial_reserves = match &sc.initial_reserves {
                None => None,
                Some(r) => match ReserveProfile::new(r.clone()) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        errors.push(format!("{path}.initial_reserves: {e}"));
                        continue;
                    }
                },
            };
            let (Some(ctrs), true) = (ctrs.clone(), bidders.iter().all(Option::is_some)) else {
                continue;
            };
            let config = SimulationConfig {
                ctrs,
                queries_per_day: self.queries_per_day,
                horizon: self.horizon,
                strategy: spec,
                bidders: bidders.iter().flatten().cloned().collect(),
                b_max: self.b_max,
                gamma: self.gamma,
                seed: self.seed,
                kpi_window: self.kpi_window,
                initial_reserves,
            };
            // Bidder and strategy problems were reported above with their paths.
            for v in config.violations() {
                if v.starts_with("bidders[") || v.starts_with("strategy: ") {
                    continue;
                }
                let msg = if v.starts_with("initial_reserves") {
                    format!("{path}.{v}")
                } else {
                    v
                };
                if !errors.contains(&msg) {
                    errors.push(msg);
                }
            }
            out.push(config);
        }
        Some(out)
    }

    /// Seeds for multi-seed commands: `count` consecutive seeds from `seed`, else the
    /// configured list, else just `seed`.
    pub fn seed_list(&self, count: Option<usize>) -> Vec<u64> {
        match (count, &self.seeds) {
            (Some(n), _) => (0..n as u64).map(|i| self.seed + i).collect(),
            (None, Some(list)) => list.clone(),
            (None, None) => vec![self.seed],
        }
    }
}
