//! Day-by-day simulation of a market under a reserve-pricing strategy, plus the
//! multi-seed comparison used to rank strategies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::auction::{sample_bids, CtrVector, Money, QueryAuction, ReserveProfile};
use crate::bidder::{joint_transition, BidDistribution, BidderModelSpec, KpiRecord, NUM_BINS};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::strategies::{initial_reserves, next_reserves, StrategySpec};

const MARKET_STREAM: u64 = 1;
const STRATEGY_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderSetup {
    pub model: BidderModelSpec,
    pub initial: BidDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub ctrs: CtrVector,
    pub queries_per_day: u64,
    pub horizon: u32,
    pub strategy: StrategySpec,
    pub bidders: Vec<BidderSetup>,
    pub b_max: Money,
    pub gamma: f64,
    pub seed: u64,
    /// Days of KPIs summed before each bidder transition.
    pub kpi_window: u32,
    /// Starting reserves; defaults to the fixed profile or the static optimum.
    pub initial_reserves: Option<ReserveProfile>,
}

impl SimulationConfig {
    pub fn n_bidders(&self) -> usize {
        self.bidders.len()
    }

    pub fn market(&self) -> Market {
        Market {
            ctrs: self.ctrs.clone(),
            models: self.bidders.iter().map(|b| b.model).collect(),
            queries_per_day: self.queries_per_day,
            b_max: self.b_max,
        }
    }

    pub fn initial_states(&self) -> Vec<BidDistribution> {
        self.bidders.iter().map(|b| b.initial.clone()).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n_bidders();
        if n == 0 {
            out.push("at least one bidder is required".to_string());
        }
        if self.ctrs.slots() == 0 {
            out.push("ctrs: at least one slot is required".to_string());
        }
        if self.queries_per_day == 0 {
            out.push("queries_per_day must be at least 1".to_string());
        }
        if self.horizon == 0 {
            out.push("horizon must be at least 1".to_string());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.b_max.is_finite() && self.b_max > 0.0) {
            out.push(format!("b_max must be positive, got {}", self.b_max));
        }
        if self.kpi_window == 0 {
            out.push("kpi_window must be at least 1".to_string());
        }
        for (i, b) in self.bidders.iter().enumerate() {
            out.extend(b.model.violations(self.b_max).into_iter().map(|v| format!("bidders[{i}]: {v}")));
            if b.initial.b_max() != self.b_max {
                out.push(format!(
                    "bidders[{i}]: initial distribution spans [0, {}] but b_max is {}",
                    b.initial.b_max(),
                    self.b_max
                ));
            }
        }
        out.extend(self.strategy.violations(n).into_iter().map(|v| format!("strategy: {v}")));
        if let Some(r) = &self.initial_reserves {
            if r.len() != n {
                out.push(format!("initial_reserves has {} entries for {n} bidders", r.len()));
            }
            if self.strategy.is_multiplicative() {
                for (i, v) in r.as_slice().iter().enumerate() {
                    if *v <= 0.0 {
                        out.push(format!(
                            "initial_reserves[{i}] = {v}: multiplicative strategies need a positive reserve"
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn starting_reserves(&self, states: &[BidDistribution]) -> ReserveProfile {
        if let Some(p) = self.strategy.fixed_profile(states.len()) {
            return p;
        }
        self.initial_reserves
            .clone()
            .unwrap_or_else(|| initial_reserves(states))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    /// 1-based day number.
    pub day: u32,
    pub reserves: ReserveProfile,
    /// Total charged over the day's clicks.
    pub revenue: Money,
    pub kpis: Vec<KpiRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub days: Vec<DailyRecord>,
    pub cumulative_revenue: Money,
    /// `sum_t gamma^t * revenue_t` with `t` starting at 1.
    pub objective: Money,
}

impl RunResult {
    pub fn revenues(&self) -> Vec<Money> {
        self.days.iter().map(|d| d.revenue).collect()
    }

    /// Mean daily revenue over the last `window` days.
    pub fn tail_mean(&self, window: usize) -> Result<Money> {
        if window == 0 || window > self.days.len() {
            return Err(Error::invalid(format!(
                "window {window} does not fit a {}-day run",
                self.days.len()
            )));
        }
        let tail = &self.days[self.days.len() - window..];
        Ok(tail.iter().map(|d| d.revenue).sum::<Money>() / window as f64)
    }

    /// Mean daily revenue over the 1-based inclusive day range.
    pub fn mean_over(&self, first_day: usize, last_day: usize) -> Money {
        let slice = &self.days[first_day - 1..last_day];
        slice.iter().map(|d| d.revenue).sum::<Money>() / slice.len() as f64
    }
}

/// Runs `queries` independent auctions with bids drawn from `states`. Every shown
/// ad is clicked with its slot's CTR; a click charges the slot price.
pub fn simulate_day<R: Rng + ?Sized>(
    day: u32,
    states: &[BidDistribution],
    reserves: &ReserveProfile,
    ctrs: &CtrVector,
    queries: u64,
    rng: &mut R,
) -> Result<DailyRecord> {
    let n = states.len();
    if reserves.len() != n {
        return Err(Error::invalid(format!("{n} states but {} reserves", reserves.len())));
    }
    let cdfs: Vec<[f64; NUM_BINS]> = states.iter().map(|s| s.sampling_cdf()).collect();
    let q = ctrs.as_slice();
    let mut auction = QueryAuction::new(n);
    let mut bids = vec![0.0; n];
    let mut kpis = vec![KpiRecord::default(); n];
    let mut shown = Vec::with_capacity(q.len());
    for _ in 0..queries {
        sample_bids(&cdfs, states, rng, &mut bids);
        shown.clear();
        auction.run(&bids, reserves.as_slice(), q, |j, s, price| shown.push((j, s, price)));
        for &(j, s, price) in &shown {
            let k = &mut kpis[j];
            k.impressions += 1;
            if rng.gen::<f64>() < q[s] {
                k.clicks += 1;
                k.payment += price;
            }
        }
    }
    let revenue = kpis.iter().map(|k| k.payment).sum();
    Ok(DailyRecord {
        day,
        reserves: reserves.clone(),
        revenue,
        kpis,
    })
}

/// Runs one strategy over the configured horizon. Bidders move every day; the
/// strategy revises reserves every `update_period` days.
pub fn simulate_run(config: &SimulationConfig) -> Result<RunResult> {
    config.validate()?;
    let market = config.market();
    let mut market_rng = ChaCha8Rng::seed_from_u64(config.seed);
    market_rng.set_stream(MARKET_STREAM);
    let mut strategy_rng = ChaCha8Rng::seed_from_u64(config.seed);
    strategy_rng.set_stream(STRATEGY_STREAM);

    let mut states = config.initial_states();
    let mut reserves = config.starting_reserves(&states);
    let mut days = Vec::with_capacity(config.horizon as usize);
    let window = config.kpi_window as usize;
    for d in 0..config.horizon {
        reserves = next_reserves(&config.strategy, u64::from(d), &states, &reserves, &market, &mut strategy_rng)?;
        let record = simulate_day(d + 1, &states, &reserves, &config.ctrs, config.queries_per_day, &mut market_rng)?;
        let kpis: Vec<KpiRecord> = (0..states.len())
            .map(|i| {
                let start = (days.len() + 1).saturating_sub(window);
                KpiRecord::aggregate(
                    days[start..]
                        .iter()
                        .map(|r: &DailyRecord| &r.kpis[i])
                        .chain(std::iter::once(&record.kpis[i])),
                )
            })
            .collect();
        states = joint_transition(&market.models, &states, &kpis)?;
        days.push(record);
    }
    let cumulative_revenue = days.iter().map(|d| d.revenue).sum();
    let objective = days
        .iter()
        .map(|d| config.gamma.powi(d.day as i32) * d.revenue)
        .sum();
    Ok(RunResult {
        days,
        cumulative_revenue,
        objective,
    })
}

/// Divides every element by the baseline's mean daily revenue over its last `window` days.
pub fn normalize_series(series: &[Money], baseline: &RunResult, window: usize) -> Result<Vec<f64>> {
    let base = baseline.tail_mean(window)?;
    if base == 0.0 {
        return Err(Error::invalid("baseline revenue is zero over the normalization window"));
    }
    Ok(series.iter().map(|x| x / base).collect())
}

/// One-sided sign test: probability of at least `wins` successes among
/// `wins + losses` fair coin flips. Ties are dropped before calling.
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial parameters");
    b.sf(wins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub runs: usize,
    pub mean_cumulative: Money,
    pub sd_cumulative: Money,
    pub mean_objective: Money,
    pub sd_objective: Money,
}

/// Seed-paired comparison of two strategies on cumulative revenue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub a_wins: u64,
    pub b_wins: u64,
    pub ties: u64,
    /// One-sided sign-test p-value for "a earns more than b".
    pub p_a_greater: f64,
    pub p_b_greater: f64,
}

#[derive(Debug, Clone)]
pub struct StrategyRuns {
    pub name: String,
    /// `(seed, result)` in seed order.
    pub runs: Vec<(u64, RunResult)>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub summaries: Vec<StrategySummary>,
    pub pairwise: Vec<PairwiseTest>,
    pub runs: Vec<StrategyRuns>,
}

impl Comparison {
    pub fn summary(&self, name: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn runs_of(&self, name: &str) -> Option<&StrategyRuns> {
        self.runs.iter().find(|s| s.name == name)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<PairwiseTest> {
        self.pairwise.iter().find_map(|p| {
            if p.a == a && p.b == b {
                Some(p.clone())
            } else if p.a == b && p.b == a {
                Some(PairwiseTest {
                    a: p.b.clone(),
                    b: p.a.clone(),
                    a_wins: p.b_wins,
                    b_wins: p.a_wins,
                    ties: p.ties,
                    p_a_greater: p.p_b_greater,
                    p_b_greater: p.p_a_greater,
                })
            } else {
                None
            }
        })
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pairs `a` and `b` runs by seed and applies the sign test to `metric`.
pub fn paired_sign_test(a: &StrategyRuns, b: &StrategyRuns, metric: impl Fn(&RunResult) -> f64) -> PairwiseTest {
    let (mut a_wins, mut b_wins, mut ties) = (0, 0, 0);
    for ((sa, ra), (sb, rb)) in a.runs.iter().zip(&b.runs) {
        debug_assert_eq!(sa, sb);
        let (x, y) = (metric(ra), metric(rb));
        if x > y {
            a_wins += 1;
        } else if y > x {
            b_wins += 1;
        } else {
            ties += 1;
        }
    }
    PairwiseTest {
        a: a.name.clone(),
        b: b.name.clone(),
        a_wins,
        b_wins,
        ties,
        p_a_greater: sign_test_p(a_wins, b_wins),
        p_b_greater: sign_test_p(b_wins, a_wins),
    }
}

/// Runs every named configuration under every seed and summarizes the outcomes.
/// Runs fan out over the rayon pool; results come back in input order.
pub fn compare_strategies(configs: &[(String, SimulationConfig)], seeds: &[u64]) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    for (name, c) in configs {
        c.validate().map_err(|e| match e {
            Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{name}: {m}")).collect()),
            other => other,
        })?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(c, seed)| simulate_run(&configs[c].1.with_seed(seed)))
        .collect();
    let mut results = results.into_iter();
    let mut runs = Vec::with_capacity(configs.len());
    for (name, _) in configs {
        let mut per = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            per.push((seed, results.next().expect("one result per job")?));
        }
        runs.push(StrategyRuns {
            name: name.clone(),
            runs: per,
        });
    }

    let summaries = runs
        .iter()
        .map(|s| {
            let cum: Vec<f64> = s.runs.iter().map(|(_, r)| r.cumulative_revenue).collect();
            let obj: Vec<f64> = s.runs.iter().map(|(_, r)| r.objective).collect();
            let (mean_cumulative, sd_cumulative) = mean_sd(&cum);
            let (mean_objective, sd_objective) = mean_sd(&obj);
            StrategySummary {
                name: s.name.clone(),
                runs: s.runs.len(),
                mean_cumulative,
                sd_cumulative,
                mean_objective,
                sd_objective,
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            pairwise.push(paired_sign_test(&runs[i], &runs[j], |r| r.cumulative_revenue));
        }
    }
    Ok(Comparison {
        summaries,
        pairwise,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyKind;

    fn point_bidders(bins: &[usize], b_max: f64) -> Vec<BidderSetup> {
        bins.iter()
            .map(|&k| BidderSetup {
                model: BidderModelSpec::Static,
                initial: BidDistribution::point_mass(k, b_max).unwrap(),
            })
            .collect()
    }

    fn config(strategy: StrategyKind, bins: &[usize], q: &[f64]) -> SimulationConfig {
        SimulationConfig {
            ctrs: CtrVector::new(q.to_vec()).unwrap(),
            queries_per_day: 200,
            horizon: 10,
            strategy: StrategySpec::new(strategy, 1),
            bidders: point_bidders(bins, 1.0),
            b_max: 1.0,
            gamma: 0.9,
            seed: 7,
            kpi_window: 1,
            initial_reserves: None,
        }
    }

    #[test]
    fn zero_ctr_second_slot_earns_nothing() {
        // Bids 10 and 6 on a [0, 20] grid.
        let states = vec![
            BidDistribution::point_mass(49, 20.0).unwrap(),
            BidDistribution::point_mass(29, 20.0).unwrap(),
        ];
        let ctrs = CtrVector::new(vec![1.0, 0.0]).unwrap();
        let r = ReserveProfile::new(vec![0.0, 0.0]).unwrap();
        let rec = simulate_day(1, &states, &r, &ctrs, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(rec.kpis[0], KpiRecord { impressions: 1, clicks: 1, payment: 0.0 });
        assert_eq!(rec.revenue, 0.0);
    }

    #[test]
    fn everyone_below_reserve() {
        let states = vec![BidDistribution::point_mass(10, 1.0).unwrap(); 2];
        let ctrs = CtrVector::new(vec![0.5, 0.2]).unwrap();
        let r = ReserveProfile::new(vec![0.9, 0.9]).unwrap();
        let rec = simulate_day(1, &states, &r, &ctrs, 500, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(rec.kpis.iter().all(|k| *k == KpiRecord::default()));
        assert_eq!(rec.revenue, 0.0);
    }

    #[test]
    fn fixed_profile_run_is_stationary() {
        let p = ReserveProfile::new(vec![0.2, 0.2]).unwrap();
        let c = config(StrategyKind::FixedProfile(p.clone()), &[70, 50], &[0.3, 0.2]);
        let run = simulate_run(&c).unwrap();
        assert_eq!(run.days.len(), 10);
        assert!(run.days.iter().all(|d| d.reserves == p));
        for d in &run.days {
            let paid: f64 = d.kpis.iter().map(|k| k.payment).sum();
            assert_eq!(paid, d.revenue);
            assert!(d.kpis.iter().all(|k| k.clicks <= k.impressions && k.impressions <= 200));
        }
        assert!(run.objective <= run.cumulative_revenue);
    }

    #[test]
    fn single_day_objective() {
        let mut c = config(StrategyKind::ConstantReserve(0.3), &[70], &[0.5]);
        c.horizon = 1;
        let run = simulate_run(&c).unwrap();
        assert_eq!(run.objective, 0.9 * run.days[0].revenue);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let c = config(StrategyKind::Greedy { n_samples: 100 }, &[70, 40], &[0.3, 0.1]);
        assert_eq!(simulate_run(&c).unwrap(), simulate_run(&c).unwrap());
        assert_ne!(simulate_run(&c).unwrap(), simulate_run(&c.with_seed(8)).unwrap());
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut c = config(StrategyKind::Greedy { n_samples: 100 }, &[70, 40], &[0.3, 0.1]);
        c.gamma = 1.0;
        c.horizon = 0;
        c.initial_reserves = Some(ReserveProfile::new(vec![0.0, 0.4]).unwrap());
        match simulate_run(&c) {
            Err(Error::Config(v)) => {
                assert_eq!(v.len(), 3, "{v:?}");
                assert!(v.iter().any(|m| m.contains("initial_reserves[0]")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn normalization() {
        let c = config(StrategyKind::ConstantReserve(0.3), &[70], &[0.5]);
        let base = simulate_run(&c).unwrap();
        let mean = base.tail_mean(4).unwrap();
        let n = normalize_series(&[3.0 * mean, mean], &base, 4).unwrap();
        assert!((n[0] - 3.0).abs() < 1e-12 && (n[1] - 1.0).abs() < 1e-12);
        assert!(normalize_series(&[1.0], &base, 11).is_err());

        let zero = config(StrategyKind::ConstantReserve(0.9), &[70], &[0.5]);
        assert!(normalize_series(&[1.0], &simulate_run(&zero).unwrap(), 4).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(20, 0) - 0.5f64.powi(20)).abs() < 1e-15);
        // P(X >= 15 | n = 20) = 21700 / 2^20
        assert!((sign_test_p(15, 5) - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!((sign_test_p(1, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn comparing_identical_configs_has_no_ordering() {
        let c = config(StrategyKind::ConstantReserve(0.3), &[70, 40], &[0.3, 0.1]);
        let cmp = compare_strategies(&[("a".into(), c.clone()), ("b".into(), c)], &[1, 2, 3]).unwrap();
        let p = cmp.pair("a", "b").unwrap();
        assert_eq!(p.ties, 3);
        assert!(p.p_a_greater > 0.05 && p.p_b_greater > 0.05);
    }

    #[test]
    fn one_config_one_seed_summary() {
        let c = config(StrategyKind::ConstantReserve(0.3), &[70, 40], &[0.3, 0.1]);
        let run = simulate_run(&c.with_seed(5)).unwrap();
        let cmp = compare_strategies(&[("only".into(), c)], &[5]).unwrap();
        let s = cmp.summary("only").unwrap();
        assert_eq!(s.mean_cumulative, run.cumulative_revenue);
        assert_eq!(s.sd_cumulative, 0.0);
        assert_eq!(s.mean_objective, run.objective);
        assert!(cmp.pairwise.is_empty());
    }
}
