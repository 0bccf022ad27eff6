//! Reserve-pricing strategies: fixed baselines, the greedy coordinate search and
//! the tree-search planner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionSampler, CommonDraws, Money, ReserveProfile};
use crate::bidder::{BidDistribution, NUM_BINS};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::mcts::{apply_action, plan, MctsParams, MdpState};

const GREEDY_DOWN: f64 = 0.95;
const GREEDY_UP: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Keep the monopoly reserve computed from the initial distributions.
    StaticOpt,
    /// Coordinate search: try -5% on one random bidder, else +5%.
    Greedy { n_samples: usize },
    FixedProfile(ReserveProfile),
    ConstantReserve(Money),
    Mcts(MctsParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Days between reserve updates (Δt).
    pub update_period: u32,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, update_period: u32) -> Self {
        Self { kind, update_period }
    }

    /// Greedy and MCTS scale reserves multiplicatively, so a zero reserve never moves.
    pub fn is_multiplicative(&self) -> bool {
        matches!(self.kind, StrategyKind::Greedy { .. } | StrategyKind::Mcts(_))
    }

    pub fn violations(&self, n_bidders: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.update_period == 0 {
            out.push("update_period must be at least 1".to_string());
        }
        match &self.kind {
            StrategyKind::Greedy { n_samples } if *n_samples == 0 => {
                out.push("greedy n_samples must be at least 1".to_string())
            }
            StrategyKind::FixedProfile(p) if p.len() != n_bidders => out.push(format!(
                "fixed profile has {} reserves for {n_bidders} bidders",
                p.len()
            )),
            StrategyKind::ConstantReserve(c) if !(c.is_finite() && *c >= 0.0) => {
                out.push(format!("constant reserve must be non-negative, got {c}"))
            }
            StrategyKind::Mcts(p) => out.extend(p.violations()),
            _ => {}
        }
        out
    }

    /// The profile fixed strategies always return; `None` for those derived from the bidders.
    pub fn fixed_profile(&self, n_bidders: usize) -> Option<ReserveProfile> {
        match &self.kind {
            StrategyKind::FixedProfile(p) => Some(p.clone()),
            StrategyKind::ConstantReserve(c) => Some(ReserveProfile::from_raw(vec![*c; n_bidders])),
            _ => None,
        }
    }
}

/// `argmax_b b * (1 - F(b))` over the bin midpoints, where `1 - F(b)` is the mass
/// of bins at or above `b`. Ties go to the lower price.
pub fn static_opt_reserve(dist: &BidDistribution) -> Money {
    let w = dist.weights();
    let mut survival = [0.0; NUM_BINS];
    let mut acc = 0.0;
    for k in (0..NUM_BINS).rev() {
        acc += w[k];
        survival[k] = acc;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, s) in survival.iter().enumerate() {
        let objective = dist.midpoint(k) * s;
        if objective > best.1 {
            best = (k, objective);
        }
    }
    dist.midpoint(best.0)
}

pub fn initial_reserves(states: &[BidDistribution]) -> ReserveProfile {
    ReserveProfile::from_raw(states.iter().map(static_opt_reserve).collect())
}

/// One greedy update. Picks a bidder uniformly, then compares next-period revenue
/// with that bidder's reserve cut by 5% against the unchanged profile; keeps the cut
/// only if it is strictly better, otherwise raises the reserve by 5%.
///
/// "Next period" is one bidder transition under the candidate reserves followed by
/// a revenue estimate. Both candidates are scored on the same auction draws.
pub fn greedy_step<R: Rng + ?Sized>(
    states: &[BidDistribution],
    reserves: &ReserveProfile,
    market: &Market,
    rng: &mut R,
    n_samples: usize,
) -> Result<ReserveProfile> {
    let n = states.len();
    if n == 0 || reserves.len() != n || market.n_bidders() != n {
        return Err(Error::invalid("greedy step needs matching, non-empty bidder lists"));
    }
    let i = rng.gen_range(0..n);
    let lowered = reserves.scaled_at(i, GREEDY_DOWN);

    let draws = CommonDraws::draw(n, n_samples, rng)?;
    let mut sampler = AuctionSampler::new(&draws, &market.ctrs);
    let mut next_period = |r: &ReserveProfile| -> Result<Money> {
        let moved = market
            .lookahead(&mut sampler, states, r, 1, true)?
            .next_states
            .expect("requested next state");
        Ok(sampler.estimate(&moved, r)?.revenue_per_query)
    };
    if next_period(&lowered)? > next_period(reserves)? {
        Ok(lowered)
    } else {
        Ok(reserves.scaled_at(i, GREEDY_UP))
    }
}

/// Reserves to use on elapsed day `day` (0-based). Fixed strategies return their
/// profile every day; Greedy and MCTS recompute when `day % update_period == 0`
/// and otherwise keep the current reserves.
pub fn next_reserves<R: Rng + ?Sized>(
    strategy: &StrategySpec,
    day: u64,
    states: &[BidDistribution],
    reserves: &ReserveProfile,
    market: &Market,
    rng: &mut R,
) -> Result<ReserveProfile> {
    if let Some(p) = strategy.fixed_profile(states.len()) {
        return Ok(p);
    }
    let due = strategy.update_period > 0 && day % u64::from(strategy.update_period) == 0;
    match &strategy.kind {
        StrategyKind::StaticOpt => Ok(reserves.clone()),
        _ if !due => Ok(reserves.clone()),
        StrategyKind::Greedy { n_samples } => greedy_step(states, reserves, market, rng, *n_samples),
        StrategyKind::Mcts(params) => {
            let root = MdpState::new(states.to_vec(), reserves.clone())?;
            let action = plan(&root, params, market, strategy.update_period, rng)?;
            apply_action(reserves, &action)
        }
        StrategyKind::FixedProfile(_) | StrategyKind::ConstantReserve(_) => unreachable!("handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::CtrVector;
    use crate::bidder::BidderModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn static_market(n: usize, q: &[f64]) -> Market {
        Market {
            ctrs: CtrVector::new(q.to_vec()).unwrap(),
            models: vec![BidderModelSpec::Static; n],
            queries_per_day: 100,
            b_max: 1.0,
        }
    }

    #[test]
    fn point_mass_reserve_is_its_midpoint() {
        let d = BidDistribution::point_mass(37, 2.0).unwrap();
        assert_eq!(static_opt_reserve(&d), d.midpoint(37));
    }

    #[test]
    fn uniform_histogram_reserve() {
        // Exhaustive: m_k * (1 - F(m_k)) with F the mass strictly below m_k.
        let d = BidDistribution::uniform(1.0).unwrap();
        let objectives: Vec<f64> = (0..NUM_BINS)
            .map(|k| (k as f64 + 0.5) / 100.0 * (NUM_BINS - k) as f64 / 100.0)
            .collect();
        let best = (0..NUM_BINS)
            .fold(0, |b, k| if objectives[k] > objectives[b] { k } else { b });
        assert_eq!(best, 50);
        assert!((objectives[best] - 0.2525).abs() < 1e-12);
        assert!((static_opt_reserve(&d) - 0.505).abs() < 1e-12);
    }

    #[test]
    fn two_bin_reserve() {
        let mut w = vec![0.0; NUM_BINS];
        w[19] = 0.5; // midpoint 0.195
        w[89] = 0.5; // midpoint 0.895
        let d = BidDistribution::from_weights(w, 1.0).unwrap();
        assert!((static_opt_reserve(&d) - 0.895).abs() < 1e-12);
    }

    #[test]
    fn initial_reserves_are_elementwise() {
        let a = BidDistribution::point_mass(10, 1.0).unwrap();
        let b = BidDistribution::uniform(1.0).unwrap();
        let r = initial_reserves(&[a.clone(), b.clone()]);
        assert_eq!(r.as_slice(), &[static_opt_reserve(&a), static_opt_reserve(&b)]);
        let swapped = initial_reserves(&[b, a]);
        assert_eq!(swapped.as_slice(), &[r.as_slice()[1], r.as_slice()[0]]);
    }

    #[test]
    fn greedy_raises_when_lone_bidder_pays_reserve() {
        // Lone bidder bids 0.605 and pays the reserve: cutting it only loses money.
        let states = vec![BidDistribution::point_mass(60, 1.0).unwrap()];
        let r = ReserveProfile::new(vec![0.5]).unwrap();
        let out = greedy_step(&states, &r, &static_market(1, &[0.4]), &mut ChaCha8Rng::seed_from_u64(1), 50).unwrap();
        assert!((out.as_slice()[0] - 0.525).abs() < 1e-12);
    }

    #[test]
    fn greedy_cuts_when_bidder_is_priced_out() {
        // Bid 0.605 < reserve 0.62, but 0.95 * 0.62 = 0.589 lets it back in.
        let states = vec![BidDistribution::point_mass(60, 1.0).unwrap()];
        let r = ReserveProfile::new(vec![0.62]).unwrap();
        let out = greedy_step(&states, &r, &static_market(1, &[0.4]), &mut ChaCha8Rng::seed_from_u64(1), 50).unwrap();
        assert!((out.as_slice()[0] - 0.589).abs() < 1e-12);
    }

    #[test]
    fn greedy_touches_one_coordinate() {
        let states = vec![
            crate::bidder::gaussian_histogram(0.6, 0.1, 1.0).unwrap(),
            crate::bidder::gaussian_histogram(0.5, 0.1, 1.0).unwrap(),
            crate::bidder::gaussian_histogram(0.4, 0.1, 1.0).unwrap(),
        ];
        let r = ReserveProfile::new(vec![0.5, 0.4, 0.3]).unwrap();
        let market = static_market(3, &[0.3, 0.2, 0.1]);
        for seed in 0..20 {
            let out = greedy_step(&states, &r, &market, &mut ChaCha8Rng::seed_from_u64(seed), 200).unwrap();
            let changed: Vec<usize> = (0..3).filter(|&i| out.as_slice()[i] != r.as_slice()[i]).collect();
            assert_eq!(changed.len(), 1);
            let i = changed[0];
            let ratio = out.as_slice()[i] / r.as_slice()[i];
            assert!((ratio - 0.95).abs() < 1e-12 || (ratio - 1.05).abs() < 1e-12);
            let again = greedy_step(&states, &r, &market, &mut ChaCha8Rng::seed_from_u64(seed), 200).unwrap();
            assert_eq!(out, again);
        }
    }

    #[test]
    fn fixed_strategies_ignore_the_day() {
        let states = vec![BidDistribution::uniform(1.0).unwrap(); 3];
        let current = ReserveProfile::new(vec![0.1, 0.2, 0.3]).unwrap();
        let market = static_market(3, &[0.3, 0.2, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let constant = StrategySpec::new(StrategyKind::ConstantReserve(0.5), 1);
        let p = ReserveProfile::new(vec![0.7, 0.8, 0.9]).unwrap();
        let fixed = StrategySpec::new(StrategyKind::FixedProfile(p.clone()), 1);
        for day in [0, 1, 5, 119] {
            let c = next_reserves(&constant, day, &states, &current, &market, &mut rng).unwrap();
            assert_eq!(c.as_slice(), &[0.5, 0.5, 0.5]);
            assert_eq!(next_reserves(&fixed, day, &states, &current, &market, &mut rng).unwrap(), p);
        }
    }

    #[test]
    fn mcts_keeps_reserves_off_schedule() {
        let states = vec![BidDistribution::uniform(1.0).unwrap(); 2];
        let current = ReserveProfile::new(vec![0.3, 0.4]).unwrap();
        let market = static_market(2, &[0.3, 0.2]);
        let spec = StrategySpec::new(StrategyKind::Mcts(MctsParams::default()), 7);
        let out = next_reserves(&spec, 3, &states, &current, &market, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, current);
    }

    #[test]
    fn zero_update_period_is_invalid() {
        let spec = StrategySpec::new(StrategyKind::Greedy { n_samples: 10 }, 0);
        assert!(!spec.violations(3).is_empty());
    }
}
