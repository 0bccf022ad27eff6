//! Property tests over randomly generated auctions, bidders and search trees.

use gsp_reserve::auction::{
    estimate_revenue, run_auction, AuctionOutcome, BidProfile, CtrVector, ReserveProfile,
};
use gsp_reserve::bidder::{
    gaussian_histogram, transition, BidDistribution, BidderModelSpec, KpiRecord, SpendResponsiveParams, NUM_BINS,
};
use gsp_reserve::harness::{simulate_day, simulate_run, BidderSetup, SimulationConfig};
use gsp_reserve::market::Market;
use gsp_reserve::mcts::{
    action_space, backpropagate, lambda_weights, simulate_once, MctsParams, MdpState, SearchContext, SearchTree,
};
use gsp_reserve::auction::CommonDraws;
use gsp_reserve::strategies::{greedy_step, static_opt_reserve, StrategyKind, StrategySpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Slot assignments by sorting, written independently of the library's ranking.
fn oracle(bids: &[f64], reserves: &[f64], q: &[f64]) -> (Vec<(usize, usize, f64)>, f64) {
    let mut eligible: Vec<usize> = (0..bids.len()).filter(|&i| bids[i] >= reserves[i]).collect();
    eligible.sort_by(|&a, &b| bids[b].partial_cmp(&bids[a]).unwrap().then(a.cmp(&b)));
    eligible.truncate(q.len());
    let mut out = Vec::new();
    let mut revenue = 0.0;
    for (s, &j) in eligible.iter().enumerate() {
        let price = match eligible.get(s + 1) {
            Some(&next) => {
                let scaled = if q[s] > 0.0 { q[s + 1] * bids[next] / q[s] } else { 0.0 };
                scaled.max(reserves[j])
            }
            None => reserves[j],
        };
        revenue += q[s] * price;
        out.push((j, s + 1, price));
    }
    (out, revenue)
}

fn as_tuples(o: &AuctionOutcome) -> Vec<(usize, usize, f64)> {
    o.assignments.iter().map(|a| (a.bidder, a.slot, a.price)).collect()
}

fn ctr_vec(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 0..=max_k).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

/// Bids drawn from a coarse grid so ties are common.
fn auction_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..=20).prop_map(|x| x as f64 * 0.25), n),
            prop::collection::vec((0u32..=12).prop_map(|x| x as f64 * 0.25), n),
            ctr_vec(3),
        )
    })
}

fn histogram() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => 0.0..1.0f64], NUM_BINS)
        .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn auction_matches_sorting_oracle((bids, reserves, q) in auction_case()) {
        let out = run_auction(
            &BidProfile::new(bids.clone()).unwrap(),
            &ReserveProfile::new(reserves.clone()).unwrap(),
            &CtrVector::new(q.clone()).unwrap(),
        ).unwrap();
        let (expected, revenue) = oracle(&bids, &reserves, &q);
        prop_assert_eq!(as_tuples(&out), expected);
        prop_assert_eq!(out.expected_revenue, revenue);
    }

    #[test]
    fn prices_are_bounded_and_allocation_is_by_rank((bids, reserves, q) in auction_case()) {
        let out = run_auction(
            &BidProfile::new(bids.clone()).unwrap(),
            &ReserveProfile::new(reserves.clone()).unwrap(),
            &CtrVector::new(q.clone()).unwrap(),
        ).unwrap();
        let mut prev_bid = f64::INFINITY;
        for a in &out.assignments {
            prop_assert!(a.price <= bids[a.bidder]);
            prop_assert!(a.price >= reserves[a.bidder]);
            prop_assert!(bids[a.bidder] <= prev_bid);
            prev_bid = bids[a.bidder];
        }
        for i in 0..bids.len() {
            let eligible = bids[i] >= reserves[i];
            let ahead = (0..bids.len())
                .filter(|&j| bids[j] >= reserves[j] && (bids[j] > bids[i] || (bids[j] == bids[i] && j < i)))
                .count();
            let allocated = out.assignments.iter().any(|a| a.bidder == i);
            prop_assert_eq!(allocated, eligible && ahead < q.len());
        }
        let mut slots: Vec<usize> = out.assignments.iter().map(|a| a.slot).collect();
        slots.dedup();
        prop_assert_eq!(slots.len(), out.assignments.len());
    }

    #[test]
    fn raising_top_reserve_to_just_below_bid_is_weakly_better(
        mut bids in prop::collection::vec(0.1..10.0f64, 2..=5),
        q in ctr_vec(3),
    ) {
        bids.sort_by(|a, b| b.partial_cmp(a).unwrap());
        bids.dedup();
        let n = bids.len();
        let q = CtrVector::new(q).unwrap();
        let zero = ReserveProfile::uniform(n, 0.0).unwrap();
        let mut raised = vec![0.0; n];
        raised[0] = bids[0] * (1.0 - 1e-9);
        let profile = BidProfile::new(bids).unwrap();
        let base = run_auction(&profile, &zero, &q).unwrap().expected_revenue;
        let up = run_auction(&profile, &ReserveProfile::new(raised).unwrap(), &q).unwrap().expected_revenue;
        prop_assert!(up >= base);
    }

    #[test]
    fn point_mass_estimates_equal_the_single_auction(
        bins in prop::collection::vec(0usize..NUM_BINS, 1..=5),
        reserves in prop::collection::vec(0.0..1.0f64, 5),
        q in ctr_vec(3),
        seed in any::<u64>(),
    ) {
        let n = bins.len();
        let states: Vec<BidDistribution> = bins.iter().map(|&b| BidDistribution::point_mass(b, 1.0).unwrap()).collect();
        let bids: Vec<f64> = bins.iter().zip(&states).map(|(&b, s)| s.midpoint(b)).collect();
        let reserves = ReserveProfile::new(reserves[..n].to_vec()).unwrap();
        let q = CtrVector::new(q).unwrap();
        let exact = run_auction(&BidProfile::new(bids).unwrap(), &reserves, &q).unwrap().expected_revenue;
        let est = estimate_revenue(&states, &reserves, &q, 257, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((est - exact).abs() <= 1e-12 * exact.max(1.0));
    }

    #[test]
    fn static_opt_is_the_exhaustive_argmax(w in histogram(), b_max in 0.5..5.0f64) {
        let d = BidDistribution::from_unnormalized(w, b_max).unwrap();
        let chosen = static_opt_reserve(&d);
        let objective = |m: f64| {
            let above: f64 = (0..NUM_BINS).filter(|&k| d.midpoint(k) >= m).map(|k| d.weights()[k]).sum();
            m * above
        };
        prop_assert!((0..NUM_BINS).any(|k| d.midpoint(k) == chosen));
        let best = objective(chosen);
        for k in 0..NUM_BINS {
            prop_assert!(objective(d.midpoint(k)) <= best + 1e-12);
        }
    }

    #[test]
    fn spend_responsive_transitions_are_valid_monotone_and_bounded(
        value in 0.5..2.0f64,
        mu_frac in 0.2..=1.0f64,
        impressions in 0u64..50,
        click_frac in 0.0..=1.0f64,
        cpc_frac in 0.01..3.0f64,
    ) {
        let p = SpendResponsiveParams::with_value(value);
        let model = BidderModelSpec::SpendResponsive(p);
        let mu = mu_frac * value;
        let state = gaussian_histogram(mu, p.sigma, 2.5).unwrap();
        let clicks = (impressions as f64 * click_frac).floor() as u64;
        let cpc = cpc_frac * value;
        let kpi = KpiRecord::new(impressions, clicks, clicks as f64 * cpc).unwrap();
        let next = transition(&model, &state, &kpi);
        prop_assert_eq!(&next, &transition(&model, &state, &kpi));
        let total: f64 = next.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(next.weights().iter().all(|&w| w >= 0.0));
        let mu2 = next.shape().unwrap().mu;
        prop_assert!(mu2 >= p.mu_min && mu2 <= p.mu_max);
        if let Some(cpc) = kpi.cpc() {
            let target = p.target_ratio * p.value;
            if cpc > target { prop_assert!(mu2 <= mu); }
            if cpc < target { prop_assert!(mu2 >= mu); }
        }
    }

    #[test]
    fn lambda_weights_sum_to_one(len in 1usize..=10, tenth in 1u32..=10) {
        let w = lambda_weights(len, tenth as f64 / 10.0).unwrap();
        prop_assert_eq!(w.len(), len);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn greedy_changes_one_coordinate(seed in any::<u64>(), r in prop::collection::vec(0.1..1.5f64, 3)) {
        let values = [2.0, 1.6, 1.2];
        let market = Market {
            ctrs: CtrVector::new(vec![0.3, 0.2, 0.1]).unwrap(),
            models: values.iter().map(|&v| BidderModelSpec::SpendResponsive(SpendResponsiveParams::with_value(v))).collect(),
            queries_per_day: 100,
            b_max: 2.5,
        };
        let states: Vec<BidDistribution> = values.iter().map(|&v| gaussian_histogram(v, 0.1 * v, 2.5).unwrap()).collect();
        let reserves = ReserveProfile::new(r.clone()).unwrap();
        let out = greedy_step(&states, &reserves, &market, &mut ChaCha8Rng::seed_from_u64(seed), 200).unwrap();
        let changed: Vec<usize> = (0..3).filter(|&i| out.as_slice()[i] != r[i]).collect();
        prop_assert_eq!(changed.len(), 1);
        let i = changed[0];
        prop_assert!(out.as_slice()[i] == r[i] * 0.95 || out.as_slice()[i] == r[i] * 1.05);
        prop_assert!(out.as_slice().iter().all(|&x| x >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tree_counts_stay_consistent(seed in any::<u64>(), depth in 1usize..=4, iterations in 1usize..60) {
        let market = Market {
            ctrs: CtrVector::new(vec![0.4, 0.2]).unwrap(),
            models: vec![
                BidderModelSpec::SpendResponsive(SpendResponsiveParams::with_value(1.0)),
                BidderModelSpec::Static,
            ],
            queries_per_day: 200,
            b_max: 1.5,
        };
        let states = vec![
            gaussian_histogram(0.9, 0.1, 1.5).unwrap(),
            gaussian_histogram(0.6, 0.1, 1.5).unwrap(),
        ];
        let root = MdpState::new(states, ReserveProfile::new(vec![0.7, 0.4]).unwrap()).unwrap();
        let params = MctsParams { depth, iterations, n_auction_samples: 64, ..MctsParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = CommonDraws::draw(2, params.n_auction_samples, &mut rng).unwrap();
        let mut ctx = SearchContext::new(&params, &market, &draws, 1).unwrap();
        let actions = action_space(2, &params.multipliers);
        let n_actions = actions.len();
        let mut tree = SearchTree::new(root, actions);
        for _ in 0..iterations {
            let path = simulate_once(&mut tree, &mut ctx, &mut rng).unwrap();
            prop_assert_eq!(path.entries.len(), depth);
            prop_assert!(path.entries.iter().all(|e| (0.0..=1.0).contains(&e.reward)));
            backpropagate(&mut tree, &path, params.lambda);
            for id in tree.node_ids() {
                let node = tree.node(id);
                prop_assert_eq!(node.visits, node.stats.iter().map(|s| s.visits).sum::<u64>());
                // Unvisited-first: visit counts differ by at most one until all are tried.
                let min = node.stats.iter().map(|s| s.visits).min().unwrap();
                if min == 0 {
                    prop_assert!(node.stats.iter().all(|s| s.visits <= 1));
                }
                prop_assert_eq!(node.stats.len(), n_actions);
            }
        }
    }

    #[test]
    fn run_invariants_hold(seed in any::<u64>(), horizon in 1u32..12, gamma in 0.5..0.999f64) {
        let bidders = [1.0, 0.8, 0.6]
            .iter()
            .map(|&v| BidderSetup {
                model: BidderModelSpec::SpendResponsive(SpendResponsiveParams::with_value(v)),
                initial: gaussian_histogram(v, 0.1 * v, 1.25).unwrap(),
            })
            .collect();
        let config = SimulationConfig {
            ctrs: CtrVector::new(vec![0.3, 0.1]).unwrap(),
            queries_per_day: 50,
            horizon,
            strategy: StrategySpec::new(StrategyKind::Greedy { n_samples: 100 }, 2),
            bidders,
            b_max: 1.25,
            gamma,
            seed,
            kpi_window: 1,
            initial_reserves: None,
        };
        let run = simulate_run(&config).unwrap();
        prop_assert_eq!(&run, &simulate_run(&config).unwrap());
        prop_assert_eq!(run.days.len(), horizon as usize);
        for d in &run.days {
            let paid: f64 = d.kpis.iter().map(|k| k.payment).sum();
            prop_assert_eq!(paid, d.revenue);
            prop_assert!(d.kpis.iter().all(|k| k.clicks <= k.impressions && k.impressions <= 50));
            prop_assert!(d.kpis.iter().map(|k| k.impressions).sum::<u64>() <= 50 * 2);
        }
        prop_assert!(run.objective <= run.cumulative_revenue);
    }

    #[test]
    fn simulated_days_conserve_revenue(seed in any::<u64>(), r in prop::collection::vec(0.0..1.0f64, 3)) {
        let states: Vec<BidDistribution> = [0.9, 0.7, 0.5].iter().map(|&m| gaussian_histogram(m, 0.2, 1.0).unwrap()).collect();
        let day = simulate_day(
            1,
            &states,
            &ReserveProfile::new(r).unwrap(),
            &CtrVector::new(vec![0.5, 0.25]).unwrap(),
            300,
            &mut ChaCha8Rng::seed_from_u64(seed),
        ).unwrap();
        let paid: f64 = day.kpis.iter().map(|k| k.payment).sum();
        prop_assert_eq!(paid, day.revenue);
        for k in &day.kpis {
            prop_assert!(k.check().is_ok());
        }
    }
}
