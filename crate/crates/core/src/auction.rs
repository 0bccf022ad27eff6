//! Generalized second-price auction with per-bidder reserve prices.
//!
//! Bidders whose bid reaches their own reserve are ranked by bid (ties go to the
//! lower bidder id) and take slots in order. The bidder in slot `i` pays per click
//!
//! ```text
//! max(q[i+1] * b(i+1) / q[i], r(i))   if slot i+1 is also filled
//! r(i)                                otherwise
//! ```
//!
//! The module also holds the Monte Carlo machinery that turns bid distributions
//! into expected per-query revenue and per-bidder KPI rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bidder::{BidDistribution, KpiRecord, NUM_BINS};
use crate::error::{Error, Result};

/// Abstract currency units. Always finite and non-negative where it appears in a
/// validated profile.
pub type Money = f64;

fn check_money(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(i) => Err(Error::invalid(format!(
            "{what}[{i}] = {} is not a non-negative amount",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Slot click-through rates, best slot first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CtrVector(Vec<f64>);

impl CtrVector {
    /// An empty vector is accepted and yields auctions with no slots.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if let Some(x) = q.iter().find(|x| !(x.is_finite() && (0.0..=1.0).contains(*x))) {
            return Err(Error::invalid(format!("ctr {x} is outside [0, 1]")));
        }
        if q.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid(format!("ctrs must be non-increasing, got {q:?}")));
        }
        Ok(Self(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn slots(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for CtrVector {
    type Error = Error;
    fn try_from(q: Vec<f64>) -> Result<Self> {
        Self::new(q)
    }
}

impl From<CtrVector> for Vec<f64> {
    fn from(c: CtrVector) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidProfile(Vec<Money>);

impl BidProfile {
    pub fn new(bids: Vec<Money>) -> Result<Self> {
        if bids.is_empty() {
            return Err(Error::invalid("bid profile needs at least one bidder"));
        }
        check_money("bid", &bids)?;
        Ok(Self(bids))
    }

    pub fn as_slice(&self) -> &[Money] {
        &self.0
    }
}

/// Per-bidder reserve prices, indexed by bidder id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReserveProfile(Vec<Money>);

impl ReserveProfile {
    pub fn new(reserves: Vec<Money>) -> Result<Self> {
        check_money("reserve", &reserves)?;
        Ok(Self(reserves))
    }

    pub fn uniform(n: usize, reserve: Money) -> Result<Self> {
        Self::new(vec![reserve; n])
    }

    pub fn as_slice(&self) -> &[Money] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with bidder `i`'s reserve multiplied by `factor`.
    pub fn scaled_at(&self, i: usize, factor: f64) -> Self {
        let mut r = self.0.clone();
        r[i] *= factor;
        Self(r)
    }

    pub(crate) fn from_raw(reserves: Vec<Money>) -> Self {
        debug_assert!(check_money("reserve", &reserves).is_ok());
        Self(reserves)
    }
}

impl TryFrom<Vec<f64>> for ReserveProfile {
    type Error = Error;
    fn try_from(r: Vec<f64>) -> Result<Self> {
        Self::new(r)
    }
}

impl From<ReserveProfile> for Vec<f64> {
    fn from(r: ReserveProfile) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub bidder: usize,
    /// 1-based slot index.
    pub slot: usize,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub assignments: Vec<Assignment>,
    /// Per-query expectation: sum of `q[slot] * price` over assignments.
    pub expected_revenue: Money,
}

/// Ranks the eligible bidders into `order` (best first) without allocating.
fn rank_eligible(bids: &[f64], reserves: &[f64], order: &mut Vec<usize>) {
    order.clear();
    for (i, (&b, &r)) in bids.iter().zip(reserves).enumerate() {
        if b >= r {
            // Earlier ids with an equal bid stay ahead.
            let pos = order.iter().position(|&j| bids[j] < b).unwrap_or(order.len());
            order.insert(pos, i);
        }
    }
}

/// Calls `f(bidder, slot_index_0_based, price)` for every filled slot.
#[inline]
fn for_each_assignment(
    bids: &[f64],
    reserves: &[f64],
    q: &[f64],
    order: &mut Vec<usize>,
    mut f: impl FnMut(usize, usize, Money),
) {
    rank_eligible(bids, reserves, order);
    let filled = order.len().min(q.len());
    for s in 0..filled {
        let j = order[s];
        let floor = reserves[j];
        let price = if s + 1 < filled && q[s] > 0.0 {
            let next = q[s + 1] * bids[order[s + 1]] / q[s];
            next.max(floor)
        } else {
            floor
        };
        f(j, s, price);
    }
}

/// Runs one GSP auction.
pub fn run_auction(bids: &BidProfile, reserves: &ReserveProfile, ctrs: &CtrVector) -> Result<AuctionOutcome> {
    if bids.as_slice().len() != reserves.len() {
        return Err(Error::invalid(format!(
            "{} bids but {} reserves",
            bids.as_slice().len(),
            reserves.len()
        )));
    }
    let q = ctrs.as_slice();
    let mut order = Vec::with_capacity(reserves.len());
    let mut assignments = Vec::new();
    let mut expected_revenue = 0.0;
    for_each_assignment(bids.as_slice(), reserves.as_slice(), q, &mut order, |bidder, s, price| {
        expected_revenue += q[s] * price;
        assignments.push(Assignment {
            bidder,
            slot: s + 1,
            price,
        });
    });
    Ok(AuctionOutcome {
        assignments,
        expected_revenue,
    })
}

/// Uniform variates shared by every evaluation that uses them, so that different
/// reserve profiles and states are compared on the same simulated queries.
///
/// Bids are drawn by inverse CDF. Each bidder's variates are kept sorted (with the
/// permutation back to query order), which turns the CDF lookup into a linear merge.
#[derive(Debug, Clone)]
pub struct CommonDraws {
    n_samples: usize,
    sorted: Vec<Vec<f64>>,
    query_of: Vec<Vec<u32>>,
}

impl CommonDraws {
    pub fn draw<R: Rng + ?Sized>(n_bidders: usize, n_samples: usize, rng: &mut R) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if n_samples > u32::MAX as usize {
            return Err(Error::invalid("n_samples too large"));
        }
        // Query-major draw order: query k takes bidders 0..N in turn.
        let mut raw = vec![vec![0.0f64; n_samples]; n_bidders];
        for k in 0..n_samples {
            for per_bidder in raw.iter_mut() {
                per_bidder[k] = rng.gen::<f64>();
            }
        }
        let mut sorted = Vec::with_capacity(n_bidders);
        let mut query_of = Vec::with_capacity(n_bidders);
        for u in raw {
            let mut idx: Vec<u32> = (0..n_samples as u32).collect();
            idx.sort_by(|&a, &b| u[a as usize].total_cmp(&u[b as usize]).then(a.cmp(&b)));
            sorted.push(idx.iter().map(|&k| u[k as usize]).collect());
            query_of.push(idx);
        }
        Ok(Self {
            n_samples,
            sorted,
            query_of,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_bidders(&self) -> usize {
        self.sorted.len()
    }

    /// Writes the sampled bin of bidder `i` for every query into `out`.
    fn fill_bins(&self, i: usize, cdf: &[f64; NUM_BINS], out: &mut [u8]) {
        let mut bin = 0usize;
        for (&u, &k) in self.sorted[i].iter().zip(&self.query_of[i]) {
            while cdf[bin] <= u {
                bin += 1;
            }
            out[k as usize] = bin as u8;
        }
    }
}

/// Expected per-query quantities estimated from a batch of simulated auctions.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodEstimate {
    pub revenue_per_query: Money,
    /// Probability of being shown, per bidder.
    pub impression_rate: Vec<f64>,
    /// Expected clicks per query, per bidder.
    pub click_rate: Vec<f64>,
    /// Expected payment per query, per bidder.
    pub payment_rate: Vec<Money>,
}

impl PeriodEstimate {
    /// Expected KPIs over `queries` queries, rounded to whole impressions and clicks.
    /// Payment keeps the estimated cost per click.
    pub fn kpis(&self, queries: u64) -> Vec<KpiRecord> {
        let q = queries as f64;
        (0..self.impression_rate.len())
            .map(|i| {
                let impressions = (self.impression_rate[i] * q).round() as u64;
                let clicks = ((self.click_rate[i] * q).round() as u64).min(impressions);
                let payment = if clicks > 0 && self.click_rate[i] > 0.0 {
                    clicks as f64 * self.payment_rate[i] / self.click_rate[i]
                } else {
                    0.0
                };
                KpiRecord {
                    impressions,
                    clicks,
                    payment,
                }
            })
            .collect()
    }
}

/// Reusable evaluator: expected revenue and KPI rates of a reserve profile against
/// a set of bid distributions, over a fixed batch of [`CommonDraws`].
pub struct AuctionSampler<'a> {
    draws: &'a CommonDraws,
    ctrs: &'a CtrVector,
    bins: Vec<Vec<u8>>,
    /// Per bidder and bin: the midpoint bid, or -1 when it is below the reserve.
    entry_bid: Vec<[f64; NUM_BINS]>,
    // Slot-indexed scratch for the running top-K of one query.
    top_ids: Vec<usize>,
    top_bids: Vec<f64>,
    // Bidder-major, slot-minor accumulators.
    wins: Vec<u32>,
    price_sum: Vec<f64>,
}

impl<'a> AuctionSampler<'a> {
    pub fn new(draws: &'a CommonDraws, ctrs: &'a CtrVector) -> Self {
        let n = draws.n_bidders();
        let k = ctrs.slots().min(n);
        Self {
            draws,
            ctrs,
            bins: vec![vec![0u8; draws.n_samples()]; n],
            entry_bid: vec![[0.0; NUM_BINS]; n],
            top_ids: vec![0; k + 1],
            top_bids: vec![0.0; k + 1],
            wins: vec![0; n * k],
            price_sum: vec![0.0; n * k],
        }
    }

    pub fn estimate(&mut self, states: &[BidDistribution], reserves: &ReserveProfile) -> Result<PeriodEstimate> {
        let n = self.draws.n_bidders();
        if states.len() != n || reserves.len() != n {
            return Err(Error::invalid(format!(
                "sampler built for {n} bidders, got {} states and {} reserves",
                states.len(),
                reserves.len()
            )));
        }
        let r = reserves.as_slice();
        for (i, s) in states.iter().enumerate() {
            self.draws.fill_bins(i, &s.sampling_cdf(), &mut self.bins[i]);
            for (b, slot) in self.entry_bid[i].iter_mut().enumerate() {
                let m = s.midpoint(b);
                *slot = if m >= r[i] { m } else { -1.0 };
            }
        }
        let q = self.ctrs.as_slice();
        let k_max = q.len().min(n);
        // Next-bid multiplier q_{s+1}/q_s, zero when slot s has no clicks.
        let ratio: Vec<f64> = (0..k_max)
            .map(|s| if s + 1 < q.len() && q[s] > 0.0 { q[s + 1] / q[s] } else { 0.0 })
            .collect();
        self.wins.iter_mut().for_each(|w| *w = 0);
        self.price_sum.iter_mut().for_each(|p| *p = 0.0);
        if k_max > 0 {
            self.run_queries(r, &ratio, k_max);
        }

        let m = self.draws.n_samples() as f64;
        let mut revenue = 0.0;
        let mut impression_rate = vec![0.0; n];
        let mut click_rate = vec![0.0; n];
        let mut payment_rate = vec![0.0; n];
        for j in 0..n {
            for s in 0..k_max {
                let w = self.wins[j * k_max + s] as f64;
                let paid = q[s] * self.price_sum[j * k_max + s];
                impression_rate[j] += w / m;
                click_rate[j] += q[s] * w / m;
                payment_rate[j] += paid / m;
                revenue += paid;
            }
        }
        Ok(PeriodEstimate {
            revenue_per_query: revenue / m,
            impression_rate,
            click_rate,
            payment_rate,
        })
    }

    fn run_queries(&mut self, r: &[f64], ratio: &[f64], k_max: usize) {
        let n = self.bins.len();
        let ids = &mut self.top_ids[..];
        let vals = &mut self.top_bids[..];
        for k in 0..self.draws.n_samples() {
            // Insertion into the top k_max; ties keep the earlier id ahead.
            let mut len = 0usize;
            for i in 0..n {
                let b = self.entry_bid[i][self.bins[i][k] as usize];
                if b < 0.0 || (len == k_max && b <= vals[len - 1]) {
                    continue;
                }
                let mut pos = len.min(k_max - 1);
                while pos > 0 && vals[pos - 1] < b {
                    ids[pos] = ids[pos - 1];
                    vals[pos] = vals[pos - 1];
                    pos -= 1;
                }
                ids[pos] = i;
                vals[pos] = b;
                if len < k_max {
                    len += 1;
                }
            }
            for s in 0..len {
                let j = ids[s];
                let price = if s + 1 < len { (ratio[s] * vals[s + 1]).max(r[j]) } else { r[j] };
                self.wins[j * k_max + s] += 1;
                self.price_sum[j * k_max + s] += price;
            }
        }
    }
}

/// Mean expected per-query revenue over `n_samples` auctions with bids drawn
/// independently from each bidder's distribution (bid = bin midpoint).
pub fn estimate_revenue<R: Rng + ?Sized>(
    state: &[BidDistribution],
    reserves: &ReserveProfile,
    ctrs: &CtrVector,
    n_samples: usize,
    rng: &mut R,
) -> Result<Money> {
    let draws = CommonDraws::draw(state.len(), n_samples, rng)?;
    Ok(AuctionSampler::new(&draws, ctrs).estimate(state, reserves)?.revenue_per_query)
}

/// Draws one bid per bidder (bin midpoints).
pub fn sample_bids<R: Rng + ?Sized>(cdfs: &[[f64; NUM_BINS]], states: &[BidDistribution], rng: &mut R, out: &mut [f64]) {
    for ((c, s), o) in cdfs.iter().zip(states).zip(out.iter_mut()) {
        let u: f64 = rng.gen();
        let bin = c.partition_point(|&x| x <= u);
        *o = s.midpoint(bin);
    }
}

/// Per-query scratch for the day simulator: runs an auction on raw slices.
pub(crate) struct QueryAuction {
    order: Vec<usize>,
}

impl QueryAuction {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            order: Vec::with_capacity(n),
        }
    }

    pub(crate) fn run(&mut self, bids: &[f64], reserves: &[f64], q: &[f64], f: impl FnMut(usize, usize, Money)) {
        for_each_assignment(bids, reserves, q, &mut self.order, f);
    }
}
