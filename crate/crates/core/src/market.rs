//! The environment a reserve-pricing strategy plans against: slot CTRs, bidder
//! models and the daily query volume.

use serde::{Deserialize, Serialize};

use crate::auction::{AuctionSampler, CtrVector, Money, ReserveProfile};
use crate::bidder::{joint_transition, BidDistribution, BidderModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub ctrs: CtrVector,
    pub models: Vec<BidderModelSpec>,
    pub queries_per_day: u64,
    /// Upper edge of every bid histogram.
    pub b_max: Money,
}

/// Model-predicted result of holding one reserve profile for a number of days.
#[derive(Debug, Clone)]
pub struct Lookahead {
    /// Mean expected per-query revenue over the simulated days.
    pub revenue_per_query: Money,
    /// Bidder states after the last simulated day, if they were requested.
    pub next_states: Option<Vec<BidDistribution>>,
}

impl Market {
    pub fn n_bidders(&self) -> usize {
        self.models.len()
    }

    /// Upper bound on per-query revenue: every slot filled at the top bid.
    pub fn max_revenue_per_query(&self) -> Money {
        self.b_max * self.ctrs.total()
    }

    /// Simulates `days` days under `reserves`: each day estimates revenue and KPIs
    /// from the sampler's draws, then moves every bidder with its model.
    /// The final transition is skipped when `want_next_state` is false.
    pub fn lookahead(
        &self,
        sampler: &mut AuctionSampler<'_>,
        states: &[BidDistribution],
        reserves: &ReserveProfile,
        days: u32,
        want_next_state: bool,
    ) -> Result<Lookahead> {
        if days == 0 {
            return Err(Error::invalid("lookahead needs at least one day"));
        }
        let mut current: Option<Vec<BidDistribution>> = None;
        let mut total = 0.0;
        for day in 0..days {
            let s = current.as_deref().unwrap_or(states);
            let est = sampler.estimate(s, reserves)?;
            total += est.revenue_per_query;
            if day + 1 < days || want_next_state {
                let kpis = est.kpis(self.queries_per_day);
                current = Some(joint_transition(&self.models, s, &kpis)?);
            }
        }
        Ok(Lookahead {
            revenue_per_query: total / days as f64,
            next_states: if want_next_state { current } else { None },
        })
    }
}
