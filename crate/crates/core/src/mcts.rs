//! Monte Carlo tree search over reserve-price profiles.
//!
//! A tree node is an MDP state: every bidder's bid distribution plus the reserve
//! profile in force. Actions multiply each bidder's reserve by a factor from a small
//! set, so the search only looks at a neighborhood of the current prices.
//!
//! Each iteration walks `depth` steps from the root, picking actions with UCT. The
//! first time an edge is taken its reward and successor state are simulated with the
//! market model; later visits reuse them. The path is then backed up with the
//! λ-return rule: walking from the deepest step to the root,
//!
//! ```text
//! q  <- q + r_t
//! Q  <- Q + (q - Q) / n_a
//! q  <- (1 - λ) * max_a' Q(s_t, a') + λ * q
//! ```

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionSampler, CommonDraws, Money, ReserveProfile};
use crate::bidder::BidDistribution;
use crate::error::{Error, Result};
use crate::market::{Lookahead, Market};

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub distributions: Vec<BidDistribution>,
    pub reserves: ReserveProfile,
}

impl MdpState {
    pub fn new(distributions: Vec<BidDistribution>, reserves: ReserveProfile) -> Result<Self> {
        if distributions.len() != reserves.len() {
            return Err(Error::invalid(format!(
                "{} distributions but {} reserves",
                distributions.len(),
                reserves.len()
            )));
        }
        Ok(Self {
            distributions,
            reserves,
        })
    }

    fn distribution_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for d in &self.distributions {
            d.fingerprint().hash(&mut h);
        }
        h.finish()
    }
}

/// One reserve multiplier per bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(multipliers: Vec<f64>) -> Self {
        Self(multipliers)
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&m| m == 1.0)
    }
}

/// Every per-bidder combination of multipliers, first bidder varying slowest.
pub fn action_space(n_bidders: usize, multipliers: &[f64]) -> Vec<Action> {
    let mut out = vec![Vec::with_capacity(n_bidders)];
    for _ in 0..n_bidders {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                multipliers.iter().map(move |&m| {
                    let mut next = prefix.clone();
                    next.push(m);
                    next
                })
            })
            .collect();
    }
    out.into_iter().map(Action).collect()
}

/// Elementwise product of reserves and multipliers.
pub fn apply_action(reserves: &ReserveProfile, action: &Action) -> Result<ReserveProfile> {
    if reserves.len() != action.0.len() {
        return Err(Error::invalid(format!(
            "action has {} multipliers for {} reserves",
            action.0.len(),
            reserves.len()
        )));
    }
    ReserveProfile::new(
        reserves
            .as_slice()
            .iter()
            .zip(&action.0)
            .map(|(r, m)| r * m)
            .collect(),
    )
}

/// How the first visits to a node's actions are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnvisitedOrder {
    /// First unvisited action in enumeration order.
    #[default]
    Enumeration,
    /// Uniformly among unvisited actions, drawn from the search rng.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsParams {
    /// Number of steps in every sample path.
    pub depth: usize,
    pub iterations: usize,
    pub c_p: f64,
    pub lambda: f64,
    /// Auctions simulated per reward estimate.
    pub n_auction_samples: usize,
    pub multipliers: Vec<f64>,
    pub unvisited: UnvisitedOrder,
    /// Divide every reward by `depth` so path returns stay within [0, 1].
    pub normalize_returns: bool,
}

impl Default for MctsParams {
    fn default() -> Self {
        Self {
            depth: 5,
            iterations: 5000,
            c_p: std::f64::consts::SQRT_2,
            lambda: 0.8,
            n_auction_samples: 10_000,
            multipliers: vec![0.95, 1.0, 1.05],
            unvisited: UnvisitedOrder::Enumeration,
            normalize_returns: false,
        }
    }
}

impl MctsParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth == 0 {
            out.push("depth must be at least 1".to_string());
        }
        if self.iterations == 0 {
            out.push("iterations must be at least 1".to_string());
        }
        if !(self.c_p.is_finite() && self.c_p > 0.0) {
            out.push(format!("c_p must be positive, got {}", self.c_p));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            out.push(format!("lambda must be in (0, 1], got {}", self.lambda));
        }
        if self.n_auction_samples == 0 {
            out.push("n_auction_samples must be at least 1".to_string());
        }
        if self.multipliers.is_empty() {
            out.push("multipliers must not be empty".to_string());
        }
        if self.multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            out.push(format!("multipliers must be positive, got {:?}", self.multipliers));
        }
        out
    }
}

/// Visit count and value estimate of one action at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActionStats {
    pub visits: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, Default)]
struct Edge {
    reward: Option<f64>,
    child: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct MctsNode {
    pub state: MdpState,
    pub visits: u64,
    pub stats: Vec<ActionStats>,
    edges: Vec<Edge>,
}

impl MctsNode {
    pub fn new(state: MdpState, n_actions: usize) -> Self {
        Self {
            state,
            visits: 0,
            stats: vec![ActionStats::default(); n_actions],
            edges: vec![Edge::default(); n_actions],
        }
    }

    /// A node with preset statistics.
    pub fn with_stats(state: MdpState, visits: u64, stats: Vec<ActionStats>) -> Self {
        let edges = vec![Edge::default(); stats.len()];
        Self {
            state,
            visits,
            stats,
            edges,
        }
    }

    pub fn child(&self, action: usize) -> Option<NodeId> {
        self.edges[action].child
    }

    pub fn edge_reward(&self, action: usize) -> Option<f64> {
        self.edges[action].reward
    }

    /// Largest value among visited actions, or 0 when none has been tried.
    fn best_visited_value(&self) -> f64 {
        self.stats
            .iter()
            .filter(|s| s.visits > 0)
            .map(|s| s.value)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .unwrap_or(0.0)
    }
}

/// UCT: the first unvisited action if any, else `argmax Q + c_p * sqrt(ln n_s / n_a)`
/// with ties going to the earlier action.
pub fn uct_select(node: &MctsNode, c_p: f64) -> Result<usize> {
    if node.stats.is_empty() {
        return Err(Error::invalid("node has no actions"));
    }
    if let Some(a) = node.stats.iter().position(|s| s.visits == 0) {
        return Ok(a);
    }
    let ln_n = (node.visits as f64).ln();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, s) in node.stats.iter().enumerate() {
        let score = s.value + c_p * (ln_n / s.visits as f64).sqrt();
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    Ok(best)
}

fn select<R: Rng + ?Sized>(node: &MctsNode, params: &MctsParams, rng: &mut R) -> Result<usize> {
    if params.unvisited == UnvisitedOrder::Random {
        let unvisited: Vec<usize> = (0..node.stats.len()).filter(|&a| node.stats[a].visits == 0).collect();
        if !unvisited.is_empty() {
            return Ok(unvisited[rng.gen_range(0..unvisited.len())]);
        }
    }
    uct_select(node, params.c_p)
}

/// The weights `(1-λ)λ^n` for `n < L-1` and `λ^(L-1)` for the tail.
pub fn lambda_weights(len: usize, lambda: f64) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("lambda weights need L >= 1"));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("lambda must be in (0, 1], got {lambda}")));
    }
    let mut w: Vec<f64> = (0..len - 1).map(|n| (1.0 - lambda) * lambda.powi(n as i32)).collect();
    w.push(lambda.powi(len as i32 - 1));
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEntry {
    pub node: NodeId,
    pub action: usize,
    pub reward: f64,
}

/// The `(node, action, reward)` triples of one simulation, root first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplePath {
    pub entries: Vec<PathEntry>,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<MctsNode>,
    actions: Rc<[Action]>,
}

impl SearchTree {
    pub const ROOT: NodeId = NodeId(0);

    pub fn new(root: MdpState, actions: Vec<Action>) -> Self {
        let n = actions.len();
        Self {
            nodes: vec![MctsNode::new(root, n)],
            actions: actions.into(),
        }
    }

    /// A tree over an explicit root node, e.g. one with preset statistics.
    pub fn from_root(root: MctsNode, actions: Vec<Action>) -> Self {
        Self {
            nodes: vec![root],
            actions: actions.into(),
        }
    }

    pub fn root(&self) -> &MctsNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &MctsNode {
        &self.nodes[id.0]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Adds a fresh node for `state` below `parent` via `action`.
    pub fn add_child(&mut self, parent: NodeId, action: usize, state: MdpState) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(MctsNode::new(state, self.actions.len()));
        self.nodes[parent.0].edges[action].child = Some(id);
        id
    }

    /// Root action with the highest value among visited ones; ties go to the earlier action.
    pub fn best_root_action(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (a, s) in self.root().stats.iter().enumerate() {
            if s.visits > 0 && best.map_or(true, |(_, v)| s.value > v) {
                best = Some((a, s.value));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// Backs a sample path up the tree, deepest step first, root included.
pub fn backpropagate(tree: &mut SearchTree, path: &SamplePath, lambda: f64) {
    let mut q = 0.0;
    for entry in path.entries.iter().rev() {
        let node = &mut tree.nodes[entry.node.0];
        node.visits += 1;
        let stats = &mut node.stats[entry.action];
        stats.visits += 1;
        q += entry.reward;
        let delta = q - stats.value;
        stats.value += delta / stats.visits as f64;
        q = (1.0 - lambda) * node.best_visited_value() + lambda * q;
    }
}

type MemoKey = (u64, Vec<i64>);

/// Everything one search needs besides the tree: the model, the shared auction
/// draws, and a memo of simulated edges.
pub struct SearchContext<'a> {
    params: &'a MctsParams,
    market: &'a Market,
    step_days: u32,
    sampler: AuctionSampler<'a>,
    memo: HashMap<MemoKey, Rc<Lookahead>>,
    reward_scale: Money,
    evaluations: usize,
}

impl<'a> SearchContext<'a> {
    pub fn new(params: &'a MctsParams, market: &'a Market, draws: &'a CommonDraws, step_days: u32) -> Result<Self> {
        let v = params.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        if step_days == 0 {
            return Err(Error::invalid("step_days must be at least 1"));
        }
        Ok(Self {
            params,
            market,
            step_days,
            sampler: AuctionSampler::new(draws, &market.ctrs),
            memo: HashMap::new(),
            reward_scale: market.max_revenue_per_query(),
            evaluations: 0,
        })
    }

    /// Number of distinct edge simulations run so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn simulate_edge(&mut self, state: &MdpState, reserves: &ReserveProfile) -> Result<Rc<Lookahead>> {
        // Reserves are keyed at 1e-12 resolution so that products taken in a
        // different order land on the same entry.
        let key = (
            state.distribution_fingerprint(),
            reserves.as_slice().iter().map(|r| (r * 1e12).round() as i64).collect(),
        );
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        let out = Rc::new(self.market.lookahead(
            &mut self.sampler,
            &state.distributions,
            reserves,
            self.step_days,
            true,
        )?);
        self.evaluations += 1;
        self.memo.insert(key, out.clone());
        Ok(out)
    }

    fn scaled(&self, revenue: Money) -> f64 {
        if self.reward_scale > 0.0 {
            (revenue / self.reward_scale).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// One selection/expansion pass from the root down to the configured depth.
pub fn simulate_once<R: Rng + ?Sized>(
    tree: &mut SearchTree,
    ctx: &mut SearchContext<'_>,
    rng: &mut R,
) -> Result<SamplePath> {
    let depth = ctx.params.depth;
    let divisor = if ctx.params.normalize_returns { depth as f64 } else { 1.0 };
    let mut path = SamplePath {
        entries: Vec::with_capacity(depth),
    };
    let mut id = SearchTree::ROOT;
    for step in 0..depth {
        let last = step + 1 == depth;
        let action = select(tree.node(id), ctx.params, rng)?;
        let edge = tree.node(id).edges[action];
        let reward = match (edge.reward, edge.child) {
            (Some(r), Some(_)) => r,
            (Some(r), None) if last => r,
            _ => {
                let node = tree.node(id);
                let reserves = apply_action(&node.state.reserves, &tree.actions[action])?;
                let sim = ctx.simulate_edge(&node.state, &reserves)?;
                let r = ctx.scaled(sim.revenue_per_query) / divisor;
                tree.nodes[id.0].edges[action].reward = Some(r);
                if !last {
                    let next = sim
                        .next_states
                        .clone()
                        .ok_or_else(|| Error::invalid("lookahead returned no successor state"))?;
                    tree.add_child(id, action, MdpState::new(next, reserves)?);
                }
                r
            }
        };
        path.entries.push(PathEntry {
            node: id,
            action,
            reward,
        });
        if !last {
            id = tree.node(id).child(action).expect("child created above");
        }
    }
    Ok(path)
}

/// Builds a fresh tree at `root_state` and runs every search iteration.
/// `step_days` is how many days one action is held in the model.
pub fn search<R: Rng + ?Sized>(
    root_state: &MdpState,
    params: &MctsParams,
    market: &Market,
    step_days: u32,
    rng: &mut R,
) -> Result<SearchTree> {
    if root_state.distributions.len() != market.n_bidders() {
        return Err(Error::invalid(format!(
            "root state has {} bidders, market has {}",
            root_state.distributions.len(),
            market.n_bidders()
        )));
    }
    let draws = CommonDraws::draw(market.n_bidders(), params.n_auction_samples.max(1), rng)?;
    let mut ctx = SearchContext::new(params, market, &draws, step_days)?;
    let mut tree = SearchTree::new(
        root_state.clone(),
        action_space(market.n_bidders(), &params.multipliers),
    );
    if tree.actions().is_empty() {
        return Err(Error::invalid("empty action set"));
    }
    for _ in 0..params.iterations {
        let path = simulate_once(&mut tree, &mut ctx, rng)?;
        backpropagate(&mut tree, &path, params.lambda);
    }
    Ok(tree)
}

/// Runs the search and returns the root action with the highest value.
pub fn plan<R: Rng + ?Sized>(
    root_state: &MdpState,
    params: &MctsParams,
    market: &Market,
    step_days: u32,
    rng: &mut R,
) -> Result<Action> {
    let tree = search(root_state, params, market, step_days, rng)?;
    let best = tree.best_root_action().ok_or_else(|| Error::invalid("search visited no action"))?;
    Ok(tree.actions()[best].clone())
}
