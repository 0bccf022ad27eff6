//! Generalized second-price sponsored-search auctions with per-bidder reserve
//! prices, Markov bidder models, and a Monte Carlo tree search planner that adjusts
//! reserves over time.
//!
//! The modules build on each other bottom-up:
//!
//! - [`auction`]: single auctions and Monte Carlo revenue estimates.
//! - [`bidder`]: bid histograms, KPIs and bidder transition models.
//! - [`market`]: the model a planner simulates against.
//! - [`mcts`]: the tree search.
//! - [`strategies`]: baseline and dynamic reserve strategies.
//! - [`harness`]: day-by-day runs and multi-seed comparisons.
//! - [`config`] and [`cli`]: the command-line front end.

pub mod auction;
pub mod bidder;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod market;
pub mod mcts;
pub mod output;
pub mod strategies;

pub use error::{Error, Result};
