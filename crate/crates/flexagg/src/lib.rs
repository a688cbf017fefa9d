//! Optimal reserve-capacity bidding and energy trading for aggregations
//! of flexible energy resources.
//!
//! The library computes affinely-adjustable power-reference policies,
//! day-ahead/intra-day trading policies, and symmetric regulation
//! capacity bids that are robust to every admissible activation signal,
//! and verifies them by continuous-time simulation.

pub mod app;
pub mod bidding;
pub mod lpcore;
pub mod market;
pub mod policy;

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    app::run()
}
pub mod resource;
pub mod robust;
pub mod simulate;
pub mod timegrid;
