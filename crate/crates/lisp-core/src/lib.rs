//! Lifelong skill planning for reset-free reinforcement learning.
//!
//! The agent learns a probabilistic ensemble dynamics model from replay data,
//! discovers latent skills inside that model with a mutual-information
//! intrinsic reward (penalized where the ensemble disagrees), and acts by
//! MPPI planning over skill sequences. There are no episode resets: a single
//! lifelong trajectory runs through a schedule of MDP segments whose rewards
//! and dynamics change over time.

pub mod mat;
pub mod agent;
pub mod dynamics;
pub mod env;
pub mod nn;
pub mod skills;
pub mod planner;
pub mod replay;
pub mod rng;
pub mod stats;

pub use mat::Mat;

use std::sync::OnceLock;

/// Builds the global rayon pool, honoring the `LISP_THREADS` cap. Safe to
/// call repeatedly; only the first call configures the pool.
pub fn init_threads() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("LISP_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                let n = n.max(1);
                // Ignore failure: a pool may already exist (e.g. under test harnesses).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    });
}
