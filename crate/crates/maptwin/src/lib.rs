//! Digital-twin based 3D map management for edge-assisted mobile AR.
//!
//! A mobile AR device estimates its pose against a 3D map of feature points
//! kept on an edge server. Each time slot the device may upload a budget-
//! limited subset of its camera frames; the server folds them into a
//! bounded co-visibility graph, evicting old frames to stay within
//! capacity. This crate provides:
//!
//! - [`covis`] — the co-visibility graph and the log-det pose-uncertainty
//!   metric, with an exact spanning-tree oracle for verification;
//! - [`scene`] — a synthetic indoor scene and trajectory generator plus a
//!   plain-text trace format for real data;
//! - [`channel`] — the two-state Markov uplink and per-slot upload budget;
//! - [`env`] — the constrained upload/eviction decision process (state,
//!   feasibility, map update, reward);
//! - [`nn`] — a minimal tape-based differentiable kernel (dense, graph
//!   convolution, gated recurrent cell, Adam) with finite-difference
//!   verification;
//! - [`twin`] — replay buffers, the learned visibility predictor, and
//!   emulated (artificial) experience generation;
//! - [`agent`] — the model-based actor-critic trainer, its model-free
//!   ablation, and the LFF/PU/random/greedy/brute-force baselines;
//! - [`harness`] — experiment configuration, sweeps, convergence studies,
//!   oracle checks, and metrics output.

pub mod agent;
pub mod channel;
pub mod covis;
pub mod env;
pub mod harness;
pub mod nn;
pub mod scene;
pub mod twin;

use rand::SeedableRng;

/// One deterministic generator per (seed, stream) pair. Every random
/// decision in the crate draws from a stream created here, so a run is
/// fully determined by its configured seeds.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// The book chapters double as integration examples; their code blocks run
// with the library's doctests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Covisibility, "../../../book/src/covisibility.md");
    chapter!(Uncertainty, "../../../book/src/uncertainty.md");
    chapter!(Channel, "../../../book/src/channel.md");
    chapter!(Environment, "../../../book/src/environment.md");
    chapter!(Autodiff, "../../../book/src/autodiff.md");
    chapter!(DigitalTwin, "../../../book/src/digital-twin.md");
    chapter!(Training, "../../../book/src/training.md");
    chapter!(Experiments, "../../../book/src/experiments.md");
}
