//! Numerical toolkit for deterministic mean field games on the flat torus.
//!
//! The library provides the building blocks for a particle-based treatment of
//! first-order mean field games in the extended phase space `T^d x R`:
//!
//! * [`torus`] — quotient geometry of `T^d = R^d / Z^d` and uniform lattices;
//! * [`measures`] — discrete probability measures on the torus, the extended
//!   space and path space, together with pushforward, lifting, evaluation,
//!   concatenation and plan composition;
//! * [`wasserstein`] — exact Kantorovich–Rubinstein (`W1`) distances and
//!   optimal plans between discrete measures;
//! * [`dynamics`] — controlled dynamics, vectograms, relaxed trajectories and
//!   the fixed-point solver for mean-field differential inclusions;
//! * [`bellman`] — semi-Lagrangian backward propagator `B` and the frozen
//!   one-step operator `A` on periodic grid functions;
//! * [`mfg`] — equilibrium solver and verifier for the coupled game;
//! * [`gamedyn`] — the set-valued game dynamics on (measure, payoff) pairs;
//! * [`viability`] — value multifunctions, viability and set-valued
//!   derivative tests, and the Euler chain constructor;
//! * [`checks`] — the property suite tying the numerical operators to their
//!   analytic bounds.
//!
//! Inner loops (per-atom integration, per-node Bellman sweeps, per-sample
//! checks) are data parallel via rayon when the `parallel` feature is enabled
//! (the default); the same code paths fall back to sequential iteration when
//! it is disabled or when [`exec::set_parallel`] turns parallelism off at
//! runtime.

pub mod bellman;
pub mod checks;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod gamedyn;
pub mod grid;
pub mod measures;
pub mod mfg;
pub mod report;
pub mod torus;
pub mod viability;
pub mod wasserstein;

pub use error::{Error, Result};
pub use grid::GridFunction;
pub use report::CheckResult;
pub use torus::{TorusLattice, TorusPoint};
