//! Certified preimage over-approximation for feed-forward ReLU networks.
//!
//! Given a network `f`, an input box, and an output set `H·f(x) + d ≤ 0`,
//! this crate computes half-space certificates `cᵀx ≥ lb` that provably
//! contain every input mapped into the output set. The engine lower-bounds
//! the triangle-relaxed linear program through its Lagrangian dual, ascends
//! the dual variables by projected gradients, iteratively re-tightens every
//! intermediate bound against the output constraint, and optionally splits
//! the input box into branches whose per-region polytopes are unioned.
//!
//! Modules:
//! - [`network`]: network representation, JSON formats, structural encodings
//!   (closed loops, max-gap read-outs, constraint folding, stacking).
//! - [`bounds`]: interval propagation, reverse symbolic initialization,
//!   neuron classification, tighten-only bound stores.
//! - [`dual`]: the dual bound `g(α, γ)`, its gradient, projected ascent, and
//!   the iterative tightening loop.
//! - [`branch`]: input-space branch-and-bound over box regions.
//! - [`geometry`]: half-space sets, membership, direction generation, and
//!   Monte-Carlo approximation-ratio estimation.
//! - [`oracle`]: exact small-instance ground truth (activation-pattern
//!   enumeration over a dense two-phase simplex) used to validate the engine.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` or `f64`);
//! concrete `f64` aliases are exported at the crate root.

pub mod bounds;
pub mod branch;
pub mod dual;
pub mod error;
pub mod geometry;
pub mod network;
pub mod oracle;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations, the precision used by the CLI and the test suite.
pub type Network64 = network::Network<f64>;
pub type AffineLayer64 = network::AffineLayer<f64>;
pub type OutputSet64 = network::OutputSet<f64>;
pub type InputBox64 = network::InputBox<f64>;
pub type BoundStore64 = bounds::BoundStore<f64>;
pub type HalfSpace64 = geometry::HalfSpace<f64>;
pub type PolytopeUnion64 = geometry::PolytopeUnion<f64>;

/// `f32` instantiations.
pub type Network32 = network::Network<f32>;
pub type AffineLayer32 = network::AffineLayer<f32>;
pub type OutputSet32 = network::OutputSet<f32>;
pub type InputBox32 = network::InputBox<f32>;
pub type BoundStore32 = bounds::BoundStore<f32>;
