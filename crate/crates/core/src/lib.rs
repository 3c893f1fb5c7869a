//! Low-light image enhancement by iterated global tone curves.
//!
//! A policy network picks four Bézier parameters per step; the curves of a
//! short episode are composed into one lookup table that is applied to the
//! full-resolution image in a single pass. The policy is trained with soft
//! actor-critic against a loss provider (a remote CLIP scorer or a built-in
//! exposure proxy).

pub mod bench;
pub mod enhance;
pub mod imaging;
pub mod metrics;
pub mod neural;
pub mod reward;
pub mod sac;
pub mod synthetic;
pub mod tone_curve;
