//! Mixed-policy GRPO search over black-box objectives with a toy
//! feature-linear policy, an elite archive, and desk-scale tasks.

pub mod archive;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod tasks;
