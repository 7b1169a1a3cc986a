//! f-divergence trajectory-balance losses for GFlowNets.
//!
//! The crate provides the surrogate losses induced by standardized
//! f-divergence generators, the DevGrad closed-form normalization, the
//! LLM-alignment variants, a hypergrid environment and a tabular trainer.

pub mod devgrad;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod gfn;
pub mod hypergrid;
pub mod llm;
pub mod loss;
pub mod numeric;
pub mod verify;

pub use divergence::Divergence;
pub use error::{Error, Result};
