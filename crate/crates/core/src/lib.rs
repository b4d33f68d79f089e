//! Joint training of neural-network ensembles.
//!
//! Members are trained with a loss that interpolates between independent
//! training (λ = 0) and end-to-end training of the combined prediction
//! (λ = 1). The combined prediction averages member logits, which for
//! categorical outputs is the normalized geometric mean of the member
//! distributions.

pub mod analysis;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod expfam;
pub mod jointtrain;
pub mod net;
pub mod seeds;
pub mod verify;

pub use error::{Error, ErrorClass, Result};
pub use expfam::DistributionFamily;
