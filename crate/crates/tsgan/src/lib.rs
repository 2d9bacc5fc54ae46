//! Adversarial simulation of financial return series.
//!
//! The crate trains temporal convolutional networks (a pure TCN generator
//! and a stochastic-volatility variant) against a TCN discriminator on
//! Lambert-W-normalized log returns, simulates synthetic paths (optionally
//! under a risk-neutral correction), and scores them against historical data
//! and a GARCH(1,1) baseline with distributional and dependence metrics.
//!
//! Modules follow the pipeline order:
//!
//! * [`autodiff`] — reverse-mode engine over dense `f64` tensors
//! * [`networks`] — MLPs, temporal blocks, TCNs with skip connections
//! * [`preprocessing`] — log returns, normalization, Lambert W tail transform
//! * [`generators`] — noise priors, return-path generators, risk-neutral maps
//! * [`training`] — GAN losses, R1 penalty, the alternating training loop
//! * [`garch`] — GARCH(1,1) likelihood, fit, simulation
//! * [`evaluation`] — EMD, DY, ACF and leverage scores, report assembly
//! * [`io`] — price CSV ingestion, run configuration, output layout

pub mod autodiff;
pub mod evaluation;
pub mod garch;
pub mod generators;
pub mod io;
pub mod networks;
pub mod optim;
pub mod preprocessing;
pub mod training;

pub use autodiff::{Graph, Tensor, Var};
