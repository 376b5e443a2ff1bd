//! Delay-corrected nowcasting of stratified surveillance counts.
//!
//! The pipeline runs: daily cumulative snapshots are differenced into a
//! reporting triangle ([`triangle`]), a window of it becomes a penalized
//! negative-binomial regression design ([`design`]) that is fitted by
//! penalized IRLS ([`estimate`]), and the fitted model fills the missing
//! and future cells of the triangle with bootstrap intervals ([`predict`]).
//! [`evaluate`] scores stored predictions against later snapshots and
//! [`synth`] simulates archives with known parameters.

pub mod design;
pub mod estimate;
pub mod evaluate;
pub mod predict;
pub mod strata;
pub mod synth;
pub mod triangle;
