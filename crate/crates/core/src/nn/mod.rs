//! Minimal reverse-mode building blocks: each layer exposes `forward`, which
//! returns its output and a cache, and `backward`, which accumulates
//! parameter gradients and returns the input gradient.

pub mod adam;
pub mod conv;
pub mod linear;
pub mod lstm;
pub mod param;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv_out_bins, trans_out_bins, GatedConv, GatedTransConv};
pub use linear::Linear;
pub use lstm::{BiLstm, Lstm};
pub use param::{sigmoid, Module, Param};

#[cfg(test)]
mod tests;
