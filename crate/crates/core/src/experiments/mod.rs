//! Experiment harnesses built on the cell-problem and solver layers.

pub mod homog;
pub mod lbar_reg;
pub mod regularity;
