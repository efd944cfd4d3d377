#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod experiment;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod vit;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
