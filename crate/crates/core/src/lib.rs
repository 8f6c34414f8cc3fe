//! Two-stream ordinal network for monocular building height estimation.
//!
//! A shared encoder feeds a footprint stream and a height stream. The
//! streams trade information through a gated exchange module, the height
//! stream predicts per-pixel bin probabilities over image-adaptive bin
//! values, and the final height is their expectation.
//!
//! The crate covers the data pipeline ([`dataset`]), label-derived
//! supervision ([`supervision`]), the network ([`model`], [`febr`]),
//! losses and metrics ([`objectives`]) and training ([`train`]).

pub mod dataset;
mod error;
pub mod febr;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod supervision;
pub mod train;

pub use error::{Error, Result};
pub use tsonet_tensor as tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/supervision.md")]
    mod supervision {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
