//! Mask-guided two-stream video object segmentation.
//!
//! A frame and its colour-coded optical flow go through appearance and
//! motion encoders. The two feature maps are fused multiplicatively. An
//! external foreground mask splits the fused map into foreground and
//! background streams, each refined by its own dilated convolution stack,
//! and a dilated decoder turns the pair into a segmentation.
//!
//! Everything runs on the small reverse-mode autograd engine in [`tensor`].

pub mod data;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod net;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// The guide in `book/`, compiled so its code blocks run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub mod tensors {}
    #[doc = include_str!("../../../book/src/gating.md")]
    pub mod gating {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
