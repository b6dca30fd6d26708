pub mod breakdown;
pub mod cli_io;
pub mod contamination;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod model;
pub mod spectral;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/existence.md")]
    mod existence {}
    #[doc = include_str!("../../../book/src/contamination.md")]
    mod contamination {}
    #[doc = include_str!("../../../book/src/breakdown.md")]
    mod breakdown {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
