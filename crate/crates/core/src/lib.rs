pub mod bg;
pub mod clifford;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod mass;
pub mod metric;
pub mod polefit;
pub mod spectral;
pub mod torus;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/clifford.md")]
    mod clifford {}
    #[doc = include_str!("../../../book/src/torus.md")]
    mod torus {}
    #[doc = include_str!("../../../book/src/operator.md")]
    mod operator {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/mass.md")]
    mod mass {}
    #[doc = include_str!("../../../book/src/polefit.md")]
    mod polefit {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
