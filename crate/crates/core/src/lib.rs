//! Stochastic FitzHugh-Nagumo networks and their kinetic mean-field limit.
//!
//! The crate has two sides that meet in the mean voltage `j`:
//!
//! * [`particle`] integrates the `N`-neuron stochastic system and the
//!   synchronously coupled nonlinear SDE;
//! * [`pde`] integrates the kinetic Fokker-Planck equation for the one-neuron
//!   law, [`stationary`] finds its steady states and [`spectral`] the spectrum
//!   of the linearization around them.
//!
//! [`model`] holds every coefficient and sign convention, [`diagnostics`] the
//! entropy-type functionals, and [`regime`] the classifier for long particle
//! runs.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod particle;
pub mod regime;
pub mod pde;
pub mod spectral;
pub mod stationary;

pub use error::{Error, Result};

/// The guide in `book/`, compiled so its snippets stay in sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/particles.md")]
    mod particles {}
    #[doc = include_str!("../../../book/src/kinetic.md")]
    mod kinetic {}
    #[doc = include_str!("../../../book/src/stationary.md")]
    mod stationary {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/chaos-regimes.md")]
    mod chaos_regimes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
}
