//! Numerical laboratory for the quasi-periodically forced superlinear
//! oscillator
//!
//! ```text
//! x'' + |x|^(alpha-1) x = p(t),      alpha >= 3,
//! p(t) = P(Theta + t omega),         P in C^4(T^N),
//! ```
//!
//! with no arithmetic condition on the frequencies. The crate builds the
//! full chain of coordinate changes under which the dynamics acquires an
//! adiabatic invariant (action-angle, time-energy with an implicit
//! Hamiltonian, and a generating-function transformation) together with
//! the successor maps on the section of descending zeros, and measures
//! every quantitative structure of the construction: symplecticity,
//! remainder decay, the adiabatic gap bound, measure-preservation
//! certificates, and the statistics of orbit ensembles.
//!
//! Entry points:
//!
//! * [`special::derive_params`] / [`special::CsTable`]: the constants and
//!   periodic special functions of the unperturbed problem;
//! * [`forcing::TorusForcing`]: quasi-periodic forcing with exact
//!   derivatives and norm bounds;
//! * [`Lab`]: one `(alpha, forcing)` pair with its thresholds; hosts the
//!   coordinate transformations and both routes to the successor map;
//! * [`verify`]: the property battery behind the `verify` subcommand and
//!   the acceptance suite;
//! * [`cli`]: configuration parsing and the subcommands of the
//!   `littlewood` binary.
//!
//! The narrative guide lives in `book/`; its code blocks compile and run
//! as part of `cargo test`, so the book cannot drift from the library.

pub mod cli;
pub mod direct;
pub mod error;
pub mod fit;
pub mod forcing;
pub mod lab;
pub mod ode;
pub mod quad;
pub mod special;
pub mod successor;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
pub use lab::{Lab, LabConfig};

/// The book's code blocks, compiled and executed by `cargo test --doc`.
/// One module per chapter so a failure names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/unperturbed.md")]
    mod unperturbed {}
    #[doc = include_str!("../../../book/src/forcing.md")]
    mod forcing {}
    #[doc = include_str!("../../../book/src/coordinate-chain.md")]
    mod coordinate_chain {}
    #[doc = include_str!("../../../book/src/successor-maps.md")]
    mod successor_maps {}
    #[doc = include_str!("../../../book/src/thresholds.md")]
    mod thresholds {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
}
