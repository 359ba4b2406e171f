//! Pullback metrics of neural networks and random walks that trace or cross
//! the input-space equivalence classes they induce.
//!
//! The guide under `book/` walks through the concepts; its Rust snippets run
//! as doctests of this crate.

pub mod error;
pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod metric;
pub mod network;
pub mod oracle;
pub mod walk;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{Matrix, SymmetricEigen, Vector};
pub use network::NetworkSpec;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/pullback.md")]
    mod pullback {}
    #[doc = include_str!("../../../book/src/walks.md")]
    mod walks {}
    #[doc = include_str!("../../../book/src/regions.md")]
    mod regions {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/model-format.md")]
    mod model_format {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
