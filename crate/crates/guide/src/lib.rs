//! The chapters of `book/` as modules. Building this crate's doc-tests runs
//! every Rust example in the book against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/multi_branch.md")]
pub mod multi_branch {}

#[doc = include_str!("../../../book/src/mixing_weights.md")]
pub mod mixing_weights {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/local_learning.md")]
pub mod local_learning {}

#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}

#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}

#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
