//! Structure-aware block-sparse attention for long source code.
//!
//! The attention score matrix is restricted to b x b blocks selected by
//! four patterns: a sliding window around the diagonal, designated global
//! blocks, the top-k blocks by corpus attention frequency, and the top-k
//! blocks by syntax-tree adjacency. The crate provides the full pipeline:
//!
//! - [`tokenizer`]: span-faithful code tokenization and vocabularies
//! - [`ast`]: tree-sitter parsing, token alignment, structural adjacency
//! - [`frequency`]: corpus attention-frequency counts and per-input lookups
//! - [`mask`]: the four patterns and their union into a [`mask::BlockMask`]
//! - [`attention`]: the block-sparse kernel, a dense masked oracle, exact
//!   backward, and a toy encoder layer
//! - [`bench`]: analytic cost bounds and measured scaling reports
//! - [`harness`]: seeded oracle-equivalence and gradient-check sweeps

pub mod ast;
pub mod attention;
pub mod bench;
pub mod error;
pub mod frequency;
pub mod harness;
pub mod mask;
pub mod numeric;
pub mod tokenizer;

pub use error::{Error, Result};
