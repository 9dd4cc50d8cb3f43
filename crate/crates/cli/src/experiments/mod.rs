//! One module per command.

pub mod calculus;
pub mod common;
pub mod degenerate;
pub mod elastic;
pub mod minibatch;
pub mod saa;
pub mod union_demo;
