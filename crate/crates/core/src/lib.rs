#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod electra;
pub mod ensemble;
pub mod error;
pub mod glove;
pub mod metrics;
pub mod numerics;
pub mod tokenizer;

pub use error::{Error, Result};
