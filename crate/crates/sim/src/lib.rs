//! Scene files, experiment drivers and output formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod mapfile;
pub mod output;
pub mod scene;
pub mod validate;
