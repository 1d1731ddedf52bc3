#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod codec;
pub mod consistency;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod fft2;
pub mod negation;
pub mod operators;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod vecops;
