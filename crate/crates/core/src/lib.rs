//! Fixed-gain distributed consensus observer for tracking a target with
//! chain-of-integrator dynamics from bearing-only measurements.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dkf;
pub mod gain_design;
pub mod graph;
pub mod numerics;
pub mod observer;
pub mod sim;
