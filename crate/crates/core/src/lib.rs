//! Multi-agent path planning with crash faults.

pub mod dcrf;
pub mod disjoint;
pub mod exec;
pub mod gen;
pub mod io;
pub mod model;
pub mod pathfind;
pub mod verify;

pub use model::*;
