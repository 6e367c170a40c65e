// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod attribution;
pub mod cli;
pub mod comparator;
pub mod data;
pub mod divergence;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lens;
pub mod numerics;
pub mod patching;
pub mod probes;
pub mod report;
pub mod sae;
pub mod svg;

pub use error::{Error, Result};
