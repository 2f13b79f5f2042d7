//! Score-based conformer generation on synthetic chain molecules.
//!
//! The crate trains noise-conditional score networks with denoising score
//! matching, optionally with input perturbation during training, samples
//! conformations by annealed Langevin dynamics, and measures the exposure bias
//! of the learned score field by deterministically reversing noised ground
//! truth. Geometry metrics (Kabsch-aligned RMSD, coverage, matching) and a
//! synthetic chain-molecule data generator make the whole loop self-contained.
//!
//! Everything is `f64`, seeded, and deterministic: identical seeds give
//! bitwise-identical datasets, checkpoints, samples and reports.

// `!(x > 0.0)` guards are deliberate: unlike `x <= 0.0` they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over fixed 3-vector/3x3 math read better than iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod bias;
pub mod cli;
pub mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod sampler;
pub mod schedule;
pub mod seed;
pub mod score;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geom::Conformation;
pub use schedule::NoiseSchedule;
pub use score::{ScoreField, ScoreModel};
