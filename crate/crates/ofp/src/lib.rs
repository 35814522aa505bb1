//! One-step flow policies for action-chunk control.
//!
//! The crate trains an interval-averaged velocity field
//! `u(z, t, r | o)` — the average velocity a state `z` should follow from
//! time `t` to time `r` under observation `o` — by self-distillation: a
//! boundary flow-matching loss anchors the diagonal `r = t` to expert
//! data, a self-consistency loss bootstraps interval predictions from an
//! EMA teacher across nested sub-intervals, and a self-guidance loss
//! sharpens one-step predictions with the teacher's
//! unconditional-vs-conditional velocity gap. The learned field samples in
//! a single jump (`a = eps + u(eps, 0, 1 | o)`), as a K-step interval
//! solver, or warm-started from the unexecuted suffix of the previous
//! action chunk in a receding-horizon loop.
//!
//! # Layout
//!
//! - [`autodiff`] — tape-based reverse-mode differentiation with a
//!   stop-gradient primitive and a finite-difference gradient checker
//! - [`flow`] — straight-path math, score/velocity conversion, time
//!   samplers and the contraction schedule
//! - [`net`] — the interval-velocity MLP, EMA teacher, checkpoints
//! - [`losses`] — the three losses and the unified objective
//! - [`trainer`] — the optimization loop (AdamW, warmup + cosine)
//! - [`sampler`] — one-step / multi-step / warm-started generation
//! - [`tasks`] — synthetic mixture tasks, the point-mass environment,
//!   datasets, receding-horizon rollouts
//! - [`eval`] — energy distance, the verification oracle suite, policy
//!   evaluation and reports
//! - [`config`] / [`cli`] — JSON run configuration and the `ofp` binary
//!
//! Start with the runnable examples (`cargo run --release --example
//! train_eight_mode_gmm`) or the `ofp` binary (`cargo run --release --bin
//! ofp -- verify`).

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod losses;
pub mod net;
pub mod sampler;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
