//! Inference: one-step jump, K-step interval solver, an instantaneous
//! Euler solver for plain flow-matching baselines, and warm-started
//! generation from the unexecuted suffix of the previous chunk.
//!
//! Noise is always an explicit argument and every sample reports its NFE,
//! so runs are reproducible and the function-evaluation accounting can be
//! audited against the field's instrumented counter.

use crate::error::{Error, Result};
use crate::flow::{interval_step, ot_interpolate};
use crate::net::{Condition, IntervalField};

/// Strictly increasing time discretization with exact endpoints 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    taus: Vec<f64>,
}

impl TimeGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.len() < 2 {
            return Err(Error::InvalidGrid("need at least two knots".into()));
        }
        if taus[0] != 0.0 || *taus.last().unwrap() != 1.0 {
            return Err(Error::InvalidGrid(format!(
                "endpoints must be exactly 0 and 1, got {} and {}",
                taus[0],
                taus.last().unwrap()
            )));
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("knots must be strictly increasing".into()));
        }
        Ok(TimeGrid { taus })
    }

    /// `tau_k = k / steps`, with exact endpoints.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        let mut taus: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
        taus[0] = 0.0;
        *taus.last_mut().unwrap() = 1.0;
        TimeGrid::new(taus)
    }

    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

/// A generated chunk with its function-evaluation count.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub chunk: Vec<f64>,
    pub nfe: u64,
}

/// Single global jump from noise: `a_hat = eps + u(eps, 0, 1 | o)`.
/// Exactly one field evaluation.
pub fn one_step_sample<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
) -> Result<Sample> {
    let u = field.interval_velocity(eps, 0.0, 1.0, cond)?;
    Ok(Sample { chunk: interval_step(eps, 0.0, 1.0, &u), nfe: 1 })
}

/// Chained interval predictions over a time grid:
/// `z_{k+1} = z_k + (tau_{k+1} - tau_k) u(z_k, tau_k, tau_{k+1} | o)`.
/// NFE equals the number of grid steps.
pub fn multi_step_sample<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
    grid: &TimeGrid,
) -> Result<Sample> {
    let mut z = eps.to_vec();
    let mut nfe = 0;
    for w in grid.taus().windows(2) {
        let (t, r) = (w[0], w[1]);
        let u = field.interval_velocity(&z, t, r, cond)?;
        nfe += 1;
        z = interval_step(&z, t, r, &u);
    }
    Ok(Sample { chunk: z, nfe })
}

/// Euler integration of the instantaneous (diagonal) field, for plain
/// flow-matching baselines that never learned off-diagonal intervals:
/// `z_{k+1} = z_k + (tau_{k+1} - tau_k) u(z_k, tau_k, tau_k | o)`.
pub fn euler_sample<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
    grid: &TimeGrid,
) -> Result<Sample> {
    let mut z = eps.to_vec();
    let mut nfe = 0;
    for w in grid.taus().windows(2) {
        let (t, r) = (w[0], w[1]);
        let u = field.interval_velocity(&z, t, t, cond)?;
        nfe += 1;
        z = interval_step(&z, t, r, &u);
    }
    Ok(Sample { chunk: z, nfe })
}

/// Warm-start state for receding-horizon generation.
#[derive(Debug, Clone)]
pub struct WarmState {
    /// The previously generated full chunk, if any (absent on the first
    /// control step).
    pub prev_chunk: Option<Vec<f64>>,
    /// Executed actions per control step, `1 <= h < H`.
    pub exec_horizon: usize,
    /// Noise level of the warm initialization.
    pub t_w: f64,
    /// Per-step action width, needed to shift whole actions.
    pub d_a: usize,
}

impl WarmState {
    pub fn new(exec_horizon: usize, t_w: f64, d_a: usize) -> Self {
        assert!((0.0..=1.0).contains(&t_w), "t_w must be in [0,1]");
        WarmState { prev_chunk: None, exec_horizon, t_w, d_a }
    }

    pub fn observe_chunk(&mut self, chunk: Vec<f64>) {
        self.prev_chunk = Some(chunk);
    }

    pub fn reset(&mut self) {
        self.prev_chunk = None;
    }
}

/// Shift out the executed prefix and pad with the terminal action:
/// `[a_{h+1}, ..., a_H, a_H, ..., a_H]` (h copies of `a_H`).
pub fn build_warm_prior(prev_chunk: &[f64], d_a: usize, h: usize) -> Result<Vec<f64>> {
    if d_a == 0 || prev_chunk.len() % d_a != 0 {
        return Err(Error::InvalidArgument(format!(
            "chunk length {} is not a multiple of d_a {d_a}",
            prev_chunk.len()
        )));
    }
    let horizon = prev_chunk.len() / d_a;
    if h == 0 || h >= horizon {
        return Err(Error::InvalidArgument(format!(
            "exec horizon must satisfy 1 <= h < H, got h={h} H={horizon}"
        )));
    }
    let mut warm = Vec::with_capacity(prev_chunk.len());
    warm.extend_from_slice(&prev_chunk[h * d_a..]);
    let last = &prev_chunk[(horizon - 1) * d_a..];
    for _ in 0..h {
        warm.extend_from_slice(last);
    }
    Ok(warm)
}

/// One-step generation from a noised projection of the warm-start prior:
/// `z = (1 - t_w) eps + t_w a_warm`, then `a_hat = z + (1 - t_w) u(z, t_w, 1)`.
/// Falls back to a plain one-step sample when no previous chunk exists.
/// Always exactly one field evaluation.
pub fn warm_start_sample<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
    warm: &WarmState,
) -> Result<Sample> {
    let prev = match &warm.prev_chunk {
        Some(p) => p,
        None => return one_step_sample(field, cond, eps),
    };
    let a_warm = build_warm_prior(prev, warm.d_a, warm.exec_horizon)?;
    warm_start_sample_from_prior(field, cond, eps, &a_warm, warm.t_w)
}

/// Warm one-step generation from an already-built full-length prior.
pub fn warm_start_sample_from_prior<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
    a_warm: &[f64],
    t_w: f64,
) -> Result<Sample> {
    let z = ot_interpolate(eps, a_warm, t_w);
    let u = field.interval_velocity(&z, t_w, 1.0, cond)?;
    Ok(Sample { chunk: interval_step(&z, t_w, 1.0, &u), nfe: 1 })
}

/// Warm multi-step generation: start from the noised prior at `t_w` and
/// chain interval predictions over a uniform grid of the remaining span
/// `[t_w, 1]`. NFE equals `steps`.
pub fn warm_multi_step_from_prior<F: IntervalField + ?Sized>(
    field: &F,
    cond: &Condition,
    eps: &[f64],
    a_warm: &[f64],
    t_w: f64,
    steps: usize,
) -> Result<Sample> {
    if steps < 1 {
        return Err(Error::InvalidGrid("need at least one step".into()));
    }
    let mut z = ot_interpolate(eps, a_warm, t_w);
    let mut nfe = 0;
    for k in 0..steps {
        let t = t_w + (1.0 - t_w) * k as f64 / steps as f64;
        let r = if k + 1 == steps { 1.0 } else { t_w + (1.0 - t_w) * (k + 1) as f64 / steps as f64 };
        let u = field.interval_velocity(&z, t, r, cond)?;
        nfe += 1;
        z = interval_step(&z, t, r, &u);
    }
    Ok(Sample { chunk: z, nfe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::oracles::single_datum_field;

    fn cond() -> Condition {
        Condition::null(1)
    }

    #[test]
    fn one_step_recovers_single_datum_exactly() {
        let a = vec![0.6, -1.4, 0.0];
        let field = single_datum_field(a.clone());
        let eps = vec![0.9, 0.1, -0.7];
        let s = one_step_sample(&field, &cond(), &eps).unwrap();
        assert_eq!(s.chunk, a);
        assert_eq!(s.nfe, 1);
    }

    #[test]
    fn nfe_report_matches_instrumented_counter() {
        let a = vec![0.5];
        let field = single_datum_field(a);
        let before = field.forward_count();
        let s = one_step_sample(&field, &cond(), &[0.2]).unwrap();
        assert_eq!(field.forward_count() - before, s.nfe);

        let grid = TimeGrid::uniform(7).unwrap();
        let before = field.forward_count();
        let s = multi_step_sample(&field, &cond(), &[0.2], &grid).unwrap();
        assert_eq!(s.nfe, 7);
        assert_eq!(field.forward_count() - before, 7);
    }

    #[test]
    fn single_step_grid_reduces_to_one_step() {
        let a = vec![1.1, 0.3];
        let field = single_datum_field(a);
        let eps = vec![-0.4, 0.8];
        let grid = TimeGrid::uniform(1).unwrap();
        let multi = multi_step_sample(&field, &cond(), &eps, &grid).unwrap();
        let one = one_step_sample(&field, &cond(), &eps).unwrap();
        assert_eq!(multi.chunk, one.chunk);
        assert_eq!(multi.nfe, 1);
    }

    #[test]
    fn exact_interval_field_makes_every_grid_agree() {
        let a = vec![0.25, -0.75];
        let field = single_datum_field(a.clone());
        let eps = vec![1.0, -1.0];
        for grid in [
            TimeGrid::uniform(2).unwrap(),
            TimeGrid::uniform(5).unwrap(),
            TimeGrid::uniform(100).unwrap(),
            TimeGrid::new(vec![0.0, 0.03, 0.5, 0.97, 1.0]).unwrap(),
        ] {
            let s = multi_step_sample(&field, &cond(), &eps, &grid).unwrap();
            for i in 0..2 {
                assert!(
                    (s.chunk[i] - a[i]).abs() < 1e-12,
                    "grid with {} steps missed the datum: {} vs {}",
                    grid.steps(),
                    s.chunk[i],
                    a[i]
                );
            }
        }
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.99]).is_err());
        assert!(TimeGrid::uniform(0).is_err());
    }

    #[test]
    fn warm_prior_shifts_and_pads() {
        // H=4, h=2, scalar actions: [a1,a2,a3,a4] -> [a3,a4,a4,a4].
        let prev = vec![1.0, 2.0, 3.0, 4.0];
        let warm = build_warm_prior(&prev, 1, 2).unwrap();
        assert_eq!(warm, vec![3.0, 4.0, 4.0, 4.0]);

        // Vector actions shift whole steps.
        let prev2 = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let warm2 = build_warm_prior(&prev2, 2, 1).unwrap();
        assert_eq!(warm2, vec![2.0, 20.0, 3.0, 30.0, 3.0, 30.0]);
    }

    #[test]
    fn maximal_shift_repeats_terminal_action() {
        let prev = vec![1.0, 2.0, 3.0, 4.0];
        let warm = build_warm_prior(&prev, 1, 3).unwrap();
        assert_eq!(warm, vec![4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn constant_chunks_are_warm_invariants() {
        let prev = vec![0.7; 8];
        let warm = build_warm_prior(&prev, 2, 2).unwrap();
        assert_eq!(warm, prev);
    }

    #[test]
    fn oversized_exec_horizon_is_rejected() {
        let prev = vec![1.0, 2.0, 3.0, 4.0];
        assert!(build_warm_prior(&prev, 1, 4).is_err());
        assert!(build_warm_prior(&prev, 1, 0).is_err());
    }

    #[test]
    fn warm_at_zero_noise_level_equals_one_step() {
        let a = vec![0.5, 0.5];
        let field = single_datum_field(a);
        let eps = vec![0.3, -0.3];
        let mut warm = WarmState::new(1, 0.0, 1);
        warm.observe_chunk(vec![9.0, 9.0]);
        let w = warm_start_sample(&field, &cond(), &eps, &warm).unwrap();
        let o = one_step_sample(&field, &cond(), &eps).unwrap();
        assert_eq!(w.chunk, o.chunk);
    }

    #[test]
    fn warm_at_full_noise_level_returns_the_prior() {
        // t_w = 1: the field output is multiplied by zero, so the sample is
        // the warm prior itself (still one evaluation).
        let field = crate::eval::oracles::FnField::new(2, |_z, _t, _r, _c| vec![123.0, -55.0]);
        let mut warm = WarmState::new(1, 1.0, 1);
        warm.observe_chunk(vec![0.1, 0.9]);
        let s = warm_start_sample(&field, &cond(), &[5.0, 5.0], &warm).unwrap();
        assert_eq!(s.chunk, build_warm_prior(&[0.1, 0.9], 1, 1).unwrap());
        assert_eq!(s.nfe, 1);
        assert_eq!(field.forward_count(), 1);
    }

    #[test]
    fn missing_prior_falls_back_to_one_step() {
        let a = vec![0.2];
        let field = single_datum_field(a.clone());
        let warm = WarmState::new(1, 0.15, 1);
        let s = warm_start_sample(&field, &cond(), &[0.0], &warm).unwrap();
        assert_eq!(s.chunk, a);
        assert_eq!(s.nfe, 1);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = vec![0.31, -0.27];
        let field = single_datum_field(a);
        let eps = vec![0.0, 1.0];
        let grid = TimeGrid::uniform(4).unwrap();
        let s1 = multi_step_sample(&field, &cond(), &eps, &grid).unwrap();
        let s2 = multi_step_sample(&field, &cond(), &eps, &grid).unwrap();
        for (x, y) in s1.chunk.iter().zip(s2.chunk.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
