//! Pure math of the straight transport path and the training-time samplers.
//!
//! The conditional path between noise and data is the straight line
//! `z_t = (1-t) eps + t a` with constant derivative `a - eps`. An
//! interval-averaged velocity `u` turns any interval into the exact update
//! `z_r = z_t + (r-t) u`; on the diagonal `r = t` it is the instantaneous
//! field, and the marginal score follows from the diagonal value by
//! `s = (t u - z) / (1 - t)`.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered times `0 <= t <= m <= r <= 1` drawn for one consistency item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTriple {
    pub t: f64,
    pub m: f64,
    pub r: f64,
}

impl TimeTriple {
    pub fn new(t: f64, m: f64, r: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&t) && t <= m && m <= r && r <= 1.0,
            "invalid time triple t={t} m={m} r={r}"
        );
        TimeTriple { t, m, r }
    }
}

/// How the raw interval width is drawn before rescaling by `(1 - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtSampler {
    /// `sigmoid(N(mu, sigma))`, always in (0, 1).
    LogitNormal,
    /// `exp(N(mu, sigma))` clamped to (0, 1]. Exposed as a sweep axis.
    LogNormal,
}

/// Time-sampler and contraction-schedule parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Total optimizer steps; the contraction factor reaches zero here.
    pub total_steps: usize,
    /// Polynomial decay power for the contraction factor.
    pub contraction_power: f64,
    /// Beta parameters for the start time `t`.
    pub t_alpha: f64,
    pub t_beta: f64,
    /// Normal parameters behind the interval-width draw.
    pub dt_mu: f64,
    pub dt_sigma: f64,
    pub dt_sampler: DtSampler,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            total_steps: 1,
            contraction_power: 2.0,
            t_alpha: 1.0,
            t_beta: 1.5,
            dt_mu: -0.2,
            dt_sigma: 1.0,
            dt_sampler: DtSampler::LogitNormal,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::InvalidArgument("schedule.total_steps must be >= 1".into()));
        }
        if self.contraction_power <= 0.0 {
            return Err(Error::InvalidArgument("schedule.contraction_power must be > 0".into()));
        }
        if self.dt_sigma <= 0.0 {
            return Err(Error::InvalidArgument("schedule.dt_sigma must be > 0".into()));
        }
        if self.t_alpha <= 0.0 || self.t_beta <= 0.0 {
            return Err(Error::InvalidArgument("schedule beta parameters must be > 0".into()));
        }
        Ok(())
    }

    /// Contraction factor `rho(s) = (1 - s/S)^p`: 1 at step 0, 0 at step S,
    /// non-increasing in between.
    pub fn contraction(&self, step: usize) -> f64 {
        assert!(step <= self.total_steps, "step {step} past total {}", self.total_steps);
        let frac = 1.0 - step as f64 / self.total_steps as f64;
        frac.powf(self.contraction_power)
    }
}

/// Straight-line interpolation `z_t = (1-t) eps + t a`.
pub fn ot_interpolate(eps: &[f64], a: &[f64], t: f64) -> Vec<f64> {
    assert_eq!(eps.len(), a.len(), "ot_interpolate shape mismatch");
    assert!((0.0..=1.0).contains(&t), "interpolation time {t} outside [0,1]");
    eps.iter().zip(a.iter()).map(|(&e, &ai)| (1.0 - t) * e + t * ai).collect()
}

/// Interval update `z_r = z + (r-t) u`.
pub fn interval_step(z: &[f64], t: f64, r: f64, u: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), u.len(), "interval_step shape mismatch");
    assert!(t <= r, "interval_step requires t <= r, got t={t} r={r}");
    let dt = r - t;
    z.iter().zip(u.iter()).map(|(&zi, &ui)| zi + dt * ui).collect()
}

/// Marginal score from the diagonal (instantaneous) velocity:
/// `s = (t u - z) / (1 - t)`. Rejected near `t = 1` where the division
/// blows up; self-guidance itself never divides, so this guard only
/// affects diagnostics.
pub fn score_from_velocity(z: &[f64], t: f64, u_diag: &[f64]) -> Result<Vec<f64>> {
    if t >= 1.0 - 1e-6 {
        return Err(Error::InvalidTime(format!(
            "score conversion undefined this close to t=1 (t={t})"
        )));
    }
    assert_eq!(z.len(), u_diag.len(), "score_from_velocity shape mismatch");
    Ok(z.iter()
        .zip(u_diag.iter())
        .map(|(&zi, &ui)| (t * ui - zi) / (1.0 - t))
        .collect())
}

/// Draw `(t, m, r)` for one consistency item at training step `step`:
/// `t ~ Beta(alpha, beta)`; a raw width in (0,1] rescaled by `(1-t)` gives
/// `r <= 1` without clipping; `m` is uniform on the contracted range
/// `[t, t + (r-t) rho(step)]`.
pub fn sample_training_times<R: Rng>(
    rng: &mut R,
    schedule: &ScheduleConfig,
    step: usize,
) -> TimeTriple {
    let beta = Beta::new(schedule.t_alpha, schedule.t_beta).expect("beta params validated");
    let normal = Normal::new(schedule.dt_mu, schedule.dt_sigma).expect("dt params validated");
    let t: f64 = beta.sample(rng);
    let raw: f64 = normal.sample(rng);
    let dt_raw = match schedule.dt_sampler {
        DtSampler::LogitNormal => sigmoid(raw),
        DtSampler::LogNormal => raw.exp().min(1.0),
    };
    let r = t + dt_raw * (1.0 - t);
    let rho = schedule.contraction(step);
    let m = t + rng.random::<f64>() * (r - t) * rho;
    // Constructive guarantee, re-checked for roundoff.
    TimeTriple::new(t, m.min(r), r)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interpolation_boundaries() {
        let eps = vec![0.5, -1.0];
        let a = vec![2.0, 3.0];
        assert_eq!(ot_interpolate(&eps, &a, 0.0), eps);
        assert_eq!(ot_interpolate(&eps, &a, 1.0), a);
    }

    #[test]
    fn interpolation_midpoint() {
        assert_eq!(ot_interpolate(&[0.0], &[2.0], 0.5), vec![1.0]);
    }

    #[test]
    fn path_derivative_is_constant() {
        // (z_{t+h} - z_t) / h = a - eps exactly for any h, by linearity.
        let eps = vec![0.25, -0.75];
        let a = vec![1.5, 0.5];
        for &(t, h) in &[(0.0, 0.5), (0.1, 0.3), (0.25, 0.25)] {
            let z0 = ot_interpolate(&eps, &a, t);
            let z1 = ot_interpolate(&eps, &a, t + h);
            for i in 0..2 {
                let slope = (z1[i] - z0[i]) / h;
                assert!(
                    (slope - (a[i] - eps[i])).abs() < 1e-12,
                    "slope {slope} vs {}",
                    a[i] - eps[i]
                );
            }
        }
    }

    #[test]
    fn interval_step_zero_length_is_identity() {
        let z = vec![1.0, -2.0];
        assert_eq!(interval_step(&z, 0.3, 0.3, &[5.0, 5.0]), z);
    }

    #[test]
    fn interval_step_transports_noise_to_data() {
        let eps = vec![0.7, -0.2];
        let a = vec![-1.0, 2.0];
        let u: Vec<f64> = a.iter().zip(eps.iter()).map(|(x, e)| x - e).collect();
        let out = interval_step(&eps, 0.0, 1.0, &u);
        assert_eq!(out, a);
    }

    #[test]
    fn interval_step_composes_on_constant_fields() {
        // step(step(z,t,m,u), m,r,u) = step(z,t,r,u) exactly.
        let z = vec![0.1, 0.9, -0.4];
        let u = vec![1.25, -0.5, 3.0];
        let (t, m, r) = (0.125, 0.375, 0.875); // dyadic so the algebra is exact
        let two = interval_step(&interval_step(&z, t, m, &u), m, r, &u);
        let one = interval_step(&z, t, r, &u);
        assert_eq!(two, one);
    }

    #[test]
    fn score_at_time_zero_is_negative_state() {
        let z = vec![0.8, -1.6];
        let s = score_from_velocity(&z, 0.0, &[9.0, 9.0]).unwrap();
        assert_eq!(s, vec![-0.8, 1.6]);
    }

    #[test]
    fn score_midpoint_arithmetic() {
        let s = score_from_velocity(&[1.0], 0.5, &[2.0]).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn score_matches_single_datum_gaussian() {
        // For the dataset {a}, the marginal at time t is N(t a, (1-t)^2 I)
        // and the instantaneous velocity is a - eps(z,t); the conversion
        // must reproduce the analytic Gaussian score.
        let a = 1.3;
        for &t in &[0.1, 0.4, 0.7, 0.95] {
            for &z in &[-0.5, 0.2, 1.1] {
                let eps = (z - t * a) / (1.0 - t);
                let u = a - eps;
                let s = score_from_velocity(&[z], t, &[u]).unwrap()[0];
                let analytic = -(z - t * a) / ((1.0 - t) * (1.0 - t));
                assert!((s - analytic).abs() < 1e-12, "t={t} z={z}: {s} vs {analytic}");
            }
        }
    }

    #[test]
    fn score_rejects_times_near_one() {
        assert!(score_from_velocity(&[0.0], 1.0 - 1e-7, &[0.0]).is_err());
    }

    #[test]
    fn contraction_endpoint_pins_m_to_t() {
        let sched = ScheduleConfig { total_steps: 100, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let tt = sample_training_times(&mut rng, &sched, 100);
            assert_eq!(tt.m, tt.t, "rho(S)=0 must give m=t exactly");
        }
    }

    #[test]
    fn uncontracted_m_is_uniform_on_interval() {
        let sched = ScheduleConfig { total_steps: 100, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let tt = sample_training_times(&mut rng, &sched, 0);
            acc += (tt.m - tt.t) / (tt.r - tt.t);
        }
        let mean = acc / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean relative position {mean}");
    }

    #[test]
    fn all_draws_are_ordered() {
        let sched = ScheduleConfig { total_steps: 1000, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..1_000_000usize {
            let step = i % 1001;
            let tt = sample_training_times(&mut rng, &sched, step);
            assert!(0.0 <= tt.t && tt.t <= tt.m && tt.m <= tt.r && tt.r <= 1.0);
        }
    }

    #[test]
    fn t_marginal_matches_beta_cdf() {
        // Kolmogorov-Smirnov distance between empirical draws of t and the
        // Beta(1, 1.5) CDF, which is 1 - (1-t)^1.5 in closed form.
        let sched = ScheduleConfig { total_steps: 10, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut ts: Vec<f64> = (0..n).map(|_| sample_training_times(&mut rng, &sched, 0).t).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |t: f64| 1.0 - (1.0 - t).powf(1.5);
        let mut ks = 0.0f64;
        for (i, &t) in ts.iter().enumerate() {
            let f = cdf(t);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        assert!(ks < 0.01, "KS distance {ks} >= 0.01");
    }

    #[test]
    fn contraction_is_monotone_with_exact_endpoints() {
        let sched = ScheduleConfig { total_steps: 500, ..Default::default() };
        assert_eq!(sched.contraction(0), 1.0);
        assert_eq!(sched.contraction(500), 0.0);
        let mut prev = f64::INFINITY;
        for s in 0..=500 {
            let rho = sched.contraction(s);
            assert!(rho <= prev, "rho increased at step {s}");
            prev = rho;
        }
    }

    #[test]
    fn lognormal_sweep_axis_stays_valid() {
        let sched = ScheduleConfig {
            total_steps: 10,
            dt_sampler: DtSampler::LogNormal,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let tt = sample_training_times(&mut rng, &sched, 0);
            assert!(tt.r <= 1.0 && tt.t <= tt.m && tt.m <= tt.r);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Affinity in both arguments, checked by superposition.
        #[test]
        fn interpolation_is_affine(t in 0.0f64..=1.0, s1 in -2.0f64..2.0, s2 in -2.0f64..2.0) {
            let e1 = vec![0.3, -1.1];
            let e2 = vec![1.7, 0.4];
            let a1 = vec![-0.6, 0.9];
            let a2 = vec![0.2, 2.0];
            let mix_e: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| s1 * x + s2 * y).collect();
            let mix_a: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| s1 * x + s2 * y).collect();
            let lhs = ot_interpolate(&mix_e, &mix_a, t);
            let z1 = ot_interpolate(&e1, &a1, t);
            let z2 = ot_interpolate(&e2, &a2, t);
            for i in 0..2 {
                let rhs = s1 * z1[i] + s2 * z2[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
