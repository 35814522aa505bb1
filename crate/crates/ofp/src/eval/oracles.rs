//! Analytic and numeric oracle fields, independent of the network and the
//! tape. These provide the second route for every identity check: closed
//! forms where they exist, fixed-step RK4 integration where they do not.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::Result;
use crate::net::{Condition, IntervalField};

/// A field defined by a closure, with an instrumented forward counter.
pub struct FnField {
    dim: usize,
    f: Box<dyn Fn(&[f64], f64, f64, &Condition) -> Vec<f64> + Send + Sync>,
    counter: AtomicU64,
}

impl FnField {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], f64, f64, &Condition) -> Vec<f64> + Send + Sync + 'static,
    {
        FnField { dim, f: Box::new(f), counter: AtomicU64::new(0) }
    }
}

impl IntervalField for FnField {
    fn action_len(&self) -> usize {
        self.dim
    }

    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<Vec<f64>> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok((self.f)(z, t, r, cond))
    }

    fn forward_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Exact interval field of the single-datum dataset `{a}`:
/// `u(z, t, r) = (a - z) / (1 - t)`, independent of `r`. On the straight
/// path it equals `a - eps`, and any solver grid transports noise to `a`
/// exactly.
pub fn single_datum_field(a: Vec<f64>) -> FnField {
    FnField::new(a.len(), move |z, t, _r, _c| {
        z.iter().zip(a.iter()).map(|(zi, ai)| (ai - zi) / (1.0 - t)).collect()
    })
}

/// Mixture of point atoms with the closed-form marginal of the straight
/// path: at time `t` the marginal is `sum_k w_k N(t a_k, (1-t)^2 I)`.
#[derive(Debug, Clone)]
pub struct AtomMixture {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AtomMixture {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        assert_eq!(atoms.len(), weights.len());
        assert!(!atoms.is_empty());
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "weights must sum to 1");
        AtomMixture { atoms, weights }
    }

    pub fn two_atoms_1d() -> Self {
        AtomMixture::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5])
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    /// Posterior atom responsibilities at `(z, t)`, via log-sum-exp.
    fn responsibilities(&self, z: &[f64], t: f64) -> Vec<f64> {
        let var = (1.0 - t) * (1.0 - t);
        let logs: Vec<f64> = self
            .atoms
            .iter()
            .zip(self.weights.iter())
            .map(|(a, w)| {
                let d2: f64 = z.iter().zip(a.iter()).map(|(zi, ai)| (zi - t * ai).powi(2)).sum();
                w.ln() - d2 / (2.0 * var)
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Instantaneous marginal velocity
    /// `v(z,t) = sum_k resp_k (a_k - eps_k(z,t))` with
    /// `eps_k = (z - t a_k) / (1 - t)`.
    pub fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        assert!(t < 1.0, "marginal velocity undefined at t=1");
        let resp = self.responsibilities(z, t);
        let mut v = vec![0.0; self.dim()];
        for (k, a) in self.atoms.iter().enumerate() {
            for i in 0..v.len() {
                let eps = (z[i] - t * a[i]) / (1.0 - t);
                v[i] += resp[k] * (a[i] - eps);
            }
        }
        v
    }

    /// Closed-form marginal score at `(z, t)`.
    pub fn score(&self, z: &[f64], t: f64) -> Vec<f64> {
        assert!(t < 1.0);
        let resp = self.responsibilities(z, t);
        let var = (1.0 - t) * (1.0 - t);
        let mut mean = vec![0.0; self.dim()];
        for (k, a) in self.atoms.iter().enumerate() {
            for i in 0..mean.len() {
                mean[i] += resp[k] * t * a[i];
            }
        }
        z.iter().zip(mean.iter()).map(|(zi, mi)| -(zi - mi) / var).collect()
    }
}

/// Interval field obtained by integrating an instantaneous field with
/// fixed-step classical RK4. The diagonal returns the instantaneous value.
pub struct Rk4IntervalField<V> {
    dim: usize,
    velocity: V,
    step: f64,
    counter: AtomicU64,
}

impl<V: Fn(&[f64], f64) -> Vec<f64>> Rk4IntervalField<V> {
    pub fn new(dim: usize, velocity: V, step: f64) -> Self {
        assert!(step > 0.0);
        Rk4IntervalField { dim, velocity, step, counter: AtomicU64::new(0) }
    }

    /// Integrate the trajectory from `(z, from)` to time `to`.
    pub fn flow(&self, z: &[f64], from: f64, to: f64) -> Vec<f64> {
        let span = to - from;
        if span == 0.0 {
            return z.to_vec();
        }
        let n = (span.abs() / self.step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let mut state = z.to_vec();
        let mut tau = from;
        for _ in 0..n {
            let k1 = (self.velocity)(&state, tau);
            let s2: Vec<f64> =
                state.iter().zip(k1.iter()).map(|(s, k)| s + 0.5 * h * k).collect();
            let k2 = (self.velocity)(&s2, tau + 0.5 * h);
            let s3: Vec<f64> =
                state.iter().zip(k2.iter()).map(|(s, k)| s + 0.5 * h * k).collect();
            let k3 = (self.velocity)(&s3, tau + 0.5 * h);
            let s4: Vec<f64> = state.iter().zip(k3.iter()).map(|(s, k)| s + h * k).collect();
            let k4 = (self.velocity)(&s4, tau + h);
            for i in 0..state.len() {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            tau += h;
        }
        state
    }
}

impl<V: Fn(&[f64], f64) -> Vec<f64> + Send + Sync> IntervalField for Rk4IntervalField<V> {
    fn action_len(&self) -> usize {
        self.dim
    }

    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, _cond: &Condition) -> Result<Vec<f64>> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        if r == t {
            return Ok((self.velocity)(z, t));
        }
        let z_r = self.flow(z, t, r);
        let dt = r - t;
        Ok(z_r.iter().zip(z.iter()).map(|(zr, zi)| (zr - zi) / dt).collect())
    }

    fn forward_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_datum_field_transports_exactly() {
        let a = vec![0.8, -0.3];
        let field = single_datum_field(a.clone());
        let eps = vec![0.1, 0.9];
        let cond = Condition::null(1);
        let u = field.interval_velocity(&eps, 0.0, 1.0, &cond).unwrap();
        let out: Vec<f64> = eps.iter().zip(u.iter()).map(|(e, ui)| e + ui).collect();
        for i in 0..2 {
            assert!((out[i] - a[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_velocity_reduces_to_single_atom_form() {
        let single = AtomMixture::new(vec![vec![0.7]], vec![1.0]);
        for &(z, t) in &[(0.0, 0.2), (0.5, 0.5), (-1.0, 0.8)] {
            let v = single.velocity(&[z], t)[0];
            let analytic = (0.7 - z) / (1.0 - t);
            assert!((v - analytic).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_score_matches_velocity_conversion() {
        // Dual route: the closed-form Gaussian-mixture score must agree with
        // (t v - z)/(1 - t) applied to the closed-form velocity.
        let m = AtomMixture::two_atoms_1d();
        for &(z, t) in &[(0.3, 0.2), (-0.7, 0.5), (0.05, 0.7)] {
            let v = m.velocity(&[z], t);
            let s1 = m.score(&[z], t)[0];
            let s2 = crate::flow::score_from_velocity(&[z], t, &v).unwrap()[0];
            assert!((s1 - s2).abs() < 1e-10, "z={z} t={t}: {s1} vs {s2}");
        }
    }

    #[test]
    fn rk4_matches_closed_form_single_atom_flow() {
        // Single-atom trajectories are z(tau) = a + (1-tau) C.
        let a = 0.4;
        let mix = AtomMixture::new(vec![vec![a]], vec![1.0]);
        let field = Rk4IntervalField::new(1, move |z, t| mix.velocity(z, t), 1e-4);
        let (z0, from, to) = (-0.9, 0.1, 0.85);
        let c = (z0 - a) / (1.0 - from);
        let expected = a + (1.0 - to) * c;
        let got = field.flow(&[z0], from, to)[0];
        assert!((got - expected).abs() < 1e-10, "rk4 {got} vs exact {expected}");
    }

    #[test]
    fn rk4_flow_composes() {
        let mix = AtomMixture::two_atoms_1d();
        let field = Rk4IntervalField::new(1, move |z, t| mix.velocity(z, t), 1e-4);
        let z0 = [0.25];
        let direct = field.flow(&z0, 0.2, 0.8)[0];
        let mid = field.flow(&z0, 0.2, 0.5);
        let chained = field.flow(&mid, 0.5, 0.8)[0];
        assert!((direct - chained).abs() < 1e-9, "flow property violated: {direct} vs {chained}");
    }
}
