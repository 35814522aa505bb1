//! The three training losses and their unified combination.
//!
//! Boundary flow matching anchors the diagonal `u(z,t,t)` to the constant
//! path derivative `a - eps`. Self-consistency regresses the student's
//! interval prediction onto a teacher-bootstrapped endpoint target across a
//! nested sub-interval. Self-guidance re-noises the one-step prediction and
//! regresses it onto a stop-gradient target shifted by the teacher's
//! unconditional-minus-conditional velocity gap, which repels one-step
//! predictions from the unconditional mode.
//!
//! Teacher evaluations never touch the tape: targets enter the graph as
//! constants, so no gradient can reach the teacher by construction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{ot_interpolate, sample_training_times, ScheduleConfig, TimeTriple};
use crate::net::{Condition, IntervalField, IntervalQuery, IntervalVelocityNet, ParamVars};

/// Loss weights, sub-batch fractions, and the condition-dropout rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Self-consistency weight.
    pub lambda_c: f64,
    /// Self-guidance weight.
    pub lambda_g: f64,
    /// Fraction of the batch assigned to the consistency sub-batch.
    pub p_sc: f64,
    /// Fraction of the batch assigned to the guidance sub-batch.
    pub p_sg: f64,
    /// Probability of replacing a condition with the null token.
    pub p_drop: f64,
    /// Optional multiplier on the teacher velocity gap inside the guidance
    /// target (kept at 1 for the plain construction).
    pub ca_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 1.0,
            lambda_g: 0.05,
            p_sc: 0.2,
            p_sg: 0.1,
            p_drop: 0.1,
            ca_scale: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_g", self.lambda_g),
            ("p_sc", self.p_sc),
            ("p_sg", self.p_sg),
            ("p_drop", self.p_drop),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("loss.{name} must be in [0,1], got {v}")));
            }
        }
        if self.p_sc + self.p_sg > 1.0 {
            return Err(Error::InvalidArgument("p_sc + p_sg must be <= 1".into()));
        }
        if self.ca_scale < 0.0 {
            return Err(Error::InvalidArgument("ca_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// One boundary flow-matching item: diagonal query at `t ~ U[0,1]`.
#[derive(Debug, Clone)]
pub struct FlowItem {
    pub cond: Condition,
    pub chunk: Vec<f64>,
    pub noise: Vec<f64>,
    pub t: f64,
}

/// One self-consistency item with its ordered time triple.
#[derive(Debug, Clone)]
pub struct ConsistencyItem {
    pub cond: Condition,
    pub chunk: Vec<f64>,
    pub noise: Vec<f64>,
    pub times: TimeTriple,
}

/// One self-guidance item: independent noises for the path state and for
/// re-noising, independent `t` and `t'` both uniform.
#[derive(Debug, Clone)]
pub struct GuidanceItem {
    pub cond: Condition,
    pub chunk: Vec<f64>,
    pub noise0: Vec<f64>,
    pub noise1: Vec<f64>,
    pub t: f64,
    pub t_prime: f64,
}

/// A partitioned batch: flow, consistency, and guidance sub-batches.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub flow: Vec<FlowItem>,
    pub consistency: Vec<ConsistencyItem>,
    pub guidance: Vec<GuidanceItem>,
}

impl TrainBatch {
    /// Partition `(observation, chunk)` pairs into sub-batches, applying
    /// condition dropout first. `round(p_sc B)` items go to consistency;
    /// from the remainder, up to `round(p_sg B)` real-conditioned items go
    /// to guidance (null items would make the teacher gap degenerate by
    /// construction); the rest is the flow sub-batch.
    pub fn build<R: Rng>(
        rng: &mut R,
        pairs: &[(Vec<f64>, Vec<f64>)],
        weights: &LossWeights,
        schedule: &ScheduleConfig,
        step: usize,
    ) -> TrainBatch {
        let b = pairs.len();
        let d_o = pairs.first().map_or(0, |(o, _)| o.len());
        let dropped: Vec<(Condition, &Vec<f64>)> = pairs
            .iter()
            .map(|(o, a)| {
                let cond = if rng.random::<f64>() < weights.p_drop {
                    Condition::null(d_o)
                } else {
                    Condition::real(o.clone())
                };
                (cond, a)
            })
            .collect();

        let n_sc = ((weights.p_sc * b as f64).round() as usize).min(b);
        let n_sg = (weights.p_sg * b as f64).round() as usize;

        let mut batch = TrainBatch::default();
        for (cond, chunk) in dropped.iter().take(n_sc) {
            let mut times = sample_training_times(rng, schedule, step);
            // A zero-length interval cannot define an average; redraw.
            while times.r - times.t == 0.0 {
                times = sample_training_times(rng, schedule, step);
            }
            batch.consistency.push(ConsistencyItem {
                cond: cond.clone(),
                chunk: (*chunk).clone(),
                noise: draw_noise(rng, chunk.len()),
                times,
            });
        }
        for (cond, chunk) in dropped.iter().skip(n_sc) {
            if !cond.is_null() && batch.guidance.len() < n_sg {
                batch.guidance.push(GuidanceItem {
                    cond: cond.clone(),
                    chunk: (*chunk).clone(),
                    noise0: draw_noise(rng, chunk.len()),
                    noise1: draw_noise(rng, chunk.len()),
                    t: rng.random::<f64>(),
                    t_prime: rng.random::<f64>(),
                });
            } else {
                batch.flow.push(FlowItem {
                    cond: cond.clone(),
                    chunk: (*chunk).clone(),
                    noise: draw_noise(rng, chunk.len()),
                    t: rng.random::<f64>(),
                });
            }
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.flow.len() + self.consistency.len() + self.guidance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (null-conditioned items, total items) for dropout-rate audits.
    pub fn null_counts(&self) -> (usize, usize) {
        let nulls = self.flow.iter().filter(|i| i.cond.is_null()).count()
            + self.consistency.iter().filter(|i| i.cond.is_null()).count()
            + self.guidance.iter().filter(|i| i.cond.is_null()).count();
        (nulls, self.len())
    }
}

fn draw_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

// ── Targets ─────────────────────────────────────────────────────────────

/// Teacher-bootstrapped endpoint target: the teacher jumps `z_m -> z_r`,
/// and the target is the average velocity `(z_r_hat - z_t) / (r - t)`.
/// No gradient flows into the teacher (the result is a plain value).
pub fn consistency_target<F: IntervalField + ?Sized>(
    teacher: &F,
    z_m: &[f64],
    m: f64,
    r: f64,
    z_t: &[f64],
    t: f64,
    cond: &Condition,
) -> Result<Vec<f64>> {
    if r <= t {
        return Err(Error::InvalidTime(format!(
            "consistency target needs r > t, got t={t} r={r}"
        )));
    }
    if !(t <= m && m <= r) {
        return Err(Error::InvalidTime(format!("need t <= m <= r, got t={t} m={m} r={r}")));
    }
    let u_teacher = teacher.interval_velocity(z_m, m, r, cond)?;
    let dt = r - t;
    Ok(z_m
        .iter()
        .zip(u_teacher.iter())
        .zip(z_t.iter())
        .map(|((zm, u), zt)| (zm + (r - m) * u - zt) / dt)
        .collect())
}

/// One-step prediction and its stop-gradient guidance target.
///
/// `f = u(z_t, t, 1 | o)`; the one-step sample `a_hat = z_t + (1-t) f` is
/// re-noised at `t'`, the teacher's unconditional-minus-conditional
/// velocity gap is measured there, and the target is
/// `sg[f - ca_scale * gap]`. Returns `(f, s_target)` as plain values.
pub fn self_guidance_target<S, T>(
    student: &S,
    teacher: &T,
    z_t: &[f64],
    t: f64,
    t_prime: f64,
    eps1: &[f64],
    cond: &Condition,
    ca_scale: f64,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    S: IntervalField + ?Sized,
    T: IntervalField + ?Sized,
{
    if cond.is_null() {
        return Err(Error::InvalidArgument(
            "self-guidance requires a real observation".into(),
        ));
    }
    let f = student.interval_velocity(z_t, t, 1.0, cond)?;
    let gap = guidance_gap(teacher, z_t, t, t_prime, eps1, cond, &f)?;
    let s_target = f.iter().zip(gap.iter()).map(|(fi, g)| fi - ca_scale * g).collect();
    Ok((f, s_target))
}

/// The conditional-vs-unconditional teacher velocity gap at the re-noised
/// one-step prediction.
fn guidance_gap<T: IntervalField + ?Sized>(
    teacher: &T,
    z_t: &[f64],
    t: f64,
    t_prime: f64,
    eps1: &[f64],
    cond: &Condition,
    f: &[f64],
) -> Result<Vec<f64>> {
    let a_hat: Vec<f64> = z_t.iter().zip(f.iter()).map(|(z, fi)| z + (1.0 - t) * fi).collect();
    let z_tilde = ot_interpolate(eps1, &a_hat, t_prime);
    let null = Condition::null(cond.values().len());
    let u_uncond = teacher.interval_velocity(&z_tilde, t_prime, t_prime, &null)?;
    let u_cond = teacher.interval_velocity(&z_tilde, t_prime, t_prime, cond)?;
    Ok(u_uncond.iter().zip(u_cond.iter()).map(|(u, c)| u - c).collect())
}

// ── Value-level losses (tape-free, generic over fields) ─────────────────

/// Mean over items of the squared norm of the diagonal regression residual.
pub fn loss_flow<F: IntervalField + ?Sized>(field: &F, items: &[FlowItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("loss_flow".into()));
    }
    let mut acc = 0.0;
    for item in items {
        let z_t = ot_interpolate(&item.noise, &item.chunk, item.t);
        let u = field.interval_velocity(&z_t, item.t, item.t, &item.cond)?;
        for ((ui, a), e) in u.iter().zip(item.chunk.iter()).zip(item.noise.iter()) {
            let d = ui - (a - e);
            acc += d * d;
        }
    }
    Ok(acc / items.len() as f64)
}

/// Mean over items of the squared student-vs-target interval residual.
pub fn loss_self_consistency<S, T>(student: &S, teacher: &T, items: &[ConsistencyItem]) -> Result<f64>
where
    S: IntervalField + ?Sized,
    T: IntervalField + ?Sized,
{
    if items.is_empty() {
        return Err(Error::EmptyBatch("loss_self_consistency".into()));
    }
    let mut acc = 0.0;
    for item in items {
        let TimeTriple { t, m, r } = item.times;
        let z_t = ot_interpolate(&item.noise, &item.chunk, t);
        let z_m = ot_interpolate(&item.noise, &item.chunk, m);
        let target = consistency_target(teacher, &z_m, m, r, &z_t, t, &item.cond)?;
        let u = student.interval_velocity(&z_t, t, r, &item.cond)?;
        for (ui, ti) in u.iter().zip(target.iter()) {
            let d = ui - ti;
            acc += d * d;
        }
    }
    Ok(acc / items.len() as f64)
}

/// Mean over items of the squared one-step-vs-guided-target residual, which
/// numerically equals the mean squared teacher gap.
pub fn loss_self_guidance<S, T>(
    student: &S,
    teacher: &T,
    items: &[GuidanceItem],
    ca_scale: f64,
) -> Result<f64>
where
    S: IntervalField + ?Sized,
    T: IntervalField + ?Sized,
{
    if items.is_empty() {
        return Err(Error::EmptyBatch("loss_self_guidance".into()));
    }
    let mut acc = 0.0;
    for item in items {
        let z_t = ot_interpolate(&item.noise0, &item.chunk, item.t);
        let (f, s_target) = self_guidance_target(
            student, teacher, &z_t, item.t, item.t_prime, &item.noise1, &item.cond, ca_scale,
        )?;
        for (fi, si) in f.iter().zip(s_target.iter()) {
            let d = fi - si;
            acc += d * d;
        }
    }
    Ok(acc / items.len() as f64)
}

// ── Tape-level loss construction ────────────────────────────────────────

/// Targets precomputed before the tape is built. Consistency targets are
/// teacher-and-data functions, so they are always plain constants. Guidance
/// targets are `None` in normal training (the stop-gradient node tracks the
/// live one-step prediction) and frozen to fixed values for
/// finite-difference checks, which must not see the sg branch move.
#[derive(Debug, Clone, Default)]
pub struct PreparedTargets {
    pub consistency: Vec<Vec<f64>>,
    pub frozen_guidance: Option<Vec<Vec<f64>>>,
}

/// Compute consistency targets; leave guidance targets live.
pub fn prepare_targets<T: IntervalField + ?Sized>(
    teacher: &T,
    batch: &TrainBatch,
) -> Result<PreparedTargets> {
    let mut consistency = Vec::with_capacity(batch.consistency.len());
    for item in &batch.consistency {
        let TimeTriple { t, m, r } = item.times;
        let z_t = ot_interpolate(&item.noise, &item.chunk, t);
        let z_m = ot_interpolate(&item.noise, &item.chunk, m);
        consistency.push(consistency_target(teacher, &z_m, m, r, &z_t, t, &item.cond)?);
    }
    Ok(PreparedTargets { consistency, frozen_guidance: None })
}

/// Compute consistency targets and freeze guidance targets at the current
/// student parameters (for gradient checking).
pub fn prepare_targets_frozen<S, T>(
    student: &S,
    teacher: &T,
    batch: &TrainBatch,
    ca_scale: f64,
) -> Result<PreparedTargets>
where
    S: IntervalField + ?Sized,
    T: IntervalField + ?Sized,
{
    let mut prepared = prepare_targets(teacher, batch)?;
    let mut frozen = Vec::with_capacity(batch.guidance.len());
    for item in &batch.guidance {
        let z_t = ot_interpolate(&item.noise0, &item.chunk, item.t);
        let (_, s_target) = self_guidance_target(
            student, teacher, &z_t, item.t, item.t_prime, &item.noise1, &item.cond, ca_scale,
        )?;
        frozen.push(s_target);
    }
    prepared.frozen_guidance = Some(frozen);
    Ok(prepared)
}

/// Per-term loss nodes; terms over empty sub-batches are constant zeros.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub flow: Var,
    pub consistency: Var,
    pub guidance: Var,
}

/// Per-term loss values read back from a tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossValues {
    pub total: f64,
    pub flow: f64,
    pub consistency: f64,
    pub guidance: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            total: tape.value(self.total).data[0],
            flow: tape.value(self.flow).data[0],
            consistency: tape.value(self.consistency).data[0],
            guidance: tape.value(self.guidance).data[0],
        }
    }
}

fn batched_norm_loss(
    tape: &mut Tape,
    predictions: Var,
    targets: Vec<f64>,
    rows: usize,
    width: usize,
) -> Result<Var> {
    let t = tape.constant(Tensor::new(vec![rows, width], targets));
    let mse = tape.mse(predictions, t)?;
    // mse averages over rows*width entries; rescale to a mean of squared
    // norms over rows.
    Ok(tape.scale(mse, width as f64))
}

/// Boundary flow-matching loss on a tape.
pub fn build_flow_loss(
    net: &IntervalVelocityNet,
    tape: &mut Tape,
    pv: &ParamVars,
    items: &[FlowItem],
) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("build_flow_loss".into()));
    }
    let width = net.config().action_len();
    let mut queries = Vec::with_capacity(items.len());
    let mut targets = Vec::with_capacity(items.len() * width);
    for item in items {
        let z_t = ot_interpolate(&item.noise, &item.chunk, item.t);
        queries.push(IntervalQuery { z: z_t, t: item.t, r: item.t, cond: item.cond.clone() });
        targets.extend(item.chunk.iter().zip(item.noise.iter()).map(|(a, e)| a - e));
    }
    let u = net.forward_batch_on_tape(tape, pv, &queries)?;
    batched_norm_loss(tape, u, targets, items.len(), width)
}

/// Self-consistency loss on a tape, with precomputed teacher targets.
pub fn build_consistency_loss(
    net: &IntervalVelocityNet,
    tape: &mut Tape,
    pv: &ParamVars,
    items: &[ConsistencyItem],
    targets: &[Vec<f64>],
) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("build_consistency_loss".into()));
    }
    assert_eq!(items.len(), targets.len(), "one target per consistency item");
    let width = net.config().action_len();
    let mut queries = Vec::with_capacity(items.len());
    let mut flat = Vec::with_capacity(items.len() * width);
    for (item, target) in items.iter().zip(targets.iter()) {
        let z_t = ot_interpolate(&item.noise, &item.chunk, item.times.t);
        queries.push(IntervalQuery {
            z: z_t,
            t: item.times.t,
            r: item.times.r,
            cond: item.cond.clone(),
        });
        flat.extend_from_slice(target);
    }
    let u = net.forward_batch_on_tape(tape, pv, &queries)?;
    batched_norm_loss(tape, u, flat, items.len(), width)
}

/// Self-guidance loss on a tape. With `frozen` targets the residual is
/// against fixed constants; otherwise the stop-gradient target is built
/// from the live one-step prediction and the teacher gap at its re-noising.
pub fn build_guidance_loss<T: IntervalField + ?Sized>(
    net: &IntervalVelocityNet,
    teacher: &T,
    tape: &mut Tape,
    pv: &ParamVars,
    items: &[GuidanceItem],
    ca_scale: f64,
    frozen: Option<&[Vec<f64>]>,
) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("build_guidance_loss".into()));
    }
    let width = net.config().action_len();
    let mut queries = Vec::with_capacity(items.len());
    for item in items {
        if item.cond.is_null() {
            return Err(Error::InvalidArgument(
                "guidance sub-batch must be real-conditioned".into(),
            ));
        }
        let z_t = ot_interpolate(&item.noise0, &item.chunk, item.t);
        queries.push(IntervalQuery { z: z_t, t: item.t, r: 1.0, cond: item.cond.clone() });
    }
    let f = net.forward_batch_on_tape(tape, pv, &queries)?;

    match frozen {
        Some(targets) => {
            assert_eq!(targets.len(), items.len(), "one frozen target per item");
            let flat: Vec<f64> = targets.iter().flatten().copied().collect();
            batched_norm_loss(tape, f, flat, items.len(), width)
        }
        None => {
            // Teacher gap at the re-noised one-step prediction, evaluated on
            // the live forward values; enters the graph as a constant shift
            // under the stop-gradient.
            let f_values = tape.value(f).data.clone();
            let mut gaps = Vec::with_capacity(items.len() * width);
            for (i, (item, q)) in items.iter().zip(queries.iter()).enumerate() {
                let f_row = &f_values[i * width..(i + 1) * width];
                let gap = guidance_gap(
                    teacher, &q.z, item.t, item.t_prime, &item.noise1, &item.cond, f_row,
                )?;
                gaps.extend(gap.into_iter().map(|g| ca_scale * g));
            }
            let gap_const = tape.constant(Tensor::new(vec![items.len(), width], gaps));
            let shifted = tape.sub(f, gap_const)?;
            let s_target = tape.stop_gradient(shifted);
            let mse = tape.mse(f, s_target)?;
            Ok(tape.scale(mse, width as f64))
        }
    }
}

/// The unified objective `L_flow + lambda_c L_sc + lambda_g L_sg`, each
/// term over its own sub-batch. Empty sub-batches contribute zero.
pub fn build_unified_loss<T: IntervalField + ?Sized>(
    net: &IntervalVelocityNet,
    teacher: &T,
    tape: &mut Tape,
    pv: &ParamVars,
    batch: &TrainBatch,
    weights: &LossWeights,
    prepared: &PreparedTargets,
) -> Result<LossTerms> {
    let flow = if batch.flow.is_empty() {
        tape.scalar(0.0)
    } else {
        build_flow_loss(net, tape, pv, &batch.flow)?
    };
    let consistency = if batch.consistency.is_empty() {
        tape.scalar(0.0)
    } else {
        build_consistency_loss(net, tape, pv, &batch.consistency, &prepared.consistency)?
    };
    let guidance = if batch.guidance.is_empty() {
        tape.scalar(0.0)
    } else {
        build_guidance_loss(
            net,
            teacher,
            tape,
            pv,
            &batch.guidance,
            weights.ca_scale,
            prepared.frozen_guidance.as_deref(),
        )?
    };
    let sc_term = tape.scale(consistency, weights.lambda_c);
    let sg_term = tape.scale(guidance, weights.lambda_g);
    let partial = tape.add(flow, sc_term)?;
    let total = tape.add(partial, sg_term)?;
    Ok(LossTerms { total, flow, consistency, guidance })
}

/// Convenience wrapper: evaluate the unified loss and its gradient at the
/// student parameters.
pub fn unified_loss_and_grads<T: IntervalField + ?Sized>(
    net: &IntervalVelocityNet,
    teacher: &T,
    batch: &TrainBatch,
    weights: &LossWeights,
) -> Result<(LossValues, Vec<Vec<f64>>)> {
    let prepared = prepare_targets(teacher, batch)?;
    let mut tape = Tape::new();
    let pv = net.register_params(&mut tape, net.params(), true);
    let terms = build_unified_loss(net, teacher, &mut tape, &pv, batch, weights, &prepared)?;
    let grads = tape.backward(terms.total)?;
    Ok((terms.values(&tape), net.gradients_from(&grads, &pv)))
}
