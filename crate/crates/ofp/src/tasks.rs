//! Desk-scale tasks: conditional Gaussian-mixture chunk distributions with
//! analytic oracles, and a 2-D point-mass environment with a scripted
//! multimodal expert driven in a receding-horizon loop.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::build_warm_prior;

// ── Conditional Gaussian-mixture tasks ──────────────────────────────────

/// How a mode's mean chunk depends on the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    /// Fixed chunk, independent of the condition.
    Constant(Vec<f64>),
    /// A 2-D point at `angle` on a circle of `radius`, rotated by the
    /// condition angle `o = [cos phi, sin phi]`; the chunk repeats the
    /// rotated point at every step (requires `d_a = 2`).
    RotatedCirclePoint { angle: f64, radius: f64 },
}

/// Mixture over condition-dependent mean chunks; stands in for the expert
/// action distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmTaskSpec {
    pub d_o: usize,
    pub d_a: usize,
    pub horizon: usize,
    /// (mean function, isotropic standard deviation) per mode.
    pub modes: Vec<(MeanFn, f64)>,
    pub mode_weights: Vec<f64>,
}

impl GmmTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() != self.mode_weights.len() {
            return Err(Error::InvalidArgument("modes and weights must pair up".into()));
        }
        let total: f64 = self.mode_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.mode_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidArgument("mode weights must be a distribution".into()));
        }
        if self.modes.iter().any(|(_, s)| *s < 0.0) {
            return Err(Error::InvalidArgument("mode spreads must be >= 0".into()));
        }
        Ok(())
    }

    pub fn chunk_len(&self) -> usize {
        self.d_a * self.horizon
    }

    /// Two point atoms at -1 and +1, scalar actions, trivial condition.
    pub fn two_atom_1d() -> Self {
        GmmTaskSpec {
            d_o: 1,
            d_a: 1,
            horizon: 1,
            modes: vec![
                (MeanFn::Constant(vec![-1.0]), 0.0),
                (MeanFn::Constant(vec![1.0]), 0.0),
            ],
            mode_weights: vec![0.5, 0.5],
        }
    }

    /// Eight modes on the unit circle, rotated by the condition angle.
    pub fn eight_mode_conditional(horizon: usize, spread: f64) -> Self {
        let modes = (0..8)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
                (MeanFn::RotatedCirclePoint { angle, radius: 1.0 }, spread)
            })
            .collect();
        GmmTaskSpec {
            d_o: 2,
            d_a: 2,
            horizon,
            modes,
            mode_weights: vec![0.125; 8],
        }
    }

    /// A condition for this task: trivial zero for condition-free tasks,
    /// a random unit direction for rotated tasks.
    pub fn sample_condition<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let rotated = self
            .modes
            .iter()
            .any(|(m, _)| matches!(m, MeanFn::RotatedCirclePoint { .. }));
        if rotated {
            let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            vec![phi.cos(), phi.sin()]
        } else {
            vec![0.0; self.d_o]
        }
    }

    /// Mean chunk of mode `k` under condition `o`.
    pub fn mode_mean(&self, k: usize, o: &[f64]) -> Vec<f64> {
        match &self.modes[k].0 {
            MeanFn::Constant(chunk) => chunk.clone(),
            MeanFn::RotatedCirclePoint { angle, radius } => {
                let (c, s) = (o[0], o[1]);
                let px = radius * angle.cos();
                let py = radius * angle.sin();
                let x = c * px - s * py;
                let y = s * px + c * py;
                let mut chunk = Vec::with_capacity(self.chunk_len());
                for _ in 0..self.horizon {
                    chunk.push(x);
                    chunk.push(y);
                }
                chunk
            }
        }
    }
}

/// Draw one expert chunk: pick a mode by weight, then a Gaussian around its
/// condition-dependent mean.
pub fn gmm_expert_sample<R: Rng>(spec: &GmmTaskSpec, o: &[f64], rng: &mut R) -> Vec<f64> {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    let mut mode = spec.modes.len() - 1;
    for (k, w) in spec.mode_weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            mode = k;
            break;
        }
    }
    let mean = spec.mode_mean(mode, o);
    let sigma = spec.modes[mode].1;
    mean.into_iter()
        .map(|m| {
            let draw: f64 = StandardNormal.sample(rng);
            m + sigma * draw
        })
        .collect()
}

// ── Point-mass environment ──────────────────────────────────────────────

/// Damped 2-D point mass with two goals; success is reaching either goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassConfig {
    pub dt_sim: f64,
    pub max_steps: usize,
    pub success_radius: f64,
    pub damping: f64,
    pub goals: [[f64; 2]; 2],
    pub arena_half_width: f64,
    /// Proportional and damping gains of the scripted expert.
    pub gain_p: f64,
    pub gain_d: f64,
    /// Chunk horizon H and executed prefix h of the control loop.
    pub horizon: usize,
    pub exec_horizon: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        PointMassConfig {
            dt_sim: 0.1,
            max_steps: 80,
            success_radius: 0.15,
            damping: 0.9,
            goals: [[-0.7, 0.7], [0.7, 0.7]],
            arena_half_width: 1.2,
            gain_p: 4.0,
            gain_d: 2.0,
            horizon: 8,
            exec_horizon: 4,
        }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exec_horizon == 0 || self.exec_horizon >= self.horizon {
            return Err(Error::InvalidArgument("need 1 <= exec_horizon < horizon".into()));
        }
        if self.dt_sim <= 0.0 || self.max_steps == 0 || self.success_radius <= 0.0 {
            return Err(Error::InvalidArgument("invalid point-mass dynamics config".into()));
        }
        Ok(())
    }

    pub fn d_o(&self) -> usize {
        4
    }

    pub fn d_a(&self) -> usize {
        2
    }

    pub fn chunk_len(&self) -> usize {
        self.d_a() * self.horizon
    }

    /// Episode start: bottom band between the goals, at rest.
    pub fn sample_start<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        [rng.random_range(-0.4..0.4), rng.random_range(-0.9..-0.5)]
    }
}

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pub config: PointMassConfig,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub steps: usize,
}

impl PointMassEnv {
    pub fn reset(config: PointMassConfig, start: [f64; 2]) -> Self {
        PointMassEnv { config, position: start, velocity: [0.0, 0.0], steps: 0 }
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    /// Damped integrator: `v <- damping v + a dt; p <- p + v dt`, position
    /// clipped to the arena.
    pub fn step(&mut self, action: [f64; 2]) -> Vec<f64> {
        assert!(action.iter().all(|a| a.is_finite()), "non-finite action");
        let c = &self.config;
        for i in 0..2 {
            self.velocity[i] = self.velocity[i] * c.damping + action[i] * c.dt_sim;
            self.position[i] =
                (self.position[i] + self.velocity[i] * c.dt_sim).clamp(-c.arena_half_width, c.arena_half_width);
        }
        self.steps += 1;
        self.observation()
    }

    pub fn distance_to(&self, goal: [f64; 2]) -> f64 {
        ((self.position[0] - goal[0]).powi(2) + (self.position[1] - goal[1]).powi(2)).sqrt()
    }

    pub fn success(&self) -> bool {
        self.config.goals.iter().any(|g| self.distance_to(*g) <= self.config.success_radius)
    }

    pub fn done(&self) -> bool {
        self.success() || self.steps >= self.config.max_steps
    }
}

/// H proportional-control actions toward `goal`, obtained by simulating the
/// closed loop forward from the given state. Actions are clamped to [-1,1].
pub fn scripted_expert_chunk(env: &PointMassEnv, goal: [f64; 2]) -> Vec<f64> {
    let mut sim = env.clone();
    let c = env.config.clone();
    let mut chunk = Vec::with_capacity(c.chunk_len());
    for _ in 0..c.horizon {
        let ax = (c.gain_p * (goal[0] - sim.position[0]) - c.gain_d * sim.velocity[0]).clamp(-1.0, 1.0);
        let ay = (c.gain_p * (goal[1] - sim.position[1]) - c.gain_d * sim.velocity[1]).clamp(-1.0, 1.0);
        chunk.push(ax);
        chunk.push(ay);
        sim.step([ax, ay]);
    }
    chunk
}

// ── Demonstrations and dataset files ────────────────────────────────────

/// One observation-chunk pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub observation: Vec<f64>,
    pub chunk: Vec<f64>,
}

/// One demonstration: the sequence of pairs collected along an episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Demonstration {
    pub steps: Vec<DemoStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task_id: String,
    pub d_o: usize,
    pub d_a: usize,
    pub horizon: usize,
    pub n_demos: usize,
    pub n_rows: usize,
    pub seed: u64,
    /// Row count per demonstration, for exact reconstruction from the CSV.
    pub demo_lengths: Vec<usize>,
    /// Per-action-coordinate normalization stats (width d_a), shared by all
    /// steps of a chunk so warm-start shifting commutes with normalization.
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub demos: Vec<Demonstration>,
}

impl Dataset {
    pub fn from_demos(
        task_id: &str,
        d_o: usize,
        d_a: usize,
        horizon: usize,
        seed: u64,
        demos: Vec<Demonstration>,
    ) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::EmptyBatch("dataset needs at least one demonstration".into()));
        }
        let mut action_min = vec![f64::INFINITY; d_a];
        let mut action_max = vec![f64::NEG_INFINITY; d_a];
        let mut n_rows = 0;
        for demo in &demos {
            for step in &demo.steps {
                assert_eq!(step.observation.len(), d_o, "observation width mismatch");
                assert_eq!(step.chunk.len(), d_a * horizon, "chunk width mismatch");
                assert!(step.observation.iter().all(|v| v.is_finite()));
                n_rows += 1;
                for (i, v) in step.chunk.iter().enumerate() {
                    let dim = i % d_a;
                    action_min[dim] = action_min[dim].min(*v);
                    action_max[dim] = action_max[dim].max(*v);
                }
            }
        }
        let meta = DatasetMeta {
            task_id: task_id.to_string(),
            d_o,
            d_a,
            horizon,
            n_demos: demos.len(),
            n_rows,
            seed,
            demo_lengths: demos.iter().map(|d| d.steps.len()).collect(),
            action_min,
            action_max,
        };
        Ok(Dataset { meta, demos })
    }

    /// Flattened `(observation, chunk)` training pairs in dataset order.
    pub fn pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.demos
            .iter()
            .flat_map(|d| d.steps.iter().map(|s| (s.observation.clone(), s.chunk.clone())))
            .collect()
    }

    /// Training pairs with chunks mapped to the normalized [-1,1] range.
    pub fn normalized_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let norm = Normalizer::from_meta(&self.meta);
        self.demos
            .iter()
            .flat_map(|d| {
                let norm = &norm;
                d.steps.iter().map(move |s| (s.observation.clone(), norm.to_unit(&s.chunk)))
            })
            .collect()
    }

    /// Write `meta.json` plus `data.csv` with rows `[o..., a...]` in that
    /// documented column order (headers `o0..o{d_o-1}, a0..a{dH-1}`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta_json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join("meta.json"), meta_json)?;
        let mut csv = String::new();
        let header: Vec<String> = (0..self.meta.d_o)
            .map(|i| format!("o{i}"))
            .chain((0..self.meta.d_a * self.meta.horizon).map(|i| format!("a{i}")))
            .collect();
        csv.push_str(&header.join(","));
        csv.push('\n');
        for demo in &self.demos {
            for step in &demo.steps {
                let row: Vec<String> = step
                    .observation
                    .iter()
                    .chain(step.chunk.iter())
                    .map(|v| format!("{v}"))
                    .collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
        }
        std::fs::write(dir.join("data.csv"), csv)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let csv = std::fs::read_to_string(dir.join("data.csv"))?;
        let mut lines = csv.lines();
        let _header = lines.next().ok_or_else(|| {
            Error::InvalidArgument(format!("{}: empty data.csv", dir.display()))
        })?;
        let width = meta.d_o + meta.d_a * meta.horizon;
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("data.csv line {}: {e}", ln + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != width {
                return Err(Error::InvalidArgument(format!(
                    "data.csv line {}: {} columns, expected {width}",
                    ln + 2,
                    values.len()
                )));
            }
            rows.push(values);
        }
        if rows.len() != meta.n_rows || meta.demo_lengths.iter().sum::<usize>() != rows.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: row count {} disagrees with metadata",
                dir.display(),
                rows.len()
            )));
        }
        let mut demos = Vec::with_capacity(meta.n_demos);
        let mut it = rows.into_iter();
        for len in &meta.demo_lengths {
            let mut demo = Demonstration::default();
            for _ in 0..*len {
                let row = it.next().unwrap();
                demo.steps.push(DemoStep {
                    observation: row[..meta.d_o].to_vec(),
                    chunk: row[meta.d_o..].to_vec(),
                });
            }
            demos.push(demo);
        }
        Ok(Dataset { meta, demos })
    }
}

/// Per-action-coordinate min/max mapping to and from [-1, 1]. Degenerate
/// coordinates (min == max) map to 0 and back to the shared value.
#[derive(Debug, Clone)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Normalizer {
    pub fn from_meta(meta: &DatasetMeta) -> Self {
        Normalizer { min: meta.action_min.clone(), max: meta.action_max.clone() }
    }

    pub fn identity(d_a: usize) -> Self {
        Normalizer { min: vec![-1.0; d_a], max: vec![1.0; d_a] }
    }

    pub fn to_unit(&self, chunk: &[f64]) -> Vec<f64> {
        let d = self.min.len();
        chunk
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = (self.min[i % d], self.max[i % d]);
                if hi > lo {
                    2.0 * (v - lo) / (hi - lo) - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn from_unit(&self, chunk: &[f64]) -> Vec<f64> {
        let d = self.min.len();
        chunk
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = (self.min[i % d], self.max[i % d]);
                if hi > lo {
                    lo + (v + 1.0) * (hi - lo) / 2.0
                } else {
                    lo
                }
            })
            .collect()
    }
}

/// Deterministic GMM dataset: `n` single-pair demonstrations.
pub fn make_gmm_dataset(spec: &GmmTaskSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyBatch("need n >= 1 demonstrations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demos = (0..n)
        .map(|_| {
            let o = spec.sample_condition(&mut rng);
            let chunk = gmm_expert_sample(spec, &o, &mut rng);
            Demonstration { steps: vec![DemoStep { observation: o, chunk }] }
        })
        .collect();
    Dataset::from_demos("gmm", spec.d_o, spec.d_a, spec.horizon, seed, demos)
}

/// Deterministic point-mass dataset: each demonstration is one expert
/// episode driven in the receding-horizon loop, with the goal drawn at
/// random per episode (the source of multimodality).
pub fn make_pointmass_dataset(cfg: &PointMassConfig, n_demos: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n_demos == 0 {
        return Err(Error::EmptyBatch("need n >= 1 demonstrations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(n_demos);
    for _ in 0..n_demos {
        let start = cfg.sample_start(&mut rng);
        let goal = cfg.goals[usize::from(rng.random::<bool>())];
        let mut env = PointMassEnv::reset(cfg.clone(), start);
        let mut demo = Demonstration::default();
        while !env.done() {
            let chunk = scripted_expert_chunk(&env, goal);
            demo.steps.push(DemoStep { observation: env.observation(), chunk: chunk.clone() });
            for j in 0..cfg.exec_horizon {
                env.step([chunk[2 * j], chunk[2 * j + 1]]);
                if env.done() {
                    break;
                }
            }
        }
        demos.push(demo);
    }
    Dataset::from_demos("pointmass", cfg.d_o(), cfg.d_a(), cfg.horizon, seed, demos)
}

// ── Receding-horizon rollout ────────────────────────────────────────────

/// A policy that generates full action chunks in environment units.
pub trait ChunkPolicy {
    /// Called at the start of each episode.
    fn begin_episode(&mut self, _episode: usize) {}

    /// Generate a chunk for `obs`; `warm_prior` is the shifted previous
    /// chunk when warm-start is enabled and a previous chunk exists.
    fn chunk(&mut self, obs: &[f64], warm_prior: Option<&[f64]>) -> Result<Vec<f64>>;

    /// Cumulative function evaluations consumed so far.
    fn nfe_taken(&self) -> u64;
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_env_steps: f64,
    /// Mean squared difference between consecutive executed actions.
    pub smoothness: f64,
    /// Mean squared jump across chunk boundaries only.
    pub interchunk_jump: f64,
    pub chunks_generated: u64,
    pub nfe_total: u64,
    pub wall_ms_total: f64,
}

/// Run receding-horizon episodes: generate a chunk, execute the first `h`
/// actions, optionally hand the shifted suffix to the next generation.
pub fn rollout(
    policy: &mut dyn ChunkPolicy,
    cfg: &PointMassConfig,
    warm: bool,
    episodes: usize,
    seed: u64,
) -> Result<RolloutMetrics> {
    cfg.validate()?;
    let h = cfg.exec_horizon;
    let d_a = cfg.d_a();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metrics = RolloutMetrics { episodes, ..Default::default() };
    let mut successes = 0usize;
    let mut total_steps = 0usize;
    let mut smooth_acc = 0.0;
    let mut smooth_n = 0usize;
    let mut jump_acc = 0.0;
    let mut jump_n = 0usize;
    let clock = std::time::Instant::now();

    for ep in 0..episodes {
        policy.begin_episode(ep);
        let start = cfg.sample_start(&mut rng);
        let mut env = PointMassEnv::reset(cfg.clone(), start);
        let mut prev_chunk: Option<Vec<f64>> = None;
        let mut prev_action: Option<[f64; 2]> = None;
        while !env.done() {
            let warm_prior = match (&prev_chunk, warm) {
                (Some(p), true) => Some(build_warm_prior(p, d_a, h)?),
                _ => None,
            };
            let chunk = policy.chunk(&env.observation(), warm_prior.as_deref())?;
            metrics.chunks_generated += 1;
            if chunk.len() != cfg.chunk_len() {
                return Err(Error::InvalidArgument(format!(
                    "policy produced a chunk of length {}, expected {}",
                    chunk.len(),
                    cfg.chunk_len()
                )));
            }
            for j in 0..h {
                let action = [chunk[2 * j], chunk[2 * j + 1]];
                if let Some(prev) = prev_action {
                    let d2 = (action[0] - prev[0]).powi(2) + (action[1] - prev[1]).powi(2);
                    smooth_acc += d2;
                    smooth_n += 1;
                    if j == 0 {
                        jump_acc += d2;
                        jump_n += 1;
                    }
                }
                prev_action = Some(action);
                env.step(action);
                if env.done() {
                    break;
                }
            }
            prev_chunk = Some(chunk);
        }
        if env.success() {
            successes += 1;
        }
        total_steps += env.steps;
    }

    metrics.success_rate = successes as f64 / episodes.max(1) as f64;
    metrics.mean_env_steps = total_steps as f64 / episodes.max(1) as f64;
    metrics.smoothness = if smooth_n > 0 { smooth_acc / smooth_n as f64 } else { 0.0 };
    metrics.interchunk_jump = if jump_n > 0 { jump_acc / jump_n as f64 } else { 0.0 };
    metrics.nfe_total = policy.nfe_taken();
    metrics.wall_ms_total = clock.elapsed().as_secs_f64() * 1e3;
    Ok(metrics)
}

/// The scripted expert wrapped as a policy (oracle upper-bound row).
pub struct ExpertPolicy {
    cfg: PointMassConfig,
    rng: ChaCha8Rng,
    goal: [f64; 2],
}

impl ExpertPolicy {
    pub fn new(cfg: PointMassConfig, seed: u64) -> Self {
        let goal = cfg.goals[0];
        ExpertPolicy { cfg, rng: ChaCha8Rng::seed_from_u64(seed), goal }
    }
}

impl ChunkPolicy for ExpertPolicy {
    fn begin_episode(&mut self, _episode: usize) {
        self.goal = self.cfg.goals[usize::from(self.rng.random::<bool>())];
    }

    fn chunk(&mut self, obs: &[f64], _warm_prior: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut env = PointMassEnv::reset(self.cfg.clone(), [obs[0], obs[1]]);
        env.velocity = [obs[2], obs[3]];
        Ok(scripted_expert_chunk(&env, self.goal))
    }

    fn nfe_taken(&self) -> u64 {
        0
    }
}

/// Always outputs zero actions (lower-bound row).
pub struct ZeroPolicy {
    chunk_len: usize,
}

impl ZeroPolicy {
    pub fn new(chunk_len: usize) -> Self {
        ZeroPolicy { chunk_len }
    }
}

impl ChunkPolicy for ZeroPolicy {
    fn chunk(&mut self, _obs: &[f64], _warm_prior: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.chunk_len])
    }

    fn nfe_taken(&self) -> u64 {
        0
    }
}
