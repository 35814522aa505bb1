//! The interval-velocity network `u(z, t, r | o)` and its EMA teacher.
//!
//! The start time `t` and the interval width `r - t` are sinusoidally
//! embedded, concatenated and projected; the observation is encoded by a
//! two-layer MLP, or replaced by a learned null token for the
//! unconditional branch. The projected time features, the condition
//! embedding and the state `z` feed an MLP trunk with SiLU activations.
//!
//! Two forward paths exist: a tape-free one for teachers and inference,
//! and a tape-recorded one for loss gradients. Both run the same kernels
//! in the same order, so their outputs are bit-identical.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OFPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Observation vector with a null flag for the unconditional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    values: Vec<f64>,
    is_null: bool,
}

impl Condition {
    pub fn real(values: Vec<f64>) -> Self {
        Condition { values, is_null: false }
    }

    /// The null condition; `d_o` keeps the width known for shape checks.
    pub fn null(d_o: usize) -> Self {
        Condition { values: vec![0.0; d_o], is_null: true }
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One field query `(z, t, r, o)`.
#[derive(Debug, Clone)]
pub struct IntervalQuery {
    pub z: Vec<f64>,
    pub t: f64,
    pub r: f64,
    pub cond: Condition,
}

/// Anything that evaluates an interval-averaged velocity field. Implemented
/// by the network, the EMA teacher view, and the analytic/numeric oracles
/// used for verification.
pub trait IntervalField {
    /// Flattened chunk length `d_a * H`.
    fn action_len(&self) -> usize;

    /// Average velocity over `[t, r]` at state `z` under condition `cond`.
    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<Vec<f64>>;

    /// Instrumented count of forward evaluations, for NFE audits.
    fn forward_count(&self) -> u64;
}

impl<T: IntervalField + ?Sized> IntervalField for &T {
    fn action_len(&self) -> usize {
        (**self).action_len()
    }
    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<Vec<f64>> {
        (**self).interval_velocity(z, t, r, cond)
    }
    fn forward_count(&self) -> u64 {
        (**self).forward_count()
    }
}

/// Network dimensions. Desk-scale defaults; the mechanism (embed, project,
/// concatenate, MLP trunk) is what matters, not the widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Per-step action dimension.
    pub d_a: usize,
    /// Chunk horizon H; the generative target is the flattened H x d_a chunk.
    pub horizon: usize,
    /// Observation dimension.
    pub d_o: usize,
    pub hidden_width: usize,
    /// Number of hidden trunk layers.
    pub depth: usize,
    /// Sinusoidal embedding width per time input (must be even).
    pub time_embed_dim: usize,
    /// Width of the condition embedding and the learned null token.
    pub cond_embed_dim: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d_a: 2,
            horizon: 8,
            d_o: 4,
            hidden_width: 256,
            depth: 4,
            time_embed_dim: 64,
            cond_embed_dim: 64,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn action_len(&self) -> usize {
        self.d_a * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a < 1 || self.horizon < 1 || self.d_o < 1 {
            return Err(Error::InvalidArgument("net dims must all be >= 1".into()));
        }
        if self.hidden_width < 1 || self.depth < 1 || self.cond_embed_dim < 1 {
            return Err(Error::InvalidArgument("net widths must be >= 1".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(
                "time_embed_dim must be even (sinusoidal pairs)".into(),
            ));
        }
        Ok(())
    }

    /// Trunk input width: `[z, cond embedding, time features]`.
    fn trunk_in(&self) -> usize {
        self.action_len() + self.cond_embed_dim + self.time_embed_dim
    }

    /// Parameter blocks in declaration order. Checkpoint blobs and the flat
    /// parameter vector both follow this order.
    pub fn layout(&self) -> Vec<BlockSpec> {
        let ec = self.cond_embed_dim;
        let et = self.time_embed_dim;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len: usize = shape.iter().product();
            blocks.push(BlockSpec { name, shape, offset, fan_in });
            offset += len;
        };
        push("cond.w1".into(), vec![self.d_o, ec], self.d_o);
        push("cond.b1".into(), vec![ec], self.d_o);
        push("cond.w2".into(), vec![ec, ec], ec);
        push("cond.b2".into(), vec![ec], ec);
        push("null_token".into(), vec![ec], ec);
        push("time.w".into(), vec![2 * et, et], 2 * et);
        push("time.b".into(), vec![et], 2 * et);
        let mut widths = vec![self.trunk_in()];
        widths.extend(std::iter::repeat(self.hidden_width).take(self.depth));
        widths.push(self.action_len());
        for l in 0..widths.len() - 1 {
            push(format!("trunk.w{l}"), vec![widths[l], widths[l + 1]], widths[l]);
            push(format!("trunk.b{l}"), vec![widths[l + 1]], widths[l]);
        }
        blocks
    }
}

// Fixed block indices implied by the layout order.
const B_COND_W1: usize = 0;
const B_COND_B1: usize = 1;
const B_COND_W2: usize = 2;
const B_COND_B2: usize = 3;
const B_NULL: usize = 4;
const B_TIME_W: usize = 5;
const B_TIME_B: usize = 6;
const B_TRUNK: usize = 7;

/// One named parameter block inside the flat store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with a named block layout. Student and teacher
/// hold separate stores over the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    blocks: Vec<BlockSpec>,
    data: Vec<f64>,
}

impl ParamStore {
    /// Deterministic init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) drawn
    /// in declaration order from a ChaCha stream seeded by `seed`.
    pub fn init(layout: Vec<BlockSpec>, seed: u64) -> Self {
        let total: usize = layout.iter().map(|b| b.len()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(total);
        for block in &layout {
            let bound = 1.0 / (block.fan_in as f64).sqrt();
            for _ in 0..block.len() {
                data.push(rng.random_range(-bound..bound));
            }
        }
        ParamStore { blocks: layout, data }
    }

    pub fn from_flat(layout: Vec<BlockSpec>, data: Vec<f64>) -> Result<Self> {
        let total: usize = layout.iter().map(|b| b.len()).sum();
        if data.len() != total {
            return Err(Error::CheckpointShape(format!(
                "flat vector has {} values, layout expects {total}",
                data.len()
            )));
        }
        Ok(ParamStore { blocks: layout, data })
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let b = &self.blocks[i];
        &self.data[b.offset..b.offset + b.len()]
    }

    pub fn block_tensor(&self, i: usize) -> Tensor {
        Tensor::new(self.blocks[i].shape.clone(), self.block(i).to_vec())
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.blocks == other.blocks
    }
}

/// Top sinusoidal frequency. Times live in [0,1], so resolving ~1e-2
/// structure needs ~1e2; higher frequencies only give the head room to
/// memorize batch noise as wiggle along t.
pub const MAX_TIME_FREQ_LOG10: f64 = 2.0;

/// Sinusoidal features of a scalar: log-spaced frequencies 1..=1e2,
/// `[sin(w_i x)..., cos(w_i x)...]`, width `dim` (even).
pub fn sinusoidal_features(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            10f64.powf(MAX_TIME_FREQ_LOG10 * i as f64 / (half - 1) as f64)
        };
        out[i] = (freq * x).sin();
        out[half + i] = (freq * x).cos();
    }
    out
}

/// The interval-velocity network. Forward passes are read-only; the NFE
/// counter is atomic so concurrent sampling stays safe.
#[derive(Debug)]
pub struct IntervalVelocityNet {
    config: NetConfig,
    params: ParamStore,
    forward_counter: AtomicU64,
}

impl IntervalVelocityNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(config.layout(), config.seed);
        Ok(IntervalVelocityNet { config, params, forward_counter: AtomicU64::new(0) })
    }

    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if params.blocks() != config.layout().as_slice() {
            return Err(Error::CheckpointShape("parameter layout does not match config".into()));
        }
        Ok(IntervalVelocityNet { config, params, forward_counter: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn validate_query(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<()> {
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&r) || t > r {
            return Err(Error::InvalidTime(format!(
                "need 0 <= t <= r <= 1, got t={t} r={r}"
            )));
        }
        if z.len() != self.config.action_len() {
            return Err(Error::InvalidArgument(format!(
                "state length {} != d_a*H = {}",
                z.len(),
                self.config.action_len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite state".into()));
        }
        if !cond.is_null() && cond.values().len() != self.config.d_o {
            return Err(Error::InvalidArgument(format!(
                "condition length {} != d_o = {}",
                cond.values().len(),
                self.config.d_o
            )));
        }
        Ok(())
    }

    /// Condition embedding: the learned null token, or a 2-layer MLP of `o`.
    pub fn encode_condition(&self, o: &[f64], use_null: bool) -> Vec<f64> {
        self.encode_condition_with(&self.params, o, use_null)
    }

    fn encode_condition_with(&self, params: &ParamStore, o: &[f64], use_null: bool) -> Vec<f64> {
        if use_null {
            return params.block(B_NULL).to_vec();
        }
        let ec = self.config.cond_embed_dim;
        let mut h = kernels::affine(o, 1, self.config.d_o, params.block(B_COND_W1), ec, params.block(B_COND_B1));
        for v in h.iter_mut() {
            *v = kernels::silu(*v);
        }
        kernels::affine(&h, 1, ec, params.block(B_COND_W2), ec, params.block(B_COND_B2))
    }

    fn input_row_with(&self, params: &ParamStore, z: &[f64], t: f64, r: f64, cond: &Condition) -> Vec<f64> {
        let et = self.config.time_embed_dim;
        let mut temb = sinusoidal_features(t, et);
        temb.extend(sinusoidal_features(r - t, et));
        let time_feat =
            kernels::affine(&temb, 1, 2 * et, params.block(B_TIME_W), et, params.block(B_TIME_B));
        let cond_emb = self.encode_condition_with(params, cond.values(), cond.is_null());
        let mut row = Vec::with_capacity(self.config.trunk_in());
        row.extend_from_slice(z);
        row.extend_from_slice(&cond_emb);
        row.extend_from_slice(&time_feat);
        row
    }

    /// Tape-free forward with explicit parameters (used for the EMA teacher
    /// and for inference).
    pub fn forward_with(
        &self,
        params: &ParamStore,
        z: &[f64],
        t: f64,
        r: f64,
        cond: &Condition,
    ) -> Result<Vec<f64>> {
        self.validate_query(z, t, r, cond)?;
        let row = self.input_row_with(params, z, t, r, cond);
        let mut h = row;
        let mut width = self.config.trunk_in();
        let n_layers = self.config.depth + 1;
        for l in 0..n_layers {
            let w = &params.blocks()[B_TRUNK + 2 * l];
            let out_w = w.shape[1];
            h = kernels::affine(
                &h,
                1,
                width,
                params.block(B_TRUNK + 2 * l),
                out_w,
                params.block(B_TRUNK + 2 * l + 1),
            );
            if l + 1 < n_layers {
                for v in h.iter_mut() {
                    *v = kernels::silu(*v);
                }
            }
            width = out_w;
        }
        Ok(h)
    }

    /// `u(z, t, r | o)` with the student parameters; increments the NFE counter.
    pub fn forward_interval_velocity(
        &self,
        z: &[f64],
        t: f64,
        r: f64,
        cond: &Condition,
    ) -> Result<Vec<f64>> {
        let out = self.forward_with(&self.params, z, t, r, cond)?;
        self.forward_counter.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    /// Register every parameter block on a tape, in declaration order.
    pub fn register_params(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        requires_grad: bool,
    ) -> ParamVars {
        let vars = params
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, _)| tape.input(params.block_tensor(i), requires_grad))
            .collect();
        ParamVars { vars }
    }

    /// Batched tape forward: one row per query, shared trunk matmuls.
    /// Returns a `[n_queries, d_a*H]` node.
    pub fn forward_batch_on_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        queries: &[IntervalQuery],
    ) -> Result<Var> {
        if queries.is_empty() {
            return Err(Error::EmptyBatch("forward_batch_on_tape".into()));
        }
        let et = self.config.time_embed_dim;
        let ec = self.config.cond_embed_dim;
        let mut rows = Vec::with_capacity(queries.len());
        for q in queries {
            self.validate_query(&q.z, q.t, q.r, &q.cond)?;
            let mut temb = sinusoidal_features(q.t, et);
            temb.extend(sinusoidal_features(q.r - q.t, et));
            let temb = tape.constant(Tensor::vector(temb));
            let time_feat = tape.affine(temb, pv.vars[B_TIME_W], pv.vars[B_TIME_B])?;
            let cond_emb = if q.cond.is_null() {
                pv.vars[B_NULL]
            } else {
                let o = tape.constant(Tensor::vector(q.cond.values().to_vec()));
                let h = tape.affine(o, pv.vars[B_COND_W1], pv.vars[B_COND_B1])?;
                let h = tape.silu(h);
                tape.affine(h, pv.vars[B_COND_W2], pv.vars[B_COND_B2])?
            };
            debug_assert_eq!(tape.value(cond_emb).numel(), ec);
            let z = tape.constant(Tensor::vector(q.z.clone()));
            let row = tape.concat(&[z, cond_emb, time_feat])?;
            rows.push(row);
        }
        let mut h = tape.stack_rows(&rows)?;
        let n_layers = self.config.depth + 1;
        for l in 0..n_layers {
            h = tape.affine(h, pv.vars[B_TRUNK + 2 * l], pv.vars[B_TRUNK + 2 * l + 1])?;
            if l + 1 < n_layers {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }

    /// Extract per-block gradients (zeros where no gradient flowed).
    pub fn gradients_from(
        &self,
        grads: &crate::autodiff::Gradients,
        pv: &ParamVars,
    ) -> Vec<Vec<f64>> {
        pv.vars
            .iter()
            .zip(self.params.blocks().iter())
            .map(|(&v, b)| grads.get_or_zeros(v, b.len()))
            .collect()
    }

    /// Teacher view over this architecture with separate parameters.
    pub fn with_params<'a>(&'a self, params: &'a ParamStore) -> BorrowedField<'a> {
        BorrowedField { net: self, params, counter: AtomicU64::new(0) }
    }
}

impl IntervalField for IntervalVelocityNet {
    fn action_len(&self) -> usize {
        self.config.action_len()
    }

    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<Vec<f64>> {
        self.forward_interval_velocity(z, t, r, cond)
    }

    fn forward_count(&self) -> u64 {
        self.forward_counter.load(Ordering::Relaxed)
    }
}

/// Tape variables for every parameter block, in declaration order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

/// A field view binding the network architecture to borrowed parameters
/// (typically the EMA teacher's shadow).
pub struct BorrowedField<'a> {
    net: &'a IntervalVelocityNet,
    params: &'a ParamStore,
    counter: AtomicU64,
}

impl IntervalField for BorrowedField<'_> {
    fn action_len(&self) -> usize {
        self.net.config.action_len()
    }

    fn interval_velocity(&self, z: &[f64], t: f64, r: f64, cond: &Condition) -> Result<Vec<f64>> {
        let out = self.net.forward_with(self.params, z, t, r, cond)?;
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    fn forward_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

// ── EMA teacher ─────────────────────────────────────────────────────────

/// Warm-up decay schedule `beta(s) = min(beta_max, 1 - (1+s)^(-0.75))`:
/// zero at step 0 (shadow snaps to the student), then rising toward the cap.
pub fn ema_beta(step: u64, beta_max: f64) -> f64 {
    beta_max.min(1.0 - (1.0 + step as f64).powf(-0.75))
}

/// Slowly evolving copy of the student used to generate targets. Never
/// receives gradients; updates are plain value arithmetic.
#[derive(Debug, Clone)]
pub struct EmaTeacher {
    shadow_params: ParamStore,
    step_count: u64,
    beta_max: f64,
}

pub const DEFAULT_EMA_BETA_MAX: f64 = 0.9999;

impl EmaTeacher {
    pub fn new(student: &ParamStore, beta_max: f64) -> Self {
        EmaTeacher { shadow_params: student.clone(), step_count: 0, beta_max }
    }

    pub fn shadow(&self) -> &ParamStore {
        &self.shadow_params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// `shadow <- beta(step) shadow + (1 - beta(step)) student`.
    pub fn update(&mut self, student: &ParamStore, step: u64) -> Result<()> {
        if !self.shadow_params.same_layout(student) {
            return Err(Error::CheckpointShape("EMA update layout mismatch".into()));
        }
        let beta = ema_beta(step, self.beta_max);
        for (s, p) in self.shadow_params.flat_mut().iter_mut().zip(student.flat().iter()) {
            *s = beta * *s + (1.0 - beta) * *p;
        }
        self.step_count = self.step_count.max(step) + 1;
        Ok(())
    }

    pub fn field<'a>(&'a self, net: &'a IntervalVelocityNet) -> BorrowedField<'a> {
        net.with_params(&self.shadow_params)
    }
}

// ── Checkpoint I/O ──────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    config: NetConfig,
    config_hash: String,
    blocks: Vec<BlockSpec>,
    param_count: usize,
    checksum_student: String,
    checksum_teacher: String,
    teacher_step: u64,
    teacher_beta_max: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON of a config; used to guard checkpoints and
/// stamp reports.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

fn blob_le(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8);
    for v in params.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn blob_from_le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect()
}

/// Single-file checkpoint: magic, manifest length, JSON manifest, then the
/// student and teacher blobs as raw little-endian f64 in declaration order.
pub fn save_checkpoint(
    net: &IntervalVelocityNet,
    teacher: &EmaTeacher,
    path: &Path,
) -> Result<()> {
    let student_blob = blob_le(net.params());
    let teacher_blob = blob_le(teacher.shadow());
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: net.config().clone(),
        config_hash: config_hash(net.config()),
        blocks: net.params().blocks().to_vec(),
        param_count: net.params().len(),
        checksum_student: sha256_hex(&student_blob),
        checksum_teacher: sha256_hex(&teacher_blob),
        teacher_step: teacher.step_count(),
        teacher_beta_max: teacher.beta_max(),
    };
    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&student_blob);
    out.extend_from_slice(&teacher_blob);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint. Round trips are bit-exact; version, shape, and
/// corruption failures are distinguished.
pub fn load_checkpoint(path: &Path) -> Result<(IntervalVelocityNet, EmaTeacher)> {
    let bytes = std::fs::read(path)?;
    let corrupt = |msg: &str| Error::CheckpointCorrupt(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + mlen {
        return Err(corrupt("truncated manifest"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[16..16 + mlen])
        .map_err(|e| corrupt(&format!("unreadable manifest ({e})")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(corrupt("config hash mismatch"));
    }
    let layout = manifest.config.layout();
    if manifest.blocks != layout {
        return Err(Error::CheckpointShape(format!(
            "{}: manifest blocks disagree with config layout",
            path.display()
        )));
    }
    let total: usize = layout.iter().map(|b| b.len()).sum();
    if manifest.param_count != total {
        return Err(Error::CheckpointShape(format!(
            "{}: param_count {} vs layout total {total}",
            path.display(),
            manifest.param_count
        )));
    }
    let blob_len = total * 8;
    let start = 16 + mlen;
    if bytes.len() != start + 2 * blob_len {
        return Err(corrupt("truncated parameter blobs"));
    }
    let student_bytes = &bytes[start..start + blob_len];
    let teacher_bytes = &bytes[start + blob_len..];
    if sha256_hex(student_bytes) != manifest.checksum_student {
        return Err(corrupt("student checksum mismatch"));
    }
    if sha256_hex(teacher_bytes) != manifest.checksum_teacher {
        return Err(corrupt("teacher checksum mismatch"));
    }
    let student = ParamStore::from_flat(layout.clone(), blob_from_le(student_bytes))?;
    let shadow = ParamStore::from_flat(layout, blob_from_le(teacher_bytes))?;
    let net = IntervalVelocityNet::from_params(manifest.config, student)?;
    let teacher = EmaTeacher {
        shadow_params: shadow,
        step_count: manifest.teacher_step,
        beta_max: manifest.teacher_beta_max,
    };
    Ok((net, teacher))
}
