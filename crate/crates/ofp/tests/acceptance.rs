//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS/FAIL line. Run with
//! `cargo test -p ofp --test acceptance -- --nocapture`.
//!
//! Criteria 6 and 7 train models; the whole suite stays within a desk CPU
//! budget (well under 10 minutes per trained model).

use ofp::eval::*;
use ofp::losses::LossWeights;
use ofp::net::*;
use ofp::sampler::*;
use ofp::tasks::*;
use ofp::trainer::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

/// Criterion 1: injected teacher error reproduces the interval-ratio
/// identity to 1e-12 over 1e5 random trials; the deviation-norm bound is
/// never violated. Runtime well under 10 s.
#[test]
fn criterion_01_teacher_error_identity() {
    let clock = std::time::Instant::now();
    let check = verify_prop1_identity(100_000, 42);
    let elapsed = clock.elapsed().as_secs_f64();
    let detail = format!(
        "max identity error {:.3e}, bound violations {}, {:.1}s",
        check.measured["max_identity_error"], check.measured["bound_violations"], elapsed
    );
    report(
        "criterion 1 (teacher-error identity)",
        check.pass && elapsed < 10.0,
        &detail,
    );
}

/// Criterion 2: the guidance-loss gradient is proportional to the
/// guidance-term gradient with factor t'^2 (1-t) / (2 (1-t')), verified
/// per-coordinate within 1e-6 relative over 100 random (t, t') pairs on an
/// untrained network. Runtime well under 30 s.
#[test]
fn criterion_02_guidance_gradient_alignment() {
    let clock = std::time::Instant::now();
    let check = verify_grad_alignment_sweep(100, 7);
    let elapsed = clock.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error {:.3e} over {} pairs, {:.1}s",
        check.measured["max_relative_error"], check.measured["pairs"], elapsed
    );
    report(
        "criterion 2 (guidance gradient alignment)",
        check.pass && elapsed < 30.0,
        &detail,
    );
}

/// Criterion 3: on the two-atom task with an RK4 interval-field oracle,
/// halving (m - t) scales the finite-difference error by 0.5 +- 0.15 for
/// the last three halvings. Runtime well under 2 min.
#[test]
fn criterion_03_first_order_convergence() {
    let clock = std::time::Instant::now();
    let check = verify_meanflow_fd(&MeanflowFdParams::default());
    let elapsed = clock.elapsed().as_secs_f64();
    let ratios: Vec<String> = check
        .measured
        .iter()
        .filter(|(k, _)| k.starts_with("ratio"))
        .map(|(k, v)| format!("{k}={v:.3}"))
        .collect();
    let detail = format!("{}, {:.1}s", ratios.join(" "), elapsed);
    report(
        "criterion 3 (first-order convergence)",
        check.pass && elapsed < 120.0,
        &detail,
    );
}

/// Criterion 4: the full unified-loss gradient matches central finite
/// differences within 1e-4 relative (1e-8 floor) on a small net.
/// Runtime well under 1 min.
#[test]
fn criterion_04_unified_gradient_soundness() {
    let clock = std::time::Instant::now();
    let check = verify_unified_gradient(3);
    let elapsed = clock.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error {:.3e}, {:.1}s",
        check.measured["max_relative_error"], elapsed
    );
    report(
        "criterion 4 (unified gradient soundness)",
        check.pass && elapsed < 60.0,
        &detail,
    );
}

/// Criterion 5: with the analytic interval field of a single-datum
/// dataset, the one-step jump and every K-step grid recover the datum to
/// 1e-12.
#[test]
fn criterion_05_exact_solver() {
    let check = verify_exact_solver(5);
    let detail = format!("max abs error {:.3e}", check.measured["max_abs_error"]);
    report("criterion 5 (exact solver)", check.pass, &detail);
}

/// Criterion 8: reported NFE equals the instrumented forward count
/// exactly, and wall-clock per chunk at NFE=100 is at least 20x NFE=1.
#[test]
fn criterion_08_nfe_accounting_and_latency() {
    let config = NetConfig::default(); // full desk-scale trunk
    let net = IntervalVelocityNet::new(config).unwrap();
    let len = net.config().action_len();
    let cond = Condition::real(vec![0.1, -0.2, 0.0, 0.3]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Exact NFE accounting against the instrumented counter.
    let mut audited = true;
    for k in [1usize, 4, 100] {
        let eps: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let before = net.forward_count();
        let sample = if k == 1 {
            one_step_sample(&net, &cond, &eps).unwrap()
        } else {
            multi_step_sample(&net, &cond, &eps, &TimeGrid::uniform(k).unwrap()).unwrap()
        };
        let counted = net.forward_count() - before;
        audited &= sample.nfe == k as u64 && counted == k as u64;
    }
    // Warm-start is one evaluation as well.
    let mut warm = WarmState::new(4, 0.15, 2);
    warm.observe_chunk(vec![0.0; len]);
    let eps: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let before = net.forward_count();
    let s = warm_start_sample(&net, &cond, &eps, &warm).unwrap();
    audited &= s.nfe == 1 && net.forward_count() - before == 1;

    // Latency scaling: average per-chunk wall time over repeated chunks.
    let chunks = 30;
    let timed = |k: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let grid = TimeGrid::uniform(k).unwrap();
        let clock = std::time::Instant::now();
        for _ in 0..chunks {
            let eps: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            if k == 1 {
                one_step_sample(&net, &cond, &eps).unwrap();
            } else {
                multi_step_sample(&net, &cond, &eps, &grid).unwrap();
            }
        }
        clock.elapsed().as_secs_f64() * 1e3 / chunks as f64
    };
    timed(1); // warm the caches before measuring
    let ms_1 = timed(1);
    let ms_100 = timed(100);
    let ratio = ms_100 / ms_1;
    let detail = format!(
        "NFE audit exact: {audited}; wall per chunk {:.3} ms @1 vs {:.3} ms @100 (x{:.1})",
        ms_1, ms_100, ratio
    );
    report(
        "criterion 8 (NFE accounting and latency scaling)",
        audited && ratio >= 20.0,
        &detail,
    );
}

/// Criterion 9: identical config+seed produces bit-identical checkpoints,
/// logs, and reports.
#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GmmTaskSpec::two_atom_1d();
    let dataset = make_gmm_dataset(&spec, 128, 4).unwrap();
    let pairs = dataset.normalized_pairs();
    let net_config = NetConfig {
        d_a: 1,
        horizon: 1,
        d_o: 1,
        hidden_width: 16,
        depth: 2,
        time_embed_dim: 8,
        cond_embed_dim: 8,
        seed: 9,
    };

    let run = |tag: &str| -> (std::path::PathBuf, std::path::PathBuf) {
        let ckpt = dir.path().join(format!("{tag}.ofp"));
        let log = dir.path().join(format!("{tag}.csv"));
        let config = TrainConfig {
            epochs: 3,
            batch_size: 32,
            lr_peak: 1e-3,
            warmup_steps: 5,
            seed: 21,
            checkpoint_path: Some(ckpt.clone()),
            log_path: Some(log.clone()),
            ..Default::default()
        };
        train(&pairs, &net_config, &config).unwrap();
        (ckpt, log)
    };
    let (ckpt_a, log_a) = run("a");
    let (ckpt_b, log_b) = run("b");
    let ckpt_same = std::fs::read(&ckpt_a).unwrap() == std::fs::read(&ckpt_b).unwrap();
    let log_same = std::fs::read(&log_a).unwrap() == std::fs::read(&log_b).unwrap();

    // Reports: evaluate the same checkpoint twice.
    let (net, _) = load_checkpoint(&ckpt_a).unwrap();
    let normalizer = Normalizer::from_meta(&dataset.meta);
    let opts = EvalOptions {
        nfe_list: vec![1, 2],
        warm: vec![false],
        n_samples: 128,
        seed: 13,
        ..Default::default()
    };
    let task = EvalTask::Gmm(spec);
    let (report_a, _) = policy_eval(&net, &normalizer, &task, &opts).unwrap();
    let (report_b, _) = policy_eval(&net, &normalizer, &task, &opts).unwrap();
    let report_same = report_a.to_json().unwrap() == report_b.to_json().unwrap()
        && report_a.to_csv() == report_b.to_csv();

    let detail = format!(
        "checkpoints identical: {ckpt_same}; logs identical: {log_same}; reports identical: {report_same}"
    );
    report(
        "criterion 9 (bit-identical reruns)",
        ckpt_same && log_same && report_same,
        &detail,
    );
}

/// Criterion 10: the measured null-condition fraction matches p_drop
/// within 0.01 over at least 1e4 batch items.
#[test]
fn criterion_10_condition_dropout_rate() {
    let weights = LossWeights::default();
    let schedule = ofp::flow::ScheduleConfig { total_steps: 500, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..64).map(|i| (vec![i as f64 / 64.0], vec![0.0, 0.0])).collect();
    let mut nulls = 0usize;
    let mut total = 0usize;
    for step in 0..500 {
        let batch = ofp::losses::TrainBatch::build(&mut rng, &pairs, &weights, &schedule, step);
        let (n, t) = batch.null_counts();
        nulls += n;
        total += t;
    }
    let fraction = nulls as f64 / total as f64;
    let detail = format!(
        "null fraction {fraction:.4} vs p_drop {} over {total} items",
        weights.p_drop
    );
    report(
        "criterion 10 (condition dropout rate)",
        total >= 10_000 && (fraction - weights.p_drop).abs() < 0.01,
        &detail,
    );
}
