//! scratch probe 2 (deleted before finishing)
use ofp::eval::{NetPolicy, SolverKind};
use ofp::net::*;
use ofp::tasks::*;
use ofp::trainer::*;

fn main() {
    let cfg = PointMassConfig::default();
    let ds = make_pointmass_dataset(&cfg, 200, 0).unwrap();
    println!("dataset: {} demos, {} rows", ds.meta.n_demos, ds.meta.n_rows);
    let norm = Normalizer::from_meta(&ds.meta);
    let pairs = ds.normalized_pairs();
    let net_cfg = NetConfig {
        d_a: 2, horizon: 8, d_o: 4,
        hidden_width: 128, depth: 3, time_embed_dim: 16, cond_embed_dim: 32, seed: 3,
    };
    let bpe = pairs.len() / 128;
    println!("batches/epoch {bpe}");
    let mut tc = TrainConfig { epochs: 4000 / bpe.max(1), batch_size: 128, lr_peak: 2e-3, warmup_steps: 200, seed: 5, ..Default::default() };
    tc.schedule.dt_sampler = ofp::flow::DtSampler::LogNormal;
    let t0 = std::time::Instant::now();
    let out = train(&pairs, &net_cfg, &tc).unwrap();
    println!("trained {} steps in {:?}", out.total_steps, t0.elapsed());

    let mut expert = ExpertPolicy::new(cfg.clone(), 1);
    let me = rollout(&mut expert, &cfg, false, 200, 17).unwrap();
    println!("expert: success {:.3} steps {:.1} smooth {:.5} jump {:.5}", me.success_rate, me.mean_env_steps, me.smoothness, me.interchunk_jump);

    for (label, warm, t_w, nfe) in [
        ("t_w=0.00 @1", true, 0.0, 1usize),
        ("t_w=0.15 @1", true, 0.15, 1),
        ("t_w=0.50 @1", true, 0.50, 1),
        ("t_w=0.75 @1", true, 0.75, 1),
        ("cold     @4", false, 0.15, 4),
    ] {
        let mut policy = NetPolicy::new(&out.net, norm.clone(), nfe, SolverKind::Interval, t_w, 23);
        let m = rollout(&mut policy, &cfg, warm, 200, 17).unwrap();
        println!(
            "{label}: success {:.3} steps {:.1} smooth {:.5} jump {:.5} nfe {}",
            m.success_rate, m.mean_env_steps, m.smoothness, m.interchunk_jump, m.nfe_total
        );
    }
}
