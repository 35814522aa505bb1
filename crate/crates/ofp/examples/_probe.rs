//! scratch probe (deleted before finishing)
use ofp::eval::*;
use ofp::losses::LossWeights;
use ofp::net::*;
use ofp::sampler::*;
use ofp::tasks::*;
use ofp::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn eight_mode_ed(net: &IntervalVelocityNet, norm: &Normalizer, spec: &GmmTaskSpec, nfe: usize, euler: bool, seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = net.config().action_len();
    let mut gen = Vec::new();
    let mut exp = Vec::new();
    for _ in 0..n {
        let o = spec.sample_condition(&mut rng);
        let cond = Condition::real(o.clone());
        let eps: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = if euler {
            euler_sample(net, &cond, &eps, &TimeGrid::uniform(nfe).unwrap()).unwrap()
        } else if nfe == 1 {
            one_step_sample(net, &cond, &eps).unwrap()
        } else {
            multi_step_sample(net, &cond, &eps, &TimeGrid::uniform(nfe).unwrap()).unwrap()
        };
        let mut j = o.clone();
        j.extend(norm.from_unit(&s.chunk));
        gen.push(j);
        let o2 = spec.sample_condition(&mut rng);
        let mut j2 = o2.clone();
        j2.extend(gmm_expert_sample(spec, &o2, &mut rng));
        exp.push(j2);
    }
    energy_distance(&gen, &exp).unwrap()
}

fn main() {
    for (h, spread, steps) in [(1usize, 0.05f64, 6000usize), (1, 0.05, 12000), (1, 0.1, 12000)] {
        let spec = GmmTaskSpec::eight_mode_conditional(h, spread);
        let ds = make_gmm_dataset(&spec, 512, 0).unwrap();
        let norm = Normalizer::from_meta(&ds.meta);
        let pairs = ds.normalized_pairs();
        let net_cfg = NetConfig { d_a: 2, horizon: h, d_o: 2, hidden_width: 96, depth: 3, time_embed_dim: 16, cond_embed_dim: 32, seed: 3 };
        let mut cfg = TrainConfig { epochs: steps / 4, batch_size: 128, lr_peak: 2e-3, warmup_steps: 200, seed: 5, ..Default::default() };
        cfg.schedule.dt_sampler = ofp::flow::DtSampler::LogNormal;
        let t0 = std::time::Instant::now();
        let out = train(&pairs, &net_cfg, &cfg).unwrap();
        let mut cfm_cfg = cfg.clone();
        cfm_cfg.loss = LossWeights { lambda_c: 0.0, lambda_g: 0.0, p_sc: 0.0, p_sg: 0.0, ..Default::default() };
        let cfm = train(&pairs, &net_cfg, &cfm_cfg).unwrap();
        let ed_cfm = eight_mode_ed(&cfm.net, &norm, &spec, 100, true, 9, 2048);
        let ed1 = eight_mode_ed(&out.net, &norm, &spec, 1, false, 9, 2048);
        let ed4 = eight_mode_ed(&out.net, &norm, &spec, 4, false, 9, 2048);
        println!("H{h} sp{spread} steps{steps}: cfm@100 {ed_cfm:.5} ofp@1 {ed1:.5} ofp@4 {ed4:.5} ratio {:.3} ({:?})", ed1/ed_cfm, t0.elapsed());
    }
}
