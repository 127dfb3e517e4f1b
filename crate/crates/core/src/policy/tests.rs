use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::leaky_relu;

fn small(variant: Variant) -> PolicyConfig {
    PolicyConfig {
        variant,
        hidden: vec![8, 6],
        critic_hidden: vec![7],
        gating_hidden: vec![5],
        max_experts: 3,
        ..PolicyConfig::default()
    }
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Randomizes every trainable block so gradients are generic.
fn scramble(p: &mut PolicyState, rng: &mut ChaCha8Rng) {
    let ids = p.all_blocks();
    let ids: Vec<_> = ids.into_iter().filter(|id| !matches!(id, BlockId::NormMean | BlockId::NormM2)).collect();
    for b in p.blocks_mut(&ids).unwrap() {
        for v in b.iter_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
}

#[test]
fn base_expert_is_a_plain_forward_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    let x = random_input(&mut rng, 5);
    let pass = p.expert_forward(0, &x, &[]).unwrap();
    assert_eq!(pass.output, p.experts[0].net.predict(&x).unwrap());
    assert_eq!(p.compose_mean(&x, 0).unwrap(), pass.output);
}

#[test]
fn zero_adapters_give_a_standalone_expert() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cfg = small(Variant::Progressive);
    cfg.adapter_init_scale = 0.0;
    let mut p = PolicyState::new(cfg, 5, 3, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    scramble(&mut p, &mut rng);
    for bank in &mut p.adapters[1] {
        for a in bank {
            a.weights.iter_mut().for_each(|w| *w = 0.0);
        }
    }
    let x = random_input(&mut rng, 5);
    let p0 = p.expert_forward(0, &x, &[]).unwrap();
    let p1 = p.expert_forward(1, &x, &[p0.clone()]).unwrap();
    assert_eq!(p1.output, p.experts[1].net.predict(&x).unwrap());
    let mean = p.compose_mean(&x, 0).unwrap();
    for i in 0..3 {
        assert!((mean[i] - (p0.output[i] + p1.output[i])).abs() < 1e-15);
    }
}

#[test]
fn single_hidden_adapter_matches_hand_assembled_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = PolicyState::new(small(Variant::Progressive), 4, 2, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    scramble(&mut p, &mut rng);
    for w in &mut p.adapters[1][1][0].weights {
        *w = 0.0;
    }
    let x = random_input(&mut rng, 4);
    let slope = p.config.leaky_slope;

    let affine = |l: &crate::nn::DenseLayer, v: &[f64]| {
        let mut z = vec![0.0; l.out_dim()];
        l.affine(v, &mut z);
        z
    };
    let act = |z: Vec<f64>| z.into_iter().map(|v| leaky_relu(v, slope)).collect::<Vec<_>>();
    let e0 = &p.experts[0].net.layers;
    let h0 = act(affine(&e0[0], &x));
    let e1 = &p.experts[1].net.layers;
    let a1 = act(affine(&e1[0], &x));
    let mut z2 = affine(&e1[1], &a1);
    let adapter = &p.adapters[1][0][0];
    for (r, z) in z2.iter_mut().enumerate() {
        for (c, h) in h0.iter().enumerate() {
            *z += adapter.weights[r * adapter.cols + c] * h;
        }
    }
    let out = affine(&e1[2], &act(z2));

    let p0 = p.expert_forward(0, &x, &[]).unwrap();
    let p1 = p.expert_forward(1, &x, &[p0]).unwrap();
    for (a, b) in p1.output.iter().zip(&out) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn missing_predecessor_is_a_sequencing_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = PolicyState::new(small(Variant::Progressive), 4, 2, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    let x = random_input(&mut rng, 4);
    assert!(matches!(p.expert_forward(1, &x, &[]), Err(Error::Sequencing(1))));
}

#[test]
fn activation_protocol() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    scramble(&mut p, &mut rng);
    let before = p.experts[0].clone();
    let head_before = p.gating[0].clone();
    assert_eq!(p.activate_expert(&mut rng).unwrap(), 1);
    assert_eq!(p.experts[0].net, before.net);
    assert_eq!(p.experts[0].log_std, before.log_std);
    assert!(p.experts[0].frozen && p.gating[0].frozen && !p.experts[1].frozen);
    assert_eq!(p.gating[0].net, head_before.net);
    for l in 0..2 {
        assert_eq!(p.experts[1].net.layers[l], before.net.layers[l]);
    }
    let last = &p.experts[1].net.layers[2];
    assert!(last.weights.iter().chain(&last.bias).all(|v| *v == 0.0));
    assert!(p.adapters[1][0][0].weights.iter().all(|w| *w == 0.0));
    assert!(p.adapters[1][1][0].weights.iter().all(|w| w.abs() <= 1e-3));
    assert!(p.adapters[1][1][0].weights.iter().any(|w| *w != 0.0));
    assert_eq!(p.gating.len(), 2);
    assert!(p.normalizer.frozen);

    // Expert 2 inherits the hidden adapter from expert 0 and starts the one
    // from expert 1 at zero.
    p.adapters[1][0][0].weights.iter_mut().for_each(|w| *w = 0.25);
    p.activate_expert(&mut rng).unwrap();
    assert!(p.adapters[2][0][0].weights.iter().all(|w| *w == 0.25));
    assert!(p.adapters[2][0][1].weights.iter().all(|w| *w == 0.0));
    assert!(matches!(p.activate_expert(&mut rng), Err(Error::Capacity(3))));
}

#[test]
fn activation_is_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cfg = small(Variant::Progressive);
    cfg.adapter_init_scale = 0.0;
    let mut p = PolicyState::new(cfg, 6, 3, &mut rng).unwrap();
    scramble(&mut p, &mut rng);
    let inputs: Vec<Vec<f64>> = (0..1000).map(|_| random_input(&mut rng, 6)).collect();
    let before: Vec<_> = inputs.iter().map(|x| p.compose_mean(x, 0).unwrap()).collect();
    let mut q = p.clone();
    q.activate_expert(&mut rng).unwrap();
    for (x, b) in inputs.iter().zip(&before) {
        let a = q.compose_mean(x, 0).unwrap();
        assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-12));
    }

    p.config.adapter_init_scale = 1e-3;
    p.activate_expert(&mut rng).unwrap();
    for (x, b) in inputs.iter().zip(&before).take(200) {
        let x = unit(x.clone());
        let b0 = q.compose_mean(&x, 0).unwrap();
        let a = p.compose_mean(&x, 0).unwrap();
        let d = a.iter().zip(&b0).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        assert!(d <= 1e-2, "jump {d}");
        let _ = b;
    }
}

#[test]
fn sampling_and_log_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    let x = random_input(&mut rng, 5);
    let (a, _, fwd) = p.sample_action(&x, 0, true, &mut rng).unwrap();
    assert_eq!(a, fwd.mean);
    assert!((gaussian_log_prob(&[0.3], &[0.0], &[0.3]) + 0.9189385).abs() < 1e-7);
    let (a, lp, fwd) = p.sample_action(&x, 0, false, &mut rng).unwrap();
    assert_ne!(a, fwd.mean);
    assert_eq!(lp, gaussian_log_prob(&fwd.mean, p.action_log_std(&fwd), &a));
}

#[test]
fn log_prob_gradient_skips_frozen_log_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    let x = random_input(&mut rng, 5);
    let (a, _, fwd) = p.sample_action(&x, 0, false, &mut rng).unwrap();
    let (dm, ds) = gaussian_log_prob_grad(&fwd.mean, p.action_log_std(&fwd), &a);
    let mut g = p.zero_grad(&p.all_blocks()).unwrap();
    p.backward_action(&fwd, &dm, &ds, &mut g).unwrap();
    assert!(g.get(BlockId::LogStd(0)).unwrap().iter().all(|v| *v == 0.0));
    assert!(g.get(BlockId::LogStd(1)).unwrap().iter().any(|v| *v != 0.0));
    assert!(!p.trainable_blocks().iter().any(|id| matches!(id, BlockId::LogStd(0) | BlockId::ExpertWeights(0, _) | BlockId::ExpertBias(0, _))));
}

#[test]
fn gating_confidence_examples() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((sigmoid(1.0) - 0.731059).abs() < 1e-6);
    assert!(sigmoid(20.0) >= 0.9999999);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    crate::nn::zero_final(&mut p.gating[0].net);
    assert_eq!(p.gating_confidence(&random_input(&mut rng, 5)).unwrap(), vec![0.5]);
}

#[test]
fn routing_examples() {
    assert!((routing_fraction(0.3, 0.6, false) - 0.5).abs() < 1e-12);
    assert_eq!(routing_fraction(0.7, 0.6, false), 1.0);
    assert_eq!(routing_fraction(0.3, 0.0, false), 1.0);
    assert!(routing_fraction(0.3, 0.6, true) >= 1.0);

    let conf = [0.9, 0.1, 0.5, 0.3, 0.8, 0.2, 0.7, 0.6, 0.4, 0.95];
    assert_eq!(select_routed(&conf, 0.3).unwrap().selected, vec![1, 3, 5]);
    assert_eq!(select_routed(&conf, 1.0).unwrap().selected, (0..10).collect::<Vec<_>>());
    assert_eq!(select_routed(&[0.5; 10], 0.3).unwrap().selected, vec![0, 1, 2]);
    assert!(select_routed(&[], 0.5).is_err());
    assert_eq!(routed_count(0.3, 10), 3);
    assert_eq!(routed_count(0.31, 10), 4);
    assert_eq!(routed_count(1e-9, 10), 1);
}

#[test]
fn soft_moe_with_uniform_gate_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cfg = small(Variant::SoftMoe);
    cfg.max_experts = 2;
    let mut p = PolicyState::new(cfg, 5, 3, &mut rng).unwrap();
    crate::nn::zero_final(p.moe_gate.as_mut().unwrap());
    let x = random_input(&mut rng, 5);
    let o: Vec<_> = p.experts.iter().map(|e| e.net.predict(&x).unwrap()).collect();
    let m = p.compose_mean(&x, 0).unwrap();
    for i in 0..3 {
        assert!((m[i] - 0.5 * (o[0][i] + o[1][i])).abs() < 1e-15);
    }
    assert!(matches!(p.activate_expert(&mut rng), Err(Error::Capacity(_))));
}

#[test]
fn mlp_and_single_subset_pnn_reduce_to_one_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = PolicyState::new(small(Variant::Mlp), 5, 3, &mut rng).unwrap();
    let x = random_input(&mut rng, 5);
    assert_eq!(p.compose_mean(&x, 0).unwrap(), p.experts[0].net.predict(&x).unwrap());
    assert!(p.gating.is_empty() && p.moe_gate.is_none());
    assert_eq!(p.adapter_loss(1.0, None), 0.0);

    let mut cfg = small(Variant::ManualPnn);
    cfg.max_experts = 1;
    let mut pnn = PolicyState::new(cfg, 5, 3, &mut rng).unwrap();
    assert_eq!(pnn.partition_by_separation(&[0.7, 1.6, 0.75]).unwrap(), vec![0, 0, 0]);
    assert_eq!(pnn.compose_mean(&x, 0).unwrap(), pnn.experts[0].net.predict(&x).unwrap());
    assert!(p.clone().partition_by_separation(&[1.0]).is_err());
}

#[test]
fn manual_pnn_partitions_and_switches() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut p = PolicyState::new(small(Variant::ManualPnn), 5, 3, &mut rng).unwrap();
    let subsets = p.partition_by_separation(&[0.75, 0.75, 1.6, 0.7, 0.75]).unwrap();
    assert_eq!(subsets[2], 0);
    assert_eq!(subsets[3], 2);
    p.activate_expert(&mut rng).unwrap();
    let x = random_input(&mut rng, 5);
    let fresh = p.expert_forward(0, &x, &[]).unwrap();
    assert_eq!(p.compose_mean(&x, 0).unwrap(), fresh.output);
    let m1 = p.compose_mean(&x, 1).unwrap();
    assert_eq!(p.compose_mean(&x, 2).unwrap(), m1);
    assert_ne!(m1, fresh.output);
}

/// Scalar probe `c·mean + d·log_std + e·V` with its analytic gradient.
fn probe(p: &PolicyState, x: &[f64], subset: usize, c: &[f64], d: &[f64], e: f64) -> f64 {
    let fwd = p.forward(x, subset).unwrap();
    let ls = p.action_log_std(&fwd);
    crate::nn::dot(c, &fwd.mean) + crate::nn::dot(d, ls) + e * p.value(x).unwrap()
}

fn check_probe_gradient(mut p: PolicyState, subset: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_input(&mut rng, p.input_dim);
    let c = random_input(&mut rng, p.action_dim);
    let d = random_input(&mut rng, p.action_dim);
    let e = 0.7;
    let ids = p.trainable_blocks();
    let mut g = p.zero_grad(&ids).unwrap();
    let fwd = p.forward(&x, subset).unwrap();
    p.backward_action(&fwd, &c, &d, &mut g).unwrap();
    p.backward_value(&x, e, &mut g).unwrap();
    let h = 1e-6;
    for id in ids {
        for i in 0..p.block(id).unwrap().len() {
            let orig = p.block(id).unwrap()[i];
            p.blocks_mut(&[id]).unwrap()[0][i] = orig + h;
            let up = probe(&p, &x, subset, &c, &d, e);
            p.blocks_mut(&[id]).unwrap()[0][i] = orig - h;
            let down = probe(&p, &x, subset, &c, &d, e);
            p.blocks_mut(&[id]).unwrap()[0][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.get(id).unwrap()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{id}[{i}]: analytic {an}, numeric {fd}");
        }
    }
}

#[test]
fn progressive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    scramble(&mut p, &mut rng);
    check_probe_gradient(p, 0, 14);
}

#[test]
fn baseline_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut moe = PolicyState::new(small(Variant::SoftMoe), 5, 3, &mut rng).unwrap();
    scramble(&mut moe, &mut rng);
    check_probe_gradient(moe, 0, 16);

    let mut pnn = PolicyState::new(small(Variant::ManualPnn), 5, 3, &mut rng).unwrap();
    pnn.activate_expert(&mut rng).unwrap();
    scramble(&mut pnn, &mut rng);
    check_probe_gradient(pnn, 1, 17);

    let mut mlp = PolicyState::new(small(Variant::Mlp), 5, 3, &mut rng).unwrap();
    scramble(&mut mlp, &mut rng);
    check_probe_gradient(mlp, 0, 18);
}

#[test]
fn adapter_loss_values_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    assert_eq!(p.adapter_loss(1.0, None), 0.0);
    p.activate_expert(&mut rng).unwrap();
    scramble(&mut p, &mut rng);
    let ids = p.trainable_blocks();
    let mut g = p.zero_grad(&ids).unwrap();
    p.adapter_loss(1.0, Some(&mut g));
    let h = 1e-6;
    for id in ids.iter().filter(|id| matches!(id, BlockId::Adapter(..) | BlockId::ExpertWeights(..))) {
        for i in 0..p.block(*id).unwrap().len() {
            let orig = p.block(*id).unwrap()[i];
            p.blocks_mut(&[*id]).unwrap()[0][i] = orig + h;
            let up = p.adapter_loss(1.0, None);
            p.blocks_mut(&[*id]).unwrap()[0][i] = orig - h;
            let down = p.adapter_loss(1.0, None);
            p.blocks_mut(&[*id]).unwrap()[0][i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.get(*id).unwrap()[i]).abs() < 1e-6, "{id}");
        }
    }

    for bank in &mut p.adapters[1] {
        for a in bank {
            a.weights.iter_mut().for_each(|w| *w = 0.0);
        }
    }
    assert!((p.adapter_loss(1.0, None) - 13.815511).abs() < 1e-6);
}

#[test]
fn block_names_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
    p.activate_expert(&mut rng).unwrap();
    for id in p.all_blocks() {
        assert_eq!(id.to_string().parse::<BlockId>().unwrap(), id);
    }
    assert!("expert.x.0.w".parse::<BlockId>().is_err());
    assert!(p.blocks_mut(&[BlockId::CriticBias(0), BlockId::CriticBias(0)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routing_matches_brute_force(conf in prop::collection::vec(0.0..1.0f64, 1..40), beta in 0.001..1.0f64) {
        let d = select_routed(&conf, beta).unwrap();
        let n = routed_count(beta, conf.len());
        let mut pairs: Vec<(f64, usize)> = conf.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut expected: Vec<usize> = pairs[..n].iter().map(|p| p.1).collect();
        expected.sort_unstable();
        prop_assert_eq!(d.selected, expected);
        prop_assert_eq!(n, ((beta * conf.len() as f64) - 1e-9).ceil().max(1.0) as usize);
    }

    #[test]
    fn composition_is_the_sum_of_expert_outputs(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyState::new(small(Variant::Progressive), 5, 3, &mut rng).unwrap();
        p.activate_expert(&mut rng).unwrap();
        p.activate_expert(&mut rng).unwrap();
        scramble(&mut p, &mut rng);
        let x = random_input(&mut rng, 5);
        let mut passes = Vec::new();
        let mut sum = vec![0.0; 3];
        for k in 0..3 {
            let pass = p.expert_forward(k, &x, &passes).unwrap();
            for i in 0..3 { sum[i] += pass.output[i]; }
            passes.push(pass);
        }
        let m = p.compose_mean(&x, 0).unwrap();
        for i in 0..3 { prop_assert!((m[i] - sum[i]).abs() < 1e-12); }
        for c in p.gating_confidence(&x).unwrap() {
            prop_assert!(c > 0.0 && c < 1.0);
        }
    }
}
