use neurodram::autodiff::{BnMode, Graph, Tensor};
use neurodram::model::*;
use neurodram::volume::{generate_case, LabeledCase, SyntheticConfig, Volume3D, ENCODED_DIM};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        glimpse_side: 8,
        steps: 3,
        hidden: 6,
        trunk: TrunkSpec { channels: vec![2, 3], kernel: 3, pools: vec![2, 2] },
        ..ModelConfig::default()
    }
}

fn tiny_cases(n: u64) -> Vec<LabeledCase> {
    let cfg = SyntheticConfig {
        volume_side: 16,
        glimpse_side: 8,
        pool_stages: 2,
        signal_center: [0.3, -0.3, 0.3],
        ..SyntheticConfig::default()
    };
    (0..n).map(|s| generate_case(&cfg, (s % 2) as u8, s)).collect()
}

fn set(m: &mut NeuroDram, name: &str, value: f64) {
    let t = m.params.value_mut(name).unwrap();
    let shape = t.shape().to_vec();
    *t = Tensor::new(shape.clone(), vec![value; shape.iter().product()]).unwrap();
}

fn glimpse_out(m: &NeuroDram, pixels: Vec<f64>, loc: [f64; 3]) -> Vec<f64> {
    let s = m.config.glimpse_side;
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, s, s, s], pixels).unwrap());
    let l = g.constant(Tensor::new(vec![1, 3], loc.to_vec()).unwrap());
    let mut stats = m.bn_stats.clone();
    let out = m.glimpse_network(&mut g, x, l, &mut stats, BnMode::Infer).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn glimpse_product_with_unit_where_path_is_the_what_path() {
    let mut m = NeuroDram::new(tiny(), 1).unwrap();
    let px: Vec<f64> = (0..512).map(|i| (i % 7) as f64 / 7.0).collect();
    set(&mut m, "glimpse.where.weight", 0.0);
    set(&mut m, "glimpse.where.bias", 1.0);
    let a = glimpse_out(&m, px.clone(), [0.3, -0.2, 0.9]);
    let b = glimpse_out(&m, px.clone(), [-1.0, 1.0, 0.0]);
    assert_eq!(a, b, "location must not matter when the where path is constant");
    set(&mut m, "glimpse.where.bias", 2.0);
    let c = glimpse_out(&m, px, [0.0; 3]);
    for (x, y) in a.iter().zip(&c) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn zero_glimpse_and_zero_what_bias_annihilate() {
    let mut m = NeuroDram::new(tiny(), 2).unwrap();
    set(&mut m, "glimpse.what.bias", 0.0);
    for loc in [[0.0; 3], [0.7, -0.4, 1.0]] {
        assert!(glimpse_out(&m, vec![0.0; 512], loc).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn context_network_bounds_and_zero() {
    let mut m = NeuroDram::new(tiny(), 3).unwrap();
    let mut g = Graph::new();
    let big = g.constant(
        Tensor::new(vec![2, ENCODED_DIM], (0..2 * ENCODED_DIM).map(|i| (i as f64 - 30.0) * 50.0).collect()).unwrap(),
    );
    let r = m.context_network(&mut g, big).unwrap();
    assert!(g.value(r).data().iter().all(|v| v.abs() <= 1.0));
    set(&mut m, "context.bias", 0.0);
    let mut g = Graph::new();
    let zero = g.constant(Tensor::zeros(&[1, ENCODED_DIM]));
    let r = m.context_network(&mut g, zero).unwrap();
    assert!(g.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn recurrent_step_zero_weights_and_horizon() {
    let mut m = NeuroDram::new(tiny(), 4).unwrap();
    for p in ["core.lstm1", "core.lstm2"] {
        for w in ["w_ih", "w_hh", "bias"] {
            set(&mut m, &format!("{p}.{w}"), 0.0);
        }
    }
    set(&mut m, "context.bias", 0.0);
    let mut g = Graph::new();
    let ctx = g.constant(Tensor::zeros(&[1, ENCODED_DIM]));
    let mut s = m.initial_state(&mut g, ctx).unwrap();
    let gt = g.constant(Tensor::new(vec![1, 6], vec![0.5; 6]).unwrap());
    for _ in 0..m.config.steps {
        s = m.recurrent_step(&mut g, gt, s).unwrap();
        for v in [s.r1, s.c1, s.r2, s.c2] {
            assert!(g.value(v).data().iter().all(|&x| x == 0.0));
        }
    }
    assert_eq!(s.t, m.config.steps);
}

#[test]
fn second_lstm_output_does_not_reach_first_lstm_or_glimpse_weights() {
    let m = NeuroDram::new(tiny(), 5).unwrap();
    let cases = tiny_cases(2);
    let refs: Vec<&LabeledCase> = cases.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut roll = m.rollout(&refs, RolloutMode::Train, &mut rng).unwrap();
    let g = &mut roll.graph;
    let loss = g.sum(roll.state.r2);
    let reach = g.reachable_params(loss);
    assert!(reach.iter().all(|n| !n.starts_with("core.lstm1.") && !n.starts_with("glimpse.")), "{reach:?}");
    let grads = g.backward(loss).unwrap();
    for (name, t) in grads.iter() {
        if name.starts_with("core.lstm1.") || name.starts_with("glimpse.") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn gaussian_log_prob_reference_value() {
    let mut g = Graph::new();
    let mu = g.input(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
    let lp = g.gaussian_log_prob(mu, &Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap(), 1.0).unwrap();
    let expected = -0.5 - 1.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((g.value(lp).data()[0] - expected).abs() < 1e-12);
    assert!((expected + 3.25681).abs() < 1e-5);
}

#[test]
fn sampler_mean_matches_mu() {
    let mut m = NeuroDram::new(tiny(), 6).unwrap();
    set(&mut m, "location.weight", 0.0);
    let target = [0.4, -0.2, 0.05];
    m.params.value_mut("location.bias").unwrap().data_mut().copy_from_slice(&target.map(f64::atanh));
    let n = 100_000;
    let mut g = Graph::new();
    let r2 = g.constant(Tensor::zeros(&[n, 6]));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = m.location_network(&mut g, r2, true, &mut rng).unwrap();
    let sigma = m.config.sigma;
    for k in 0..3 {
        assert!((d.decisions[0].mu[k] - target[k]).abs() < 1e-12);
        let mean = d.decisions.iter().map(|x| x.l[k]).sum::<f64>() / n as f64;
        assert!((mean - target[k]).abs() < 4.0 * sigma / (n as f64).sqrt(), "axis {k}: {mean}");
    }
}

#[test]
fn deterministic_location_is_mu_with_zero_log_prob() {
    let m = NeuroDram::new(tiny(), 7).unwrap();
    let mut g = Graph::new();
    let r2 = g.constant(Tensor::new(vec![2, 6], (0..12).map(|i| i as f64 / 12.0).collect()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = m.location_network(&mut g, r2, false, &mut rng).unwrap();
    assert!(d.log_prob.is_none());
    for x in &d.decisions {
        assert_eq!(x.l, x.mu);
        assert_eq!(x.log_prob, 0.0);
        assert!(x.mu.iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn classifier_zero_weights_gives_one_half() {
    let mut m = NeuroDram::new(tiny(), 8).unwrap();
    set(&mut m, "classifier.weight", 0.0);
    set(&mut m, "classifier.bias", 0.0);
    let cases = tiny_cases(2);
    let e = m.run_episode(&cases[0], RolloutMode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(e.prediction, 0.5);
    set(&mut m, "classifier.bias", 1.0);
    let e2 = m.run_episode(&cases[0], RolloutMode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(e2.prediction > e.prediction && e2.prediction < 1.0);
}

#[test]
fn classifier_refuses_an_unfinished_episode() {
    let m = NeuroDram::new(tiny(), 8).unwrap();
    let mut g = Graph::new();
    let ctx = g.constant(Tensor::zeros(&[1, ENCODED_DIM]));
    let s = m.initial_state(&mut g, ctx).unwrap();
    assert!(m.classification_network(&mut g, s).is_err());
}

#[test]
fn episodes_have_the_fixed_horizon_and_repeat_in_eval() {
    let m = NeuroDram::new(ModelConfig { steps: 6, ..tiny() }, 9).unwrap();
    let cases = tiny_cases(2);
    let a = m.run_episode(&cases[1], RolloutMode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.run_episode(&cases[1], RolloutMode::Eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a.decisions.len(), 6);
    assert_eq!(a.glimpses.len(), 6);
    assert_eq!(a, b);
    assert!(a.reward == 0.0 || a.reward == 1.0);
    let sampled = m.run_episode(&cases[1], RolloutMode::EvalSampled, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_ne!(sampled.decisions[0].l, a.decisions[0].l);
    assert!(m.run_episode(&cases[1], RolloutMode::Train, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn first_location_depends_on_context() {
    let m = NeuroDram::new(tiny(), 10).unwrap();
    let cases = tiny_cases(4);
    let mut other = cases[0].clone();
    other.context = cases[3].context.clone();
    assert_ne!(other.context, cases[0].context);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = m.run_episode(&cases[0], RolloutMode::Eval, &mut rng).unwrap();
    let b = m.run_episode(&other, RolloutMode::Eval, &mut rng).unwrap();
    assert_ne!(a.decisions[0].mu, b.decisions[0].mu);
}

#[test]
fn parameter_groups_follow_the_prefixes() {
    let m = NeuroDram::new(tiny(), 11).unwrap();
    for (name, p) in m.params.iter() {
        let sup = supervised_prefixes().iter().any(|pre| name.starts_with(pre));
        let rl = reinforcement_prefixes().iter().any(|pre| name.starts_with(pre));
        assert!(sup ^ rl, "{name}");
        assert_eq!(p.group == neurodram::autodiff::Group::Supervised, sup, "{name}");
    }
}

fn small_baseline() -> BaselineConfig {
    BaselineConfig {
        volume_side: 16,
        trunk: TrunkSpec { channels: vec![2, 3], kernel: 3, pools: vec![2, 2] },
        fc_hidden: 5,
        dropout: 0.4,
    }
}

#[test]
fn baseline_outputs_probabilities_and_zero_head_is_one_half() {
    let mut m = BaselineCnn::new(small_baseline(), 1).unwrap();
    let cases = tiny_cases(3);
    let p = m.predict(&cases, 2).unwrap();
    assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    for n in ["cnn.fc2.weight", "cnn.fc2.bias"] {
        let t = m.params.value_mut(n).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(m.predict(&cases, 2).unwrap().iter().all(|&x| x == 0.5));
}

#[test]
fn baseline_rejects_wrong_volume_size() {
    let m = BaselineCnn::new(small_baseline(), 1).unwrap();
    let mut c = tiny_cases(1).remove(0);
    c.volume = Volume3D::filled([8, 8, 8], 0.0);
    assert!(m.predict(&[c], 1).is_err());
}

#[test]
fn paper_scale_baseline_is_larger_than_the_glimpse_trunk() {
    let base = BaselineConfig::paper_scale().parameter_count().unwrap();
    let glimpse = ModelConfig::paper_scale().trunk.parameter_count(1);
    assert!(base > glimpse, "{base} vs {glimpse}");
}

#[test]
fn checkpoint_round_trips_both_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let mut dram = NeuroDram::new(tiny(), 12).unwrap();
    dram.bn_stats[0].mean[1] = 0.123_456_789_012_345_6;
    let meta = serde_json::json!({"best_epoch": 3});
    let ck = Checkpoint { model: Model::NeuroDram(dram), meta };
    let path = dir.path().join("a.ndck");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let ck = Checkpoint {
        model: Model::Baseline(BaselineCnn::new(small_baseline(), 3).unwrap()),
        meta: serde_json::Value::Null,
    };
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ck = Checkpoint { model: Model::NeuroDram(NeuroDram::new(tiny(), 12).unwrap()), meta: serde_json::Value::Null };
    let bytes = ck.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}
