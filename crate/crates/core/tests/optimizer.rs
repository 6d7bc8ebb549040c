//! Optimizer oracles: hand-computed momentum sequences, quadratic descent
//! and the step-decay closed form.

use amf::autodiff::Tensor;
use amf::nn::ParamStore;
use amf::optim::{sgd_step, LayerScale, OptimizerState, ParamGroup, ScheduleSpec};
use proptest::prelude::*;

fn group(lr: f64, momentum: f64, members: &[&str]) -> ParamGroup {
    ParamGroup {
        name: "all".into(),
        members: members.iter().map(|s| s.to_string()).collect(),
        schedule: ScheduleSpec::constant(lr),
        momentum,
        layer_scale: Vec::new(),
    }
}

fn store(name: &str, values: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert(name, Tensor::from_f64s(&[values.len()], values).unwrap())
        .unwrap();
    s
}

#[test]
fn heavy_ball_constant_gradient_ten_steps() {
    // v_t = 0.9 v_{t-1} + 1, p_t = p_{t-1} - 0.1 v_t from v_0 = p_0 = 0,
    // worked out with exact fractions.
    let expected_v = [
        1.0,
        1.9,
        2.71,
        3.439,
        4.0951,
        4.68559,
        5.217031,
        5.6953279,
        6.12579511,
        6.513215599,
    ];
    let expected_p = [
        -0.1,
        -0.29,
        -0.561,
        -0.9049,
        -1.31441,
        -1.782969,
        -2.3046721,
        -2.87420489,
        -3.486784401,
        -4.1381059609,
    ];
    let mut params = store("w", &[0.0]);
    let grads = store("w", &[1.0]);
    let mut state = OptimizerState::new(&params);
    let groups = [group(0.1, 0.9, &["w"])];
    let (mut v, mut p) = (0.0f64, 0.0f64);
    for t in 0..10 {
        sgd_step(&mut params, &grads, &mut state, &groups).unwrap();
        v = 0.9 * v + 1.0;
        p -= 0.1 * v;
        let got_v = state.velocity("w").unwrap().data()[0];
        let got_p = params.require("w").unwrap().data()[0];
        assert_eq!(got_v.to_bits(), v.to_bits(), "velocity at step {}", t + 1);
        assert_eq!(got_p.to_bits(), p.to_bits(), "parameter at step {}", t + 1);
        assert!((got_v - expected_v[t]).abs() < 1e-12);
        assert!((got_p - expected_p[t]).abs() < 1e-12);
    }
}

#[test]
fn quadratic_descent_follows_geometric_decay() {
    // f(w) = w² / 2, lr 0.1, no momentum: w_t = 0.9^t.
    let mut params = store("w", &[1.0]);
    let mut state = OptimizerState::new(&params);
    let groups = [group(0.1, 0.0, &["w"])];
    for t in 1..=100 {
        let grads = store("w", params.require("w").unwrap().data());
        sgd_step(&mut params, &grads, &mut state, &groups).unwrap();
        let w = params.require("w").unwrap().data()[0];
        assert!((w - 0.9f64.powi(t)).abs() < 1e-6, "t = {t}: {w}");
    }
}

#[test]
fn step_decay_example() {
    let s = ScheduleSpec::new(0.03, 0.9, 20);
    assert_eq!(s.lr_at_epoch(0), 0.03);
    assert_eq!(s.lr_at_epoch(19), 0.03);
    assert!((s.lr_at_epoch(20) - 0.027).abs() < 1e-15);
    assert!((s.lr_at_epoch(45) - 0.03 * 0.81).abs() < 1e-15);
}

#[test]
fn layer_scale_multiplies_group_rate() {
    let mut g = group(0.03, 0.9, &["branch1.conv1.weight", "branch1.head.weight"]);
    g.layer_scale.push(LayerScale {
        prefix: "branch1.conv1.".into(),
        factor: 0.4,
    });
    assert!((g.effective_lr("branch1.conv1.weight", 0) - 0.012).abs() < 1e-15);
    assert_eq!(g.effective_lr("branch1.head.weight", 0), 0.03);
}

proptest! {
    #[test]
    fn schedule_matches_closed_form_and_never_increases(
        base in 1e-5f64..1.0,
        rate in 0.05f64..=1.0,
        period in 1usize..50,
        epoch in 0usize..500,
    ) {
        let s = ScheduleSpec::new(base, rate, period);
        let closed = base * rate.powi((epoch / period) as i32);
        prop_assert!((s.lr_at_epoch(epoch) - closed).abs() <= 1e-15 * closed.max(1e-300));
        prop_assert!(s.lr_at_epoch(epoch + 1) <= s.lr_at_epoch(epoch));
    }

    #[test]
    fn plain_step_is_p_minus_lr_g(
        p in prop::collection::vec(-10.0f64..10.0, 1..8),
        seed in any::<u64>(),
        lr in 0.0f64..1.0,
    ) {
        let g: Vec<f64> = p.iter().enumerate()
            .map(|(i, _)| ((seed.rotate_left(i as u32) % 2001) as f64 - 1000.0) / 100.0)
            .collect();
        let mut params = store("w", &p);
        let grads = store("w", &g);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &grads, &mut state, &[group(lr, 0.0, &["w"])]).unwrap();
        let got = params.require("w").unwrap().data().to_vec();
        for i in 0..p.len() {
            prop_assert_eq!(got[i], p[i] - lr * g[i]);
        }
        if lr == 0.0 {
            prop_assert_eq!(got, p);
        }
    }
}
