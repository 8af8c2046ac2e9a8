//! Statistical checks of the Langevin sampler against closed forms.

mod common;

use common::{checkpoint_resume, finite_difference_check, no_data_second_moments, ou_variance};
use nalgebra::{DMatrix, DVector};
use nnsp_core::kernels::{Activation, NetworkSpec};
use nnsp_core::langevin::*;
use nnsp_core::rng::stream_rng;
use proptest::prelude::*;

#[test]
fn ou_stationary_variance() {
    let (var, want, se) = ou_variance();
    assert!((var - want).abs() < 4.0 * se, "variance {var} vs {want} (se {se})");
}

#[test]
fn free_diffusion_increments() {
    let (t, dt) = (0.7, 0.01);
    let mut rng = stream_rng(22, 0);
    let mut w = [0.0];
    let mut inc = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let before = w[0];
        langevin_update(&mut w, &[0.0], 0.0, dt, t, &mut rng);
        inc.push(w[0] - before);
    }
    let n = inc.len() as f64;
    let var = inc.iter().map(|d| d * d).sum::<f64>() / n;
    let want = 2.0 * t * dt;
    let se = want * (2.0 / n).sqrt();
    assert!((var - want).abs() < 4.0 * se, "increment variance {var} vs {want}");
}

#[test]
fn zero_temperature_converges_to_ridge() {
    let x = DMatrix::from_row_slice(5, 3, &[
        1.0, 0.2, -0.5, //
        0.3, -1.1, 0.8, //
        -0.7, 0.4, 0.1, //
        0.9, 0.9, -0.3, //
        -0.2, -0.6, 1.2,
    ]);
    let y = DVector::from_row_slice(&[0.5, -0.3, 0.8, 0.1, -0.9]);
    let gamma = 0.4;
    let mut w = vec![0.0; 3];
    let mut rng = stream_rng(0, 0);
    for _ in 0..20_000 {
        let wv = DVector::from_row_slice(&w);
        let g = (x.transpose() * (&x * &wv - &y)) * 2.0;
        langevin_update(&mut w, g.as_slice(), gamma, 0.01, 0.0, &mut rng);
    }
    // Stationarity of the update: γw + 2Xᵀ(Xw − y) = 0.
    let a = x.transpose() * &x * 2.0 + DMatrix::identity(3, 3) * gamma;
    let ridge = a.lu().solve(&(x.transpose() * &y * 2.0)).unwrap();
    let probe = DVector::from_row_slice(&[0.3, -0.2, 0.9]);
    let got = probe.dot(&DVector::from_row_slice(&w));
    assert!((got - probe.dot(&ridge)).abs() < 1e-10, "{got} vs {}", probe.dot(&ridge));
}

#[test]
fn no_data_weights_follow_the_prior() {
    for scaling in [StepScaling::Uniform, StepScaling::Preconditioned] {
        let (got, want) = no_data_second_moments(scaling, 5);
        for ((m, se), v) in got.iter().zip(&want) {
            assert!((m - v).abs() < 4.0 * se, "{scaling:?}: ⟨w²⟩ = {m} vs T/γ = {v} (se {se})");
        }
    }
}

#[test]
fn hyperparameter_map_round_trip() {
    let spec = NetworkSpec {
        depth: 2,
        activation: Activation::Relu,
        weight_var: vec![1.5, 2.0],
        readout_var: 0.7,
        bias_var: vec![0.0; 3],
    };
    let p = TrainProtocol::for_posterior(&spec, 10, &[64, 32], 0.15, 1e-3).unwrap();
    let post = p.posterior();
    assert!((post.noise - 0.15).abs() < 1e-15);
    let want = [1.5 / 10.0, 2.0 / 64.0, 0.7 / 32.0];
    for (a, b) in post.weight_vars.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let back = TrainProtocol::from_posterior(&post, p.dt).unwrap();
    assert_eq!(back.temperature, p.temperature);
    for (a, b) in back.gamma.iter().zip(&p.gamma) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
}

#[test]
fn identical_seeds_give_identical_averages() {
    let spec = NetworkSpec::two_layer(Activation::Relu, 1.0, 1.0);
    let p = TrainProtocol::for_posterior(&spec, 3, &[10], 0.1, 1e-3).unwrap().with_epochs(500, 100, 5).with_seeds(vec![7, 7]);
    let x = DMatrix::from_fn(3, 6, |i, j| ((i + 1) as f64 * (j as f64 + 0.5)).sin());
    let y = DMatrix::from_fn(1, 6, |_, j| j as f64 * 0.2 - 0.5);
    let data = TrainData::new(x.clone(), y).unwrap();
    let run = run_chains(&p, &data, &x, |s| prior_init(&[3, 10, 1], Activation::Relu, &p, s)).unwrap();
    assert_eq!(run.chains[0].means, run.chains[1].means);
    assert_eq!(run.mean, run.chains[0].means);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..10_000, a in 0usize..3) {
        let r = finite_difference_check(a, seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn checkpoint_resume_is_bit_exact(seed in 0u64..1_000, split in 1u64..200) {
        let r = checkpoint_resume(seed, split);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}
