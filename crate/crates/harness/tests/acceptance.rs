//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs the quick presets end to end, so expect tens of minutes on
//! a single core.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use nalgebra::DVector;
use nnsp_core::cumulants::{
    build_cumulant_slices, relu_mu4_series, CumulantModel, PointCumulant, SeriesTruncation, SliceMode,
};
use nnsp_core::equivalent_kernel::{ek_fwc_mean, EkFwcNodes, EkPredictor, NodeDiscrepancy, SphereMeasure};
use nnsp_core::gp_inference::{fwc_mean, fwc_variance, gp_posterior, u_tilde_star, u_tilde_star_star, TrainSolve};
use nnsp_core::kernels::{linear_kernel, Activation, InputSet, KernelMatrix, NetworkSpec};
use nnsp_core::langevin::StepScaling;
use nnsp_core::rng::{derive_seed, stream_rng};
use nnsp_harness::config::{ExperimentConfig, Preset};
use nnsp_harness::ek_check::{averaged_gp, ek_dataset, relative_rmse, spectral_model};
use nnsp_harness::ergodicity::{broken_ergodicity_example, check_matrix, run_ergodicity};
use nnsp_harness::n_sweep::run_n_sweep;
use nnsp_harness::width_sweep::run_width_sweep;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

type Outcome = (bool, String);

fn quick() -> ExperimentConfig {
    ExperimentConfig::preset(Preset::Quick)
}

fn cumulant_oracles() -> Outcome {
    let model = CumulantModel::analytic(Activation::Quadratic, 0.7);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let l = random_psd(1000 + seed);
        let want = quadratic_u_oracle(&l, 0.7);
        worst = worst.max((model.u_block(&l).unwrap() - want).abs() / want.abs());
    }
    let trunc = SeriesTruncation::default();
    let mut max_z: f64 = 0.0;
    for seed in 0..50 {
        let l = weakly_correlated(2000 + seed, 0.2);
        let series = relu_mu4_series(&l, &trunc).unwrap();
        let (mc, se) = relu_mc(&l, 10_000_000, 3000 + seed);
        max_z = max_z.max((series - mc).abs() / se);
    }
    (
        worst < 1e-10 && max_z < 4.0,
        format!("quadratic max rel err {worst:.1e} over 100 blocks; ReLU max |z| {max_z:.2} over 50 blocks"),
    )
}

fn inference_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 1..=6usize {
        let mut rng = stream_rng(40 + n as u64, 9);
        let x = InputSet::sample_sphere(n + 2, 3, &mut rng);
        let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 1.0);
        let kall = spec.kernel_matrix(&x);
        let tr: Vec<usize> = (0..n).collect();
        let ktrain = KernelMatrix::new(kall.block(&tr, &tr)).unwrap();
        let kstar = kall.block(&tr, &[n, n + 1]);
        let kss = [kall.get(n, n), kall.get(n + 1, n + 1)];
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let l = linear_kernel(&x, 1.0);
        let src =
            build_cumulant_slices(&l, n, &CumulantModel::analytic(Activation::Quadratic, 1.0), SliceMode::Materialized, 150)
                .unwrap();
        let solve = TrainSolve::new(&ktrain, &y, 0.3).unwrap();
        let gp = gp_posterior(&solve, &kstar, &kss).unwrap();
        for t in 0..2 {
            let ks = kstar.column(t).into_owned();
            let o = Naive::from_source(&src, t).eval(ktrain.values(), &y, 0.3, &ks, kss[t]);
            let m = fwc_mean(&u_tilde_star(&src, &solve, &ks, t), &solve);
            let (_, var) = fwc_variance(&u_tilde_star_star(&src, &solve, &ks, t), &solve, gp.mean[t], m);
            let scale = o[2].abs().max(o[4].abs()).max(1e-300);
            worst = worst.max((m - o[2]).abs() / scale).max((var - o[4]).abs() / scale);
        }
    }
    let mut rng = stream_rng(77, 0);
    let (n, m) = (40, 6);
    let x = InputSet::sample_sphere(n + m, 6, &mut rng);
    let spec = NetworkSpec::two_layer(Activation::Relu, 1.0, 1.0);
    let kall = spec.kernel_matrix(&x);
    let tr: Vec<usize> = (0..n).collect();
    let te: Vec<usize> = (n..n + m).collect();
    let ktrain = KernelMatrix::new(kall.block(&tr, &tr)).unwrap();
    let kstar = kall.block(&tr, &te);
    let kss: Vec<f64> = te.iter().map(|&i| kall.get(i, i)).collect();
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let gp = gp_posterior(&TrainSolve::new(&ktrain, &y, 0.05).unwrap(), &kstar, &kss).unwrap();
    let mut gp_worst: f64 = 0.0;
    for t in 0..m {
        let (mean, var) = dense_gp(ktrain.values(), &y, 0.05, &kstar.column(t).into_owned(), kss[t]);
        gp_worst = gp_worst.max((gp.mean[t] - mean).abs() / mean.abs().max(1e-12)).max((gp.var[t] - var).abs() / kss[t]);
    }
    (
        worst < 1e-10 && gp_worst < 1e-10,
        format!("corrections max rel err {worst:.1e} (n = 1..6); GP vs dense solve {gp_worst:.1e}"),
    )
}

fn width_sweep() -> Outcome {
    let cfg = quick();
    let r = run_width_sweep(&cfg).expect("width sweep");
    let Some(fit) = r.gp_fit.as_ref() else {
        return (false, "no GP slope could be fitted".into());
    };
    let gain = r.fwc_gain().unwrap_or(f64::NAN);
    let widths: Vec<String> = r.rows.iter().map(|w| format!("{}:{:.2e}/{:.2e}", w.width, w.gp_dnn, w.fwc_dnn)).collect();
    (
        (fit.slope + 2.0).abs() <= 0.4 && gain >= 5.0,
        format!(
            "GP–DNN slope {:.2} ± {:.2} over N ∈ [{}, {}]; GP/FWC MSE ratio at largest width {gain:.1}; gp/fwc by width {}",
            fit.slope,
            fit.boot_se,
            fit.x_lo,
            fit.x_hi,
            widths.join(" ")
        ),
    )
}

fn ergodicity() -> Outcome {
    let report = run_ergodicity(&quick()).expect("ergodicity run");
    let slope = report.fit.slope();
    let broken = check_matrix(&broken_ergodicity_example(32, 4096, 0.5, 3), 16, 32).expect("synthetic check");
    (
        (slope + 1.0).abs() <= 0.15 && broken.slope() > -0.5,
        format!("trained-net slope {slope:.3}; frozen-offset counterexample slope {:.3}", broken.slope()),
    )
}

fn n_sweep() -> Outcome {
    let r = run_n_sweep(&quick()).expect("n sweep");
    let mut ok = true;
    let mut parts = Vec::new();
    for c in &r.curves {
        let (Some(f), Some(g)) = (c.fwc_fit.as_ref(), c.gp_fit.as_ref()) else {
            ok = false;
            parts.push(format!("σ² = {}: no fit", c.noise));
            continue;
        };
        ok &= (f.slope + 1.0).abs() <= 0.3 && (g.slope + 1.0).abs() <= 0.3;
        parts.push(format!("σ² = {}: |f̄_U| slope {:.2}, GP discrepancy slope {:.2}", c.noise, f.slope, g.slope));
    }
    (ok, parts.join("; "))
}

fn equivalent_kernel() -> Outcome {
    let cfg = quick();
    let ek_cfg = &cfg.ek;
    let noise = cfg.train.noise;
    let seed = derive_seed(cfg.seed, 0xACCE);
    let ds = ek_dataset(&cfg);
    let g = |x: &[f64]| ds.target(x);
    let model = spectral_model(&cfg, seed).expect("spectrum");
    let ek = EkPredictor::new(&model, &g, ek_cfg.n as f64, noise);
    let ek_mean: Vec<f64> = ds.test.rows().iter().map(|x| ek.mean(x)).collect();
    let spec = cfg.network.spec();
    let (avg, _) = averaged_gp(&spec, &g, &ds.test, ek_cfg.n, noise, ek_cfg.draws, derive_seed(seed, 1)).expect("GP draws");
    let rel = relative_rmse(&ek_mean, &avg);

    let u = PointCumulant::new(spec, CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var));
    let nodes = EkFwcNodes::prepare(&model, &u, &SphereMeasure { d: ek_cfg.d }, 512, seed);
    let x = &ds.test.rows()[0];
    let corr = |nodes: &EkFwcNodes, c: f64, alpha: f64| {
        let ga = |x: &[f64]| alpha * g(x);
        let p = EkPredictor::new(&model, &ga, 128.0, noise);
        let h = NodeDiscrepancy::new(nodes, &p, &ga);
        ek_fwc_mean(nodes, &p, &h, &u, c, x)
    };
    let base = corr(&nodes, 1.0, 1.0);
    let lin_err = [0.5, 2.0, -3.0]
        .iter()
        .map(|&c| (corr(&nodes.scaled(c), c, 1.0) - c * base).abs() / (c * base).abs())
        .fold(0.0, f64::max);
    let f2 = corr(&nodes, 1.0, 2.0);
    let a = (f2 - 2.0 * base) / 6.0;
    let b = base - a;
    let want = 27.0 * a + 3.0 * b;
    let cubic_err = (corr(&nodes, 1.0, 3.0) - want).abs() / want.abs();
    (
        rel < 0.05 && lin_err < 1e-8 && cubic_err < 1e-8,
        format!(
            "EK vs averaged GP rel RMSE {rel:.2e} (n = {}, {} draws); linearity in U {lin_err:.1e}; cubic+linear in g {cubic_err:.1e}",
            ek_cfg.n, ek_cfg.draws
        ),
    )
}

fn sampler_physics() -> Outcome {
    let (var, want, se) = ou_variance();
    let ou_z = (var - want).abs() / se;
    let mut worst_z: f64 = 0.0;
    for scaling in [StepScaling::Uniform, StepScaling::Preconditioned] {
        let (got, prior) = no_data_second_moments(scaling, 5);
        for ((m, se), v) in got.iter().zip(&prior) {
            worst_z = worst_z.max((m - v).abs() / se);
        }
    }
    (ou_z < 4.0 && worst_z < 4.0, format!("OU variance |z| {ou_z:.2}; no-data ⟨w²⟩ vs T/γ max |z| {worst_z:.2}"))
}

fn run_property<S: Strategy>(name: &str, cases: u32, strategy: S, check: impl Fn(S::Value) -> Check) -> Option<String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, |v| check(v).map_err(TestCaseError::fail)).err().map(|e| format!("{name}: {e}"))
}

fn property_suites() -> Outcome {
    let failures: Vec<String> = [
        run_property("kernel symmetry/PSD", 64, (0u64..10_000, 0usize..3, 1usize..4, 2usize..30, 2usize..12), |(s, a, l, n, d)| {
            kernel_symmetric_psd(s, a, l, n, d)
        }),
        run_property("U symmetry and ς_a⁴ scaling", 64, (0u64..10_000, 1usize..3, 0.1f64..3.0, 0.2f64..5.0), |(s, a, v, c)| {
            cumulant_symmetric_and_scaling(s, a, v, c)
        }),
        run_property("prediction permutation invariance", 12, (0u64..10_000, 1usize..3, 2usize..7), |(s, a, n)| {
            predictions_permutation_invariant(s, a, n)
        }),
        run_property("gradient vs finite differences", 32, (0u64..10_000, 0usize..3), |(s, a)| finite_difference_check(a, s)),
        run_property("checkpoint determinism", 32, (0u64..1_000, 1u64..200), |(s, k)| checkpoint_resume(s, k)),
    ]
    .into_iter()
    .flatten()
    .collect();
    if failures.is_empty() {
        (true, "5 suites green".into())
    } else {
        (false, failures.join("; "))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("cumulant oracles", cumulant_oracles),
        ("inference oracles", inference_oracles),
        ("width sweep", width_sweep),
        ("ergodicity", ergodicity),
        ("large-n scaling", n_sweep),
        ("equivalent kernel", equivalent_kernel),
        ("sampler physics", sampler_physics),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!ok);
        println!(
            "{} {}. {name} ({:.0} s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
