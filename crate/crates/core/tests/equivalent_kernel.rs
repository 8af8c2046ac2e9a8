//! Equivalent Kernel against exact GP regression, and the algebraic
//! structure of its finite-width correction.

use nalgebra::DVector;
use nnsp_core::cumulants::{CumulantModel, PointCumulant};
use nnsp_core::equivalent_kernel::{build_spectrum, ek_fwc_mean, EkFwcNodes, EkPredictor, NodeDiscrepancy, SphereMeasure};
use nnsp_core::gp_inference::{gp_posterior, TrainSolve};
use nnsp_core::kernels::{Activation, InputSet, NetworkSpec};
use nnsp_core::rng::{derive_seed, stream_rng};

fn target(x: &[f64]) -> f64 {
    // Degree-two polynomial, inside the span of the quadratic kernel.
    (x[0] * x[1] + 0.5 * x[2] * x[2] - 0.5 * x[3] * x[3]) / 2.0
}

#[test]
fn ek_matches_gp_averaged_over_datasets() {
    let d = 4;
    let (n, draws, noise) = (256, 12, 0.2);
    let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 0.1);
    let model = build_spectrum(spec.clone(), &SphereMeasure { d }, 1024, 3, 1e-6).unwrap();
    let test = InputSet::sample_sphere(30, d, &mut stream_rng(4, 0));
    let ek = EkPredictor::new(&model, &target, n as f64, noise);
    let ek_mean: Vec<f64> = test.rows().iter().map(|x| ek.mean(x)).collect();
    let kss: Vec<f64> = test.rows().iter().map(|x| spec.kernel(x, x)).collect();
    let mut avg = vec![0.0; test.n()];
    for r in 0..draws {
        let train = InputSet::sample_sphere(n, d, &mut stream_rng(derive_seed(5, r), 0));
        let y = DVector::from_iterator(n, train.rows().iter().map(|x| target(x)));
        let solve = TrainSolve::new(&spec.kernel_matrix(&train), &y, noise).unwrap();
        let gp = gp_posterior(&solve, &spec.cross_kernel(&train, &test).unwrap(), &kss).unwrap();
        for (a, m) in avg.iter_mut().zip(gp.mean.iter()) {
            *a += m / draws as f64;
        }
    }
    let num: f64 = ek_mean.iter().zip(&avg).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = avg.iter().map(|b| b * b).sum();
    let rel = (num / den).sqrt();
    assert!(rel < 0.05, "relative RMSE {rel}");
}

struct Setup {
    model: nnsp_core::equivalent_kernel::SpectralModel<NetworkSpec>,
    u: PointCumulant,
    nodes: EkFwcNodes,
    x: Vec<f64>,
}

fn setup() -> Setup {
    let d = 4;
    let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 0.1);
    let model = build_spectrum(spec.clone(), &SphereMeasure { d }, 256, 7, 1e-6).unwrap();
    let u = PointCumulant::new(spec, CumulantModel::analytic(Activation::Quadratic, 0.1));
    let nodes = EkFwcNodes::prepare(&model, &u, &SphereMeasure { d }, 256, 8);
    let x = InputSet::sample_sphere(1, d, &mut stream_rng(9, 0)).rows().remove(0);
    Setup { model, u, nodes, x }
}

fn correction(s: &Setup, nodes: &EkFwcNodes, u_scale: f64, alpha: f64) -> f64 {
    let g = |x: &[f64]| alpha * (target(x) + 0.3 * x[0] * x[0] * x[1] / 2.0);
    let ek = EkPredictor::new(&s.model, &g, 64.0, 0.2);
    let h = NodeDiscrepancy::new(nodes, &ek, &g);
    ek_fwc_mean(nodes, &ek, &h, &s.u, u_scale, &s.x)
}

#[test]
fn ek_correction_is_linear_in_the_cumulant() {
    let s = setup();
    let base = correction(&s, &s.nodes, 1.0, 1.0);
    for c in [0.5, 2.0, -3.0] {
        let v = correction(&s, &s.nodes.scaled(c), c, 1.0);
        assert!((v - c * base).abs() < 1e-8 * base.abs().max(1e-12), "c = {c}: {v} vs {}", c * base);
    }
}

#[test]
fn ek_correction_is_cubic_plus_linear_in_the_target() {
    let s = setup();
    let (f1, f2) = (correction(&s, &s.nodes, 1.0, 1.0), correction(&s, &s.nodes, 1.0, 2.0));
    // F(α) = a α³ + b α
    let a = (f2 - 2.0 * f1) / 6.0;
    let b = f1 - a;
    assert!(a.abs() > 1e-6 * f1.abs() && b.abs() > 1e-6 * f1.abs(), "both orders present: a = {a}, b = {b}");
    let f3 = correction(&s, &s.nodes, 1.0, 3.0);
    let want = 27.0 * a + 3.0 * b;
    assert!((f3 - want).abs() < 1e-8 * want.abs(), "{f3} vs {want}");
}
