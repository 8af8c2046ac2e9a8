//! Equivalent Kernel against dataset-averaged GP regression.

use nalgebra::DVector;
use nnsp_core::cumulants::{CumulantModel, PointCumulant, SliceMode};
use nnsp_core::equivalent_kernel::{
    build_spectrum, ek_fwc_mean, EkFwcNodes, EkPredictor, NodeDiscrepancy, SpectralModel, SphereMeasure,
};
use nnsp_core::gp_inference::{gp_posterior, predict_network, TrainSolve};
use nnsp_core::kernels::{InputSet, NetworkSpec};
use nnsp_core::rng::{derive_seed, stream_rng};
use nnsp_core::Result;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{gen_quadratic_dataset, Dataset};
use crate::fit::{loglog, SlopeFit};
use crate::output::{num, OutputDir};

const EK_LABEL: u64 = 0x454b_4348;

#[derive(Debug, Clone)]
pub struct EkReport {
    pub n: usize,
    pub noise: f64,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    pub filter: Vec<f64>,
    pub targets: Vec<f64>,
    pub ek_mean: Vec<f64>,
    pub gp_avg: Vec<f64>,
    /// Standard error of the draw average, per point.
    pub gp_avg_se: Vec<f64>,
    /// EK mean as `n → ∞`: the retained-span projection of the target.
    pub ek_limit: Vec<f64>,
    /// `‖EK − ⟨GP⟩‖ / ‖⟨GP⟩‖` over test points.
    pub rel_rmse: f64,
    pub fwc_n: Vec<usize>,
    pub ek_fwc_abs: Vec<f64>,
    /// Mean `|f̄_U|` from the finite-`n` formulas on one draw; NaN above
    /// `ek.finite_n_max`.
    pub finite_fwc_abs: Vec<f64>,
    pub ek_fwc_fit: Option<SlopeFit>,
}

/// Mean of GP posterior means over `draws` independent training sets.
pub fn averaged_gp(
    spec: &NetworkSpec,
    target: &(dyn Fn(&[f64]) -> f64 + Sync),
    test: &InputSet,
    n: usize,
    noise: f64,
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = test.d();
    let means: Vec<Vec<f64>> = (0..draws as u64)
        .into_par_iter()
        .map(|r| {
            let train = InputSet::sample_sphere(n, d, &mut stream_rng(derive_seed(seed, r), 0));
            let y = DVector::from_iterator(n, train.rows().iter().map(|x| target(x)));
            let solve = TrainSolve::new(&spec.kernel_matrix(&train), &y, noise)?;
            let k_star = spec.cross_kernel(&train, test)?;
            let kss: Vec<f64> = test.rows().iter().map(|x| spec.kernel(x, x)).collect();
            Ok(gp_posterior(&solve, &k_star, &kss)?.mean)
        })
        .collect::<Result<_>>()?;
    let m = test.n();
    let r = draws as f64;
    let avg: Vec<f64> = (0..m).map(|i| means.iter().map(|v| v[i]).sum::<f64>() / r).collect();
    let se = (0..m)
        .map(|i| (means.iter().map(|v| (v[i] - avg[i]).powi(2)).sum::<f64>() / (r - 1.0).max(1.0) / r).sqrt())
        .collect();
    Ok((avg, se))
}

pub fn relative_rmse(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn spectral_model(cfg: &ExperimentConfig, seed: u64) -> Result<SpectralModel<NetworkSpec>> {
    build_spectrum(cfg.network.spec(), &SphereMeasure { d: cfg.ek.d }, cfg.ek.samples, seed, cfg.ek.rank_cut)
}

pub fn ek_dataset(cfg: &ExperimentConfig) -> Dataset {
    gen_quadratic_dataset(cfg.ek.d, 0, cfg.ek.n_test, derive_seed(cfg.seed, cfg.data.target_seed ^ EK_LABEL), cfg.data.normalize)
}

pub fn run_ek_check(cfg: &ExperimentConfig) -> Result<EkReport> {
    let ek_cfg = &cfg.ek;
    let noise = cfg.train.noise;
    let spec = cfg.network.spec();
    let seed = derive_seed(cfg.seed, EK_LABEL);
    let ds = ek_dataset(cfg);
    let g = |x: &[f64]| ds.target(x);
    let model = spectral_model(cfg, seed)?;
    let test_rows = ds.test.rows();

    let ek = EkPredictor::new(&model, &g, ek_cfg.n as f64, noise);
    let limit = EkPredictor::new(&model, &g, 1e15, noise);
    let psi = model.psi_many(&test_rows);
    let row = |i: usize| psi.row(i).iter().copied().collect::<Vec<f64>>();
    let ek_mean: Vec<f64> = (0..ds.test.n()).map(|i| ek.mean_from_psi(&row(i))).collect();
    let ek_limit: Vec<f64> = (0..ds.test.n()).map(|i| limit.mean_from_psi(&row(i))).collect();
    let (gp_avg, gp_avg_se) = averaged_gp(&spec, &g, &ds.test, ek_cfg.n, noise, ek_cfg.draws, derive_seed(seed, 1))?;
    let rel_rmse = relative_rmse(&ek_mean, &gp_avg);

    let u = PointCumulant::new(spec.clone(), CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var));
    let nodes = EkFwcNodes::prepare(&model, &u, &SphereMeasure { d: ek_cfg.d }, ek_cfg.mc_nodes, seed);
    let mut ek_fwc_abs = Vec::new();
    let mut finite_fwc_abs = Vec::new();
    for &n in &ek_cfg.n_grid {
        let p = EkPredictor::new(&model, &g, n as f64, noise);
        let h = NodeDiscrepancy::new(&nodes, &p, &g);
        let vals: Vec<f64> = test_rows.iter().map(|x| ek_fwc_mean(&nodes, &p, &h, &u, 1.0, x).abs()).collect();
        ek_fwc_abs.push(vals.iter().sum::<f64>() / vals.len() as f64);
        finite_fwc_abs.push(if n <= ek_cfg.finite_n_max {
            let train = InputSet::sample_sphere(n, ek_cfg.d, &mut stream_rng(derive_seed(seed, 2), n as u64));
            let y = DVector::from_iterator(n, train.rows().iter().map(|x| g(x)));
            let model = CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var);
            let post = predict_network(&spec, &model, &train, &ds.test, &y, noise, 1.0, SliceMode::Auto)?;
            post.points.iter().map(|p| p.fwc_mean.abs()).sum::<f64>() / post.points.len() as f64
        } else {
            f64::NAN
        });
    }
    let x: Vec<f64> = ek_cfg.n_grid.iter().map(|&n| n as f64).collect();
    let ek_fwc_fit = loglog(&x, &ek_fwc_abs).ok().map(|(slope, intercept, ols_se)| SlopeFit {
        slope,
        intercept,
        ols_se,
        boot_se: f64::NAN,
        x_lo: x[0],
        x_hi: x[x.len() - 1],
        points: x.len(),
    });

    Ok(EkReport {
        n: ek_cfg.n,
        noise,
        rank: model.rank(),
        eigenvalues: model.eigenvalues().to_vec(),
        filter: ek.filter.clone(),
        targets: ds.y_test.clone(),
        ek_mean,
        gp_avg,
        gp_avg_se,
        ek_limit,
        rel_rmse,
        fwc_n: ek_cfg.n_grid.clone(),
        ek_fwc_abs,
        finite_fwc_abs,
        ek_fwc_fit,
    })
}

pub fn write_ek_check(r: &EkReport, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let spectrum: Vec<Vec<String>> = r
        .eigenvalues
        .iter()
        .zip(&r.filter)
        .enumerate()
        .map(|(i, (l, f))| vec![i.to_string(), num(*l), num(*f)])
        .collect();
    out.write_csv("ek_spectrum.csv", &["i", "eigenvalue", "filter"], &spectrum)?;
    let preds: Vec<Vec<String>> = (0..r.targets.len())
        .map(|i| {
            vec![
                i.to_string(),
                num(r.targets[i]),
                num(r.ek_mean[i]),
                num(r.gp_avg[i]),
                num(r.gp_avg_se[i]),
                num(r.ek_limit[i]),
            ]
        })
        .collect();
    out.write_csv("ek_predictions.csv", &["point", "target", "ek_mean", "gp_mean_avg", "gp_mean_avg_se", "ek_limit"], &preds)?;
    let fwc: Vec<Vec<String>> = (0..r.fwc_n.len())
        .map(|k| vec![r.fwc_n[k].to_string(), num(r.ek_fwc_abs[k]), num(r.finite_fwc_abs[k])])
        .collect();
    out.write_csv("ek_fwc.csv", &["n", "mean_abs_ek_fwc", "mean_abs_finite_fwc"], &fwc)?;
    let mut summary = vec![
        ("ek_vs_averaged_gp_rel_rmse".into(), format!("{:.4e}", r.rel_rmse)),
        ("rank".into(), r.rank.to_string()),
        ("filters_in_unit_interval".into(), r.filter.iter().all(|f| (0.0..1.0).contains(f)).to_string()),
    ];
    if let Some(f) = &r.ek_fwc_fit {
        summary.push(("ek_fwc_slope".into(), format!("{:.4}", f.slope)));
    }
    Ok(summary)
}
