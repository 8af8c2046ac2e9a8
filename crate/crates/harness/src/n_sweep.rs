//! Finite-width correction and GP error against training-set size.

use nalgebra::DVector;
use nnsp_core::cumulants::{CumulantModel, SliceMode};
use nnsp_core::gp_inference::predict_network;
use nnsp_core::langevin::linear_fit;
use nnsp_core::rng::derive_seed;
use nnsp_core::Result;

use crate::config::ExperimentConfig;
use crate::dataset::gen_quadratic_dataset;
use crate::fit::{bootstrap_loglog, mean_at, SlopeFit};
use crate::output::{num, OutputDir};
use crate::plot::{loglog_svg, Series};
use crate::width_sweep::{fit_row, FIT_HEADER};

const N_LABEL: u64 = 0x4e5f_5357;

#[derive(Debug, Clone, PartialEq)]
pub struct NRow {
    pub noise: f64,
    pub n: usize,
    /// Mean over test points of `|f̄_U|`, the correction per unit `1/N`.
    pub fwc_abs: f64,
    /// Root mean square of `f̄_GP − y` over test points.
    pub gp_rmse: f64,
    pub streaming: bool,
}

#[derive(Debug, Clone)]
pub struct NCurve {
    pub noise: f64,
    pub rows: Vec<NRow>,
    /// `|f̄_U|` and `(f̄_GP − y)²` per test point, per row.
    pub fwc_points: Vec<Vec<f64>>,
    pub gp_sq_points: Vec<Vec<f64>>,
    pub fwc_fit: Option<SlopeFit>,
    pub gp_fit: Option<SlopeFit>,
    /// Slope of `log |f̄_U|` over the first three grid points.
    pub small_n_slope: f64,
}

#[derive(Debug, Clone)]
pub struct NSweepResult {
    pub curves: Vec<NCurve>,
}

impl NSweepResult {
    /// For each `n`, whether `|f̄_U|` falls strictly as `σ²` grows across
    /// all noise levels. The ordering is not universal: it holds while the
    /// filtering is strong and can reverse in the `1/n` tail.
    pub fn noise_ordering(&self) -> Vec<(usize, bool)> {
        let mut curves: Vec<&NCurve> = self.curves.iter().collect();
        curves.sort_by(|a, b| a.noise.total_cmp(&b.noise));
        let Some(first) = curves.first() else { return Vec::new() };
        (0..first.rows.len())
            .map(|k| (first.rows[k].n, curves.windows(2).all(|w| w[1].rows[k].fwc_abs < w[0].rows[k].fwc_abs)))
            .collect()
    }
}

pub fn run_n_sweep(cfg: &ExperimentConfig) -> Result<NSweepResult> {
    let ns = &cfg.n_sweep;
    let spec = cfg.network.spec();
    let model = CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var);
    let data_seed = derive_seed(cfg.seed, cfg.data.target_seed ^ N_LABEL);
    let mut curves = Vec::new();
    for &noise in &ns.noises {
        let mut rows = Vec::new();
        let mut fwc_points = Vec::new();
        let mut gp_sq_points = Vec::new();
        for &n in &ns.n_grid {
            let ds = gen_quadratic_dataset(ns.d, n, ns.n_test, data_seed, cfg.data.normalize);
            let y = DVector::from_column_slice(&ds.y_train);
            let post = predict_network(&spec, &model, &ds.train, &ds.test, &y, noise, 1.0, SliceMode::Auto)?;
            let fwc: Vec<f64> = post.points.iter().map(|p| p.fwc_mean.abs()).collect();
            let sq: Vec<f64> = post.points.iter().zip(&ds.y_test).map(|(p, y)| (p.gp_mean - y).powi(2)).collect();
            let m = fwc.len() as f64;
            rows.push(NRow {
                noise,
                n,
                fwc_abs: fwc.iter().sum::<f64>() / m,
                gp_rmse: (sq.iter().sum::<f64>() / m).sqrt(),
                streaming: n > nnsp_core::cumulants::DEFAULT_MATERIALIZATION_CAP,
            });
            fwc_points.push(fwc);
            gp_sq_points.push(sq);
        }
        curves.push(NCurve { noise, rows, fwc_points, gp_sq_points, fwc_fit: None, gp_fit: None, small_n_slope: f64::NAN });
    }
    let mut result = NSweepResult { curves };
    fit_n_sweep(cfg, &mut result);
    Ok(result)
}

/// Large-`n` fits over the top `fit_decades` of the grid and the small-`n`
/// trend, from the stored points.
pub fn fit_n_sweep(cfg: &ExperimentConfig, r: &mut NSweepResult) {
    let ns = &cfg.n_sweep;
    let n_max = ns.n_grid.iter().copied().max().unwrap_or(1) as f64;
    let lo = n_max / 10f64.powf(ns.fit_decades);
    let sel: Vec<usize> = (0..ns.n_grid.len()).filter(|&k| ns.n_grid[k] as f64 >= lo * (1.0 - 1e-12)).collect();
    let x: Vec<f64> = sel.iter().map(|&k| ns.n_grid[k] as f64).collect();
    let seed = derive_seed(cfg.seed, N_LABEL);
    for c in &mut r.curves {
        let pts = c.fwc_points.first().map_or(0, Vec::len);
        c.fwc_fit = bootstrap_loglog(&x, pts, |k, idx| mean_at(&c.fwc_points[sel[k]], idx), cfg.bootstrap, seed).ok();
        c.gp_fit =
            bootstrap_loglog(&x, pts, |k, idx| mean_at(&c.gp_sq_points[sel[k]], idx).sqrt(), cfg.bootstrap, seed).ok();
        let head = c.rows.len().min(3);
        let lx: Vec<f64> = c.rows[..head].iter().map(|r| (r.n as f64).log10()).collect();
        let ly: Vec<f64> = c.rows[..head].iter().map(|r| r.fwc_abs.log10()).collect();
        c.small_n_slope = linear_fit(&lx, &ly).map(|f| f.slope).unwrap_or(f64::NAN);
    }
}

pub fn write_n_sweep(r: &NSweepResult, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let rows: Vec<Vec<String>> = r
        .curves
        .iter()
        .flat_map(|c| c.rows.iter())
        .map(|row| vec![num(row.noise), row.n.to_string(), num(row.fwc_abs), num(row.gp_rmse), row.streaming.to_string()])
        .collect();
    out.write_csv("n_sweep.csv", &["noise", "n", "mean_abs_fwc", "gp_rmse", "streaming"], &rows)?;
    let mut fits = Vec::new();
    let mut summary = Vec::new();
    for c in &r.curves {
        for (name, f) in [("mean_abs_fwc", &c.fwc_fit), ("gp_rmse", &c.gp_fit)] {
            if let Some(f) = f {
                let label = format!("{name} noise={}", num(c.noise));
                summary.push((format!("{label} slope"), format!("{:.4} ± {:.4}", f.slope, f.boot_se)));
                fits.push(fit_row(&label, f));
            }
        }
        summary.push((format!("mean_abs_fwc noise={} small-n slope", num(c.noise)), format!("{:.4}", c.small_n_slope)));
    }
    out.write_csv("n_fits.csv", FIT_HEADER, &fits)?;
    let ordered: Vec<String> = r.noise_ordering().iter().filter(|(_, ok)| *ok).map(|(n, _)| n.to_string()).collect();
    summary.push(("fwc_decreases_with_noise_at_n".into(), format!("[{}]", ordered.join(" "))));
    let series: Vec<Series> = r
        .curves
        .iter()
        .flat_map(|c| {
            let fit = |f: &Option<SlopeFit>| f.as_ref().map(|f| (f.slope, f.intercept, f.x_lo, f.x_hi));
            [
                Series {
                    label: format!("|FWC| σ²={}", num(c.noise)),
                    points: c.rows.iter().map(|r| (r.n as f64, r.fwc_abs)).collect(),
                    fit: fit(&c.fwc_fit),
                },
                Series {
                    label: format!("GP RMSE σ²={}", num(c.noise)),
                    points: c.rows.iter().map(|r| (r.n as f64, r.gp_rmse)).collect(),
                    fit: fit(&c.gp_fit),
                },
            ]
        })
        .collect();
    out.write_bytes("n_sweep.svg", loglog_svg("Corrections against training-set size", "n", "value", &series).as_bytes())?;
    Ok(summary)
}
