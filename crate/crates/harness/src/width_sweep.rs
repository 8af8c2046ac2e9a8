//! Trained networks against GP and corrected predictions across widths.

use nalgebra::{DMatrix, DVector};
use nnsp_core::cumulants::{CumulantModel, SliceMode};
use nnsp_core::gp_inference::{predict_network, Posterior};
use nnsp_core::langevin::{prior_init, run_chains, PooledRun, TrainData, TrainProtocol};
use nnsp_core::rng::derive_seed;
use nnsp_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::dataset::{gen_quadratic_dataset, Dataset};
use crate::fit::{bootstrap_loglog, SlopeFit};
use crate::output::{num, OutputDir};
use crate::plot::{loglog_svg, Series};

/// Label mixed into chain seeds so different experiments never share them.
const WIDTH_LABEL: u64 = 0x5749_4454;

/// One width. MSEs are relative to the mean squared DNN output; the plain
/// columns have the statistical bias `stat_bias` subtracted.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthRow {
    pub width: usize,
    pub gp_dnn: f64,
    pub fwc_dnn: f64,
    pub dnn_target: f64,
    pub gp_dnn_raw: f64,
    pub fwc_dnn_raw: f64,
    pub dnn_target_raw: f64,
    pub stat_bias: f64,
    pub norm: f64,
    pub diverged: bool,
}

/// Per test point values behind a row.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthPoint {
    pub target: f64,
    pub gp: f64,
    pub fwc: f64,
    pub dnn: f64,
    /// Variance of the seed-averaged output, from the spread across seeds.
    pub dnn_var: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<WidthRow>,
    pub points: Vec<Vec<WidthPoint>>,
    pub gp_fit: Option<SlopeFit>,
    pub fwc_fit: Option<SlopeFit>,
    /// Largest width below which the corrected prediction is worse than
    /// the GP, if the grid shows one.
    pub crossover: Option<usize>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn largest_valid(&self) -> Option<&WidthRow> {
        self.rows.iter().rev().find(|r| !r.diverged)
    }

    /// `gp_dnn / fwc_dnn` at the largest non-diverged width; infinite when
    /// the bias-subtracted corrected MSE is not positive.
    pub fn fwc_gain(&self) -> Option<f64> {
        self.largest_valid().map(|r| if r.fwc_dnn > 0.0 { r.gp_dnn / r.fwc_dnn } else { f64::INFINITY })
    }
}

pub fn chain_seeds(master: u64, width: usize, count: usize) -> Vec<u64> {
    let base = derive_seed(master, WIDTH_LABEL ^ width as u64);
    (0..count as u64).map(|s| derive_seed(base, s)).collect()
}

/// GP and corrected predictions for the dataset, with corrections per unit
/// `1/N`.
pub fn theory(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Posterior> {
    let spec = cfg.network.spec();
    let model = CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var);
    let y = DVector::from_column_slice(&ds.y_train);
    predict_network(&spec, &model, &ds.train, &ds.test, &y, cfg.train.noise, 1.0, SliceMode::Auto)
}

pub fn dataset(cfg: &ExperimentConfig) -> Dataset {
    gen_quadratic_dataset(
        cfg.data.d,
        cfg.data.n_train,
        cfg.data.n_test,
        derive_seed(cfg.seed, cfg.data.target_seed),
        cfg.data.normalize,
    )
}

pub fn protocol(cfg: &ExperimentConfig, width: usize, seeds: Vec<u64>, epochs: u64) -> Result<TrainProtocol> {
    Ok(TrainProtocol::for_posterior(&cfg.network.spec(), cfg.data.d, &[width], cfg.train.noise, cfg.train.dt)?
        .with_epochs(epochs, cfg.train.burn_in, cfg.train.thin)
        .with_seeds(seeds)
        .with_scaling(cfg.train.scaling))
}

/// Train `seeds` chains at `width` on the dataset, probing the test set.
pub fn train_width(cfg: &ExperimentConfig, ds: &Dataset, width: usize, seeds: Vec<u64>, epochs: u64) -> Result<PooledRun> {
    let p = protocol(cfg, width, seeds, epochs)?;
    let data = TrainData::scalar(&ds.train, &ds.y_train)?;
    let probes: DMatrix<f64> = ds.test.points().transpose();
    let widths = [cfg.data.d, width, 1];
    run_chains(&p, &data, &probes, |s| prior_init(&widths, cfg.network.activation, &p, s))
}

fn row_from_points(width: usize, pts: &[WidthPoint]) -> WidthRow {
    let m = pts.len() as f64;
    let norm = pts.iter().map(|p| p.dnn * p.dnn).sum::<f64>() / m;
    let bias = pts.iter().map(|p| p.dnn_var).sum::<f64>() / m;
    let raw = |f: &dyn Fn(&WidthPoint) -> f64| pts.iter().map(|p| (f(p) - p.dnn).powi(2)).sum::<f64>() / m;
    let (gp, fwc, tgt) = (raw(&|p| p.gp), raw(&|p| p.fwc), raw(&|p| p.target));
    WidthRow {
        width,
        gp_dnn: (gp - bias) / norm,
        fwc_dnn: (fwc - bias) / norm,
        dnn_target: (tgt - bias) / norm,
        gp_dnn_raw: gp / norm,
        fwc_dnn_raw: fwc / norm,
        dnn_target_raw: tgt / norm,
        stat_bias: bias / norm,
        norm,
        diverged: false,
    }
}

/// Bias-subtracted relative MSE on a subset of test points.
fn relative_mse(pts: &[WidthPoint], idx: &[usize], pred: fn(&WidthPoint) -> f64) -> f64 {
    let (num, den) = idx.iter().fold((0.0, 0.0), |(a, b), &i| {
        let p = &pts[i];
        (a + (pred(p) - p.dnn).powi(2) - p.dnn_var, b + p.dnn * p.dnn)
    });
    num / den
}

pub fn fit_points(cfg: &ExperimentConfig) -> usize {
    match cfg.width_sweep.fit_points {
        0 => cfg.width_sweep.widths.len().div_ceil(2),
        k => k,
    }
}

pub fn run_width_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let ds = dataset(cfg);
    let theory = theory(cfg, &ds)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for &width in &cfg.width_sweep.widths {
        let seeds = chain_seeds(cfg.seed, width, cfg.train.seeds);
        let pred = theory.at_width(width as f64)?;
        match train_width(cfg, &ds, width, seeds, cfg.train.epochs) {
            Ok(run) => {
                for c in &run.chains {
                    warnings.extend(c.warnings.iter().map(|w| format!("N={width} seed {}: {w}", c.seed)));
                }
                let var = run.mean_sq_error();
                let pts: Vec<WidthPoint> = (0..ds.test.n())
                    .map(|i| WidthPoint {
                        target: ds.y_test[i],
                        gp: pred.points[i].gp_mean,
                        fwc: pred.points[i].combined_mean,
                        dnn: run.mean[i],
                        dnn_var: var[i],
                    })
                    .collect();
                rows.push(row_from_points(width, &pts));
                points.push(pts);
            }
            Err(Error::Divergence { epoch, seed }) => {
                warnings.push(format!("N={width}: chain with seed {seed} diverged at epoch {epoch}; row excluded from fits"));
                let nan = f64::NAN;
                rows.push(WidthRow {
                    width,
                    gp_dnn: nan,
                    fwc_dnn: nan,
                    dnn_target: nan,
                    gp_dnn_raw: nan,
                    fwc_dnn_raw: nan,
                    dnn_target_raw: nan,
                    stat_bias: nan,
                    norm: nan,
                    diverged: true,
                });
                points.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    let mut result = SweepResult { rows, points, gp_fit: None, fwc_fit: None, crossover: None, warnings };
    fit_result(cfg, &mut result);
    Ok(result)
}

/// Fits over the largest widths and the crossover, from the stored points.
pub fn fit_result(cfg: &ExperimentConfig, r: &mut SweepResult) {
    let k = fit_points(cfg);
    let start = r.rows.len().saturating_sub(k);
    let sel: Vec<usize> = (start..r.rows.len()).filter(|&i| !r.rows[i].diverged).collect();
    let x: Vec<f64> = sel.iter().map(|&i| r.rows[i].width as f64).collect();
    let n_points = sel.first().map(|&i| r.points[i].len()).unwrap_or(0);
    let seed = derive_seed(cfg.seed, WIDTH_LABEL);
    let fit = |pred: fn(&WidthPoint) -> f64| {
        (x.len() >= 2)
            .then(|| {
                bootstrap_loglog(&x, n_points, |k, idx| relative_mse(&r.points[sel[k]], idx, pred), cfg.bootstrap, seed).ok()
            })
            .flatten()
    };
    let gp_fit = fit(|p| p.gp);
    let fwc_fit = fit(|p| p.fwc);
    r.gp_fit = gp_fit;
    r.fwc_fit = fwc_fit;
    r.crossover = r
        .rows
        .iter()
        .filter(|row| !row.diverged)
        .take_while(|row| row.fwc_dnn > row.gp_dnn)
        .last()
        .map(|row| row.width);
}

pub fn write_width_sweep(r: &SweepResult, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|w| {
            vec![
                w.width.to_string(),
                num(w.gp_dnn),
                num(w.fwc_dnn),
                num(w.dnn_target),
                num(w.gp_dnn_raw),
                num(w.fwc_dnn_raw),
                num(w.dnn_target_raw),
                num(w.stat_bias),
                num(w.norm),
                w.diverged.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "width_sweep.csv",
        &[
            "width",
            "gp_dnn_mse",
            "fwc_dnn_mse",
            "dnn_target_mse",
            "gp_dnn_mse_raw",
            "fwc_dnn_mse_raw",
            "dnn_target_mse_raw",
            "stat_bias",
            "mean_sq_dnn",
            "diverged",
        ],
        &rows,
    )?;
    let pts: Vec<Vec<String>> = r
        .rows
        .iter()
        .zip(&r.points)
        .flat_map(|(row, pts)| {
            pts.iter().enumerate().map(move |(i, p)| {
                vec![row.width.to_string(), i.to_string(), num(p.target), num(p.gp), num(p.fwc), num(p.dnn), num(p.dnn_var)]
            })
        })
        .collect();
    out.write_csv("width_points.csv", &["width", "point", "target", "gp_mean", "fwc_mean", "dnn_mean", "dnn_mean_var"], &pts)?;
    let mut fits = Vec::new();
    for (name, f) in [("gp_dnn_mse", &r.gp_fit), ("fwc_dnn_mse", &r.fwc_fit)] {
        if let Some(f) = f {
            fits.push(fit_row(name, f));
        }
    }
    out.write_csv("width_fits.csv", FIT_HEADER, &fits)?;
    let series = |label: &str, get: fn(&WidthRow) -> f64, fit: &Option<SlopeFit>| Series {
        label: label.into(),
        points: r.rows.iter().filter(|w| !w.diverged).map(|w| (w.width as f64, get(w))).collect(),
        fit: fit.as_ref().map(|f| (f.slope, f.intercept, f.x_lo, f.x_hi)),
    };
    let svg = loglog_svg(
        "Relative MSE against width",
        "width N",
        "relative MSE",
        &[
            series("GP-DNN", |w| w.gp_dnn, &r.gp_fit),
            series("FWC-DNN", |w| w.fwc_dnn, &r.fwc_fit),
            series("statistical bias", |w| w.stat_bias, &None),
        ],
    );
    out.write_bytes("width_sweep.svg", svg.as_bytes())?;
    let mut summary = Vec::new();
    if let Some(f) = &r.gp_fit {
        summary.push(("gp_dnn_slope".into(), format!("{:.4} ± {:.4}", f.slope, f.boot_se)));
    }
    if let Some(f) = &r.fwc_fit {
        summary.push(("fwc_dnn_slope".into(), format!("{:.4} ± {:.4}", f.slope, f.boot_se)));
    }
    if let Some(g) = r.fwc_gain() {
        summary.push(("gp_over_fwc_at_largest_width".into(), format!("{g:.3}")));
    }
    summary.push((
        "crossover_width".into(),
        r.crossover.map(|w| w.to_string()).unwrap_or_else(|| "below the grid".into()),
    ));
    summary.push(("diverged_rows".into(), r.rows.iter().filter(|w| w.diverged).count().to_string()));
    summary.push(("warnings".into(), r.warnings.len().to_string()));
    Ok(summary)
}

pub const FIT_HEADER: &[&str] = &["quantity", "slope", "intercept", "ols_se", "bootstrap_se", "x_lo", "x_hi", "points"];

pub fn fit_row(name: &str, f: &SlopeFit) -> Vec<String> {
    vec![
        name.to_string(),
        num(f.slope),
        num(f.intercept),
        num(f.ols_se),
        num(f.boot_se),
        num(f.x_lo),
        num(f.x_hi),
        f.points.to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(gp: f64, fwc: f64, dnn: f64, var: f64) -> WidthPoint {
        WidthPoint { target: 0.0, gp, fwc, dnn, dnn_var: var }
    }

    #[test]
    fn row_subtracts_the_statistical_bias() {
        let pts = [pt(1.1, 1.0, 1.0, 0.001), pt(-0.9, -1.0, -1.0, 0.003)];
        let r = row_from_points(64, &pts);
        assert!((r.norm - 1.0).abs() < 1e-15);
        assert!((r.gp_dnn_raw - 0.01).abs() < 1e-12);
        assert!((r.stat_bias - 0.002).abs() < 1e-15);
        assert!((r.gp_dnn - 0.008).abs() < 1e-12);
        assert!((r.fwc_dnn + 0.002).abs() < 1e-15);
        let all = [0, 1];
        assert!((relative_mse(&pts, &all, |p| p.gp) - r.gp_dnn).abs() < 1e-15);
    }

    #[test]
    fn fits_recompute_from_rows() {
        let cfg = ExperimentConfig::default();
        let widths = cfg.width_sweep.widths.clone();
        let points: Vec<Vec<WidthPoint>> = widths
            .iter()
            .map(|&w| {
                let e = 10.0 / w as f64;
                (0..20).map(|i| pt(1.0 + e * (1.0 + 0.1 * (i as f64).sin()), 1.0 + 0.01 * e, 1.0, 0.0)).collect()
            })
            .collect();
        let rows: Vec<WidthRow> = widths.iter().zip(&points).map(|(&w, p)| row_from_points(w, p)).collect();
        let mut r = SweepResult { rows, points, gp_fit: None, fwc_fit: None, crossover: None, warnings: vec![] };
        fit_result(&cfg, &mut r);
        let f = r.gp_fit.as_ref().unwrap();
        assert!((f.slope + 2.0).abs() < 1e-3, "{}", f.slope);
        assert_eq!(f.points, 3);
        assert!(r.fwc_gain().unwrap() > 1e3);
        assert_eq!(r.crossover, None);
    }

    #[test]
    fn seeds_differ_across_widths() {
        let a = chain_seeds(0, 128, 4);
        let b = chain_seeds(0, 256, 4);
        assert!(a.iter().all(|s| !b.contains(s)));
        assert_eq!(a, chain_seeds(0, 128, 4));
    }
}
