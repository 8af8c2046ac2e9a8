//! Ergodicity-in-the-mean of trained network outputs.

use nalgebra::DMatrix;
use nnsp_core::langevin::{autocorrelation, ergodicity_check_pooled, BlockPlan, ErgodicityFit};
use nnsp_core::rng::{derive_seed, stream_rng};
use nnsp_core::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::output::{num, OutputDir};
use crate::plot::{loglog_svg, Series};
use crate::width_sweep::{dataset, train_width};

const ERGO_LABEL: u64 = 0x4552_474f;

#[derive(Debug, Clone)]
pub struct ErgodicityReport {
    pub fit: ErgodicityFit,
    /// Integrated autocorrelation time per probe, in recorded samples.
    pub tau: Vec<f64>,
    pub thin: u64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

/// `F[seed, sample]` for every probe.
pub fn output_matrices(run: &nnsp_core::langevin::PooledRun, probes: usize) -> Vec<DMatrix<f64>> {
    (0..probes)
        .map(|k| {
            let rows: Vec<Vec<f64>> = run.chains.iter().map(|c| c.output_series(k)).collect();
            DMatrix::from_fn(rows.len(), rows[0].len(), |s, t| rows[s][t])
        })
        .collect()
}

pub fn run_ergodicity(cfg: &ExperimentConfig) -> Result<ErgodicityReport> {
    let e = &cfg.ergodicity;
    let mut ds = dataset(cfg);
    let probes = e.probes.min(ds.test.n());
    ds.test = ds.test.select(&(0..probes).collect::<Vec<_>>());
    let base = derive_seed(cfg.seed, ERGO_LABEL);
    let seeds = (0..e.seeds as u64).map(|s| derive_seed(base, s)).collect();
    let run = train_width(cfg, &ds, e.width, seeds, e.epochs)?;
    let fs = output_matrices(&run, probes);
    let samples = fs[0].ncols();
    let plan = BlockPlan::dyadic(e.seeds, samples, 1, e.min_block, e.min_blocks);
    let fit = ergodicity_check_pooled(&fs, &plan)?;
    let max_lag = (samples / 10).min(2000);
    let tau = fs
        .iter()
        .map(|f| {
            let series: Vec<f64> = f.row(0).iter().copied().collect();
            autocorrelation(&series, max_lag).map(|a| a.tau)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings: Vec<String> = run.chains.iter().flat_map(|c| c.warnings.clone()).collect();
    if let Some(&b) = plan.epoch_blocks.first() {
        let t = tau.iter().copied().fold(0.0, f64::max);
        if (b as f64) < 5.0 * t {
            warnings.push(format!("smallest block ({b} samples) is shorter than 5τ ({t:.1} samples)"));
        }
    }
    Ok(ErgodicityReport { fit, tau, thin: cfg.train.thin, samples, warnings })
}

/// Synthetic series that are not ergodic in the mean: each seed is an AR(1)
/// process around its own frozen offset, so block means over a single seed
/// never converge to the ensemble mean.
pub fn broken_ergodicity_example(seeds: usize, samples: usize, offset_scale: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    let offsets: Vec<f64> = (0..seeds).map(|_| offset_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut f = DMatrix::zeros(seeds, samples);
    for s in 0..seeds {
        let mut x = 0.0;
        for t in 0..samples {
            x = 0.5 * x + rng.sample::<f64, _>(StandardNormal);
            f[(s, t)] = offsets[s] + x;
        }
    }
    f
}

/// Flag for a fitted slope: ergodic dynamics give −1, frozen offsets
/// flatten it.
pub fn looks_ergodic(fit: &ErgodicityFit) -> bool {
    fit.slope() < -0.5
}

pub fn check_matrix(f: &DMatrix<f64>, min_block: usize, min_blocks: usize) -> Result<ErgodicityFit> {
    let plan = BlockPlan::dyadic(f.nrows(), f.ncols(), 1, min_block, min_blocks);
    if plan.epoch_blocks.len() < 2 {
        return Err(Error::InsufficientData("series too short for two block sizes".into()));
    }
    ergodicity_check_pooled(std::slice::from_ref(f), &plan)
}

pub fn write_ergodicity(r: &ErgodicityReport, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let f = &r.fit;
    let rows: Vec<Vec<String>> = (0..f.epoch_blocks.len())
        .map(|i| {
            vec![
                f.epoch_blocks[i].to_string(),
                (f.epoch_blocks[i] as u64 * r.thin).to_string(),
                num(f.variances[i]),
                f.n_blocks[i].to_string(),
            ]
        })
        .collect();
    out.write_csv("ergodicity.csv", &["block_samples", "block_epochs", "variance", "blocks"], &rows)?;
    let taus: Vec<Vec<String>> = r.tau.iter().enumerate().map(|(k, t)| vec![k.to_string(), num(*t), num(*t * r.thin as f64)]).collect();
    out.write_csv("autocorrelation.csv", &["probe", "tau_samples", "tau_epochs"], &taus)?;
    let series = Series {
        label: "pooled probes".into(),
        points: f.epoch_blocks.iter().zip(&f.variances).map(|(b, v)| ((*b as u64 * r.thin) as f64, *v)).collect(),
        fit: Some((
            f.fit.slope,
            f.fit.intercept - f.fit.slope * (r.thin as f64).log10(),
            (f.epoch_blocks[0] as u64 * r.thin) as f64,
            (f.epoch_blocks[f.epoch_blocks.len() - 1] as u64 * r.thin) as f64,
        )),
    };
    out.write_bytes("ergodicity.svg", loglog_svg("Variance of block means", "epochs per block", "variance", &[series]).as_bytes())?;
    Ok(vec![
        ("ergodicity_slope".into(), format!("{:.4} ± {:.4}", f.fit.slope, f.fit.slope_se)),
        ("ergodic".into(), looks_ergodic(f).to_string()),
        ("max_tau_epochs".into(), format!("{:.1}", r.tau.iter().copied().fold(0.0, f64::max) * r.thin as f64)),
        ("warnings".into(), r.warnings.len().to_string()),
    ])
}
