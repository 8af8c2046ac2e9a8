//! Single-shot commands: kernel, cumulant, prediction and one training run.

use std::io::Write;

use nnsp_core::cumulants::{build_cumulant_slices, CumulantModel, CumulantSource, SliceMode, SymTensor4, DEFAULT_MATERIALIZATION_CAP};
use nnsp_core::io::{matrix_csv, tensor4_csv, write_kernel, write_tensor4};
use nnsp_core::Result;

use crate::config::ExperimentConfig;
use crate::output::{num, OutputDir};
use crate::width_sweep::{chain_seeds, dataset, theory, train_width};

pub fn write_kernel_files(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let ds = dataset(cfg);
    let k = cfg.network.spec().kernel_matrix(&ds.train);
    let mut csv = Vec::new();
    matrix_csv(&mut csv, k.values())?;
    out.write_bytes("kernel.csv", &csv)?;
    let mut bin = Vec::new();
    write_kernel(&mut bin, &k)?;
    out.write_bytes("kernel.bin", &bin)?;
    Ok(vec![("n_train".into(), ds.train.n().to_string()), ("max_abs".into(), num(k.max_abs()))])
}

/// `U` over the training inputs. Only materializable sizes are written.
pub fn write_cumulant_files(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let ds = dataset(cfg);
    let spec = cfg.network.spec();
    let l = spec.last_hidden_kernel(&ds.train);
    let model = CumulantModel::analytic(cfg.network.activation, cfg.network.readout_var);
    let n = ds.train.n();
    let slices = build_cumulant_slices(&l, n, &model, SliceMode::Materialized, DEFAULT_MATERIALIZATION_CAP)?;
    let t = SymTensor4::from_fn(n, |q| slices.train(q));
    let mut csv = Vec::new();
    tensor4_csv(&mut csv, &t)?;
    out.write_bytes("cumulant.csv", &csv)?;
    let mut bin = Vec::new();
    write_tensor4(&mut bin, &t)?;
    out.write_bytes("cumulant.bin", &bin)?;
    let max = t.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(vec![("n_train".into(), n.to_string()), ("entries".into(), t.len().to_string()), ("max_abs".into(), num(max))])
}

/// GP and corrected predictions on the test set at `predict.width`.
pub fn write_prediction(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<(String, String)>> {
    let ds = dataset(cfg);
    let post = theory(cfg, &ds)?.at_width(cfg.predict_width as f64)?;
    let rows: Vec<Vec<String>> = post
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            vec![
                i.to_string(),
                num(ds.y_test[i]),
                num(p.gp_mean),
                num(p.gp_var),
                num(p.fwc_mean),
                num(p.fwc_var),
                num(p.combined_mean),
                num(p.combined_var),
            ]
        })
        .collect();
    out.write_csv(
        "predictions.csv",
        &["point", "target", "gp_mean", "gp_var", "fwc_mean", "fwc_var", "combined_mean", "combined_var"],
        &rows,
    )?;
    let neg = post.negative_variance();
    Ok(vec![
        ("width".into(), cfg.predict_width.to_string()),
        ("negative_combined_variance_points".into(), neg.len().to_string()),
    ])
}

/// Train at `predict.width` and compare the time averages to theory.
pub fn write_training(cfg: &ExperimentConfig, out: &mut OutputDir, log: &mut dyn Write) -> Result<Vec<(String, String)>> {
    let ds = dataset(cfg);
    let width = cfg.predict_width;
    let post = theory(cfg, &ds)?.at_width(width as f64)?;
    let run = train_width(cfg, &ds, width, chain_seeds(cfg.seed, width, cfg.train.seeds), cfg.train.epochs)?;
    let var = run.mean_sq_error();
    let rows: Vec<Vec<String>> = (0..ds.test.n())
        .map(|i| {
            vec![
                i.to_string(),
                num(ds.y_test[i]),
                num(run.mean[i]),
                num(var[i]),
                num(post.points[i].gp_mean),
                num(post.points[i].combined_mean),
            ]
        })
        .collect();
    out.write_csv("train.csv", &["point", "target", "dnn_mean", "dnn_mean_var", "gp_mean", "fwc_mean"], &rows)?;
    let loss: Vec<Vec<String>> = run
        .chains
        .iter()
        .flat_map(|c| c.loss_trace.iter().map(move |(e, l)| vec![c.seed.to_string(), e.to_string(), num(*l)]))
        .collect();
    out.write_csv("loss.csv", &["seed", "epoch", "loss"], &loss)?;
    for c in &run.chains {
        for w in &c.warnings {
            let _ = writeln!(log, "warning: seed {}: {w}", c.seed);
        }
    }
    let m = ds.test.n() as f64;
    let mse = |p: &dyn Fn(usize) -> f64| (0..ds.test.n()).map(|i| (p(i) - run.mean[i]).powi(2)).sum::<f64>() / m;
    Ok(vec![
        ("width".into(), width.to_string()),
        ("gp_dnn_mse_raw".into(), num(mse(&|i| post.points[i].gp_mean))),
        ("fwc_dnn_mse_raw".into(), num(mse(&|i| post.points[i].combined_mean))),
        ("stat_bias".into(), num(var.iter().sum::<f64>() / m)),
    ])
}
