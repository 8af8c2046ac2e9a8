//! Autocorrelation, ergodicity-in-the-mean and burn-in diagnostics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Classical standard error of the slope (NaN with fewer than 3 points).
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} abscissae, {} ordinates", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("a line needs 2 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit { slope, intercept, slope_se })
}

/// Autocorrelation function with the integrated autocorrelation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Acf {
    /// `rho[k]` for `k = 0..=max_lag`.
    pub rho: Vec<f64>,
    /// `τ = 1 + 2 Σ_{k=1}^{W} ρ_k`.
    pub tau: f64,
    pub window: usize,
    /// False when no window up to `max_lag` satisfied `W ≥ 5τ`.
    pub converged: bool,
}

/// Biased ACF estimator and a self-consistent window `W ≥ 5τ(W)`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Acf> {
    let n = series.len();
    let required = 10 * max_lag.max(1);
    if n < required {
        return Err(Error::SeriesTooShort { len: n, required });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if !(c0 > f64::EPSILON * f64::EPSILON * mean * mean) || c0 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let rho: Vec<f64> = (0..=max_lag)
        .map(|k| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0))
        .collect();
    let mut tau = 1.0;
    for w in 1..=max_lag {
        tau += 2.0 * rho[w];
        if w as f64 >= 5.0 * tau {
            return Ok(Acf { rho, tau, window: w, converged: true });
        }
    }
    Ok(Acf { rho, tau, window: max_lag, converged: false })
}

/// Block sizes in recorded samples, and how many seeds share a block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub epoch_blocks: Vec<usize>,
    pub seeds_per_block: usize,
}

impl BlockPlan {
    /// Powers of two from `min` while at least `min_blocks` blocks fit.
    pub fn dyadic(n_seeds: usize, n_epochs: usize, seeds_per_block: usize, min: usize, min_blocks: usize) -> Self {
        let groups = n_seeds / seeds_per_block.max(1);
        let mut epoch_blocks = Vec::new();
        let mut b = min.max(1);
        while groups * (n_epochs / b) >= min_blocks {
            epoch_blocks.push(b);
            b *= 2;
        }
        Self { epoch_blocks, seeds_per_block }
    }
}

pub const MIN_BLOCKS: usize = 8;

/// Empirical variance of block means against block length.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityFit {
    pub epoch_blocks: Vec<usize>,
    pub variances: Vec<f64>,
    pub n_blocks: Vec<usize>,
    /// Fit of `log10 σ²_emp` against `log10 n_epochs`.
    pub fit: LinearFit,
}

impl ErgodicityFit {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }
}

fn block_variances(f: &DMatrix<f64>, plan: &BlockPlan) -> Result<(Vec<f64>, Vec<usize>)> {
    let spb = plan.seeds_per_block;
    if spb == 0 || plan.epoch_blocks.len() < 2 {
        return Err(Error::InvalidArgument("need seeds per block ≥ 1 and at least two block sizes".into()));
    }
    let groups = f.nrows() / spb;
    let mut variances = Vec::new();
    let mut counts = Vec::new();
    for &b in &plan.epoch_blocks {
        let windows = if b == 0 { 0 } else { f.ncols() / b };
        let count = groups * windows;
        if count < MIN_BLOCKS {
            return Err(Error::InsufficientData(format!(
                "block {spb} seeds × {b} epochs leaves {count} blocks, need at least {MIN_BLOCKS}"
            )));
        }
        let means: Vec<f64> = (0..groups)
            .flat_map(|g| (0..windows).map(move |w| (g, w)))
            .map(|(g, w)| f.view((g * spb, w * b), (spb, b)).mean())
            .collect();
        let m = means.iter().sum::<f64>() / count as f64;
        variances.push(means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count - 1) as f64);
        counts.push(count);
    }
    Ok((variances, counts))
}

/// Ergodicity check on `F[seed, epoch]`: non-overlapping blocks of
/// `seeds_per_block × b`, the variance across block means, and its log-log
/// slope in `b`. Ergodic dynamics give a slope near −1.
pub fn ergodicity_check(f: &DMatrix<f64>, plan: &BlockPlan) -> Result<ErgodicityFit> {
    ergodicity_check_pooled(std::slice::from_ref(f), plan)
}

/// As [`ergodicity_check`], averaging the block variances over several
/// test points before the fit.
pub fn ergodicity_check_pooled(fs: &[DMatrix<f64>], plan: &BlockPlan) -> Result<ErgodicityFit> {
    if fs.is_empty() {
        return Err(Error::InsufficientData("no output matrices".into()));
    }
    let mut total = vec![0.0; plan.epoch_blocks.len()];
    let mut n_blocks = Vec::new();
    for f in fs {
        let (v, c) = block_variances(f, plan)?;
        for (t, x) in total.iter_mut().zip(v) {
            *t += x / fs.len() as f64;
        }
        n_blocks = c;
    }
    if total.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::ZeroVariance);
    }
    let lx: Vec<f64> = plan.epoch_blocks.iter().map(|&b| (b as f64).log10()).collect();
    let ly: Vec<f64> = total.iter().map(|v| v.log10()).collect();
    Ok(ErgodicityFit { epoch_blocks: plan.epoch_blocks.clone(), variances: total, n_blocks, fit: linear_fit(&lx, &ly)? })
}

/// Advisory burn-in check: the mean loss over the last tenth of the burn-in
/// records should be within 5% of the mean after burn-in.
pub fn burn_in_advisory(loss_trace: &[(u64, f64)], burn_in: u64) -> Option<String> {
    let (head, tail): (Vec<_>, Vec<_>) = loss_trace.iter().partition(|(e, _)| *e <= burn_in);
    if head.is_empty() || tail.is_empty() {
        return None;
    }
    let k = (head.len() / 10).max(1);
    let h = head[head.len() - k..].iter().map(|(_, l)| l).sum::<f64>() / k as f64;
    let t = tail.iter().map(|(_, l)| l).sum::<f64>() / tail.len() as f64;
    ((h - t).abs() > 0.05 * t.abs()).then(|| {
        format!("training loss at the end of burn-in ({h:.4e}) is not within 5% of its stationary mean ({t:.4e})")
    })
}
