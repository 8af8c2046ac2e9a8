//! Langevin chains: single steps, burn-in, thinning and pooled averages.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::diagnostics::burn_in_advisory;
use super::mlp::{GradScratch, Mlp, TrainData};
use super::protocol::TrainProtocol;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Everything needed to continue a chain bit-exactly.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub(crate) mlp: Mlp,
    pub(crate) epoch: u64,
    pub(crate) seed: u64,
    pub(crate) rngs: Vec<ChaCha8Rng>,
    pub(crate) probe_sums: Vec<f64>,
    pub(crate) n_samples: u64,
    pub(crate) series: Vec<f64>,
    pub(crate) series_epochs: Vec<u64>,
    pub(crate) loss_trace: Vec<(u64, f64)>,
    pub(crate) n_outputs: usize,
    grads: Vec<DMatrix<f64>>,
    scratch: GradScratch,
}

impl PartialEq for ChainState {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp
            && self.epoch == other.epoch
            && self.seed == other.seed
            && self.rngs == other.rngs
            && self.probe_sums == other.probe_sums
            && self.n_samples == other.n_samples
            && self.series == other.series
            && self.series_epochs == other.series_epochs
            && self.loss_trace == other.loss_trace
            && self.n_outputs == other.n_outputs
    }
}

impl ChainState {
    /// Fresh chain at epoch zero. `n_outputs` is the number of recorded
    /// values per sample (probe points × output dimension).
    pub fn new(mlp: Mlp, seed: u64, n_outputs: usize) -> Self {
        let rngs = (0..mlp.n_layers()).map(|l| stream_rng(seed, stream::LAYER_BASE + l as u64)).collect();
        Self::from_parts(mlp, 0, seed, rngs, vec![0.0; n_outputs], 0, Vec::new(), Vec::new(), Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        mlp: Mlp,
        epoch: u64,
        seed: u64,
        rngs: Vec<ChaCha8Rng>,
        probe_sums: Vec<f64>,
        n_samples: u64,
        series: Vec<f64>,
        series_epochs: Vec<u64>,
        loss_trace: Vec<(u64, f64)>,
    ) -> Self {
        let grads = mlp.weights().iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        let n_outputs = probe_sums.len();
        Self {
            mlp,
            epoch,
            seed,
            rngs,
            probe_sums,
            n_samples,
            series,
            series_epochs,
            loss_trace,
            n_outputs,
            grads,
            scratch: GradScratch::default(),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    /// Running time average of the recorded outputs.
    pub fn means(&self) -> Vec<f64> {
        let c = self.n_samples.max(1) as f64;
        self.probe_sums.iter().map(|s| s / c).collect()
    }

    /// Run until `until` epochs have completed, recording probe outputs on
    /// the protocol's thinning grid.
    pub fn advance(
        &mut self,
        protocol: &TrainProtocol,
        data: &TrainData,
        probes: &DMatrix<f64>,
        until: u64,
    ) -> Result<()> {
        let per_probe = self.mlp.output_dim();
        if probes.ncols() * per_probe != self.n_outputs {
            return Err(Error::DimensionMismatch(format!(
                "{} probes × {per_probe} outputs for {} accumulators",
                probes.ncols(),
                self.n_outputs
            )));
        }
        while self.epoch < until {
            let loss = langevin_step(self, protocol, data)?;
            let e = self.epoch;
            if e % protocol.thin == 0 {
                self.loss_trace.push((e, loss));
                if e > protocol.burn_in {
                    let out = self.mlp.forward_batch(probes);
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence { epoch: e, seed: self.seed });
                    }
                    for (s, v) in self.probe_sums.iter_mut().zip(out.iter()) {
                        *s += v;
                    }
                    self.series.extend(out.iter());
                    self.series_epochs.push(e);
                    self.n_samples += 1;
                }
            }
        }
        Ok(())
    }
}

/// `w ← w − (γ w + g) dt + √(2T dt) ξ` on a flat parameter slice. No noise
/// is drawn when `T = 0`.
pub fn langevin_update<R: Rng + ?Sized>(w: &mut [f64], grad: &[f64], gamma: f64, dt: f64, temperature: f64, rng: &mut R) {
    let amp = (2.0 * temperature * dt).sqrt();
    if amp > 0.0 {
        for (x, g) in w.iter_mut().zip(grad) {
            let xi: f64 = rng.sample(StandardNormal);
            *x -= (gamma * *x + g) * dt;
            *x += amp * xi;
        }
    } else {
        for (x, g) in w.iter_mut().zip(grad) {
            *x -= (gamma * *x + g) * dt;
        }
    }
}

/// One full-batch update of every layer with its own step, decay and noise
/// stream. Returns the loss at the weights before the update.
pub fn langevin_step(state: &mut ChainState, protocol: &TrainProtocol, data: &TrainData) -> Result<f64> {
    let loss = state.mlp.loss_grad_with(data, &mut state.grads, &mut state.scratch);
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: state.epoch, seed: state.seed });
    }
    let t = protocol.temperature;
    for (l, ((w, g), rng)) in state
        .mlp
        .weights_mut()
        .iter_mut()
        .zip(&state.grads)
        .zip(&mut state.rngs)
        .enumerate()
    {
        langevin_update(w.as_mut_slice(), g.as_slice(), protocol.gamma[l], protocol.layer_dt(l), t, rng);
    }
    state.epoch += 1;
    Ok(loss)
}

/// Output of a finished chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub seed: u64,
    /// Time-averaged outputs, probe-major (`probe · out + o`).
    pub means: Vec<f64>,
    /// Recorded outputs, one block of `n_outputs` values per sample.
    pub series: Vec<f64>,
    pub series_epochs: Vec<u64>,
    pub n_outputs: usize,
    pub loss_trace: Vec<(u64, f64)>,
    pub warnings: Vec<String>,
}

impl ChainResult {
    /// Series of a single recorded output.
    pub fn output_series(&self, k: usize) -> Vec<f64> {
        self.series.iter().skip(k).step_by(self.n_outputs).copied().collect()
    }

    pub fn n_recorded(&self) -> usize {
        self.series_epochs.len()
    }
}

impl From<ChainState> for ChainResult {
    fn from(s: ChainState) -> Self {
        Self {
            seed: s.seed,
            means: s.means(),
            series: s.series,
            series_epochs: s.series_epochs,
            n_outputs: s.n_outputs,
            loss_trace: s.loss_trace,
            warnings: Vec::new(),
        }
    }
}

/// Weights drawn from the prior implied by the protocol.
pub fn prior_init(widths: &[usize], activation: crate::kernels::Activation, protocol: &TrainProtocol, seed: u64) -> Result<Mlp> {
    let mut rng = stream_rng(seed, stream::INIT);
    Mlp::sample(widths, activation, &protocol.posterior().weight_vars, &mut rng)
}

/// Run one chain from `init` for the protocol's full length.
pub fn run_chain(
    protocol: &TrainProtocol,
    init: Mlp,
    data: &TrainData,
    probes: &DMatrix<f64>,
    seed: u64,
) -> Result<ChainResult> {
    protocol.validate()?;
    if init.n_layers() != protocol.gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight layers, {} weight decays",
            init.n_layers(),
            protocol.gamma.len()
        )));
    }
    if data.d() != init.input_dim() || probes.nrows() != init.input_dim() {
        return Err(Error::DimensionMismatch("input dimension of data, probes and network differ".into()));
    }
    let mut warnings = Vec::new();
    if let Some(w) = protocol.lr_guard(&init.sensitivity(data).iter().map(|s| 2.0 * s).collect::<Vec<_>>()) {
        warnings.push(w);
    }
    let n_outputs = probes.ncols() * init.output_dim();
    let mut state = ChainState::new(init, seed, n_outputs);
    state.advance(protocol, data, probes, protocol.n_epochs)?;
    if !state.mlp.is_finite() {
        return Err(Error::Divergence { epoch: state.epoch, seed });
    }
    if let Some(w) = burn_in_advisory(&state.loss_trace, protocol.burn_in) {
        warnings.push(w);
    }
    let mut result = ChainResult::from(state);
    result.warnings = warnings;
    Ok(result)
}

/// Chains for every seed of the protocol, averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRun {
    pub chains: Vec<ChainResult>,
    pub mean: Vec<f64>,
}

impl PooledRun {
    /// Per-output variance of the chain means across seeds divided by the
    /// number of seeds: the squared standard error of the pooled mean.
    pub fn mean_sq_error(&self) -> Vec<f64> {
        let s = self.chains.len();
        if s < 2 {
            return vec![f64::NAN; self.mean.len()];
        }
        (0..self.mean.len())
            .map(|k| {
                let m = self.mean[k];
                let v = self.chains.iter().map(|c| (c.means[k] - m).powi(2)).sum::<f64>() / (s - 1) as f64;
                v / s as f64
            })
            .collect()
    }
}

/// Run one chain per seed in parallel; `init` maps a seed to its starting
/// network. Results are ordered as the protocol's seeds.
pub fn run_chains<F>(protocol: &TrainProtocol, data: &TrainData, probes: &DMatrix<f64>, init: F) -> Result<PooledRun>
where
    F: Fn(u64) -> Result<Mlp> + Sync,
{
    if protocol.seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let chains: Vec<Result<ChainResult>> = protocol
        .seeds
        .par_iter()
        .map(|&seed| run_chain(protocol, init(seed)?, data, probes, seed))
        .collect();
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    let k = chains[0].means.len();
    let mean = (0..k)
        .map(|i| chains.iter().map(|c| c.means[i]).sum::<f64>() / chains.len() as f64)
        .collect();
    Ok(PooledRun { chains, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Activation, NetworkSpec};
    use crate::langevin::protocol::StepScaling;

    fn toy() -> (TrainProtocol, TrainData, DMatrix<f64>) {
        let spec = NetworkSpec::two_layer(Activation::Quadratic, 1.0, 1.0);
        let p = TrainProtocol::for_posterior(&spec, 3, &[8], 0.1, 1e-3)
            .unwrap()
            .with_epochs(400, 100, 10)
            .with_seeds(vec![1, 2]);
        let x = DMatrix::from_fn(3, 5, |i, j| ((3 * j + i) as f64).cos());
        let y = DMatrix::from_fn(1, 5, |_, j| (j as f64).sin());
        (p, TrainData::new(x.clone(), y).unwrap(), x)
    }

    #[test]
    fn zero_temperature_is_gradient_descent() {
        let (p, data, _) = toy();
        let p = TrainProtocol { temperature: 0.0, gamma: vec![0.0, 0.0], ..p };
        let net = prior_init(&[3, 8, 1], Activation::Quadratic, &toy().0, 9).unwrap();
        let (_, g) = net.loss_grad(&data);
        let mut state = ChainState::new(net.clone(), 0, 0);
        langevin_step(&mut state, &p, &data).unwrap();
        for ((a, b), gl) in state.mlp().weights().iter().zip(net.weights()).zip(&g) {
            assert!((a - (b - gl * p.dt)).norm() < 1e-15);
        }
    }

    #[test]
    fn chains_are_deterministic_and_resumable() {
        let (p, data, probes) = toy();
        let init = |s| prior_init(&[3, 8, 1], Activation::Quadratic, &p, s);
        let a = run_chains(&p, &data, &probes, init).unwrap();
        let b = run_chains(&p, &data, &probes, init).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chains[0].n_recorded(), 30);

        let mut s = ChainState::new(init(1).unwrap(), 1, 5);
        s.advance(&p, &data, &probes, 170).unwrap();
        s.advance(&p, &data, &probes, 400).unwrap();
        assert_eq!(s.means(), a.chains[0].means);
    }

    #[test]
    fn divergence_names_epoch_and_seed() {
        let (p, data, probes) = toy();
        let p = TrainProtocol { dt: 5.0, ..p }.with_scaling(StepScaling::Uniform);
        let net = prior_init(&[3, 8, 1], Activation::Quadratic, &p, 3).unwrap();
        match run_chain(&p, net, &data, &probes, 3) {
            Err(Error::Divergence { seed, epoch }) => {
                assert_eq!(seed, 3);
                assert!(epoch < 400);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
