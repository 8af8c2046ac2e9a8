//! Training protocol and its map to the Bayesian posterior.
//!
//! The update `Δw = −(γ_ℓ w + ∇_w L) dt_ℓ + √(2T dt_ℓ) ξ` with total
//! squared-error loss has stationary law `∝ exp(−Σ γ_ℓ|w_ℓ|²/2T − L/T)`. That
//! is a Gaussian prior with `σ²_w,ℓ = T/γ_ℓ` and observation noise `σ² = T/2`.

use crate::error::{Error, Result};
use crate::kernels::NetworkSpec;

/// Per-layer step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScaling {
    /// `dt_ℓ = dt` for every layer, exactly the plain update.
    #[default]
    Uniform,
    /// `dt_ℓ = dt · σ²_w,ℓ`. The continuous-time stationary law is unchanged.
    /// In prior-whitened coordinates every layer then decays at rate `T`,
    /// which removes the stiffness of readout decays that grow with width.
    Preconditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainProtocol {
    pub dt: f64,
    pub temperature: f64,
    /// Weight decay per weight layer, readout last.
    pub gamma: Vec<f64>,
    pub n_epochs: u64,
    pub burn_in: u64,
    /// Probe outputs are recorded every `thin` epochs after burn-in.
    pub thin: u64,
    pub seeds: Vec<u64>,
    pub scaling: StepScaling,
}

/// Posterior hyperparameters implied by a protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub noise: f64,
    pub weight_vars: Vec<f64>,
}

impl TrainProtocol {
    /// Protocol whose equilibrium is the posterior of `spec` at the given
    /// hidden widths and observation noise `σ²`.
    pub fn for_posterior(
        spec: &NetworkSpec,
        input_dim: usize,
        hidden: &[usize],
        noise: f64,
        dt: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if hidden.len() != spec.depth {
            return Err(Error::DimensionMismatch(format!(
                "{} hidden widths for depth {}",
                hidden.len(),
                spec.depth
            )));
        }
        if spec.bias_var.iter().any(|&b| b != 0.0) {
            return Err(Error::InvalidArgument("the trainer has no biases; set bias variances to zero".into()));
        }
        let mut fan_in = vec![input_dim];
        fan_in.extend_from_slice(hidden);
        let weight_vars: Vec<f64> = (0..=spec.depth)
            .map(|l| {
                let s = if l < spec.depth { spec.weight_var[l] } else { spec.readout_var };
                s / fan_in[l] as f64
            })
            .collect();
        Self::from_posterior(&PosteriorParams { noise, weight_vars }, dt)
    }

    /// Inverse of [`TrainProtocol::posterior`]; epochs and seeds get defaults.
    pub fn from_posterior(params: &PosteriorParams, dt: f64) -> Result<Self> {
        if !(params.noise > 0.0) || params.weight_vars.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("noise and weight variances must be positive".into()));
        }
        let temperature = 2.0 * params.noise;
        let protocol = Self {
            dt,
            temperature,
            gamma: params.weight_vars.iter().map(|v| temperature / v).collect(),
            n_epochs: 100_000,
            burn_in: 10_000,
            thin: 100,
            seeds: vec![0],
            scaling: StepScaling::Uniform,
        };
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn posterior(&self) -> PosteriorParams {
        PosteriorParams {
            noise: self.temperature / 2.0,
            weight_vars: self.gamma.iter().map(|g| self.temperature / g).collect(),
        }
    }

    pub fn with_epochs(mut self, n_epochs: u64, burn_in: u64, thin: u64) -> Self {
        self.n_epochs = n_epochs;
        self.burn_in = burn_in;
        self.thin = thin;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_scaling(mut self, scaling: StepScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.temperature >= 0.0) || self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidArgument("temperature and weight decays must be non-negative".into()));
        }
        if self.scaling == StepScaling::Preconditioned && self.gamma.iter().any(|g| *g == 0.0) {
            return Err(Error::InvalidArgument("preconditioned steps need positive weight decays".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning stride must be at least 1".into()));
        }
        if self.burn_in >= self.n_epochs {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be shorter than the run ({} epochs)",
                self.burn_in, self.n_epochs
            )));
        }
        Ok(())
    }

    /// Step size of weight layer `l`.
    pub fn layer_dt(&self, l: usize) -> f64 {
        match self.scaling {
            StepScaling::Uniform => self.dt,
            StepScaling::Preconditioned => self.dt * self.temperature / self.gamma[l],
        }
    }

    /// Largest `dt_ℓ (γ_ℓ + h_ℓ)` over layers, given per-layer curvature
    /// estimates `h_ℓ`.
    pub fn stiffness(&self, curvature: &[f64]) -> f64 {
        self.gamma
            .iter()
            .zip(curvature)
            .enumerate()
            .map(|(l, (g, h))| self.layer_dt(l) * (g + h))
            .fold(0.0, f64::max)
    }

    /// Advisory message when the stiffness exceeds 0.1.
    pub fn lr_guard(&self, curvature: &[f64]) -> Option<String> {
        let s = self.stiffness(curvature);
        (s > 0.1).then(|| format!("dt·(γ + curvature) = {s:.3} exceeds 0.1; the discretization may be biased or unstable"))
    }
}
