//! Noisy full-batch gradient descent whose equilibrium is the Bayesian
//! posterior of a finite network, plus the diagnostics used to trust its
//! time averages.

pub mod chain;
pub mod checkpoint;
pub mod diagnostics;
pub mod mlp;
pub mod protocol;

pub use chain::{langevin_step, langevin_update, prior_init, run_chain, run_chains, ChainResult, ChainState, PooledRun};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use diagnostics::{
    autocorrelation, burn_in_advisory, ergodicity_check, ergodicity_check_pooled, linear_fit, Acf, BlockPlan,
    ErgodicityFit, LinearFit,
};
pub use mlp::{GradScratch, Mlp, TrainData};
pub use protocol::{PosteriorParams, StepScaling, TrainProtocol};
