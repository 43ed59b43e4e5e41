//! Gaussian-process regression of potential energy surfaces with kernels
//! computed by exact simulation of a Hadamard / Z / ZZ feature-map circuit,
//! tuned by Bayesian optimization of a stabilized marginal likelihood.

pub mod bayesopt;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod kernel;
pub mod qkernel;
pub mod statevector;
pub mod synth;
pub mod types;

pub use error::{QgpError, Result};
pub use gp::{
    gp_fit, gp_predict, log_marginal_likelihood, stabilized_objective, GpModel, TargetScaling,
};
pub use kernel::{rbf_kernel, KernelConfig};
pub use qkernel::{
    encode_phases, gram_matrix, kernel_exact, kernel_shots, prepare_state, QuantumKernelParams,
};
pub use statevector::{PhaseSet, StateVector};
pub use types::{
    fmt_f64, split_train_test, Dataset, EnergyWindow, InputVector, KernelKind, PairEncoding,
    RunConfig,
};
