//! Covariance functions used by the GP: the classical RBF kernel and the
//! simulated quantum kernel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QgpError, Result};
use crate::qkernel::{prepare_state, PreparedStates, QuantumKernelParams};
use crate::types::{InputVector, KernelKind, PairEncoding};

/// `exp(-theta * ||x - x'||^2)`.
pub fn rbf_kernel(x: &InputVector, xp: &InputVector, theta: f64) -> Result<f64> {
    rbf_slice(x.as_slice(), xp.as_slice(), theta)
}

pub(crate) fn rbf_slice(x: &[f64], xp: &[f64], theta: f64) -> Result<f64> {
    if x.len() != xp.len() {
        return Err(QgpError::DimensionMismatch {
            expected: x.len(),
            actual: xp.len(),
        });
    }
    let d2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-theta * d2).exp())
}

/// Kernel selection plus its parameters. Exactly one of `quantum` and
/// `rbf_theta` is set, matching `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<QuantumKernelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_theta: Option<f64>,
}

impl KernelConfig {
    pub fn rbf(theta: f64) -> Result<Self> {
        let cfg = Self {
            kind: KernelKind::Rbf,
            quantum: None,
            rbf_theta: Some(theta),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn quantum(params: QuantumKernelParams) -> Result<Self> {
        let kind = if params.entangled {
            KernelKind::Entangled
        } else {
            KernelKind::Unentangled
        };
        let cfg = Self {
            kind,
            quantum: Some(params),
            rbf_theta: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a kernel of `kind` from a flat parameter vector as searched by
    /// the optimizer: `[theta]` for RBF, `[theta_1..theta_m]` unentangled,
    /// `[theta_1..theta_m, theta_pair]` entangled.
    pub fn from_flat(kind: KernelKind, theta: &[f64], encoding: PairEncoding) -> Result<Self> {
        match kind {
            KernelKind::Rbf => {
                if theta.len() != 1 {
                    return Err(QgpError::SizeMismatch {
                        expected: 1,
                        actual: theta.len(),
                    });
                }
                Self::rbf(theta[0])
            }
            KernelKind::Entangled | KernelKind::Unentangled => {
                let params = QuantumKernelParams::from_flat(theta, kind == KernelKind::Entangled)?
                    .with_pair_encoding(encoding);
                Self::quantum(params)
            }
        }
    }

    /// Number of free parameters for inputs of dimension `dim`.
    pub fn parameter_count(kind: KernelKind, dim: usize) -> usize {
        match kind {
            KernelKind::Rbf => 1,
            KernelKind::Unentangled => dim,
            KernelKind::Entangled => dim + 1,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match (&self.quantum, self.rbf_theta) {
            (Some(q), _) => q.to_flat(),
            (None, Some(t)) => vec![t],
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.quantum, self.rbf_theta) {
            (KernelKind::Rbf, None, Some(theta)) => {
                if theta > 0.0 && theta.is_finite() {
                    Ok(())
                } else {
                    Err(QgpError::InvalidConfig(format!(
                        "RBF parameter must be positive and finite, got {theta}"
                    )))
                }
            }
            (KernelKind::Entangled, Some(q), None) if q.entangled => q.validate(),
            (KernelKind::Unentangled, Some(q), None) if !q.entangled => q.validate(),
            _ => Err(QgpError::InvalidConfig(format!(
                "kernel configuration inconsistent with kind '{}'",
                self.kind
            ))),
        }
    }

    /// Single kernel evaluation.
    pub fn eval(&self, x: &InputVector, xp: &InputVector) -> Result<f64> {
        match (&self.quantum, self.rbf_theta) {
            (Some(q), _) => crate::qkernel::kernel_exact(x, xp, q),
            (None, Some(t)) => rbf_kernel(x, xp, t),
            (None, None) => Err(QgpError::InvalidConfig("kernel has no parameters".into())),
        }
    }

    /// Binds the kernel to a training set, precomputing what can be reused.
    pub fn bind(&self, train: &[InputVector]) -> Result<BoundKernel> {
        self.validate()?;
        let dim = train.first().map(InputVector::dim).unwrap_or(0);
        if let Some(x) = train.iter().find(|x| x.dim() != dim) {
            return Err(QgpError::DimensionMismatch {
                expected: dim,
                actual: x.dim(),
            });
        }
        match (&self.quantum, self.rbf_theta) {
            (Some(q), _) => {
                if dim != q.num_qubits() {
                    return Err(QgpError::DimensionMismatch {
                        expected: q.num_qubits(),
                        actual: dim,
                    });
                }
                Ok(BoundKernel::Quantum {
                    params: q.clone(),
                    states: PreparedStates::new(train, q)?,
                })
            }
            (None, Some(theta)) => Ok(BoundKernel::Rbf {
                theta,
                points: train.iter().map(|x| x.as_slice().to_vec()).collect(),
            }),
            (None, None) => unreachable!("validated"),
        }
    }
}

/// A kernel attached to a fixed training set.
#[derive(Debug, Clone)]
pub enum BoundKernel {
    Quantum {
        params: QuantumKernelParams,
        states: PreparedStates,
    },
    Rbf {
        theta: f64,
        points: Vec<Vec<f64>>,
    },
}

impl BoundKernel {
    pub fn len(&self) -> usize {
        match self {
            BoundKernel::Quantum { states, .. } => states.len(),
            BoundKernel::Rbf { points, .. } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            BoundKernel::Quantum { params, .. } => params.num_qubits(),
            BoundKernel::Rbf { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn gram(&self) -> DMatrix<f64> {
        match self {
            BoundKernel::Quantum { states, .. } => states.gram(),
            BoundKernel::Rbf { theta, points } => {
                let n = points.len();
                let rows: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        ((i + 1)..n)
                            .map(|j| rbf_slice(&points[i], &points[j], *theta).unwrap_or(0.0))
                            .collect()
                    })
                    .collect();
                let mut k = DMatrix::identity(n, n);
                for (i, row) in rows.iter().enumerate() {
                    for (off, &v) in row.iter().enumerate() {
                        k[(i, i + 1 + off)] = v;
                        k[(i + 1 + off, i)] = v;
                    }
                }
                k
            }
        }
    }

    /// `(k(x, x_i))_i` over the training points, and `k(x, x)`.
    pub fn cross(&self, x: &InputVector) -> Result<(Vec<f64>, f64)> {
        if x.dim() != self.dim() {
            return Err(QgpError::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        match self {
            BoundKernel::Quantum { params, states } => {
                let state = prepare_state(x, params)?;
                Ok((states.kernel_row(&state), 1.0))
            }
            BoundKernel::Rbf { theta, points } => {
                let row = points
                    .iter()
                    .map(|p| rbf_slice(p, x.as_slice(), *theta))
                    .collect::<Result<Vec<_>>>()?;
                Ok((row, 1.0))
            }
        }
    }
}
