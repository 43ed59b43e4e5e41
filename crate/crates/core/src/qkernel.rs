//! Quantum kernel from the feature-map circuit `U(x) = D(x) H D(x) H`, where
//! `D(x)` is the diagonal layer of Z rotations on every qubit and ZZ rotations
//! on every pair. The kernel is the squared fidelity `|<U(x')0|U(x)0>|^2`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QgpError, Result};
use crate::statevector::{inner_product_unchecked, PhaseSet, StateVector};
use crate::types::{InputVector, PairEncoding};

/// Circuit parameters: one scale per qubit and one shared pair scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumKernelParams {
    pub theta_single: Vec<f64>,
    /// Ignored when `entangled` is false.
    pub theta_pair: f64,
    pub entangled: bool,
    #[serde(default)]
    pub pair_encoding: PairEncoding,
}

impl QuantumKernelParams {
    pub fn new(theta_single: Vec<f64>, theta_pair: f64, entangled: bool) -> Result<Self> {
        let params = Self {
            theta_single,
            theta_pair,
            entangled,
            pair_encoding: PairEncoding::Signed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn unentangled(theta_single: Vec<f64>) -> Result<Self> {
        Self::new(theta_single, 1.0, false)
    }

    pub fn with_pair_encoding(mut self, encoding: PairEncoding) -> Self {
        self.pair_encoding = encoding;
        self
    }

    /// Unpacks a flat parameter vector: `m` single scales, then the pair
    /// scale when `entangled`.
    pub fn from_flat(theta: &[f64], entangled: bool) -> Result<Self> {
        let m = if entangled {
            theta.len().checked_sub(1).filter(|&m| m > 0)
        } else {
            Some(theta.len()).filter(|&m| m > 0)
        }
        .ok_or(QgpError::EmptyInput("kernel parameter vector"))?;
        let pair = if entangled { theta[m] } else { 1.0 };
        Self::new(theta[..m].to_vec(), pair, entangled)
    }

    /// Inverse of [`from_flat`](Self::from_flat).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.theta_single.clone();
        if self.entangled {
            out.push(self.theta_pair);
        }
        out
    }

    pub fn num_qubits(&self) -> usize {
        self.theta_single.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_single.is_empty() {
            return Err(QgpError::EmptyInput("no single-qubit parameters"));
        }
        if self.theta_single.len() > crate::statevector::MAX_QUBITS {
            return Err(QgpError::TooManyQubits(self.theta_single.len()));
        }
        let positive = |t: f64| t > 0.0 && t.is_finite();
        if !self.theta_single.iter().all(|&t| positive(t)) {
            return Err(QgpError::InvalidConfig(format!(
                "single-qubit parameters must be positive and finite: {:?}",
                self.theta_single
            )));
        }
        if self.entangled && !positive(self.theta_pair) {
            return Err(QgpError::InvalidConfig(format!(
                "pair parameter must be positive and finite: {}",
                self.theta_pair
            )));
        }
        Ok(())
    }
}

/// Data-to-angle map: `phi_i = x^i / theta_i` and, when entangled,
/// `phi_ij = exp(-(x^i - x^j) / theta_pair)` for `i < j`.
pub fn encode_phases(x: &InputVector, params: &QuantumKernelParams) -> Result<PhaseSet> {
    let m = params.num_qubits();
    if x.dim() != m {
        return Err(QgpError::DimensionMismatch {
            expected: m,
            actual: x.dim(),
        });
    }
    let single: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(&params.theta_single)
        .map(|(xi, ti)| xi / ti)
        .collect();
    let mut pair = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            if params.entangled {
                let diff = x[i] - x[j];
                let diff = match params.pair_encoding {
                    PairEncoding::Signed => diff,
                    PairEncoding::Absolute => diff.abs(),
                };
                pair.push((-diff / params.theta_pair).exp());
            } else {
                pair.push(0.0);
            }
        }
    }
    // Overflowing pair angles surface as InvalidData here.
    PhaseSet::new(single, pair)
}

/// `U(x)|0^m>` with `U = D H D H`.
pub fn prepare_state(x: &InputVector, params: &QuantumKernelParams) -> Result<StateVector> {
    let phases = encode_phases(x, params)?;
    let mut state = StateVector::zero_state(params.num_qubits())?;
    state.apply_hadamard_layer();
    state.apply_diagonal_phases(&phases)?;
    state.apply_hadamard_layer();
    state.apply_diagonal_phases(&phases)?;
    Ok(state)
}

/// `U^dagger(x') U(x) |0^m>`, the state read out by a fidelity circuit.
pub fn overlap_state(
    x: &InputVector,
    xp: &InputVector,
    params: &QuantumKernelParams,
) -> Result<StateVector> {
    let mut state = prepare_state(x, params)?;
    let inverse = encode_phases(xp, params)?.negated();
    state.apply_diagonal_phases(&inverse)?;
    state.apply_hadamard_layer();
    state.apply_diagonal_phases(&inverse)?;
    state.apply_hadamard_layer();
    Ok(state)
}

/// Exact kernel value in `[0, 1]`.
pub fn kernel_exact(
    x: &InputVector,
    xp: &InputVector,
    params: &QuantumKernelParams,
) -> Result<f64> {
    let a = prepare_state(x, params)?;
    let b = prepare_state(xp, params)?;
    Ok(fidelity(&b, &a))
}

#[inline]
fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
    inner_product_unchecked(a.amplitudes(), b.amplitudes())
        .norm_sqr()
        .min(1.0)
}

/// Samples `shots` measurement outcomes (basis indices) of the fidelity circuit.
pub fn sample_overlap_outcomes<R: Rng + ?Sized>(
    x: &InputVector,
    xp: &InputVector,
    params: &QuantumKernelParams,
    shots: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(QgpError::InvalidConfig("shots must be at least 1".into()));
    }
    let probs = overlap_state(x, xp, params)?.probabilities();
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| QgpError::InvalidData(format!("bad outcome distribution: {e}")))?;
    Ok((0..shots).map(|_| dist.sample(rng)).collect())
}

/// Finite-shot estimate: fraction of outcomes equal to `0^m`.
pub fn kernel_shots<R: Rng + ?Sized>(
    x: &InputVector,
    xp: &InputVector,
    params: &QuantumKernelParams,
    shots: usize,
    rng: &mut R,
) -> Result<f64> {
    let outcomes = sample_overlap_outcomes(x, xp, params, shots, rng)?;
    let zeros = outcomes.iter().filter(|&&b| b == 0).count();
    Ok(zeros as f64 / shots as f64)
}

/// Feature states of a set of points, prepared once for reuse.
#[derive(Debug, Clone)]
pub struct PreparedStates {
    amplitudes: Vec<Vec<Complex64>>,
    num_qubits: usize,
}

impl PreparedStates {
    pub fn new(points: &[InputVector], params: &QuantumKernelParams) -> Result<Self> {
        params.validate()?;
        let amplitudes = points
            .par_iter()
            .map(|x| prepare_state(x, params).map(|s| s.amplitudes().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            amplitudes,
            num_qubits: params.num_qubits(),
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    /// Kernel values between `state` and every prepared state.
    pub fn kernel_row(&self, state: &StateVector) -> Vec<f64> {
        self.amplitudes
            .iter()
            .map(|a| {
                inner_product_unchecked(a, state.amplitudes())
                    .norm_sqr()
                    .min(1.0)
            })
            .collect()
    }

    /// Symmetric Gram matrix with unit diagonal.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| {
                        inner_product_unchecked(&self.amplitudes[j], &self.amplitudes[i])
                            .norm_sqr()
                            .min(1.0)
                    })
                    .collect()
            })
            .collect();
        let mut k = DMatrix::identity(n, n);
        for (i, row) in upper.iter().enumerate() {
            for (offset, &v) in row.iter().enumerate() {
                let j = i + 1 + offset;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Exact Gram matrix: `n` state preparations and `n(n-1)/2` overlaps.
pub fn gram_matrix(points: &[InputVector], params: &QuantumKernelParams) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(QgpError::EmptyInput("gram matrix of no points"));
    }
    Ok(PreparedStates::new(points, params)?.gram())
}

/// Shot-estimated Gram matrix, symmetrized as `(K + K^T) / 2` with unit diagonal.
/// Both orientations of each pair are sampled.
pub fn gram_matrix_shots<R: Rng + ?Sized>(
    points: &[InputVector],
    params: &QuantumKernelParams,
    shots: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(QgpError::EmptyInput("gram matrix of no points"));
    }
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                k[(i, j)] = kernel_shots(&points[i], &points[j], params, shots, rng)?;
            }
        }
    }
    let sym = (&k + k.transpose()) * 0.5;
    Ok(sym)
}
