//! Exact statevector simulation for registers built from Hadamard layers and
//! diagonal Z / ZZ rotations.
//!
//! Qubit `i` is bit `i` (little-endian) of the basis index. A qubit whose bit
//! is 0 has Z eigenvalue +1, bit 1 has eigenvalue -1.

use num_complex::Complex64;

use crate::error::{QgpError, Result};

/// Largest register simulated exactly.
pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    num_qubits: usize,
}

impl StateVector {
    /// `|0^m>`.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 {
            return Err(QgpError::InvalidConfig(
                "register needs at least one qubit".into(),
            ));
        }
        if num_qubits > MAX_QUBITS {
            return Err(QgpError::TooManyQubits(num_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            num_qubits,
        })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the norm is not checked.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QgpError::InvalidData(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(QgpError::TooManyQubits(num_qubits));
        }
        Ok(Self {
            amplitudes,
            num_qubits,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Measurement probabilities in the computational basis.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Applies H to every qubit in place.
    pub fn apply_hadamard_layer(&mut self) {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let len = self.amplitudes.len();
        for q in 0..self.num_qubits {
            let stride = 1usize << q;
            for block in (0..len).step_by(stride << 1) {
                for lo in block..block + stride {
                    let hi = lo + stride;
                    let a = self.amplitudes[lo];
                    let b = self.amplitudes[hi];
                    self.amplitudes[lo] = (a + b) * scale;
                    self.amplitudes[hi] = (a - b) * scale;
                }
            }
        }
    }

    /// Multiplies every basis amplitude by `exp(-i * angle(b))`, the fused
    /// action of `RZ(phi_i)` on each qubit and `RZZ(phi_ij)` on each pair.
    pub fn apply_diagonal_phases(&mut self, phases: &PhaseSet) -> Result<()> {
        if phases.num_qubits() != self.num_qubits {
            return Err(QgpError::SizeMismatch {
                expected: self.num_qubits,
                actual: phases.num_qubits(),
            });
        }
        for (basis, amp) in self.amplitudes.iter_mut().enumerate() {
            let angle = phases.angle(basis);
            *amp *= Complex64::new(angle.cos(), -angle.sin());
        }
        Ok(())
    }

    /// `<self|other>` = sum of `conj(self_k) * other_k`.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        if self.num_qubits != other.num_qubits {
            return Err(QgpError::SizeMismatch {
                expected: self.num_qubits,
                actual: other.num_qubits,
            });
        }
        Ok(inner_product_unchecked(&self.amplitudes, &other.amplitudes))
    }
}

#[inline]
pub(crate) fn inner_product_unchecked(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Rotation angles of the diagonal layer: one per qubit and one per pair `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSet {
    single: Vec<f64>,
    /// Row-major upper triangle: (0,1), (0,2), ..., (0,m-1), (1,2), ...
    pair: Vec<f64>,
}

impl PhaseSet {
    pub fn new(single: Vec<f64>, pair: Vec<f64>) -> Result<Self> {
        let m = single.len();
        if m == 0 {
            return Err(QgpError::EmptyInput("phase set has no qubits"));
        }
        let expected = m * (m - 1) / 2;
        if pair.len() != expected {
            return Err(QgpError::SizeMismatch {
                expected,
                actual: pair.len(),
            });
        }
        if single.iter().chain(pair.iter()).any(|p| !p.is_finite()) {
            return Err(QgpError::InvalidData("non-finite phase angle".into()));
        }
        Ok(Self { single, pair })
    }

    /// All-zero phases on `m` qubits.
    pub fn zeros(m: usize) -> Self {
        Self {
            single: vec![0.0; m],
            pair: vec![0.0; m * m.saturating_sub(1) / 2],
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.single.len()
    }

    pub fn single(&self) -> &[f64] {
        &self.single
    }

    pub fn pairs(&self) -> &[f64] {
        &self.pair
    }

    /// Angle for pair `(i, j)`, `i < j`.
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < j && j < self.num_qubits());
        self.pair[pair_index(self.num_qubits(), i, j)]
    }

    pub fn set_pair(&mut self, i: usize, j: usize, value: f64) {
        let idx = pair_index(self.num_qubits(), i, j);
        self.pair[idx] = value;
    }

    /// Phases of the adjoint layer.
    pub fn negated(&self) -> Self {
        Self {
            single: self.single.iter().map(|p| -p).collect(),
            pair: self.pair.iter().map(|p| -p).collect(),
        }
    }

    /// `sum_i phi_i z_i(b) + sum_{i<j} phi_ij z_i(b) z_j(b)`.
    fn angle(&self, basis: usize) -> f64 {
        let m = self.single.len();
        let z = |q: usize| if basis >> q & 1 == 0 { 1.0 } else { -1.0 };
        let mut angle = 0.0;
        let mut k = 0;
        for i in 0..m {
            let zi = z(i);
            angle += self.single[i] * zi;
            for j in i + 1..m {
                angle += self.pair[k] * zi * z(j);
                k += 1;
            }
        }
        angle
    }
}

/// Position of pair `(i, j)` in the row-major upper triangle of an `m`-qubit set.
pub fn pair_index(m: usize, i: usize, j: usize) -> usize {
    assert!(i < j && j < m, "pair ({i}, {j}) invalid for {m} qubits");
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}
