//! Shared value types: input vectors, datasets, energy windows and run
//! configuration, plus the dataset CSV format and the seeded train/test split.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QgpError, Result};

/// A d-dimensional geometry descriptor. All components are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InputVector(Vec<f64>);

impl InputVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(QgpError::EmptyInput("input vector has no components"));
        }
        if let Some(bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(QgpError::InvalidData(format!(
                "non-finite input component {bad}"
            )));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for InputVector {
    type Error = QgpError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        InputVector::new(v)
    }
}

impl From<InputVector> for Vec<f64> {
    fn from(v: InputVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for InputVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Closed energy interval `[lo, hi]` in cm⁻¹. Either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(QgpError::InvalidConfig(format!(
                "energy window requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Window admitting every finite energy.
    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Window `(-inf, threshold]`.
    pub fn below(threshold: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, threshold)
    }

    pub fn contains(&self, energy: f64) -> bool {
        self.lo <= energy && energy <= self.hi
    }
}

/// Which covariance function a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Entangled,
    Unentangled,
    Rbf,
}

impl KernelKind {
    pub fn is_quantum(self) -> bool {
        !matches!(self, KernelKind::Rbf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Entangled => "entangled",
            KernelKind::Unentangled => "unentangled",
            KernelKind::Rbf => "rbf",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = QgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entangled" => Ok(KernelKind::Entangled),
            "unentangled" => Ok(KernelKind::Unentangled),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(QgpError::InvalidConfig(format!(
                "unknown kernel kind '{other}' (expected entangled, unentangled or rbf)"
            ))),
        }
    }
}

/// How the pair phase sees the coordinate difference `x^i - x^j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairEncoding {
    /// `exp(-(x^i - x^j) / theta_pair)` for `i < j`.
    #[default]
    Signed,
    /// `exp(-|x^i - x^j| / theta_pair)`.
    Absolute,
}

/// Full configuration of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub train_n: usize,
    pub window: EnergyWindow,
    pub kernel_kind: KernelKind,
    pub bo_init: usize,
    pub bo_iters: usize,
    pub kappa: f64,
    pub objective_offset_a: f64,
    /// Noise variance added to the Gram diagonal of the final and trial models.
    #[serde(default)]
    pub noise_var: f64,
    #[serde(default)]
    pub pair_encoding: PairEncoding,
    /// Box for every kernel parameter, searched log-uniformly.
    #[serde(default = "default_theta_bounds")]
    pub theta_bounds: (f64, f64),
}

fn default_theta_bounds() -> (f64, f64) {
    (0.05, 20.0)
}

impl RunConfig {
    /// Defaults: 20 initial draws, kappa = 1, a = 1, noiseless.
    pub fn new(seed: u64, train_n: usize, kernel_kind: KernelKind) -> Self {
        Self {
            seed,
            train_n,
            window: EnergyWindow::unbounded(),
            kernel_kind,
            bo_init: 20,
            bo_iters: 30,
            kappa: 1.0,
            objective_offset_a: 1.0,
            noise_var: 0.0,
            pair_encoding: PairEncoding::Signed,
            theta_bounds: default_theta_bounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QgpError::InvalidConfig(msg));
        if self.train_n == 0 {
            return bad("train_n must be positive".into());
        }
        if self.window.lo.is_nan() || self.window.hi.is_nan() || self.window.lo >= self.window.hi {
            return bad(format!(
                "energy window requires lo < hi, got [{}, {}]",
                self.window.lo, self.window.hi
            ));
        }
        if self.bo_init < 2 {
            return bad(format!("bo_init must be at least 2, got {}", self.bo_init));
        }
        if self.bo_iters == 0 {
            return bad("bo_iters must be positive".into());
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!(
                "kappa must be a finite non-negative number, got {}",
                self.kappa
            ));
        }
        if !(self.objective_offset_a > 0.0 && self.objective_offset_a.is_finite()) {
            return bad(format!(
                "objective offset a must be positive, got {}",
                self.objective_offset_a
            ));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return bad(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            ));
        }
        let (lo, hi) = self.theta_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!(
                "theta bounds must satisfy 0 < lo < hi, got ({lo}, {hi})"
            ));
        }
        Ok(())
    }
}

/// Points with energies in cm⁻¹. Inputs all share `dimension`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dimension: usize,
    inputs: Vec<InputVector>,
    energies: Vec<f64>,
}

impl Dataset {
    /// Builds a validated, non-empty dataset.
    pub fn new(dimension: usize, inputs: Vec<InputVector>, energies: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(QgpError::EmptyInput("dataset has no points"));
        }
        Self::new_allow_empty(dimension, inputs, energies)
    }

    fn new_allow_empty(
        dimension: usize,
        inputs: Vec<InputVector>,
        energies: Vec<f64>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(QgpError::InvalidData("dimension must be positive".into()));
        }
        if inputs.len() != energies.len() {
            return Err(QgpError::SizeMismatch {
                expected: inputs.len(),
                actual: energies.len(),
            });
        }
        for x in &inputs {
            if x.dim() != dimension {
                return Err(QgpError::DimensionMismatch {
                    expected: dimension,
                    actual: x.dim(),
                });
            }
        }
        if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
            return Err(QgpError::InvalidData(format!("non-finite energy {e}")));
        }
        Ok(Self {
            dimension,
            inputs,
            energies,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[InputVector] {
        &self.inputs
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn iter(&self) -> impl Iterator<Item = (&InputVector, f64)> {
        self.inputs.iter().zip(self.energies.iter().copied())
    }

    /// Smallest and largest energy.
    pub fn energy_range(&self) -> Option<(f64, f64)> {
        self.energies.iter().fold(None, |acc, &e| match acc {
            None => Some((e, e)),
            Some((lo, hi)) => Some((lo.min(e), hi.max(e))),
        })
    }

    /// Energy at quantile `q` in `[0, 1]` (nearest rank on the sorted energies).
    pub fn energy_quantile(&self, q: f64) -> Option<f64> {
        if self.is_empty() || !(0.0..=1.0).contains(&q) {
            return None;
        }
        let mut sorted = self.energies.clone();
        sorted.sort_by(f64::total_cmp);
        let idx = ((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
        Some(sorted[idx])
    }

    /// Subset by index, preserving the given order. May be empty.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dimension: self.dimension,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            energies: indices.iter().map(|&i| self.energies[i]).collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let ncols = headers.len();
        if ncols < 2 || headers.get(ncols - 1) != Some("energy") {
            return Err(QgpError::InvalidData(
                "dataset header must be x1,...,xd,energy".into(),
            ));
        }
        for (i, h) in headers.iter().take(ncols - 1).enumerate() {
            if h != format!("x{}", i + 1) {
                return Err(QgpError::InvalidData(format!(
                    "unexpected header column '{h}', expected 'x{}'",
                    i + 1
                )));
            }
        }
        let dimension = ncols - 1;
        let mut inputs = Vec::new();
        let mut energies = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        QgpError::InvalidData(format!(
                            "row {}: cannot parse '{field}' as a number",
                            row + 2
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != ncols {
                return Err(QgpError::InvalidData(format!(
                    "row {}: expected {ncols} fields, found {}",
                    row + 2,
                    values.len()
                )));
            }
            energies.push(values[dimension]);
            inputs.push(InputVector::new(values[..dimension].to_vec())?);
        }
        Dataset::new(dimension, inputs, energies)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes `x1,...,xd,energy` rows using shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dimension).map(|i| format!("x{i}")).collect();
        header.push("energy".into());
        wtr.write_record(&header)?;
        for (x, e) in self.iter() {
            let mut row: Vec<String> = x.as_slice().iter().map(|&v| fmt_f64(v)).collect();
            row.push(fmt_f64(e));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Result of [`split_train_test`]. The test set may be empty.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    /// Dataset indices of the training points, ascending.
    pub train_indices: Vec<usize>,
}

/// Draws `cfg.train_n` training points uniformly without replacement from the
/// points inside `cfg.window`. Everything else, including out-of-window
/// points, forms the test set.
pub fn split_train_test<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<Split> {
    let pool: Vec<usize> = (0..data.len())
        .filter(|&i| cfg.window.contains(data.energies[i]))
        .collect();
    if pool.len() < cfg.train_n || cfg.train_n == 0 {
        return Err(QgpError::InsufficientData {
            available: pool.len(),
            required: cfg.train_n,
        });
    }
    let mut train_indices: Vec<usize> = rand::seq::index::sample(rng, pool.len(), cfg.train_n)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    train_indices.sort_unstable();

    let mut in_train = vec![false; data.len()];
    for &i in &train_indices {
        in_train[i] = true;
    }
    let test_indices: Vec<usize> = (0..data.len()).filter(|&i| !in_train[i]).collect();

    Ok(Split {
        train: data.subset(&train_indices),
        test: data.subset(&test_indices),
        train_indices,
    })
}

/// Shortest text that parses back to the same `f64`; exponent notation for
/// very small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
