//! Gaussian-process regression with a fixed kernel: fitting by Cholesky
//! factorization with a jitter fallback, posterior mean and variance, the log
//! marginal likelihood, and the stabilized `log(L + a)` objective.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QgpError, Result};
use crate::kernel::{BoundKernel, KernelConfig};
use crate::types::InputVector;

/// Jitter steps tried after a plain factorization fails, relative to the
/// mean diagonal of `K + noise I`.
pub const JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Pivots below this fraction of the mean diagonal count as a failed factorization.
const PIVOT_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How training targets are normalized before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetScaling {
    /// Subtract the training mean.
    #[default]
    Center,
    /// Subtract the mean and divide by the standard deviation. Predictions are
    /// unchanged; the likelihood becomes invariant to the energy unit.
    Standardize,
}

/// Posterior at one point, in target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted GP. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    train_inputs: Vec<InputVector>,
    train_targets: Vec<f64>,
    kernel: KernelConfig,
    bound: BoundKernel,
    noise_var: f64,
    jitter_used: f64,
    scaling: TargetScaling,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    /// `(K + (noise + jitter) I)^-1 y_norm`.
    alpha: DVector<f64>,
    y_norm: DVector<f64>,
}

/// Fits a GP with centered targets.
pub fn gp_fit(
    inputs: &[InputVector],
    targets: &[f64],
    kernel: &KernelConfig,
    noise_var: f64,
) -> Result<GpModel> {
    GpModel::fit(inputs, targets, kernel, noise_var, TargetScaling::Center)
}

impl GpModel {
    pub fn fit(
        inputs: &[InputVector],
        targets: &[f64],
        kernel: &KernelConfig,
        noise_var: f64,
        scaling: TargetScaling,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(QgpError::EmptyInput("no training points"));
        }
        if inputs.len() != targets.len() {
            return Err(QgpError::SizeMismatch {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(QgpError::InvalidConfig(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(QgpError::InvalidData("non-finite training target".into()));
        }

        let (y_mean, y_scale) = target_normalization(targets, scaling);
        let y_norm = DVector::from_iterator(
            targets.len(),
            targets.iter().map(|y| (y - y_mean) / y_scale),
        );

        let bound = kernel.bind(inputs)?;
        let mut k = bound.gram();
        if noise_var > 0.0 {
            for i in 0..k.nrows() {
                k[(i, i)] += noise_var;
            }
        }
        let (chol, jitter_used) = factorize_with_jitter(k)?;
        let alpha = chol.solve(&y_norm);

        Ok(Self {
            train_inputs: inputs.to_vec(),
            train_targets: targets.to_vec(),
            kernel: kernel.clone(),
            bound,
            noise_var,
            jitter_used,
            scaling,
            y_mean,
            y_scale,
            chol,
            alpha,
            y_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_inputs.is_empty()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn train_inputs(&self) -> &[InputVector] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Absolute diagonal shift added on top of the noise, 0 if none was needed.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn scaling(&self) -> TargetScaling {
        self.scaling
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular Cholesky factor of the regularized Gram matrix.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn predict(&self, x: &InputVector) -> Result<Prediction> {
        let (row, kss) = self.bound.cross(x)?;
        let mean = self.mean_from_row(&row);
        let k = DVector::from_vec(row);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a non-zero diagonal");
        let latent = (kss - v.norm_squared()).max(0.0);
        Ok(Prediction {
            mean,
            variance: self.y_scale * self.y_scale * latent,
        })
    }

    /// Posterior mean only, which skips the O(n^2) variance solve.
    pub fn predict_mean(&self, x: &InputVector) -> Result<f64> {
        let (row, _) = self.bound.cross(x)?;
        Ok(self.mean_from_row(&row))
    }

    fn mean_from_row(&self, row: &[f64]) -> f64 {
        let dot: f64 = row.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        self.y_mean + self.y_scale * dot
    }

    /// Posterior means for many points, evaluated in parallel.
    pub fn predict_means(&self, xs: &[InputVector]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.predict_mean(x)).collect()
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml_of_normalized(&self.y_norm, &self.alpha)
    }

    fn lml_of_normalized(&self, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
        let n = y.len() as f64;
        let log_det: f64 = 2.0
            * self
                .chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * n * LN_2PI
    }

    /// Serializable snapshot of the model.
    pub fn to_file(&self) -> GpModelFile {
        GpModelFile {
            format: MODEL_FORMAT.to_string(),
            kernel: self.kernel.clone(),
            noise_var: self.noise_var,
            jitter_used: self.jitter_used,
            scaling: self.scaling,
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            train_inputs: self.train_inputs.clone(),
            train_targets: self.train_targets.clone(),
            alpha: self.alpha.iter().copied().collect(),
            metadata: None,
        }
    }

    /// Rebuilds a model from a snapshot. The Gram matrix is recomputed and
    /// factorized with the stored jitter; the stored weights are used as is.
    pub fn from_file(file: GpModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(QgpError::InvalidData(format!(
                "unsupported model format '{}'",
                file.format
            )));
        }
        let n = file.train_inputs.len();
        if n == 0 {
            return Err(QgpError::EmptyInput("model has no training points"));
        }
        if file.alpha.len() != n || file.train_targets.len() != n {
            return Err(QgpError::SizeMismatch {
                expected: n,
                actual: file.alpha.len().min(file.train_targets.len()),
            });
        }
        if !(file.y_scale > 0.0 && file.y_scale.is_finite()) {
            return Err(QgpError::InvalidData(
                "model y_scale must be positive".into(),
            ));
        }
        let bound = file.kernel.bind(&file.train_inputs)?;
        let mut k = bound.gram();
        // Same order of additions as `fit`, so the factor matches bitwise.
        for shift in [file.noise_var, file.jitter_used] {
            if shift > 0.0 {
                for i in 0..n {
                    k[(i, i)] += shift;
                }
            }
        }
        let chol = Cholesky::new(k).ok_or(QgpError::FactorizationFailure {
            size: n,
            max_jitter: file.jitter_used,
        })?;
        let y_norm = DVector::from_iterator(
            n,
            file.train_targets
                .iter()
                .map(|y| (y - file.y_mean) / file.y_scale),
        );
        Ok(Self {
            train_inputs: file.train_inputs,
            train_targets: file.train_targets,
            kernel: file.kernel,
            bound,
            noise_var: file.noise_var,
            jitter_used: file.jitter_used,
            scaling: file.scaling,
            y_mean: file.y_mean,
            y_scale: file.y_scale,
            chol,
            alpha: DVector::from_vec(file.alpha),
            y_norm,
        })
    }

    pub fn save_json(
        &self,
        path: impl AsRef<Path>,
        metadata: Option<serde_json::Value>,
    ) -> Result<()> {
        let mut file = self.to_file();
        file.metadata = metadata;
        let out = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_json(out)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = GpModelFile::read_json(std::fs::File::open(path)?)?;
        Self::from_file(file)
    }
}

/// Log marginal likelihood of targets `y` under a fitted model's kernel and
/// factorization. `y` is normalized with the model's own mean and scale.
pub fn log_marginal_likelihood(model: &GpModel, y: &[f64]) -> Result<f64> {
    if y.len() != model.len() {
        return Err(QgpError::SizeMismatch {
            expected: model.len(),
            actual: y.len(),
        });
    }
    let y_norm = DVector::from_iterator(
        y.len(),
        y.iter().map(|v| (v - model.y_mean) / model.y_scale),
    );
    let alpha = model.chol.solve(&y_norm);
    Ok(model.lml_of_normalized(&y_norm, &alpha))
}

/// Posterior mean and variance at `x`.
pub fn gp_predict(model: &GpModel, x: &InputVector) -> Result<Prediction> {
    model.predict(x)
}

/// `log(exp(lml) + a)` without overflow or underflow for any finite `lml`.
pub fn stabilized_objective(lml: f64, a: f64) -> f64 {
    debug_assert!(a > 0.0);
    let log_a = a.ln();
    if lml > log_a + 35.0 {
        lml + (a * (-lml).exp()).ln_1p()
    } else {
        log_a + ((lml - log_a).exp()).ln_1p()
    }
}

fn target_normalization(targets: &[f64], scaling: TargetScaling) -> (f64, f64) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let scale = match scaling {
        TargetScaling::Center => 1.0,
        TargetScaling::Standardize => {
            // Deviations are rescaled by their largest magnitude so that tiny
            // spreads (e.g. 1e-200) do not underflow when squared.
            let peak = targets.iter().fold(0.0f64, |m, y| m.max((y - mean).abs()));
            let sd = if peak > 0.0 {
                let var = targets
                    .iter()
                    .map(|y| ((y - mean) / peak).powi(2))
                    .sum::<f64>()
                    / n;
                peak * var.sqrt()
            } else {
                0.0
            };
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        }
    };
    (mean, scale)
}

/// Cholesky of `k`, retrying with `JITTER_LADDER` diagonal shifts. Returns the
/// factor and the absolute jitter that was added.
pub fn factorize_with_jitter(k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mean_diag = k.diagonal().mean();
    if !mean_diag.is_finite() || mean_diag <= 0.0 {
        return Err(QgpError::FactorizationFailure {
            size: n,
            max_jitter: 0.0,
        });
    }
    let floor = PIVOT_FLOOR * mean_diag;
    let attempt = |jitter: f64| {
        let mut shifted = k.clone();
        if jitter > 0.0 {
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
        }
        Cholesky::new(shifted).filter(|c| c.l_dirty().diagonal().iter().all(|d| d * d >= floor))
    };
    if let Some(c) = attempt(0.0) {
        return Ok((c, 0.0));
    }
    for rel in JITTER_LADDER {
        let jitter = rel * mean_diag;
        if let Some(c) = attempt(jitter) {
            return Ok((c, jitter));
        }
    }
    Err(QgpError::FactorizationFailure {
        size: n,
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * mean_diag,
    })
}

const MODEL_FORMAT: &str = "qgp-model-v1";

/// On-disk JSON layout of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelFile {
    pub format: String,
    pub kernel: KernelConfig,
    pub noise_var: f64,
    pub jitter_used: f64,
    #[serde(default)]
    pub scaling: TargetScaling,
    pub y_mean: f64,
    #[serde(default = "one")]
    pub y_scale: f64,
    pub train_inputs: Vec<InputVector>,
    pub train_targets: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Free-form provenance, e.g. the run configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

fn one() -> f64 {
    1.0
}

impl GpModelFile {
    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}
