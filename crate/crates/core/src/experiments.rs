//! Experiment protocols: train on a random subset of the points inside an
//! energy window, tune kernel parameters by Bayesian optimization of the
//! stabilized likelihood objective, and score the tuned model on every point
//! not used for training.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{optimize, BoConfig, BoTrace, Dimension, Evaluation, Scale, SearchSpace};
use crate::error::{QgpError, Result};
use crate::gp::{stabilized_objective, GpModel, TargetScaling};
use crate::kernel::KernelConfig;
use crate::types::{
    fmt_f64, split_train_test, Dataset, EnergyWindow, KernelKind, RunConfig, Split,
};

/// Root mean squared difference between predictions and targets.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(QgpError::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(QgpError::EmptyInput("rmse of no points"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

/// Summary of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub config: RunConfig,
    pub kernel_kind: KernelKind,
    pub rmse: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub best_theta: Vec<f64>,
    pub objective_at_optimum: f64,
    pub lml_at_optimum: f64,
    /// RMSE of the model at the best of the initial random draws.
    pub initial_best_rmse: f64,
    pub initial_best_theta: Vec<f64>,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    pub jitter_used: f64,
    /// Not persisted, so report files stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_json(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub trace: BoTrace,
    pub model: GpModel,
    pub split: Split,
    /// Posterior means on the test set, in test-set order.
    pub test_predictions: Vec<f64>,
}

impl ExperimentOutcome {
    /// CSV `x1..xd,energy_true,energy_pred` over the test set.
    pub fn write_predictions<W: Write>(&self, mut writer: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(writer, "# {}", c.replace('\n', " "))?;
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let d = self.split.test.dimension();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("energy_true".into());
        header.push("energy_pred".into());
        wtr.write_record(&header)?;
        for ((x, e), p) in self.split.test.iter().zip(&self.test_predictions) {
            let mut row: Vec<String> = x.as_slice().iter().map(|&v| fmt_f64(v)).collect();
            row.push(fmt_f64(e));
            row.push(fmt_f64(*p));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_predictions(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        self.write_predictions(
            std::io::BufWriter::new(std::fs::File::create(path)?),
            comment,
        )
    }
}

/// A configured run with its train/test split drawn. The RNG stream continues
/// into the optimizer.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    cfg: RunConfig,
    split: Split,
    rng: ChaCha8Rng,
    protocol: &'static str,
}

impl PreparedRun {
    pub fn new(data: &Dataset, cfg: &RunConfig) -> Result<Self> {
        Self::with_protocol(data, cfg, "custom")
    }

    fn with_protocol(data: &Dataset, cfg: &RunConfig, protocol: &'static str) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let split = split_train_test(data, cfg, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            split,
            rng,
            protocol,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        let (lo, hi) = self.cfg.theta_bounds;
        match self.cfg.kernel_kind {
            KernelKind::Rbf => SearchSpace::new(vec![Dimension {
                name: "theta".into(),
                lo,
                hi,
                scale: Scale::Log,
            }]),
            KernelKind::Unentangled => {
                SearchSpace::kernel_parameters(self.split.train.dimension(), false, lo, hi)
            }
            KernelKind::Entangled => {
                SearchSpace::kernel_parameters(self.split.train.dimension(), true, lo, hi)
            }
        }
    }

    pub fn kernel_for(&self, theta: &[f64]) -> Result<KernelConfig> {
        KernelConfig::from_flat(self.cfg.kernel_kind, theta, self.cfg.pair_encoding)
    }

    /// GP on the training set with kernel parameters `theta`.
    pub fn fit(&self, theta: &[f64]) -> Result<GpModel> {
        GpModel::fit(
            self.split.train.inputs(),
            self.split.train.energies(),
            &self.kernel_for(theta)?,
            self.cfg.noise_var,
            TargetScaling::Standardize,
        )
    }

    /// Stabilized objective and log marginal likelihood at `theta`.
    pub fn objective(&self, theta: &[f64]) -> Result<Evaluation> {
        let model = self.fit(theta)?;
        let lml = model.log_marginal_likelihood();
        if !lml.is_finite() {
            return Err(QgpError::ObjectiveFailure(format!(
                "non-finite LML at {theta:?}"
            )));
        }
        Ok(Evaluation {
            objective: stabilized_objective(lml, self.cfg.objective_offset_a),
            lml,
        })
    }

    /// Test-set RMSE of `model`.
    pub fn score(&self, model: &GpModel) -> Result<(f64, Vec<f64>)> {
        let preds = model.predict_means(self.split.test.inputs())?;
        let err = rmse(&preds, self.split.test.energies())?;
        Ok((err, preds))
    }

    /// Test-set RMSE with kernel parameters `theta`.
    pub fn rmse_at(&self, theta: &[f64]) -> Result<f64> {
        self.score(&self.fit(theta)?).map(|(e, _)| e)
    }

    /// Runs the optimizer and scores the best parameters.
    pub fn run(mut self) -> Result<ExperimentOutcome> {
        let start = Instant::now();
        if self.split.test.is_empty() {
            return Err(QgpError::EmptyInput(
                "no test points remain after the split",
            ));
        }
        let space = self.search_space()?;
        let bo = BoConfig::new(self.cfg.bo_init, self.cfg.bo_iters, self.cfg.kappa);
        let mut rng = self.rng.clone();
        let this = &self;
        let mut trace = optimize(|t| this.objective(t), &space, &bo, &mut rng)?;
        trace.seed = Some(self.cfg.seed);
        self.rng = rng;

        let best = trace
            .best()
            .filter(|b| !b.failed)
            .ok_or(QgpError::FactorizationFailure {
                size: self.split.train.len(),
                max_jitter: crate::gp::JITTER_LADDER[crate::gp::JITTER_LADDER.len() - 1],
            })?
            .clone();
        let model = self.fit(&best.theta)?;
        let (rmse_val, preds) = self.score(&model)?;

        let initial = trace
            .best_of_first(self.cfg.bo_init)
            .cloned()
            .expect("initial draws present");
        let initial_best_rmse = if initial.failed {
            f64::NAN
        } else if initial.theta == best.theta {
            rmse_val
        } else {
            self.rmse_at(&initial.theta)?
        };

        let report = ExperimentReport {
            protocol: self.protocol.to_string(),
            config: self.cfg.clone(),
            kernel_kind: self.cfg.kernel_kind,
            rmse: rmse_val,
            n_train: self.split.train.len(),
            n_test: self.split.test.len(),
            best_theta: best.theta.clone(),
            objective_at_optimum: best.objective,
            lml_at_optimum: model.log_marginal_likelihood(),
            initial_best_rmse,
            initial_best_theta: initial.theta.clone(),
            evaluations: trace.len(),
            failed_evaluations: trace.evaluations.iter().filter(|e| e.failed).count(),
            jitter_used: model.jitter_used(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok(ExperimentOutcome {
            report,
            trace,
            model,
            split: self.split,
            test_predictions: preds,
        })
    }
}

/// Interpolation: training points drawn from the whole dataset. The
/// configured window is replaced by an unbounded one.
pub fn run_interpolation(data: &Dataset, cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let mut cfg = cfg.clone();
    cfg.window = EnergyWindow::unbounded();
    PreparedRun::with_protocol(data, &cfg, "interpolation")?.run()
}

/// Extrapolation in energy: training points drawn from energies at or below
/// `cfg.window.hi`; the test set still spans the full range.
pub fn run_extrapolation(data: &Dataset, cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let (lo, hi) = data.energy_range().ok_or(QgpError::EmptyInput("dataset"))?;
    let threshold = cfg.window.hi;
    if !(threshold.is_finite() && threshold <= hi) {
        return Err(QgpError::InvalidConfig(format!(
            "threshold {threshold} must lie within the dataset energy range [{lo}, {hi}]"
        )));
    }
    PreparedRun::with_protocol(data, cfg, "extrapolation")?.run()
}
