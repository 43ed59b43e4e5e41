//! Gradient-free maximization with a GP surrogate and the upper-confidence-bound
//! acquisition `mu + kappa * sigma`.
//!
//! The surrogate works in unit-cube coordinates; [`SearchSpace`] maps them to
//! parameter values (linearly or logarithmically per dimension). The
//! acquisition is maximized over a fresh batch of uniform random candidates
//! each iteration.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QgpError, Result};
use crate::gp::{GpModel, TargetScaling};
use crate::kernel::KernelConfig;
use crate::types::{fmt_f64, InputVector};

/// Candidates drawn per acquisition maximization.
pub const DEFAULT_CANDIDATES: usize = 2048;

/// Noise variance of the surrogate (standardized objective units).
pub const SURROGATE_NOISE: f64 = 1e-6;

/// Length-scale grid for the surrogate RBF kernel, `10^(-1 + k/2)`, k = 0..8.
pub const SURROGATE_THETA_GRID: [f64; 9] = [
    0.1,
    0.316_227_766_016_837_94,
    1.0,
    3.162_277_660_168_379_5,
    10.0,
    31.622_776_601_683_793,
    100.0,
    316.227_766_016_837_9,
    1000.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

/// Axis-aligned box of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(QgpError::EmptyInput("search space has no dimensions"));
        }
        for d in &dims {
            let ok = d.lo.is_finite()
                && d.hi.is_finite()
                && d.lo < d.hi
                && (d.scale == Scale::Linear || d.lo > 0.0);
            if !ok {
                return Err(QgpError::InvalidConfig(format!(
                    "invalid bounds for {}: [{}, {}] ({:?})",
                    d.name, d.lo, d.hi, d.scale
                )));
            }
        }
        Ok(Self { dims })
    }

    /// Same linear bounds on every dimension, named `x1..xk`.
    pub fn uniform_box(k: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            (1..=k)
                .map(|i| Dimension {
                    name: format!("x{i}"),
                    lo,
                    hi,
                    scale: Scale::Linear,
                })
                .collect(),
        )
    }

    /// Log-scaled box over kernel parameters: `theta_1..theta_m` plus
    /// `theta_12` for the shared pair scale when `with_pair`.
    pub fn kernel_parameters(m: usize, with_pair: bool, lo: f64, hi: f64) -> Result<Self> {
        let mut dims: Vec<Dimension> = (1..=m)
            .map(|i| Dimension {
                name: format!("theta_{i}"),
                lo,
                hi,
                scale: Scale::Log,
            })
            .collect();
        if with_pair {
            dims.push(Dimension {
                name: "theta_12".into(),
                lo,
                hi,
                scale: Scale::Log,
            });
        }
        Self::new(dims)
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    /// Maps unit-cube coordinates to parameter values.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &t)| match d.scale {
                Scale::Linear => d.lo + t * (d.hi - d.lo),
                Scale::Log => (d.lo.ln() + t * (d.hi.ln() - d.lo.ln())).exp(),
            })
            .collect()
    }

    /// Maps parameter values to unit-cube coordinates.
    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(theta)
            .map(|(d, &v)| match d.scale {
                Scale::Linear => (v - d.lo) / (d.hi - d.lo),
                Scale::Log => (v.ln() - d.lo.ln()) / (d.hi.ln() - d.lo.ln()),
            })
            .collect()
    }

    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random::<f64>()).collect()
    }
}

/// What an objective evaluation reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Log marginal likelihood behind the objective, when there is one.
    pub lml: f64,
}

impl From<f64> for Evaluation {
    fn from(objective: f64) -> Self {
        Self {
            objective,
            lml: objective,
        }
    }
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub lml: f64,
    /// The evaluator failed; `objective` holds a penalty value.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub names: Vec<String>,
    pub evaluations: Vec<EvalRecord>,
    pub best_so_far: Vec<f64>,
    pub init_count: usize,
    pub seed: Option<u64>,
    pub kappa: f64,
}

impl BoTrace {
    /// Index of the best evaluation (first one on ties).
    pub fn best_index(&self) -> Option<usize> {
        best_index(&self.evaluations, self.evaluations.len())
    }

    pub fn best(&self) -> Option<&EvalRecord> {
        self.best_index().map(|i| &self.evaluations[i])
    }

    /// Best evaluation among the first `count`.
    pub fn best_of_first(&self, count: usize) -> Option<&EvalRecord> {
        best_index(&self.evaluations, count).map(|i| &self.evaluations[i])
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    /// CSV with columns `iter,<names...>,objective,lml,best_so_far`, optionally
    /// preceded by one `# ` comment line.
    pub fn write_csv<W: Write>(&self, mut writer: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(writer, "# {}", c.replace('\n', " "))?;
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(["objective", "lml", "best_so_far"].map(String::from));
        wtr.write_record(&header)?;
        for (i, (rec, best)) in self.evaluations.iter().zip(&self.best_so_far).enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(rec.theta.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(rec.objective));
            row.push(fmt_f64(rec.lml));
            row.push(fmt_f64(*best));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file, comment)
    }
}

fn best_index(evals: &[EvalRecord], count: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in evals.iter().take(count).enumerate() {
        if best.is_none_or(|b| e.objective > evals[b].objective) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub init_count: usize,
    pub iterations: usize,
    pub kappa: f64,
    pub candidates: usize,
}

impl BoConfig {
    pub fn new(init_count: usize, iterations: usize, kappa: f64) -> Self {
        Self {
            init_count,
            iterations,
            kappa,
            candidates: DEFAULT_CANDIDATES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_count < 2 {
            return Err(QgpError::InvalidConfig(format!(
                "at least 2 initial points required, got {}",
                self.init_count
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(QgpError::InvalidConfig(format!(
                "invalid kappa {}",
                self.kappa
            )));
        }
        if self.candidates == 0 {
            return Err(QgpError::InvalidConfig(
                "candidate count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// GP surrogate over unit-cube coordinates.
#[derive(Debug, Clone)]
pub struct Surrogate {
    model: GpModel,
    theta: f64,
}

impl Surrogate {
    /// Fits an RBF-kernel GP, picking the kernel parameter from
    /// [`SURROGATE_THETA_GRID`] by log marginal likelihood.
    pub fn fit(points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        let inputs = points
            .iter()
            .map(|p| InputVector::new(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut best: Option<(f64, GpModel, f64)> = None;
        for &theta in &SURROGATE_THETA_GRID {
            let kernel = KernelConfig::rbf(theta)?;
            let Ok(model) = GpModel::fit(
                &inputs,
                values,
                &kernel,
                SURROGATE_NOISE,
                TargetScaling::Standardize,
            ) else {
                continue;
            };
            let lml = model.log_marginal_likelihood();
            if best.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                best = Some((lml, model, theta));
            }
        }
        let (_, model, theta) = best.ok_or(QgpError::FactorizationFailure {
            size: points.len(),
            max_jitter: crate::gp::JITTER_LADDER[crate::gp::JITTER_LADDER.len() - 1],
        })?;
        Ok(Self { model, theta })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    /// Kernel parameter selected for this fit.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Posterior mean and standard deviation at unit-cube point `u`.
    pub fn mean_std(&self, u: &[f64]) -> Result<(f64, f64)> {
        let p = self.model.predict(&InputVector::new(u.to_vec())?)?;
        Ok((p.mean, p.std_dev()))
    }
}

/// `mu + kappa * sigma`.
pub fn ucb(mean: f64, std_dev: f64, kappa: f64) -> f64 {
    mean + kappa * std_dev
}

/// Upper confidence bound of the surrogate at unit-cube point `u`.
pub fn acquisition(surrogate: &Surrogate, u: &[f64], kappa: f64) -> Result<f64> {
    let (mean, sd) = surrogate.mean_std(u)?;
    Ok(ucb(mean, sd, kappa))
}

/// Unit-cube argmax of the acquisition over `candidates` uniform draws.
/// Ties go to the earliest candidate.
pub fn propose_next_unit<R: Rng + ?Sized>(
    surrogate: &Surrogate,
    space: &SearchSpace,
    kappa: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut pool: Vec<Vec<f64>> = (0..candidates.max(1))
        .map(|_| space.sample_unit(rng))
        .collect();
    let scores = pool
        .par_iter()
        .map(|u| acquisition(surrogate, u, kappa))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(pool.swap_remove(best))
}

/// Next parameter vector to evaluate, drawn from [`DEFAULT_CANDIDATES`] candidates.
pub fn propose_next<R: Rng + ?Sized>(
    surrogate: &Surrogate,
    space: &SearchSpace,
    kappa: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let u = propose_next_unit(surrogate, space, kappa, DEFAULT_CANDIDATES, rng)?;
    Ok(space.from_unit(&u))
}

/// Maximizes `objective` over `space`: `init_count` uniform draws, then
/// `iterations` surrogate-guided proposals. Failed evaluations are recorded
/// with a penalty one unit below the worst successful value.
pub fn optimize<F, R>(
    mut objective: F,
    space: &SearchSpace,
    config: &BoConfig,
    rng: &mut R,
) -> Result<BoTrace>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut units: Vec<Vec<f64>> = Vec::new();
    let mut trace = BoTrace {
        names: space.names().into_iter().map(String::from).collect(),
        evaluations: Vec::new(),
        best_so_far: Vec::new(),
        init_count: config.init_count,
        seed: None,
        kappa: config.kappa,
    };
    let mut cache: HashMap<Vec<u64>, Option<Evaluation>> = HashMap::new();

    let mut record = |u: Vec<f64>, trace: &mut BoTrace, units: &mut Vec<Vec<f64>>| {
        let theta = space.from_unit(&u);
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        let outcome = *cache
            .entry(key)
            .or_insert_with(|| objective(&theta).ok().filter(|e| e.objective.is_finite()));
        let rec = match outcome {
            Some(e) => EvalRecord {
                theta,
                objective: e.objective,
                lml: e.lml,
                failed: false,
            },
            None => EvalRecord {
                theta,
                objective: failure_penalty(&trace.evaluations),
                lml: f64::NAN,
                failed: true,
            },
        };
        let best = trace
            .best_so_far
            .last()
            .map_or(rec.objective, |&b: &f64| b.max(rec.objective));
        trace.evaluations.push(rec);
        trace.best_so_far.push(best);
        units.push(u);
    };

    for _ in 0..config.init_count {
        let u = space.sample_unit(rng);
        record(u, &mut trace, &mut units);
    }

    for _ in 0..config.iterations {
        let penalty = failure_penalty(&trace.evaluations);
        let values: Vec<f64> = trace
            .evaluations
            .iter()
            .map(|e| if e.failed { penalty } else { e.objective })
            .collect();
        let surrogate = Surrogate::fit(&units, &values)?;
        let u = propose_next_unit(&surrogate, space, config.kappa, config.candidates, rng)?;
        record(u, &mut trace, &mut units);
    }
    Ok(trace)
}

fn failure_penalty(evals: &[EvalRecord]) -> f64 {
    evals
        .iter()
        .filter(|e| !e.failed)
        .map(|e| e.objective)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        })
        .unwrap_or(0.0)
        - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(theta: &[f64]) -> Result<Evaluation> {
        Ok((-theta.iter().map(|t| (t - 0.5) * (t - 0.5)).sum::<f64>()).into())
    }

    #[test]
    fn unit_mapping_round_trips() {
        let space = SearchSpace::kernel_parameters(3, true, 0.05, 20.0).unwrap();
        assert_eq!(
            space.names(),
            vec!["theta_1", "theta_2", "theta_3", "theta_12"]
        );
        let u = vec![0.0, 0.25, 0.5, 1.0];
        let theta = space.from_unit(&u);
        assert!((theta[0] - 0.05).abs() < 1e-12);
        assert!((theta[2] - 1.0).abs() < 1e-12);
        assert!((theta[3] - 20.0).abs() < 1e-12);
        let back = space.to_unit(&theta);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(SearchSpace::uniform_box(0, 0.0, 1.0).is_err());
        assert!(SearchSpace::uniform_box(2, 1.0, 1.0).is_err());
        assert!(SearchSpace::kernel_parameters(2, false, 0.0, 1.0).is_err());
    }

    #[test]
    fn ucb_arithmetic() {
        assert_eq!(ucb(2.0, 3.0, 1.0), 5.0);
        assert_eq!(ucb(2.0, 3.0, 0.0), 2.0);
    }

    #[test]
    fn acquisition_at_observed_point_matches_value() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, 0.3]).collect();
        let vals: Vec<f64> = pts.iter().map(|p| (3.0 * p[0]).sin()).collect();
        let s = Surrogate::fit(&pts, &vals).unwrap();
        for (p, v) in pts.iter().zip(&vals) {
            assert!((acquisition(&s, p, 1.0).unwrap() - v).abs() < 1e-2);
            let (mean, _) = s.mean_std(p).unwrap();
            assert_eq!(acquisition(&s, p, 0.0).unwrap(), mean);
        }
    }

    #[test]
    fn exploration_moves_away_from_single_point() {
        let center = vec![0.5, 0.5];
        let space = SearchSpace::uniform_box(2, 0.0, 1.0).unwrap();
        let s = Surrogate::fit(std::slice::from_ref(&center), &[10.0]).unwrap();
        let far = (0..100)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = propose_next(&s, &space, 100.0, &mut rng).unwrap();
                let d = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
                d > 0.25
            })
            .count();
        assert!(far >= 95, "only {far}/100 proposals explored");
    }

    #[test]
    fn exploitation_finds_concave_maximum() {
        // Dense observations of -(u - 0.3)^2, oracle maximizer by grid search.
        let f = |u: f64| -(u - 0.3) * (u - 0.3);
        let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
        let oracle = grid
            .iter()
            .copied()
            .fold(0.0, |best, u| if f(u) > f(best) { u } else { best });
        let pts: Vec<Vec<f64>> = (0..=20).map(|i| vec![i as f64 / 20.0]).collect();
        let vals: Vec<f64> = pts.iter().map(|p| f(p[0])).collect();
        let s = Surrogate::fit(&pts, &vals).unwrap();
        let space = SearchSpace::uniform_box(1, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = propose_next(&s, &space, 0.0, &mut rng).unwrap();
        assert!((p[0] - oracle).abs() < 0.1, "{} vs {oracle}", p[0]);
    }

    #[test]
    fn proposal_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64 / 4.0, 1.0 - i as f64 / 4.0])
            .collect();
        let vals = vec![0.1, 0.5, 0.2, 0.9, 0.3];
        let s = Surrogate::fit(&pts, &vals).unwrap();
        let space = SearchSpace::uniform_box(2, 0.0, 1.0).unwrap();
        let a = propose_next(&s, &space, 1.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = propose_next(&s, &space, 1.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_iterations_keeps_initial_draws() {
        let space = SearchSpace::uniform_box(3, 0.0, 1.0).unwrap();
        let cfg = BoConfig::new(7, 0, 1.0);
        let trace = optimize(quadratic, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(trace.len(), 7);
    }

    #[test]
    fn best_so_far_is_running_max() {
        let space = SearchSpace::uniform_box(2, 0.0, 1.0).unwrap();
        let cfg = BoConfig::new(5, 10, 1.0);
        let trace = optimize(quadratic, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(trace.len(), 15);
        let mut running = f64::NEG_INFINITY;
        for (e, b) in trace.evaluations.iter().zip(&trace.best_so_far) {
            running = running.max(e.objective);
            assert_eq!(*b, running);
        }
        assert_eq!(
            trace.best().unwrap().objective,
            *trace.best_so_far.last().unwrap()
        );
    }

    #[test]
    fn failures_are_penalized_not_fatal() {
        let space = SearchSpace::uniform_box(1, 0.0, 1.0).unwrap();
        let cfg = BoConfig::new(6, 6, 1.0);
        let objective = |t: &[f64]| {
            if t[0] > 0.7 {
                Err(QgpError::ObjectiveFailure("out of range".into()))
            } else {
                Ok(Evaluation::from(t[0]))
            }
        };
        let trace = optimize(objective, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(trace.len(), 12);
        let worst_ok = trace
            .evaluations
            .iter()
            .filter(|e| !e.failed)
            .map(|e| e.objective)
            .fold(f64::INFINITY, f64::min);
        for e in trace.evaluations.iter().filter(|e| e.failed) {
            assert!(e.objective < worst_ok);
        }
        assert!(trace.evaluations.iter().any(|e| e.failed));
    }

    #[test]
    fn repeated_parameters_use_cache() {
        let space = SearchSpace::uniform_box(1, 0.0, 1.0).unwrap();
        let cfg = BoConfig {
            init_count: 3,
            iterations: 5,
            kappa: 0.0,
            candidates: 1,
        };
        let mut calls = 0;
        let objective = |_: &[f64]| {
            calls += 1;
            Ok(Evaluation::from(1.0))
        };
        // A constant RNG stream repeats the same candidate.
        struct Constant;
        impl rand::RngCore for Constant {
            fn next_u32(&mut self) -> u32 {
                0
            }
            fn next_u64(&mut self) -> u64 {
                0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(0)
            }
        }
        let trace = optimize(objective, &space, &cfg, &mut Constant).unwrap();
        assert_eq!(trace.len(), 8);
        assert_eq!(calls, 1);
    }

    #[test]
    fn trace_csv_layout() {
        let space = SearchSpace::kernel_parameters(2, false, 0.1, 10.0).unwrap();
        let cfg = BoConfig::new(2, 1, 1.0);
        let trace = optimize(quadratic, &space, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, Some("{\"seed\":2}")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# {\"seed\":2}");
        assert_eq!(lines[1], "iter,theta_1,theta_2,objective,lml,best_so_far");
        assert_eq!(lines.len(), 2 + 3);
    }
}
