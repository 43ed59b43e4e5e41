//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL|SKIP` line
//! to stdout (uncaptured) before asserting.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use qgp_core::bayesopt::{optimize, BoConfig, Evaluation, SearchSpace};
use qgp_core::experiments::{run_extrapolation, run_interpolation};
use qgp_core::synth::synth_dataset;
use qgp_core::{
    gp_fit, gram_matrix, kernel_exact, log_marginal_likelihood, stabilized_objective, Dataset,
    EnergyWindow, InputVector, KernelConfig, KernelKind, QuantumKernelParams, RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {status} {detail}");
}

fn iv(v: Vec<f64>) -> InputVector {
    InputVector::new(v).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, m: usize) -> InputVector {
    iv((0..m).map(|_| rng.random_range(0.5..3.0)).collect())
}

fn random_theta(rng: &mut ChaCha8Rng, m: usize) -> (Vec<f64>, f64) {
    let single = (0..m).map(|_| rng.random_range(0.5..5.0)).collect();
    (single, rng.random_range(0.5..5.0))
}

// Dense reference: U = D H D H assembled from Kronecker products, with
// D = prod_i exp(-i phi_i Z_i) prod_{i<j} exp(-i phi_ij Z_i Z_j).

type CMat = DMatrix<Complex64>;

fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Tensor product over qubits `m-1 .. 0`, so qubit `q` is bit `q` of the index.
fn tensor(m: usize, op: impl Fn(usize) -> CMat) -> CMat {
    let mut out = CMat::identity(1, 1);
    for q in (0..m).rev() {
        out = kron(&out, &op(q));
    }
    out
}

fn pauli_z() -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
    ]))
}

fn hadamard() -> CMat {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_row_slice(2, 2, &[h, h, h, -h])
}

fn z_string(m: usize, qubits: &[usize]) -> CMat {
    tensor(m, |q| {
        if qubits.contains(&q) {
            pauli_z()
        } else {
            CMat::identity(2, 2)
        }
    })
}

/// exp(-i phi P) for a Pauli string P with P^2 = I.
fn pauli_rotation(phi: f64, p: &CMat) -> CMat {
    let n = p.nrows();
    CMat::identity(n, n) * Complex64::new(phi.cos(), 0.0) - p * Complex64::new(0.0, phi.sin())
}

fn dense_unitary(x: &[f64], theta: &[f64], theta_pair: f64, entangled: bool) -> CMat {
    let m = x.len();
    let mut d = CMat::identity(1 << m, 1 << m);
    for i in 0..m {
        d = pauli_rotation(x[i] / theta[i], &z_string(m, &[i])) * d;
    }
    if entangled {
        for i in 0..m {
            for j in i + 1..m {
                let phi = (-(x[i] - x[j]) / theta_pair).exp();
                d = pauli_rotation(phi, &z_string(m, &[i, j])) * d;
            }
        }
    }
    let h = tensor(m, |_| hadamard());
    &d * &h * &d * &h
}

fn dense_kernel(x: &[f64], xp: &[f64], theta: &[f64], theta_pair: f64, entangled: bool) -> f64 {
    let u = dense_unitary(x, theta, theta_pair, entangled);
    let v = dense_unitary(xp, theta, theta_pair, entangled);
    let amp = (v.adjoint() * u)[(0, 0)];
    amp.norm_sqr()
}

#[test]
fn criterion_01_kernel_matches_dense_matrix_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for m in 1..=4 {
        for _ in 0..50 {
            let x = random_point(&mut rng, m);
            let xp = random_point(&mut rng, m);
            let (theta, tp) = random_theta(&mut rng, m);
            let p = QuantumKernelParams::new(theta.clone(), tp, true).unwrap();
            let got = kernel_exact(&x, &xp, &p).unwrap();
            let want = dense_kernel(x.as_slice(), xp.as_slice(), &theta, tp, true);
            worst = worst.max((got - want).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 10.0;
    report(1, pass, &format!("max abs diff {worst:.3e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_02_kernel_axioms_and_psd_gram() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let m = 6;
    let mut min_eig = f64::INFINITY;
    let mut worst_diag = 0.0f64;
    let mut symmetric = true;
    let mut in_range = true;
    for entangled in [true, false] {
        for _ in 0..20 {
            let (theta, tp) = random_theta(&mut rng, m);
            let p = QuantumKernelParams::new(theta, tp, entangled).unwrap();
            let pts: Vec<InputVector> = (0..30).map(|_| random_point(&mut rng, m)).collect();
            let mut k = DMatrix::zeros(30, 30);
            for i in 0..30 {
                for j in 0..30 {
                    k[(i, j)] = kernel_exact(&pts[i], &pts[j], &p).unwrap();
                }
            }
            for i in 0..30 {
                worst_diag = worst_diag.max((k[(i, i)] - 1.0).abs());
                for j in 0..30 {
                    symmetric &= k[(i, j)] == k[(j, i)];
                    in_range &= (0.0..=1.0).contains(&k[(i, j)]);
                }
            }
            let g = gram_matrix(&pts, &p).unwrap();
            symmetric &= g == g.transpose();
            let eig = SymmetricEigen::new(k).eigenvalues.min();
            min_eig = min_eig.min(eig);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_diag <= 1e-12 && symmetric && in_range && min_eig >= -1e-8 && secs < 30.0;
    report(
        2,
        pass,
        &format!(
            "|k(x,x)-1| {worst_diag:.2e}, symmetric {symmetric}, in [0,1] {in_range}, min eigenvalue {min_eig:.3e}, {secs:.2} s"
        ),
    );
    assert!(pass);
}

/// |<psi(phi')|psi(phi)>|^2 with psi(phi) = (e^{-i phi} cos phi, -i e^{i phi} sin phi).
fn one_qubit_kernel(phi: f64, phip: f64) -> f64 {
    let psi = |f: f64| {
        [
            Complex64::from_polar(f.cos(), -f),
            Complex64::new(0.0, -1.0) * Complex64::from_polar(f.sin(), f),
        ]
    };
    let (a, b) = (psi(phi), psi(phip));
    (b[0].conj() * a[0] + b[1].conj() * a[1]).norm_sqr()
}

#[test]
fn criterion_03_unentangled_kernel_factorizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_point(&mut rng, 6);
        let xp = random_point(&mut rng, 6);
        let theta: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..5.0)).collect();
        let p = QuantumKernelParams::unentangled(theta.clone()).unwrap();
        let got = kernel_exact(&x, &xp, &p).unwrap();
        let want: f64 = (0..6)
            .map(|i| one_qubit_kernel(x[i] / theta[i], xp[i] / theta[i]))
            .product();
        worst = worst.max((got - want).abs());
    }
    let pass = worst <= 1e-10;
    report(3, pass, &format!("max abs diff {worst:.3e}"));
    assert!(pass);
}

/// -1/2 y^T K^-1 y - 1/2 ln det K - n/2 ln 2 pi from an explicit inverse.
fn dense_lml(k: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let y = nalgebra::DVector::from_column_slice(y);
    let inv = k.clone().try_inverse().unwrap();
    let quad = (y.transpose() * inv * &y)[(0, 0)];
    -0.5 * quad - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn criterion_04_gp_interpolates_and_lml_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_interp = 0.0f64;
    for problem in 0..10 {
        let data = synth_dataset(50, 1000 + problem).unwrap();
        let theta: Vec<f64> = (0..6).map(|_| rng.random_range(0.3..1.0)).collect();
        let kernel =
            KernelConfig::quantum(QuantumKernelParams::new(theta, 1.0, true).unwrap()).unwrap();
        let model = gp_fit(data.inputs(), data.energies(), &kernel, 0.0).unwrap();
        for (x, e) in data.iter() {
            let mean = model.predict(x).unwrap().mean;
            worst_interp = worst_interp.max(((mean - e) / e).abs());
        }
    }

    let mut worst_lml = 0.0f64;
    for n in [3usize, 8, 12, 20] {
        let data = synth_dataset(n, 2000 + n as u64).unwrap();
        let theta: Vec<f64> = (0..6).map(|_| rng.random_range(0.3..3.0)).collect();
        let kernel =
            KernelConfig::quantum(QuantumKernelParams::new(theta, 1.5, true).unwrap()).unwrap();
        let noise = 1e-3;
        let model = gp_fit(data.inputs(), data.energies(), &kernel, noise).unwrap();
        assert_eq!(model.jitter_used(), 0.0);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel.eval(&data.inputs()[i], &data.inputs()[j]).unwrap();
            }
            k[(i, i)] += noise;
        }
        let mean = data.energies().iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = data.energies().iter().map(|e| e - mean).collect();
        let want = dense_lml(&k, &centered);
        let got = log_marginal_likelihood(&model, data.energies()).unwrap();
        worst_lml = worst_lml.max(((got - want) / want).abs());
    }
    let pass = worst_interp <= 1e-6 && worst_lml <= 1e-8;
    report(
        4,
        pass,
        &format!("max relative interpolation error {worst_interp:.3e}, max relative LML error {worst_lml:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_stabilized_objective() {
    let a = 1.0;
    let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.25).collect();
    let values: Vec<f64> = grid.iter().map(|&l| stabilized_objective(l, a)).collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    let floor_err = (stabilized_objective(-1e6, a) - a.ln())
        .abs()
        .max((stabilized_objective(-1e6, 3.0) - 3f64.ln()).abs());
    let asym = (stabilized_objective(500.0, a) - 500.0).abs();
    let finite = [1e6, -1e6, 1e300, -1e300]
        .iter()
        .all(|&l| stabilized_objective(l, a).is_finite());
    let pass = monotone && floor_err <= 1e-12 && asym <= 1e-9 && finite;
    report(
        5,
        pass,
        &format!("monotone {monotone}, floor error {floor_err:.2e}, |O-lml| at 500 {asym:.2e}, finite at extremes {finite}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_bo_finds_quadratic_optimum() {
    let start = Instant::now();
    let space = SearchSpace::uniform_box(6, 0.0, 1.0).unwrap();
    let config = BoConfig::new(20, 50, 1.0);
    let mut hits = 0;
    let mut monotone = true;
    let mut distances = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = optimize(
            |t| {
                Ok(Evaluation::from(
                    -t.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>(),
                ))
            },
            &space,
            &config,
            &mut rng,
        )
        .unwrap();
        monotone &= trace.best_so_far.windows(2).all(|w| w[1] >= w[0]);
        let best = trace.best().unwrap();
        let dist = best
            .theta
            .iter()
            .map(|v| (v - 0.5).powi(2))
            .sum::<f64>()
            .sqrt();
        distances.push(format!("{dist:.3}"));
        if dist <= 0.15 {
            hits += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = hits >= 9 && monotone && secs < 60.0;
    report(
        6,
        pass,
        &format!(
            "{hits}/10 within 0.15 (distances {}), monotone {monotone}, {secs:.1} s",
            distances.join(" ")
        ),
    );
    assert!(pass);
}

fn synthetic_pool() -> Dataset {
    synth_dataset(2500, 77).unwrap()
}

#[test]
fn criterion_07_optimization_improves_on_initial_draws() {
    let start = Instant::now();
    let data = synthetic_pool();
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let cfg = RunConfig::new(seed, 400, KernelKind::Entangled);
        let outcome = run_interpolation(&data, &cfg).unwrap();
        let r = &outcome.report;
        let ratio = r.initial_best_rmse / r.rmse;
        ratios.push(format!("{ratio:.2}"));
        if ratio >= 1.2 {
            wins += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = wins >= 4 && secs < 900.0;
    report(
        7,
        pass,
        &format!(
            "{wins}/5 seeds with >=1.2x improvement (ratios {}), {secs:.1} s",
            ratios.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_entanglement_helps_extrapolation() {
    let data = synthetic_pool();
    let threshold = data.energy_quantile(0.4).unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let rmse = |kind| {
            let mut cfg = RunConfig::new(seed, 400, kind);
            cfg.window = EnergyWindow::below(threshold).unwrap();
            run_extrapolation(&data, &cfg).unwrap().report.rmse
        };
        let ent = rmse(KernelKind::Entangled);
        let unent = rmse(KernelKind::Unentangled);
        pairs.push(format!("{ent:.1}/{unent:.1}"));
        if ent < unent {
            wins += 1;
        }
    }
    let pass = wins >= 3;
    report(
        8,
        pass,
        &format!(
            "{wins}/5 seeds entangled < unentangled (entangled/unentangled RMSE {})",
            pairs.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_h3o_reproduction_when_data_present() {
    let Some(path) = std::env::var_os("QGP_H3O_DATA").filter(|p| Path::new(p).exists()) else {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(
            out,
            "criterion 9: SKIP (set QGP_H3O_DATA to an H3O+ CSV to run)"
        );
        return;
    };
    let data = Dataset::load_csv(&path).unwrap();
    let mut cfg = RunConfig::new(0, 1000, KernelKind::Entangled);
    cfg.bo_iters = 80;
    let rmse = run_interpolation(&data, &cfg).unwrap().report.rmse;
    let pass = (60.0..=110.0).contains(&rmse);
    report(9, pass, &format!("rmse {rmse:.2} cm^-1"));
    assert!(pass);
}

fn qgp(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_qgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn run_pipeline(dir: &Path) {
    qgp(
        dir,
        &["synth", "--out", "data.csv", "--n", "300", "--seed", "5"],
    );
    qgp(
        dir,
        &[
            "optimize",
            "--data",
            "data.csv",
            "--train-n",
            "60",
            "--bo-init",
            "5",
            "--bo-iters",
            "4",
            "--seed",
            "9",
            "--model-out",
            "model.json",
            "--trace-out",
            "trace.csv",
            "--report-out",
            "report.json",
            "--predictions-out",
            "pred.csv",
        ],
    );
    qgp(
        dir,
        &[
            "optimize",
            "--data",
            "data.csv",
            "--kernel",
            "rbf",
            "--train-n",
            "60",
            "--energy-max",
            "20000",
            "--bo-init",
            "4",
            "--bo-iters",
            "3",
            "--seed",
            "2",
            "--model-out",
            "rbf_model.json",
            "--trace-out",
            "rbf_trace.csv",
        ],
    );
    qgp(
        dir,
        &[
            "evaluate",
            "--model",
            "model.json",
            "--data",
            "data.csv",
            "--predictions-out",
            "eval.csv",
        ],
    );
}

#[test]
fn criterion_10_cli_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    let files = [
        "data.csv",
        "model.json",
        "trace.csv",
        "report.json",
        "pred.csv",
        "rbf_model.json",
        "rbf_trace.csv",
        "eval.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap()
        })
        .collect();
    let pass = differing.is_empty();
    report(
        10,
        pass,
        &format!("{} files compared, differing: {differing:?}", files.len()),
    );
    assert!(pass);
}
