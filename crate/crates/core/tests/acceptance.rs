//! End-to-end acceptance checks, one test per criterion. Each prints an
//! `ACCEPTANCE nn <name>: PASS|FAIL` line (visible with --nocapture, and in
//! the failure report otherwise) before asserting, so a red criterion still
//! identifies itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use cnn_recover::activation::Activation;
use cnn_recover::cli::{
    cmd_fig_a, cmd_fig_b, cmd_moments_table, cmd_pipeline, ExperimentConfig,
};
use cnn_recover::init_tensor::{tensor_initialize, TensorInitOptions};
use cnn_recover::model::{make_ground_truth, min_matching_error, sample_dataset, ProblemConfig};
use cnn_recover::risk::{
    check_derivatives, gradient, hessian, population_hessian_mc, spectrum,
};
use cnn_recover::rng::SeedStream;
use cnn_recover::train::{contraction_check, fit_log_linear_tail};

const GRID: [usize; 4] = [100, 1_000, 10_000, 100_000];

fn verdict(n: usize, name: &str, ok: bool) -> bool {
    println!("ACCEPTANCE {n:02} {name}: {}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn fig_config() -> (ProblemConfig, DMatrix<f64>) {
    let prob = ProblemConfig::new(5, 2, 2, Activation::SquaredRelu, 0).unwrap();
    let wstar = make_ground_truth(5, 2, 2.0, 0).unwrap();
    (prob, wstar)
}

fn shipped_config(name: &str) -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .join("configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn criterion_01_moment_table_reproduction() {
    let cfg = ExperimentConfig::parse("[experiment]\nsigmas = 1.0, 2.0\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_moments_table(&cfg, dir.path()).unwrap();
    let rho = |act: Activation, sigma: f64| {
        rows.iter()
            .find(|r| r.activation == act && r.sigma == sigma && r.quantity == "rho")
            .unwrap()
            .quadrature
    };

    let mut ok = true;
    for sigma in [1.0, 2.0] {
        ok &= (rho(Activation::Relu, sigma) - 0.091).abs() < 1e-3;
        ok &= (rho(Activation::LeakyRelu, sigma) - 0.089).abs() < 1e-3;
        // The published squared-relu coefficient 0.27 is rounded to two
        // decimals (the exact value is 4/pi - 1 = 0.27324), so the
        // coefficient is compared at its rounding half-width.
        ok &= (rho(Activation::SquaredRelu, sigma) / (sigma * sigma) - 0.27).abs() <= 5e-3;
        let s2 = sigma * sigma;
        let erf_closed = ((4.0 * s2 + 1.0f64).powf(-0.5) - (2.0 * s2 + 1.0).recip())
            .min((4.0 * s2 + 1.0).powf(-1.5) - (2.0 * s2 + 1.0).powi(3).recip())
            .min((2.0 * s2 + 1.0).powi(2).recip());
        ok &= (rho(Activation::Erf, sigma) - erf_closed).abs() < 1e-6;
    }
    for row in &rows {
        if let Some(closed) = row.closed_form {
            ok &= (closed - row.quadrature).abs() <= 1e-6 * closed.abs().max(1.0);
        }
    }
    assert!(verdict(1, "moment table reproduction", ok));
}

#[test]
fn criterion_02_derivative_correctness() {
    let mut ok = true;
    for act in Activation::ALL {
        let check = check_derivatives(act, 10, 0).unwrap();
        ok &= check.grad_rel_err < 1e-5;
        if let Some(h) = check.hess_rel_err {
            ok &= h < 1e-4;
        }
    }
    assert!(verdict(2, "derivative correctness", ok));
}

#[test]
fn criterion_03_ground_truth_fixed_point() {
    let (_, wstar) = fig_config();
    let wnorm = wstar.norm();
    let mut ok = true;
    for act in [
        Activation::Relu,
        Activation::SquaredRelu,
        Activation::Sigmoid,
        Activation::Quadratic,
    ] {
        let prob = ProblemConfig::new(5, 2, 2, act, 0).unwrap();
        for (ni, &n) in GRID.iter().enumerate() {
            let s = sample_dataset(&wstar, &prob, n, 300 + ni as u64).unwrap();
            let g = gradient(&wstar, &s, &prob).unwrap();
            ok &= g.amax() < 1e-10 * wnorm;
            let h = hessian(&wstar, &s, &prob).unwrap();
            let rep = spectrum(&h, &wstar, act).unwrap();
            ok &= rep.lambda_min >= -1e-10 * rep.lambda_max;
        }
    }
    assert!(verdict(3, "ground truth fixed point", ok));
}

#[test]
fn criterion_04_quadratic_psd_only() {
    let (_, wstar) = fig_config();
    let prob = ProblemConfig::new(5, 2, 2, Activation::Quadratic, 0).unwrap();
    // A = W* J with J antisymmetric makes W* A^T antisymmetric, so the
    // sample-wise inner product <sum_i x_i x_i^T, W* A^T> vanishes
    // identically: zero curvature along A for every dataset.
    let mut a = DMatrix::zeros(5, 2);
    a.column_mut(0).copy_from(&wstar.column(1));
    a.column_mut(1).copy_from(&(-wstar.column(0)));
    a /= a.norm();
    let u = DVector::from_column_slice(a.as_slice());

    let mut ok = true;
    for (ni, &n) in GRID.iter().enumerate() {
        let s = sample_dataset(&wstar, &prob, n, 400 + ni as u64).unwrap();
        let h = hessian(&wstar, &s, &prob).unwrap();
        let rep = spectrum(&h, &wstar, Activation::Quadratic).unwrap();
        let rayleigh = (u.transpose() * h.matrix() * &u)[(0, 0)];
        ok &= rayleigh < 1e-10 * rep.lambda_max;
        ok &= rep.lambda_min < 1e-8;
    }
    assert!(verdict(4, "quadratic psd only counterexample", ok));
}

#[test]
fn criterion_05_eigenvalue_figure() {
    let cfg = shipped_config("fig_a.cfg");
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_fig_a(&cfg, dir.path()).unwrap();
    let mut ok = true;
    for act in [Activation::Relu, Activation::SquaredRelu, Activation::Sigmoid] {
        let pop = rows
            .iter()
            .find(|r| r.activation == act && r.kind == "population")
            .unwrap();
        for row in rows.iter().filter(|r| r.activation == act && r.kind == "empirical") {
            ok &= row.lambda_min > 0.0;
            if row.n == 100_000 {
                ok &= (row.lambda_min - pop.lambda_min).abs() <= 3.0 * pop.mc_stderr;
            }
        }
    }
    for row in rows.iter().filter(|r| r.activation == Activation::Quadratic) {
        ok &= row.lambda_min.abs() < 1e-8;
    }
    assert!(verdict(5, "eigenvalue figure reproduction", ok));
}

#[test]
fn criterion_06_orthogonal_lower_bound() {
    let w = make_ground_truth(2, 2, 1.0, 3).unwrap();
    assert!((w.transpose() * &w - DMatrix::identity(2, 2)).amax() < 1e-12);
    let mut ok = true;
    for r in [1usize, 2] {
        let prob = ProblemConfig::new(2, r, 2, Activation::Relu, 5).unwrap();
        let (h, se) = population_hessian_mc(&w, &prob, 1_000_000, 9).unwrap();
        let rep = spectrum(&h, &w, Activation::Relu).unwrap();
        ok &= rep.lambda_min >= r as f64 * 0.091 - 3.0 * se;
    }
    assert!(verdict(6, "orthogonal lower bound", ok));
}

#[test]
fn criterion_07_descent_figure() {
    let cfg = shipped_config("fig_b.cfg");
    let dir = tempfile::tempdir().unwrap();
    let runs = cmd_fig_b(&cfg, dir.path()).unwrap();
    let mut ok = runs.len() == 5;
    for (_, report) in &runs {
        ok &= report
            .trace
            .iter()
            .any(|rec| rec.loss < 1e-8 && rec.iter <= 10_000);
        let (rate, r2) = fit_log_linear_tail(&report.trace).unwrap();
        ok &= rate > 0.0 && rate < 1.0 && r2 > 0.95;
    }
    assert!(verdict(7, "descent figure reproduction", ok));
}

#[test]
fn criterion_08_local_contraction() {
    let (prob, wstar) = fig_config();
    let sigma_t = {
        let svd = wstar.clone().svd(false, false);
        svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let stream = SeedStream::new(8);
    let mut ok = true;
    for seed in 0..5u64 {
        let mut rng = stream.indexed("direction", seed);
        let mut dir = DMatrix::from_fn(5, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        dir /= dir.norm();
        let wnear = &wstar + dir * (1e-3 * sigma_t);
        let s = sample_dataset(&wstar, &prob, 10_000, 800 + seed).unwrap();
        let (ratio, bound) = contraction_check(&wnear, &wstar, &s, &prob).unwrap();
        ok &= ratio < 1.0 && bound > 0.0 && bound < 1.0;
    }
    assert!(verdict(8, "local contraction", ok));
}

#[test]
fn criterion_09_tensor_init_trend() {
    let (prob, wstar) = fig_config();
    let mut medians = Vec::new();
    for n in [10_000usize, 40_000, 160_000] {
        let mut errs: Vec<f64> = (0..10u64)
            .map(|seed| {
                let s = sample_dataset(&wstar, &prob, n, 10_000 + seed).unwrap();
                let opts = TensorInitOptions { seed, ..Default::default() };
                let w0 = tensor_initialize(&s, &prob, &opts).unwrap();
                min_matching_error(&w0, &wstar, false).unwrap() / wstar.norm()
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(0.5 * (errs[4] + errs[5]));
    }
    let ok = medians.windows(2).all(|w| w[1] <= w[0]) && medians[2] < 0.1;
    assert!(verdict(9, "tensor init accuracy trend", ok));
}

#[test]
fn criterion_10_end_to_end_recovery() {
    // Algorithm 1's constant step 1/(t r^2 sigma_1^2) with the planted
    // sigma_1 = kappa = 2; T = 500 leaves ~400 samples per slice when
    // resampling, so the initialization is the accuracy bottleneck.
    let mut ok = true;
    for resample in [true, false] {
        let text = format!(
            "[experiment]\nk = 5\nr = 2\nt = 2\nkappa = 2.0\nactivations = squared_relu\n\
             n_samples = 200000\nmax_iters = 500\nstep_size = 0.03125\nresample = {resample}\n\
             seeds = 0\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_pipeline(&cfg, dir.path()).unwrap();
        ok &= rows[0].final_rel_error <= 1e-3;
    }
    assert!(verdict(10, "end to end recovery", ok));
}

#[test]
fn criterion_11_determinism() {
    let mut ok = true;
    let rerun = |text: &str, files: &[&str], ok: &mut bool| {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for dir in [d1.path(), d2.path()] {
            match files[0] {
                "fig_a.csv" => {
                    cmd_fig_a(&cfg, dir).unwrap();
                }
                "fig_b.csv" => {
                    cmd_fig_b(&cfg, dir).unwrap();
                }
                "pipeline.csv" => {
                    cmd_pipeline(&cfg, dir).unwrap();
                }
                _ => {
                    cmd_moments_table(&cfg, dir).unwrap();
                }
            }
        }
        for f in files {
            *ok &= std::fs::read(d1.path().join(f)).unwrap()
                == std::fs::read(d2.path().join(f)).unwrap();
        }
    };

    const GEOM: &str = "[experiment]\nk = 5\nr = 2\nt = 2\nkappa = 2.0\nseeds = 0, 1\n";
    rerun(
        &format!("{GEOM}n_grid = 100, 1000\nn_mc = 10000\n"),
        &["fig_a.csv", "fig_a.svg"],
        &mut ok,
    );
    rerun(
        &format!("{GEOM}n_samples = 300\nmax_iters = 200\nstep_size = 0.01\n"),
        &["fig_b.csv", "fig_b.svg"],
        &mut ok,
    );
    rerun(
        &format!("{GEOM}n_samples = 30000\nmax_iters = 40\nresample = false\n"),
        &["pipeline.csv"],
        &mut ok,
    );
    rerun("[experiment]\nsigmas = 0.5, 1.0\n", &["moments_table.csv"], &mut ok);
    assert!(verdict(11, "determinism", ok));
}
