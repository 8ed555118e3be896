//! Empirical squared loss, its analytic gradient and Hessian, a Monte-Carlo
//! population Hessian, and spectrum diagnostics.
//!
//! With residual e(x) = f(W, x) - y and per-kernel factors
//! g_j(x) = sum_i phi'(w_j . x_i) x_i, the loss is (1/2n) sum e^2, the
//! gradient column j is (1/n) sum e g_j, and the Hessian block (j, l) is
//! (1/n) sum g_j g_l^T plus, on the diagonal of smooth activations, the
//! residual curvature term (1/n) sum e sum_i phi''(w_j . x_i) x_i x_i^T.

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::activation::{moment_profile, Activation, Smoothness};
use crate::model::{forward, patch_dots, ProblemConfig, SampleSet, WeightMatrix};
use crate::parallel;
use crate::rng::SeedStream;
use crate::{Error, Result};

/// Monte-Carlo draw count for population Hessian references.
pub const MC_REFERENCE_SAMPLES: usize = 1_000_000;

/// Largest Hessian side the dense eigensolver accepts.
pub const MAX_EIGEN_DIM: usize = 2048;

/// The (t*k) x (t*k) empirical or population Hessian, stored as t x t
/// blocks of size k x k; row/column j*k + a is kernel j, coordinate a.
#[derive(Clone, Debug)]
pub struct HessianMatrix {
    pub cfg: ProblemConfig,
    /// Max entrywise Monte-Carlo standard error (0 for empirical assemblies).
    pub mc_stderr: f64,
    mat: DMatrix<f64>,
}

impl HessianMatrix {
    /// Wraps an existing symmetric matrix (dimension and symmetry checked).
    pub fn from_matrix(cfg: &ProblemConfig, mat: DMatrix<f64>) -> Result<Self> {
        let n = cfg.t * cfg.k;
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::Config(format!(
                "hessian is {}x{}, expected {n}x{n}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let h = Self { cfg: *cfg, mc_stderr: 0.0, mat };
        let scale = h.mat.amax().max(1.0);
        if h.max_asymmetry() > 1e-10 * scale {
            return Err(Error::CheckFailed("hessian symmetry violated".into()));
        }
        Ok(h)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// The k x k block coupling kernels j and l.
    pub fn block(&self, j: usize, l: usize) -> DMatrixView<'_, f64> {
        let k = self.cfg.k;
        self.mat.view((j * k, l * k), (k, k))
    }

    /// Largest |H_ab - H_ba|.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                worst = worst.max((self.mat[(a, b)] - self.mat[(b, a)]).abs());
            }
        }
        worst
    }

    /// Largest singular value; for symmetric input this is the spectral norm.
    pub fn spectral_norm(&self) -> f64 {
        SymmetricEigen::new(self.mat.clone()).eigenvalues.amax()
    }
}

fn require_nonempty(s: &SampleSet) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Config("empty sample set".into()));
    }
    Ok(())
}

fn check_dims(w: &WeightMatrix, s: &SampleSet, cfg: &ProblemConfig) -> Result<()> {
    cfg.check_weight_dims(w)?;
    if s.d != cfg.d || s.k != cfg.k || s.r != cfg.r {
        return Err(Error::Config("sample set geometry does not match config".into()));
    }
    Ok(())
}

/// (1/2n) sum (f(W, x) - y)^2.
pub fn empirical_risk(w: &WeightMatrix, s: &SampleSet, cfg: &ProblemConfig) -> Result<f64> {
    require_nonempty(s)?;
    check_dims(w, s, cfg)?;
    let sum = parallel::indexed_sum_f64(s.len(), |i| {
        let e = forward(w, s.input(i), cfg) - s.label(i);
        e * e
    });
    Ok(sum / (2.0 * s.len() as f64))
}

struct GradAcc {
    g: Vec<f64>,
    dots: Vec<f64>,
}

/// Column j is (1/n) sum e(x) sum_i phi'(w_j . x_i) x_i.
pub fn gradient(w: &WeightMatrix, s: &SampleSet, cfg: &ProblemConfig) -> Result<WeightMatrix> {
    require_nonempty(s)?;
    check_dims(w, s, cfg)?;
    let (k, r, t) = (cfg.k, cfg.r, cfg.t);
    let act = cfg.activation;
    let acc = parallel::indexed_sum(
        s.len(),
        || GradAcc { g: vec![0.0; k * t], dots: vec![0.0; t * r] },
        |acc, i| {
            let x = s.input(i);
            patch_dots(w, x, cfg, &mut acc.dots);
            // Same summation order as `forward`, so e is bitwise zero at
            // the generating weights.
            let mut fit = 0.0;
            for z in &acc.dots {
                fit += act.value(*z);
            }
            let e = fit - s.label(i);
            for j in 0..t {
                let col = &mut acc.g[j * k..(j + 1) * k];
                for i_patch in 0..r {
                    let coeff = e * act.d1(acc.dots[j * r + i_patch]);
                    if coeff == 0.0 {
                        continue;
                    }
                    let xp = &x[i_patch * k..(i_patch + 1) * k];
                    for a in 0..k {
                        col[a] += coeff * xp[a];
                    }
                }
            }
        },
        |acc, part| {
            for (dst, src) in acc.g.iter_mut().zip(&part.g) {
                *dst += src;
            }
        },
    );
    let scale = 1.0 / s.len() as f64;
    Ok(DMatrix::from_vec(k, t, acc.g.into_iter().map(|v| v * scale).collect()))
}

struct HessAcc {
    h: DMatrix<f64>,
    dots: Vec<f64>,
    v: Vec<f64>,
}

/// Adds one sample's Hessian contribution (not yet divided by n) to `acc`.
/// The curvature term is skipped when the residual is exactly zero, which
/// also covers the population-at-ground-truth path.
fn hessian_sample(
    acc: &mut HessAcc,
    w: &WeightMatrix,
    x: &[f64],
    y: f64,
    cfg: &ProblemConfig,
    with_curvature: bool,
) {
    let (k, r, t) = (cfg.k, cfg.r, cfg.t);
    let act = cfg.activation;
    patch_dots(w, x, cfg, &mut acc.dots);
    // Summation order matches `forward`; e vanishes bitwise when y came
    // from these same weights.
    let mut fit = 0.0;
    for z in &acc.dots {
        fit += act.value(*z);
    }
    let e = fit - y;
    acc.v.fill(0.0);
    for j in 0..t {
        let col = &mut acc.v[j * k..(j + 1) * k];
        for i_patch in 0..r {
            let d1 = act.d1(acc.dots[j * r + i_patch]);
            if d1 == 0.0 {
                continue;
            }
            let xp = &x[i_patch * k..(i_patch + 1) * k];
            for a in 0..k {
                col[a] += d1 * xp[a];
            }
        }
    }
    // Outer product v v^T; products commute, so the fill is exactly
    // symmetric and stays so under the chunked merges.
    let n = t * k;
    for a in 0..n {
        let va = acc.v[a];
        if va == 0.0 {
            continue;
        }
        for b in 0..n {
            acc.h[(a, b)] += va * acc.v[b];
        }
    }
    if with_curvature && e != 0.0 {
        for j in 0..t {
            for i_patch in 0..r {
                let c = e * act.d2(acc.dots[j * r + i_patch]);
                if c == 0.0 {
                    continue;
                }
                let xp = &x[i_patch * k..(i_patch + 1) * k];
                // c * (xp[a] * xp[b]) keeps (a, b) and (b, a) bitwise equal.
                for a in 0..k {
                    for b in 0..k {
                        acc.h[(j * k + a, j * k + b)] += c * (xp[a] * xp[b]);
                    }
                }
            }
        }
    }
}

fn new_hess_acc(cfg: &ProblemConfig) -> HessAcc {
    HessAcc {
        h: DMatrix::zeros(cfg.t * cfg.k, cfg.t * cfg.k),
        dots: vec![0.0; cfg.t * cfg.r],
        v: vec![0.0; cfg.t * cfg.k],
    }
}

/// Empirical Hessian of the risk. Diagonal blocks carry the residual
/// curvature term for smooth activations; the piecewise-linear family has
/// phi'' = 0 away from a measure-zero kink set, so the term is omitted.
pub fn hessian(w: &WeightMatrix, s: &SampleSet, cfg: &ProblemConfig) -> Result<HessianMatrix> {
    require_nonempty(s)?;
    check_dims(w, s, cfg)?;
    let with_curvature = cfg.activation.smoothness() == Smoothness::Smooth;
    let acc = parallel::indexed_sum(
        s.len(),
        || new_hess_acc(cfg),
        |acc, i| hessian_sample(acc, w, s.input(i), s.label(i), cfg, with_curvature),
        |acc, part| acc.h += part.h,
    );
    let mat = acc.h / s.len() as f64;
    Ok(HessianMatrix { cfg: *cfg, mc_stderr: 0.0, mat })
}

struct McAcc {
    inner: HessAcc,
    sum_sq: DMatrix<f64>,
    x: Vec<f64>,
}

/// Monte-Carlo estimate of the population Hessian at `w`, with `w` playing
/// the planted role: labels for the fresh Gaussian draws come from `w`
/// itself, so the residual vanishes and each draw contributes v v^T.
/// Returns the estimate and the largest entrywise standard error.
pub fn population_hessian_mc(
    w: &WeightMatrix,
    cfg: &ProblemConfig,
    n_mc: usize,
    seed: u64,
) -> Result<(HessianMatrix, f64)> {
    if n_mc < 100 {
        return Err(Error::Config(format!("n_mc must be >= 100, got {n_mc}")));
    }
    cfg.check_weight_dims(w)?;
    let stream = SeedStream::new(seed);
    let d = cfg.d;
    let n_dim = cfg.t * cfg.k;
    let acc = parallel::indexed_sum(
        n_mc,
        || McAcc {
            inner: new_hess_acc(cfg),
            sum_sq: DMatrix::zeros(n_dim, n_dim),
            x: vec![0.0; d],
        },
        |acc, i| {
            let mut rng = stream.indexed("hessian_mc", i as u64);
            for v in acc.x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let y = forward(w, &acc.x, cfg);
            let before = acc.inner.h.clone();
            hessian_sample(&mut acc.inner, w, &acc.x, y, cfg, true);
            // Entrywise second moment for the standard-error estimate.
            let delta = &acc.inner.h - before;
            acc.sum_sq.zip_apply(&delta, |sq, d| *sq += d * d);
        },
        |acc, part| {
            acc.inner.h += part.inner.h;
            acc.sum_sq += part.sum_sq;
        },
    );
    let n = n_mc as f64;
    let mean = acc.inner.h / n;
    let mut max_se = 0.0f64;
    for a in 0..n_dim {
        for b in 0..n_dim {
            let var = (acc.sum_sq[(a, b)] / n - mean[(a, b)] * mean[(a, b)]).max(0.0);
            max_se = max_se.max((var / n).sqrt());
        }
    }
    let h = HessianMatrix { cfg: *cfg, mc_stderr: max_se, mat: mean };
    Ok((h, max_se))
}

/// Extreme eigenvalues plus the nominal bounds of the planted problem.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// All t*k eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// r rho(sigma_t) / (kappa^2 lambda), Theta-constant 1. Diagnostic only.
    pub m0_nominal: f64,
    /// t r^2 sigma_1^{2p}, Theta-constant 1. Diagnostic only.
    pub big_m0_nominal: f64,
    /// Carried over from the Hessian (0 for empirical assemblies).
    pub mc_stderr: f64,
}

/// Nominal Hessian bounds (m0, M0) of the planted problem, Theta-constants
/// taken as 1. These drive step-size defaults, never pass/fail checks.
pub fn nominal_bounds(
    wstar: &WeightMatrix,
    act: Activation,
    r: usize,
    t: usize,
) -> Result<(f64, f64)> {
    let rep = crate::model::conditioning(wstar, act)?;
    let rho_sigmat = moment_profile(act, rep.sigmat)?.rho;
    let m0 = r as f64 * rho_sigmat / (rep.kappa * rep.kappa * rep.lambda);
    let p = act.homogeneity_exponent();
    let big_m0 = t as f64 * (r as f64).powi(2) * rep.sigma1.powi(2 * p as i32);
    Ok((m0, big_m0))
}

pub fn spectrum(
    h: &HessianMatrix,
    wstar: &WeightMatrix,
    act: Activation,
) -> Result<SpectrumReport> {
    let n = h.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::Config(format!(
            "dense eigensolver limited to dimension {MAX_EIGEN_DIM}, got {n}"
        )));
    }
    let eig = SymmetricEigen::new(h.matrix().clone());
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition produced non-finite values".into()));
    }
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    let (m0_nominal, big_m0_nominal) = nominal_bounds(wstar, act, h.cfg.r, h.cfg.t)?;
    Ok(SpectrumReport {
        lambda_min: eigenvalues[0],
        lambda_max: eigenvalues[n - 1],
        eigenvalues,
        m0_nominal,
        big_m0_nominal,
        mc_stderr: h.mc_stderr,
    })
}

/// Central-difference gradient of the empirical risk, step `h` per entry.
pub fn fd_gradient(
    w: &WeightMatrix,
    s: &SampleSet,
    cfg: &ProblemConfig,
    h: f64,
) -> Result<WeightMatrix> {
    let mut out = WeightMatrix::zeros(w.nrows(), w.ncols());
    for j in 0..w.ncols() {
        for a in 0..w.nrows() {
            let mut wp = w.clone();
            wp[(a, j)] += h;
            let mut wm = w.clone();
            wm[(a, j)] -= h;
            out[(a, j)] =
                (empirical_risk(&wp, s, cfg)? - empirical_risk(&wm, s, cfg)?) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Central-difference Jacobian of the gradient, step `h` per entry.
pub fn fd_hessian(
    w: &WeightMatrix,
    s: &SampleSet,
    cfg: &ProblemConfig,
    h: f64,
) -> Result<DMatrix<f64>> {
    let (k, t) = (cfg.k, cfg.t);
    let mut out = DMatrix::zeros(t * k, t * k);
    for j in 0..t {
        for a in 0..k {
            let mut wp = w.clone();
            wp[(a, j)] += h;
            let gp = gradient(&wp, s, cfg)?;
            let mut wm = w.clone();
            wm[(a, j)] -= h;
            let gm = gradient(&wm, s, cfg)?;
            let col = (gp - gm) / (2.0 * h);
            for l in 0..t {
                for b in 0..k {
                    out[(l * k + b, j * k + a)] = col[(b, l)];
                }
            }
        }
    }
    Ok(out)
}

/// Smallest |w_j . x_i| over the set: the margin between the evaluation
/// point and the activation kinks.
pub fn min_abs_preactivation(w: &WeightMatrix, s: &SampleSet, cfg: &ProblemConfig) -> f64 {
    let mut dots = vec![0.0; cfg.t * cfg.r];
    let mut min = f64::INFINITY;
    for i in 0..s.len() {
        patch_dots(w, s.input(i), cfg, &mut dots);
        for z in &dots {
            min = min.min(z.abs());
        }
    }
    min
}

/// Worst relative finite-difference errors over random instances.
#[derive(Clone, Debug)]
pub struct DerivativeCheck {
    pub activation: Activation,
    pub instances: usize,
    pub grad_rel_err: f64,
    /// None for the piecewise-linear family (phi'' = 0 a.e. makes the
    /// comparison meaningless).
    pub hess_rel_err: Option<f64>,
}

impl DerivativeCheck {
    /// True when every measured error is under its threshold.
    pub fn passed(&self) -> bool {
        self.grad_rel_err < FD_GRAD_REL_TOL
            && self.hess_rel_err.is_none_or(|h| h < FD_HESS_REL_TOL)
    }
}

/// Finite-difference steps of the derivative checks.
pub const FD_GRAD_STEP: f64 = 1e-5;
pub const FD_HESS_STEP: f64 = 1e-4;
/// Pass thresholds for the finite-difference suites.
pub const FD_GRAD_REL_TOL: f64 = 1e-5;
pub const FD_HESS_REL_TOL: f64 = 1e-4;

/// Margin kept between every pre-activation and a kink so that no central
/// difference steps across one (step * max|x_entry| stays well below it).
const KINK_MARGIN: f64 = 1e-3;

/// Compares analytic derivatives against central differences at `instances`
/// random (W, S) pairs. Kinked activations get kink-free instances by
/// rejection; piecewise-linear kinds skip the Hessian comparison.
pub fn check_derivatives(
    act: Activation,
    instances: usize,
    seed: u64,
) -> Result<DerivativeCheck> {
    let cfg = ProblemConfig::new(3, 2, 2, act, seed)?;
    let stream = SeedStream::new(seed);
    let check_hessian = act.smoothness() == Smoothness::Smooth;
    let mut grad_err = 0.0f64;
    let mut hess_err = 0.0f64;
    let mut accepted = 0;
    let mut attempt = 0u64;
    while accepted < instances {
        attempt += 1;
        if attempt > 50 * instances as u64 {
            return Err(Error::Numerical(format!(
                "could not draw {instances} kink-free instances for {}",
                act.name()
            )));
        }
        let inst = stream.child("fd_instance", attempt);
        let wstar = crate::model::make_ground_truth(cfg.k, cfg.t, 1.5, inst.master())?;
        let s = crate::model::sample_dataset(&wstar, &cfg, 200, inst.child("data", 0).master())?;
        let mut rng = inst.stream("point");
        let w =
            WeightMatrix::from_fn(cfg.k, cfg.t, |_, _| {
                0.8 * rng.sample::<f64, _>(StandardNormal)
            });
        if act.kink_at_zero() && min_abs_preactivation(&w, &s, &cfg) < KINK_MARGIN {
            continue;
        }
        accepted += 1;

        let g = gradient(&w, &s, &cfg)?;
        let g_fd = fd_gradient(&w, &s, &cfg, FD_GRAD_STEP)?;
        grad_err = grad_err.max((g.clone() - g_fd).amax() / g.amax().max(1e-12));

        if check_hessian {
            let h = hessian(&w, &s, &cfg)?;
            let h_fd = fd_hessian(&w, &s, &cfg, FD_HESS_STEP)?;
            let scale = h.matrix().amax().max(1e-12);
            hess_err = hess_err.max((h.matrix() - h_fd).amax() / scale);
        }
    }
    Ok(DerivativeCheck {
        activation: act,
        instances,
        grad_rel_err: grad_err,
        hess_rel_err: check_hessian.then_some(hess_err),
    })
}

/// Measured spectral-norm deviation of the empirical Hessian at the ground
/// truth from a high-accuracy Monte-Carlo population reference, over an
/// ascending grid of sample sizes.
pub fn hessian_deviation_curve(
    wstar: &WeightMatrix,
    cfg: &ProblemConfig,
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    hessian_deviation_curve_with(wstar, cfg, n_grid, seed, MC_REFERENCE_SAMPLES)
}

/// As [`hessian_deviation_curve`] with an explicit reference draw count
/// (tests use smaller references to stay fast).
pub fn hessian_deviation_curve_with(
    wstar: &WeightMatrix,
    cfg: &ProblemConfig,
    n_grid: &[usize],
    seed: u64,
    n_mc_reference: usize,
) -> Result<Vec<(usize, f64)>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sample-size grid must be strictly ascending".into()));
    }
    let stream = SeedStream::new(seed);
    let (h_ref, _) = population_hessian_mc(
        wstar,
        cfg,
        n_mc_reference,
        stream.child("deviation_reference", 0).master(),
    )?;
    let mut out = Vec::with_capacity(n_grid.len());
    for (idx, &n) in n_grid.iter().enumerate() {
        let data_seed = stream.child("deviation_data", idx as u64).master();
        let s = crate::model::sample_dataset(wstar, cfg, n, data_seed)?;
        let h_emp = hessian(wstar, &s, cfg)?;
        let diff = HessianMatrix {
            cfg: *cfg,
            mc_stderr: 0.0,
            mat: h_emp.matrix() - h_ref.matrix(),
        };
        out.push((n, diff.spectral_norm()));
    }
    Ok(out)
}
