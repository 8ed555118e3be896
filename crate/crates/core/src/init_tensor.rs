//! Tensor-method initialization: estimate the label-weighted patch score
//! moments, whiten, decompose by robust power iteration with deflation, and
//! recover kernel magnitudes and signs.
//!
//! The second moment E[y (x_i x_i^T - I)] is a mixture of w-bar rank-one
//! terms with coefficients gamma2 - gamma0; the de-biased third moment
//! E[y (x_i^{x3} - x_i tilde-x I)] carries gamma3 - 3 gamma1 on the same
//! directions. Whitening with the second moment orthogonalizes the
//! components even when the planted kernels are not orthogonal, as long as
//! the coefficients share a sign.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::activation::{moment_profile, Activation};
use crate::model::{ProblemConfig, SampleSet, WeightMatrix};
use crate::parallel;
use crate::rng::SeedStream;
use crate::tensor3::SymTensor3;
pub use crate::tensor3::tilde_outer;
use crate::{Error, Result};

/// Patch-averaged empirical score moments.
#[derive(Clone, Debug)]
pub struct MomentEstimates {
    pub m2: DMatrix<f64>,
    pub m3: SymTensor3,
    pub n_used: usize,
}

struct MomAcc {
    m2: DMatrix<f64>,
    m3: SymTensor3,
}

/// Estimates M2 and M3 from a sample set, averaging over the r patches
/// (every patch shares the planted weights, so the expectations agree and
/// the average cuts variance). The third moment is symmetrized.
pub fn estimate_moments(s: &SampleSet, cfg: &ProblemConfig) -> Result<MomentEstimates> {
    if s.len() < cfg.k {
        return Err(Error::RankDeficient(format!(
            "need at least k={} samples to whiten the second moment, got {}",
            cfg.k,
            s.len()
        )));
    }
    if s.d != cfg.d || s.k != cfg.k || s.r != cfg.r {
        return Err(Error::Config("sample set geometry does not match config".into()));
    }
    SymTensor3::zeros(cfg.k)?; // dimension guard before spawning accumulators
    let k = cfg.k;
    let r = cfg.r;
    let acc = parallel::indexed_sum(
        s.len(),
        || MomAcc {
            m2: DMatrix::zeros(k, k),
            m3: SymTensor3::zeros(k).expect("dimension validated"),
        },
        |acc, i| {
            let y = s.label(i);
            if y == 0.0 {
                return;
            }
            let x = s.input(i);
            for i_patch in 0..r {
                let xp = &x[i_patch * k..(i_patch + 1) * k];
                // y * (xp[a] * xp[b]) keeps the accumulation exactly
                // symmetric.
                for a in 0..k {
                    for b in 0..k {
                        acc.m2[(a, b)] += y * (xp[a] * xp[b]);
                    }
                    acc.m2[(a, a)] -= y;
                }
                acc.m3.add_scaled_outer3(xp, y);
                acc.m3.add_scaled_tilde_outer(xp, -y);
            }
        },
        |acc, part| {
            acc.m2 += part.m2;
            acc.m3.axpy(1.0, &part.m3);
        },
    );
    let scale = 1.0 / (s.len() as f64 * r as f64);
    let mut m3 = acc.m3;
    m3.scale(scale);
    m3.symmetrize();
    Ok(MomentEstimates { m2: acc.m2 * scale, m3, n_used: s.len() })
}

/// Relative eigenvalue threshold below which the second moment is treated
/// as rank deficient (the excluded gamma2 = gamma0 case, or too few
/// samples).
pub const WHITEN_RANK_TOL: f64 = 1e-10;

/// Builds a whitener Wh (k x t) with Wh^T m2 Wh = I_t from the top-t
/// eigenspace of m2, together with the orthonormal basis of that space.
/// A negative-definite top block is handled by the global sign flip; mixed
/// signs among the top t eigenvalues are rejected.
pub fn whiten(m2: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = m2.nrows();
    if m2.ncols() != k || t == 0 || t > k {
        return Err(Error::Config(format!(
            "whitening a {}x{} matrix with t={t} components",
            m2.nrows(),
            m2.ncols()
        )));
    }
    let scale = m2.amax();
    if (m2 - m2.transpose()).amax() > 1e-10 * scale.max(1e-300) {
        return Err(Error::Config("second moment is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(m2.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .partial_cmp(&eig.eigenvalues[a].abs())
            .expect("finite eigenvalues")
    });
    let lam1 = eig.eigenvalues[order[0]].abs();
    let global_sign = eig.eigenvalues[order[0]].signum();
    let mut whitener = DMatrix::zeros(k, t);
    let mut basis = DMatrix::zeros(k, t);
    for j in 0..t {
        let lam = eig.eigenvalues[order[j]];
        if lam.abs() < WHITEN_RANK_TOL * lam1 || lam1 == 0.0 {
            return Err(Error::RankDeficient(format!(
                "eigenvalue {} of the second moment is {lam:e} (largest {lam1:e}); \
                 the second-moment coefficient is degenerate or the sample is too small",
                j + 1
            )));
        }
        if lam * global_sign < 0.0 {
            return Err(Error::RankDeficient(
                "top eigenvalues of the second moment have mixed signs".into(),
            ));
        }
        let inv_sqrt = 1.0 / lam.abs().sqrt();
        let col = eig.eigenvectors.column(order[j]);
        for a in 0..k {
            basis[(a, j)] = col[a];
            whitener[(a, j)] = col[a] * inv_sqrt;
        }
    }
    Ok((whitener, basis))
}

/// Output of the symmetric tensor decomposition, in the original space.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    /// Unit direction estimates (up to sign), one per component.
    pub directions: Vec<DVector<f64>>,
    /// Signed third-moment coefficients (estimates of gamma3 - 3 gamma1).
    pub coeffs3: Vec<f64>,
    /// Second-moment coefficients recovered through the whitener
    /// (estimates of |gamma2 - gamma0|); exact for non-orthogonal planted
    /// directions, unlike the naive quadratic form.
    pub coeffs2: Vec<f64>,
    /// Relative reconstruction error of the projected third moment.
    pub residual: f64,
    /// Component pairs whose directions nearly coincide (|cos| > 0.99).
    pub collisions: Vec<(usize, usize)>,
}

/// Successive-iterate cosine at which power iteration counts as converged.
pub const POWER_TOL: f64 = 1e-10;

fn normalize(u: &mut [f64]) -> f64 {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in u.iter_mut() {
            *v /= norm;
        }
    }
    norm
}

/// Repeated tensor-vector iterations u <- T(I, u, u)/|.|; returns true when
/// successive iterates align within [`POWER_TOL`].
fn power_iterate(t: &SymTensor3, u: &mut Vec<f64>, n_iters: usize) -> bool {
    for _ in 0..n_iters {
        let mut v = t.contract_vv(u);
        if normalize(&mut v) < 1e-300 {
            return false;
        }
        let cos: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let done = cos.abs() > 1.0 - POWER_TOL;
        *u = v;
        if done {
            return true;
        }
    }
    false
}

/// Pairs of near-parallel directions (|cos| > 0.99), reported so callers
/// can flag unreliable component separation.
pub fn find_collisions(directions: &[DVector<f64>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..directions.len() {
        for j in (i + 1)..directions.len() {
            if directions[i].dot(&directions[j]).abs() > 0.99 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Whitens m3 in all three modes, extracts `t` components by robust power
/// iteration with restarts and deflation, and un-whitens. The returned
/// directions are unit vectors; coeffs3 carry the signed weights of the
/// rank-one terms; coeffs2 are the squared un-whitening norms.
pub fn decompose(
    m3: &SymTensor3,
    whitener: &DMatrix<f64>,
    t: usize,
    n_restarts: usize,
    n_iters: usize,
    seed: u64,
) -> Result<DecompositionResult> {
    let k = m3.dim();
    if whitener.nrows() != k {
        return Err(Error::Config("whitener row dimension does not match tensor".into()));
    }
    let m = whitener.ncols();
    if t == 0 || t > m || n_restarts == 0 || n_iters == 0 {
        return Err(Error::Config(format!(
            "invalid decomposition parameters: t={t}, whitened dim {m}, \
             n_restarts={n_restarts}, n_iters={n_iters}"
        )));
    }
    let mut tw = m3.mode_product(whitener)?;
    // Un-whitener B = Wh (Wh^T Wh)^{-1}: maps whitened components back to
    // the original space; for an exact whitener B = U Lambda^{1/2} and
    // |B u_j| recovers the second-moment coefficient.
    let gram = whitener.transpose() * whitener;
    let b = whitener
        * gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("whitener gram matrix is singular".into()))?
            .inverse();

    let stream = SeedStream::new(seed);
    let mut whitened_pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(t);
    for comp in 0..t {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for restart in 0..n_restarts {
            let mut rng = stream.indexed("restart", (comp * n_restarts + restart) as u64);
            let mut u: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            if normalize(&mut u) == 0.0 {
                continue;
            }
            if !power_iterate(&tw, &mut u, n_iters) {
                continue;
            }
            let lam = tw.contract_vvv(&u);
            if best.as_ref().is_none_or(|(l, _)| lam.abs() > l.abs()) {
                best = Some((lam, u));
            }
        }
        let Some((_, mut u)) = best else {
            return Err(Error::Decomposition(format!(
                "power iteration failed to converge for component {} \
                 ({n_restarts} restarts, {n_iters} iterations)",
                comp + 1
            )));
        };
        // Polish the winning restart before deflation.
        power_iterate(&tw, &mut u, n_iters);
        let lam = tw.contract_vvv(&u);
        tw.add_scaled_outer3(&u, -lam);
        whitened_pairs.push((lam, u));
    }

    let mut directions = Vec::with_capacity(t);
    let mut coeffs3 = Vec::with_capacity(t);
    let mut coeffs2 = Vec::with_capacity(t);
    for (lam, u) in &whitened_pairs {
        let bu = &b * DVector::from_column_slice(u);
        let norm = bu.norm();
        if norm == 0.0 {
            return Err(Error::Decomposition("component un-whitens to zero".into()));
        }
        directions.push(bu / norm);
        coeffs2.push(norm * norm);
        coeffs3.push(lam * norm * norm * norm);
    }

    // Residual against the projection of m3 onto the whitened subspace.
    let projector = &b * whitener.transpose();
    let projected = m3.mode_product(&projector)?;
    let mut diff = projected.clone();
    for (dir, c3) in directions.iter().zip(&coeffs3) {
        diff.add_scaled_outer3(dir.as_slice(), -c3);
    }
    let denom = projected.frobenius_norm();
    let residual = if denom > 0.0 { diff.frobenius_norm() / denom } else { diff.frobenius_norm() };

    let collisions = find_collisions(&directions);
    Ok(DecompositionResult { directions, coeffs3, coeffs2, residual, collisions })
}

/// Threshold on |gamma3 - 3 gamma1| below which sign recovery is refused.
pub const SIGN_COEFF_TOL: f64 = 1e-8;

/// Finds sigma with |gamma2(sigma) - gamma0(sigma)| = target by geometric
/// bracket expansion from sqrt(target) followed by bisection.
fn solve_scale_by_bisection(act: Activation, target: f64) -> Result<f64> {
    let g = |sigma: f64| -> Result<f64> {
        Ok(moment_profile(act, sigma)?.m2_coefficient().abs() - target)
    };
    let sigma_hat = target.sqrt();
    let (floor, ceil) = (1e-6 * sigma_hat, 1e3 * sigma_hat);
    let mut lo = sigma_hat;
    let mut hi = sigma_hat;
    let mut g_lo = g(lo)?;
    let mut g_hi = g_lo;
    while g_lo * g_hi > 0.0 {
        if lo <= floor && hi >= ceil {
            return Err(Error::Numerical(format!(
                "no scale with |gamma2 - gamma0| = {target:e} for {} in \
                 [{floor:e}, {ceil:e}]",
                act.name()
            )));
        }
        lo = (lo / 2.0).max(floor);
        hi = (hi * 2.0).min(ceil);
        g_lo = g(lo)?;
        g_hi = g(hi)?;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid)?;
        if g_lo * g_mid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Recovers kernel norms from the second-moment coefficients (closed-form
/// inversion for positively homogeneous activations, bisection otherwise)
/// and resolves each direction's sign by matching the third-moment
/// coefficient's sign. Signs are +-1.0, to be applied to the directions.
pub fn recover_magnitudes(
    dec: &DecompositionResult,
    act: Activation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut norms = Vec::with_capacity(dec.coeffs2.len());
    let mut signs = Vec::with_capacity(dec.coeffs2.len());
    for (j, &c2) in dec.coeffs2.iter().enumerate() {
        if !c2.is_finite() || c2 <= 0.0 {
            return Err(Error::Numerical(format!(
                "second-moment coefficient of component {} is {c2}; \
                 gamma2 = gamma0 is the excluded degenerate case",
                j + 1
            )));
        }
        let sigma = if act.positively_homogeneous() {
            let base = moment_profile(act, 1.0)?.m2_coefficient();
            if base.abs() < 1e-12 {
                return Err(Error::Numerical(format!(
                    "gamma2 - gamma0 vanishes identically for {}",
                    act.name()
                )));
            }
            let degree = act.homogeneity_exponent() as f64 + 1.0;
            (c2 / base.abs()).powf(1.0 / degree)
        } else {
            solve_scale_by_bisection(act, c2)?
        };
        let m3c = moment_profile(act, sigma)?.m3_coefficient();
        if m3c.abs() < SIGN_COEFF_TOL {
            return Err(Error::Numerical(format!(
                "gamma3 - 3 gamma1 is {m3c:e} at scale {sigma}; sign recovery \
                 is ill-posed for {}",
                act.name()
            )));
        }
        let sign = if dec.coeffs3[j] * m3c >= 0.0 { 1.0 } else { -1.0 };
        norms.push(sigma);
        signs.push(sign);
    }
    Ok((norms, signs))
}

#[derive(Clone, Debug)]
pub struct TensorInitOptions {
    /// Restarts per component; None means 10 t.
    pub n_restarts: Option<usize>,
    pub n_iters: usize,
    pub seed: u64,
}

impl Default for TensorInitOptions {
    fn default() -> Self {
        Self { n_restarts: None, n_iters: 100, seed: 0 }
    }
}

/// Full initialization: moments -> whitening -> decomposition -> magnitudes.
/// Column j of the result is norm_j * sign_j * direction_j.
pub fn tensor_initialize(
    s0: &SampleSet,
    cfg: &ProblemConfig,
    opts: &TensorInitOptions,
) -> Result<WeightMatrix> {
    let moments = estimate_moments(s0, cfg)?;
    let (whitener, _basis) = whiten(&moments.m2, cfg.t)?;
    let n_restarts = opts.n_restarts.unwrap_or(10 * cfg.t);
    let dec = decompose(&moments.m3, &whitener, cfg.t, n_restarts, opts.n_iters, opts.seed)?;
    let (norms, signs) = recover_magnitudes(&dec, cfg.activation)?;
    let mut w0 = WeightMatrix::zeros(cfg.k, cfg.t);
    for j in 0..cfg.t {
        let scale = norms[j] * signs[j];
        for a in 0..cfg.k {
            w0[(a, j)] = scale * dec.directions[j][a];
        }
    }
    Ok(w0)
}
