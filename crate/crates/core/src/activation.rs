//! Activation functions and their Gaussian moment functionals.
//!
//! For an activation `phi` and a scale `sigma > 0`, the quantities that
//! control the curvature of the planted-model risk are expectations over a
//! standard normal `z`:
//!
//! * `alpha_q(sigma) = E[phi'(sigma z) z^q]`, `q = 0, 1, 2`
//! * `beta_q(sigma)  = E[phi'(sigma z)^2 z^q]`, `q = 0, 2`
//! * `gamma_j(sigma) = E[phi(sigma z) z^j]`, `j = 0..3`
//!
//! and the curvature coefficient
//!
//! ```text
//! rho(sigma) = min{ beta0 - alpha0^2 - alpha1^2,
//!                   beta2 - alpha1^2 - alpha2^2,
//!                   alpha0 * alpha2 - alpha1^2,
//!                   alpha0^2 }.
//! ```
//!
//! `rho > 0` is the condition that makes the population Hessian positive
//! definite at the planted weights; `gamma2 - gamma0` and
//! `gamma3 - 3 gamma1` are the coefficients of the second and third
//! moment tensors used by the method-of-moments initializer.
//!
//! [`moment_profile`] computes every moment by quadrature and, where a
//! closed form exists, cross-checks the two values and returns the closed
//! form. A disagreement beyond `1e-6` is reported as a numerical error
//! rather than silently returning either value.

use crate::error::{Error, Result};
use crate::quadrature::gaussian_expectation;

/// Slope of the negative branch of `leaky_relu`.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Relative tolerance for the closed-form vs quadrature cross-check.
const CROSS_CHECK_TOL: f64 = 1e-6;

/// Supported activation kinds.
///
/// `quadratic` and `linear` are intentionally degenerate: their curvature
/// coefficient is non-positive, and they exist to exercise the failure
/// modes of the recovery pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    LeakyRelu,
    SquaredRelu,
    Sigmoid,
    Tanh,
    Erf,
    Quadratic,
    Linear,
}

/// Which branch of the smoothness requirement an activation satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// `|phi''| <= l2` almost everywhere.
    Smooth,
    /// Piecewise linear with finitely many kinks; `phi'' = 0` a.e.
    PiecewiseLinear,
}

impl Activation {
    pub const ALL: [Activation; 8] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::SquaredRelu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Erf,
        Activation::Quadratic,
        Activation::Linear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::SquaredRelu => "squared_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Erf => "erf",
            Activation::Quadratic => "quadratic",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(name: &str) -> Result<Activation> {
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown activation {name:?}; expected one of {}",
                    Activation::ALL.map(|a| a.name()).join(", ")
                ))
            })
    }

    /// Homogeneity exponent `p` of the derivative growth bound
    /// `0 <= phi'(z) <= l1 |z|^p`.
    pub fn homogeneity_exponent(&self) -> u32 {
        match self {
            Activation::Relu
            | Activation::LeakyRelu
            | Activation::Sigmoid
            | Activation::Tanh
            | Activation::Erf => 0,
            Activation::SquaredRelu | Activation::Quadratic | Activation::Linear => 1,
        }
    }

    /// Derivative growth constant `l1`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu | Activation::Linear => 1.0,
            Activation::SquaredRelu | Activation::Quadratic => 2.0,
            Activation::Sigmoid => 0.25,
            // sup of 1 - tanh^2 and of e^{-z^2}.
            Activation::Tanh | Activation::Erf => 1.0,
        }
    }

    /// Second-derivative bound `l2` for the smooth branch.
    pub fn second_derivative_bound(&self) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu | Activation::Linear => 0.0,
            Activation::SquaredRelu | Activation::Quadratic => 2.0,
            // max |phi''|: logistic at z = log(2 +- sqrt(3)), tanh at
            // z = atanh(1/sqrt(3)), gaussian derivative at z = 1/sqrt(2).
            Activation::Sigmoid => 1.0 / (6.0 * 3.0_f64.sqrt()),
            Activation::Tanh => 4.0 / (3.0 * 3.0_f64.sqrt()),
            Activation::Erf => (2.0 / std::f64::consts::E).sqrt(),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Activation::Relu | Activation::LeakyRelu => Smoothness::PiecewiseLinear,
            _ => Smoothness::Smooth,
        }
    }

    /// True when `phi` or one of its derivatives has a kink at the origin,
    /// which forces the piecewise quadrature route.
    pub fn kink_at_zero(&self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::LeakyRelu | Activation::SquaredRelu
        )
    }

    /// True when `phi(c z) = c^{p+1} phi(z)` for all `c > 0`.
    pub fn positively_homogeneous(&self) -> bool {
        matches!(
            self,
            Activation::Relu
                | Activation::LeakyRelu
                | Activation::SquaredRelu
                | Activation::Quadratic
                | Activation::Linear
        )
    }

    /// `phi(z)`.
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => z.max(LEAKY_SLOPE * z),
            Activation::SquaredRelu => {
                let p = z.max(0.0);
                p * p
            }
            Activation::Sigmoid => logistic(z),
            Activation::Tanh => z.tanh(),
            // int_0^z e^{-t^2} dt
            Activation::Erf => 0.5 * std::f64::consts::PI.sqrt() * libm::erf(z),
            Activation::Quadratic => z * z,
            Activation::Linear => z,
        }
    }

    /// `phi'(z)`; at a kink the right-continuous-from-below convention
    /// `phi'(0) = lim_{z -> 0^-}` is used (a measure-zero choice).
    pub fn d1(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::SquaredRelu => 2.0 * z.max(0.0),
            Activation::Sigmoid => {
                let s = logistic(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Erf => (-z * z).exp(),
            Activation::Quadratic => 2.0 * z,
            Activation::Linear => 1.0,
        }
    }

    /// `phi''(z)` (almost everywhere; 0 at kinks).
    pub fn d2(&self, z: f64) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu | Activation::Linear => 0.0,
            Activation::SquaredRelu => {
                if z > 0.0 {
                    2.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = logistic(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Erf => -2.0 * z * (-z * z).exp(),
            Activation::Quadratic => 2.0,
        }
    }

    /// Derivative dispatch used by the CLI and the finite-difference
    /// harness; `order` must be 0, 1 or 2.
    pub fn eval(&self, z: f64, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.value(z)),
            1 => Ok(self.d1(z)),
            2 => Ok(self.d2(z)),
            _ => Err(Error::Config(format!(
                "unsupported derivative order {order}; expected 0, 1 or 2"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Numerically stable logistic function.
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The Gaussian moment functionals of one activation at one scale.
#[derive(Debug, Clone, Copy)]
pub struct MomentProfile {
    pub sigma: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta0: f64,
    pub beta2: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub rho: f64,
}

impl MomentProfile {
    /// The four candidate terms whose minimum defines `rho`.
    pub fn rho_terms(&self) -> [f64; 4] {
        [
            self.beta0 - self.alpha0 * self.alpha0 - self.alpha1 * self.alpha1,
            self.beta2 - self.alpha1 * self.alpha1 - self.alpha2 * self.alpha2,
            self.alpha0 * self.alpha2 - self.alpha1 * self.alpha1,
            self.alpha0 * self.alpha0,
        ]
    }

    /// Coefficient of the rank-one terms of the second moment matrix.
    pub fn m2_coefficient(&self) -> f64 {
        self.gamma2 - self.gamma0
    }

    /// Coefficient of the rank-one terms of the third moment tensor.
    pub fn m3_coefficient(&self) -> f64 {
        self.gamma3 - 3.0 * self.gamma1
    }
}

/// Closed forms for `[alpha0, alpha1, alpha2, beta0, beta2]` where known.
pub fn closed_alpha_beta(act: Activation, sigma: f64) -> Option<[f64; 5]> {
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    match act {
        Activation::Relu => Some([0.5, inv_sqrt_2pi, 0.5, 0.5, 0.5]),
        Activation::LeakyRelu => {
            let s = LEAKY_SLOPE;
            Some([
                (1.0 + s) / 2.0,
                (1.0 - s) * inv_sqrt_2pi,
                (1.0 + s) / 2.0,
                (1.0 + s * s) / 2.0,
                (1.0 + s * s) / 2.0,
            ])
        }
        Activation::SquaredRelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            Some([
                sigma * c,
                sigma,
                2.0 * sigma * c,
                2.0 * sigma * sigma,
                6.0 * sigma * sigma,
            ])
        }
        Activation::Erf => {
            let a = 2.0 * sigma * sigma + 1.0;
            let b = 4.0 * sigma * sigma + 1.0;
            Some([
                a.powf(-0.5),
                0.0,
                a.powf(-1.5),
                b.powf(-0.5),
                b.powf(-1.5),
            ])
        }
        _ => None,
    }
}

fn cross_check(act: Activation, sigma: f64, what: &str, quad: f64, closed: f64) -> Result<f64> {
    let tol = CROSS_CHECK_TOL * f64::max(1.0, closed.abs());
    if (quad - closed).abs() > tol {
        return Err(Error::Numerical(format!(
            "{what} of {act} at sigma={sigma}: quadrature {quad:.12e} disagrees with closed form \
             {closed:.12e}"
        )));
    }
    Ok(closed)
}

/// Computes all moment functionals of `act` at scale `sigma > 0`.
///
/// Moments with a known closed form are returned in closed form after a
/// mandatory agreement check against quadrature, so a regression in either
/// path surfaces immediately.
pub fn moment_profile(act: Activation, sigma: f64) -> Result<MomentProfile> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "moment profile requires sigma > 0, got {sigma}"
        )));
    }
    let split = act.kink_at_zero();

    let mut alpha = [0.0; 3];
    for (q, slot) in alpha.iter_mut().enumerate() {
        *slot = gaussian_expectation(|z| act.d1(sigma * z) * z.powi(q as i32), split)?;
    }
    let mut beta = [0.0; 2];
    for (idx, q) in [0i32, 2].into_iter().enumerate() {
        beta[idx] = gaussian_expectation(
            |z| {
                let d = act.d1(sigma * z);
                d * d * z.powi(q)
            },
            split,
        )?;
    }
    let mut gamma = [0.0; 4];
    for (j, slot) in gamma.iter_mut().enumerate() {
        *slot = gaussian_expectation(|z| act.value(sigma * z) * z.powi(j as i32), split)?;
    }

    if let Some(closed) = closed_alpha_beta(act, sigma) {
        alpha[0] = cross_check(act, sigma, "alpha0", alpha[0], closed[0])?;
        alpha[1] = cross_check(act, sigma, "alpha1", alpha[1], closed[1])?;
        alpha[2] = cross_check(act, sigma, "alpha2", alpha[2], closed[2])?;
        beta[0] = cross_check(act, sigma, "beta0", beta[0], closed[3])?;
        beta[1] = cross_check(act, sigma, "beta2", beta[1], closed[4])?;
    }

    let mut profile = MomentProfile {
        sigma,
        alpha0: alpha[0],
        alpha1: alpha[1],
        alpha2: alpha[2],
        beta0: beta[0],
        beta2: beta[1],
        gamma0: gamma[0],
        gamma1: gamma[1],
        gamma2: gamma[2],
        gamma3: gamma[3],
        rho: 0.0,
    };
    profile.rho = profile.rho_terms().into_iter().fold(f64::INFINITY, f64::min);
    Ok(profile)
}

/// Outcome of checking the structural requirements on an activation.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub activation: Activation,
    /// `0 <= phi' <= l1 |z|^p` on the z-grid.
    pub derivative_bounds_hold: bool,
    /// Sample of grid points violating the derivative bounds: `(z, phi'(z),
    /// allowed upper bound)`.
    pub derivative_violations: Vec<(f64, f64, f64)>,
    /// `rho(sigma) > 0` at every requested scale.
    pub curvature_positive: bool,
    /// `(sigma, rho(sigma))` at every requested scale.
    pub rho_values: Vec<(f64, f64)>,
    /// The smoothness branch the activation claims.
    pub smoothness_branch: Smoothness,
    /// Branch requirement holds on the z-grid (`|phi''| <= l2` or
    /// `phi'' = 0` away from kinks).
    pub smoothness_holds: bool,
}

impl PropertyReport {
    pub fn all_hold(&self) -> bool {
        self.derivative_bounds_hold && self.curvature_positive && self.smoothness_holds
    }
}

/// Z-grid used for the pointwise checks: 2001 points on `[-10, 10]`.
fn z_grid() -> impl Iterator<Item = f64> {
    (0..=2000).map(|i| -10.0 + i as f64 * 0.01)
}

/// Verifies the derivative growth bound, the positivity of `rho` on
/// `sigma_grid`, and the smoothness branch of `act`.
pub fn check_properties(act: Activation, sigma_grid: &[f64]) -> Result<PropertyReport> {
    let l1 = act.derivative_bound();
    let l2 = act.second_derivative_bound();
    let p = act.homogeneity_exponent() as i32;

    let mut violations = Vec::new();
    for z in z_grid() {
        let d = act.d1(z);
        let bound = l1 * z.abs().powi(p);
        if d < -1e-12 || d > bound + 1e-12 {
            if violations.len() < 8 {
                violations.push((z, d, bound));
            }
        }
    }
    let derivative_bounds_hold = violations.is_empty();

    let mut rho_values = Vec::with_capacity(sigma_grid.len());
    for &sigma in sigma_grid {
        rho_values.push((sigma, moment_profile(act, sigma)?.rho));
    }
    let curvature_positive = rho_values.iter().all(|&(_, rho)| rho > 0.0);

    let smoothness_branch = act.smoothness();
    let smoothness_holds = match smoothness_branch {
        Smoothness::Smooth => z_grid().all(|z| act.d2(z).abs() <= l2 + 1e-9),
        // Kinks live at the origin for every bundled piecewise kind.
        Smoothness::PiecewiseLinear => z_grid().all(|z| z == 0.0 || act.d2(z) == 0.0),
    };

    Ok(PropertyReport {
        activation: act,
        derivative_bounds_hold,
        derivative_violations: violations,
        curvature_positive,
        rho_values,
        smoothness_branch,
        smoothness_holds,
    })
}
