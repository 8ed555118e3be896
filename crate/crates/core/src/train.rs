//! Plain gradient descent on the empirical risk, the full
//! initialize-then-descend pipeline, and convergence-rate measurement.

use rand::seq::SliceRandom as _;

use crate::init_tensor::{tensor_initialize, TensorInitOptions};
use crate::model::{
    conditioning, gaussian_matrix, singular_values_desc, ProblemConfig, SampleSet, WeightMatrix,
};
use crate::risk::{empirical_risk, gradient, nominal_bounds};
use crate::rng::SeedStream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// 1/(t r^2 sigma1^{2p}) with sigma1 taken from the initial iterate.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub step_size: StepSize,
    pub max_iters: usize,
    /// Early-stop loss threshold; the model is noiseless so 0 is attainable.
    pub tol: f64,
    /// true: fresh disjoint sample set per step; false: one fixed set.
    pub resample: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: StepSize::Auto,
            max_iters: 1000,
            tol: 1e-12,
            resample: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if let StepSize::Fixed(eta) = self.step_size {
            if !eta.is_finite() || eta <= 0.0 {
                return Err(Error::Config(format!("explicit step size must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    /// Frobenius distance to the reference weights, when supplied.
    pub dist_to_wstar: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<TraceRecord>,
    /// The initial iterate the run started from.
    pub init_w: WeightMatrix,
    pub final_w: WeightMatrix,
    /// Loss dropped below tol.
    pub converged: bool,
    /// Loss or gradient became non-finite; the trace is partial.
    pub diverged: bool,
    /// exp(slope) of the log-loss tail fit, when a fit is possible.
    pub rate_estimate: Option<f64>,
    pub samples_consumed: usize,
}

impl TrainReport {
    /// Trace as CSV text; the distance column is empty when no reference
    /// weights were supplied.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,loss,dist_to_wstar,grad_norm\n");
        for rec in &self.trace {
            let dist = rec.dist_to_wstar.map(|d| d.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", rec.iter, rec.loss, dist, rec.grad_norm));
        }
        out
    }
}

/// Matrix as CSV text, one row per line.
pub fn matrix_csv(w: &WeightMatrix) -> String {
    let mut out = String::new();
    for i in 0..w.nrows() {
        let cells: Vec<String> = (0..w.ncols()).map(|j| w[(i, j)].to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub enum InitMethod {
    TensorInit(TensorInitOptions),
    RandomGaussian,
    Fixed(WeightMatrix),
}

/// One gradient-descent step W - eta grad. eta = 0 is allowed and returns
/// W unchanged.
pub fn gd_step(
    w: &WeightMatrix,
    s: &SampleSet,
    eta: f64,
    cfg: &ProblemConfig,
) -> Result<WeightMatrix> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Config(format!("step size must be nonnegative, got {eta}")));
    }
    let g = gradient(w, s, cfg)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("gradient has non-finite entries".into()));
    }
    Ok(w - g * eta)
}

/// Splits S into m disjoint subsets of size floor(|S|/m) each, discarding
/// the remainder; the assignment is a seeded shuffle.
pub fn partition(s: &SampleSet, m: usize, seed: u64) -> Result<Vec<SampleSet>> {
    if m == 0 {
        return Err(Error::Config("cannot partition into zero sets".into()));
    }
    if s.len() < m {
        return Err(Error::Config(format!(
            "cannot partition {} samples into {m} nonempty sets",
            s.len()
        )));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    let mut rng = SeedStream::new(seed).indexed("partition", 0);
    idx.shuffle(&mut rng);
    let chunk = s.len() / m;
    Ok((0..m).map(|q| s.subset(&idx[q * chunk..(q + 1) * chunk])).collect())
}

fn record_cadence(iter: usize) -> bool {
    iter <= 1000 || iter % 10 == 0
}

/// Gradient descent with the selected initialization.
///
/// resample=true follows the resampled scheme: S is split into
/// max_iters + 1 disjoint sets, the first feeds tensor initialization and
/// step q consumes its own fresh set. resample=false reserves the first
/// half of S for tensor initialization (when that init is selected) and
/// descends on the remaining pool at every step.
///
/// A non-finite loss or gradient stops the run and returns the partial
/// trace with `diverged` set. `wstar` is only used to fill the trace's
/// distance column.
pub fn learn_cnn(
    s: &SampleSet,
    cfg: &ProblemConfig,
    train_cfg: &TrainConfig,
    init: &InitMethod,
    wstar: Option<&WeightMatrix>,
) -> Result<TrainReport> {
    train_cfg.validate()?;
    if let Some(ws) = wstar {
        cfg.check_weight_dims(ws)?;
    }
    let t_max = train_cfg.max_iters;
    let use_tensor = matches!(init, InitMethod::TensorInit(_));

    let mut init_set: Option<SampleSet> = None;
    let mut step_sets: Vec<SampleSet> = Vec::new();
    let mut pool: Option<SampleSet> = None;
    if train_cfg.resample {
        let mut sets = partition(s, t_max + 1, train_cfg.seed)?;
        let first = sets.remove(0);
        if use_tensor {
            init_set = Some(first);
        }
        step_sets = sets;
    } else if use_tensor {
        let half = s.len() / 2;
        init_set = Some(s.subset(&(0..half).collect::<Vec<_>>()));
        pool = Some(s.subset(&(half..s.len()).collect::<Vec<_>>()));
    }
    let step_set = |q: usize| -> &SampleSet {
        if train_cfg.resample {
            &step_sets[q.min(t_max - 1)]
        } else {
            pool.as_ref().unwrap_or(s)
        }
    };

    let init_w = match init {
        InitMethod::Fixed(w0) => {
            cfg.check_weight_dims(w0)?;
            w0.clone()
        }
        InitMethod::RandomGaussian => {
            let mut rng = SeedStream::new(train_cfg.seed).indexed("init", 0);
            gaussian_matrix(&mut rng, cfg.k, cfg.t)
        }
        InitMethod::TensorInit(opts) => {
            tensor_initialize(init_set.as_ref().expect("init set reserved"), cfg, opts)?
        }
    };
    let mut w = init_w.clone();

    let eta = match train_cfg.step_size {
        StepSize::Fixed(e) => e,
        StepSize::Auto => {
            let sigma1 = singular_values_desc(&w)?[0];
            if sigma1 <= 0.0 {
                return Err(Error::Numerical(
                    "auto step size undefined for zero initial weights".into(),
                ));
            }
            let p = cfg.activation.homogeneity_exponent() as i32;
            1.0 / (cfg.t as f64 * (cfg.r as f64).powi(2) * sigma1.powi(2 * p))
        }
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut q = 0usize;
    loop {
        let set = step_set(q);
        let loss = empirical_risk(&w, set, cfg)?;
        let grad = gradient(&w, set, cfg)?;
        let grad_norm = grad.norm();
        let finite = loss.is_finite() && grad_norm.is_finite();
        let stopping = !finite || loss < train_cfg.tol || q == t_max;
        if record_cadence(q) || stopping {
            trace.push(TraceRecord {
                iter: q,
                loss,
                dist_to_wstar: wstar.map(|ws| (&w - ws).norm()),
                grad_norm,
            });
        }
        if !finite {
            diverged = true;
            break;
        }
        if loss < train_cfg.tol {
            converged = true;
            break;
        }
        if q == t_max {
            break;
        }
        w -= grad * eta;
        q += 1;
    }

    let samples_consumed = if train_cfg.resample {
        let chunk = s.len() / (t_max + 1);
        let sets_touched = q.min(t_max - 1) + 1;
        (if use_tensor { chunk } else { 0 }) + sets_touched * chunk
    } else {
        s.len()
    };
    let rate_estimate = fit_log_linear_tail(&trace).map(|(rate, _)| rate);
    Ok(TrainReport { trace, init_w, final_w: w, converged, diverged, rate_estimate, samples_consumed })
}

/// Loss floor below which trace records are excluded from the tail fit.
pub const TAIL_LOSS_FLOOR: f64 = 1e-12;

/// OLS fit of log(loss) against iteration over the last (up to) 50 recorded
/// points with loss above [`TAIL_LOSS_FLOOR`]. Returns (per-iteration rate
/// = exp(slope), R^2), or None when fewer than two usable points exist.
pub fn fit_log_linear_tail(trace: &[TraceRecord]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter(|rec| rec.loss > TAIL_LOSS_FLOOR && rec.loss.is_finite())
        .map(|rec| (rec.iter as f64, rec.loss.ln()))
        .collect();
    let tail = if pts.len() > 50 { &pts[pts.len() - 50..] } else { &pts[..] };
    if tail.len() < 2 {
        return None;
    }
    let n = tail.len() as f64;
    let xbar = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = tail.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = tail.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = tail.iter().map(|p| (p.1 - ybar).powi(2)).sum();
    let ss_res: f64 = tail
        .iter()
        .map(|p| (p.1 - ybar - slope * (p.0 - xbar)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((slope.exp(), r2))
}

/// One descent step with eta = 1/M0_nominal from a point near W*; returns
/// (squared-distance contraction ratio, nominal bound 1 - m0/M0).
/// Requires |Wnear - W*| <= 0.1 sigma_t; Wnear = W* returns ratio 0.
pub fn contraction_check(
    wnear: &WeightMatrix,
    wstar: &WeightMatrix,
    s: &SampleSet,
    cfg: &ProblemConfig,
) -> Result<(f64, f64)> {
    cfg.check_weight_dims(wnear)?;
    cfg.check_weight_dims(wstar)?;
    let rep = conditioning(wstar, cfg.activation)?;
    let dist0 = (wnear - wstar).norm();
    if dist0 > 0.1 * rep.sigmat {
        return Err(Error::Config(format!(
            "start point outside the locality radius: {dist0:e} > 0.1 sigma_t = {:e}",
            0.1 * rep.sigmat
        )));
    }
    let (m0, big_m0) = nominal_bounds(wstar, cfg.activation, cfg.r, cfg.t)?;
    let bound = 1.0 - m0 / big_m0;
    if dist0 == 0.0 {
        return Ok((0.0, bound));
    }
    let stepped = gd_step(wnear, s, 1.0 / big_m0, cfg)?;
    let dist1 = (stepped - wstar).norm();
    Ok((dist1 * dist1 / (dist0 * dist0), bound))
}
