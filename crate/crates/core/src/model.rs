//! The planted non-overlapping convolutional model: patch geometry, forward
//! evaluation, ground-truth construction, conditioning diagnostics, and
//! synthetic data generation.
//!
//! An input x in R^d splits into r disjoint patches of length k (d = r*k);
//! each of t kernels (columns of a k x t weight matrix) is applied to every
//! patch and the activations are summed into a scalar label.

use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::activation::{moment_profile, Activation};
use crate::parallel;
use crate::rng::{fnv1a64, SeedStream};
use crate::{Error, Result};

/// Kernels as columns: column j of the k x t matrix is kernel j.
pub type WeightMatrix = DMatrix<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProblemConfig {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub t: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl ProblemConfig {
    /// d is derived as r*k; t <= k is required so the planted kernels can
    /// stay linearly independent within a patch.
    pub fn new(k: usize, r: usize, t: usize, activation: Activation, seed: u64) -> Result<Self> {
        if k == 0 || r == 0 || t == 0 {
            return Err(Error::Config(format!(
                "k, r, t must all be >= 1 (got k={k}, r={r}, t={t})"
            )));
        }
        if t > k {
            return Err(Error::Config(format!(
                "number of kernels t={t} exceeds patch size k={k}"
            )));
        }
        Ok(Self { d: r * k, k, r, t, activation, seed })
    }

    pub fn check_weight_dims(&self, w: &WeightMatrix) -> Result<()> {
        if w.nrows() != self.k || w.ncols() != self.t {
            return Err(Error::Config(format!(
                "weight matrix is {}x{}, expected {}x{}",
                w.nrows(),
                w.ncols(),
                self.k,
                self.t
            )));
        }
        Ok(())
    }

    pub fn seed_stream(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }
}

/// The i-th patch of x (zero-based, i < r): entries i*k .. (i+1)*k.
/// Patches are disjoint and their concatenation reconstructs x.
#[inline]
pub fn patch<'a>(x: &'a [f64], i: usize, cfg: &ProblemConfig) -> &'a [f64] {
    assert_eq!(x.len(), cfg.d, "input dimension mismatch");
    assert!(i < cfg.r, "patch index {i} out of range (r={})", cfg.r);
    &x[i * cfg.k..(i + 1) * cfg.k]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Model output: sum over kernels j and patches i of phi(w_j . x_i).
pub fn forward(w: &WeightMatrix, x: &[f64], cfg: &ProblemConfig) -> f64 {
    debug_assert_eq!(w.nrows(), cfg.k);
    debug_assert_eq!(w.ncols(), cfg.t);
    assert_eq!(x.len(), cfg.d, "input dimension mismatch");
    let cols = w.as_slice();
    let mut y = 0.0;
    for j in 0..cfg.t {
        let wj = &cols[j * cfg.k..(j + 1) * cfg.k];
        for i in 0..cfg.r {
            y += cfg.activation.value(dot(wj, &x[i * cfg.k..(i + 1) * cfg.k]));
        }
    }
    y
}

/// Pre-activation inner products: out[j*r + i] = w_j . x_i.
/// Shared by the risk derivatives, which need the raw dots.
pub fn patch_dots(w: &WeightMatrix, x: &[f64], cfg: &ProblemConfig, out: &mut [f64]) {
    debug_assert_eq!(out.len(), cfg.t * cfg.r);
    let cols = w.as_slice();
    for j in 0..cfg.t {
        let wj = &cols[j * cfg.k..(j + 1) * cfg.k];
        for i in 0..cfg.r {
            out[j * cfg.r + i] = dot(wj, &x[i * cfg.k..(i + 1) * cfg.k]);
        }
    }
}

pub(crate) fn gaussian_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill order, fixed so replays are bitwise identical.
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Thin QR orthonormal factor with the sign convention diag(R) > 0, which
/// makes the factor a deterministic function of the input matrix.
fn orthonormal_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.ncols();
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..t {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Planted weights W* = U Sigma V^T: U, V orthonormal factors of seeded
/// Gaussian matrices, singular values equispaced from 1 to kappa_target.
pub fn make_ground_truth(k: usize, t: usize, kappa_target: f64, seed: u64) -> Result<WeightMatrix> {
    if t == 0 || k == 0 || t > k {
        return Err(Error::Config(format!("invalid kernel shape k={k}, t={t}")));
    }
    if !kappa_target.is_finite() || kappa_target < 1.0 {
        return Err(Error::Config(format!(
            "condition number target must be >= 1, got {kappa_target}"
        )));
    }
    if t == 1 && kappa_target != 1.0 {
        return Err(Error::Config(
            "a single kernel has exactly one singular value; kappa must be 1".into(),
        ));
    }
    let stream = SeedStream::new(seed);
    let u = orthonormal_factor(&gaussian_matrix(&mut stream.stream("ground_truth_u"), k, t));
    let v = orthonormal_factor(&gaussian_matrix(&mut stream.stream("ground_truth_v"), t, t));
    let mut sigma = DVector::zeros(t);
    for i in 0..t {
        sigma[i] = if t == 1 {
            1.0
        } else {
            1.0 + (kappa_target - 1.0) * i as f64 / (t - 1) as f64
        };
    }
    let w = &u * DMatrix::from_diagonal(&sigma) * v.transpose();

    // The assembly is exact up to roundoff; verify rather than assume.
    let svals = singular_values_desc(&w)?;
    let kappa = svals[0] / svals[t - 1];
    if (kappa - kappa_target).abs() > 1e-10 * kappa_target {
        return Err(Error::Numerical(format!(
            "assembled condition number {kappa} misses target {kappa_target}"
        )));
    }
    Ok(w)
}

pub(crate) fn singular_values_desc(w: &WeightMatrix) -> Result<Vec<f64>> {
    let svd = w.clone().svd(false, false);
    let mut svals: Vec<f64> = svd.singular_values.iter().copied().collect();
    if svals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite singular values".into()));
    }
    svals.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(svals)
}

/// Conditioning quantities of a weight matrix, evaluated for one activation.
#[derive(Clone, Debug)]
pub struct ConditioningReport {
    pub sigma1: f64,
    pub sigmat: f64,
    /// sigma1 / sigmat.
    pub kappa: f64,
    /// prod_i sigma_i / sigmat^t.
    pub lambda: f64,
    /// (3 sigma1 / 2)^{4p} / min rho^2 over [sigmat/2, 3 sigma1/2].
    pub tau: f64,
    /// The rho minimum found on the grid (diagnostic).
    pub rho_min: f64,
}

/// Grid resolution for the rho minimum: 64 interior points plus endpoints.
const RHO_GRID: usize = 66;

pub fn conditioning(w: &WeightMatrix, act: Activation) -> Result<ConditioningReport> {
    let t = w.ncols();
    let svals = singular_values_desc(w)?;
    let sigma1 = svals[0];
    let sigmat = svals[t - 1];
    if sigmat <= 1e-12 * sigma1.max(1e-300) {
        return Err(Error::RankDeficient(format!(
            "weight matrix is rank deficient: sigma_t = {sigmat:e}, sigma_1 = {sigma1:e}"
        )));
    }
    let kappa = sigma1 / sigmat;
    // Product of ratios rather than ratio of products, for overflow safety.
    let lambda = svals.iter().map(|s| s / sigmat).product();

    let lo = sigmat / 2.0;
    let hi = 1.5 * sigma1;
    let mut rho_min = f64::INFINITY;
    for i in 0..RHO_GRID {
        let s = lo + (hi - lo) * i as f64 / (RHO_GRID - 1) as f64;
        rho_min = rho_min.min(moment_profile(act, s)?.rho);
    }
    let p = act.homogeneity_exponent();
    let tau = hi.powi(4 * p as i32) / (rho_min * rho_min);
    Ok(ConditioningReport { sigma1, sigmat, kappa, lambda, tau, rho_min })
}

const SAMPLE_MAGIC: &[u8; 8] = b"CNN1SMPL";
const SAMPLE_VERSION: u32 = 1;

/// A drawn dataset: standard Gaussian inputs (row-major n x d) and their
/// noiseless labels under the generating weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub t: usize,
    pub activation: Activation,
    /// Seed of the stream the inputs were drawn from.
    pub seed: u64,
    inputs: Vec<f64>,
    labels: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Problem geometry carried by this set (seed = the data seed).
    pub fn config(&self) -> ProblemConfig {
        ProblemConfig {
            d: self.d,
            k: self.k,
            r: self.r,
            t: self.t,
            activation: self.activation,
            seed: self.seed,
        }
    }

    /// FNV hash of the generating configuration, for CSV provenance columns.
    pub fn fingerprint(&self) -> u64 {
        let desc = format!(
            "d={} k={} r={} t={} act={} seed={} n={}",
            self.d,
            self.k,
            self.r,
            self.t,
            self.activation.name(),
            self.seed,
            self.len()
        );
        fnv1a64(desc.as_bytes())
    }

    /// Re-checks the label invariant: every label equals the forward pass
    /// of the supplied weights exactly.
    pub fn check_labels(&self, w: &WeightMatrix) -> Result<()> {
        let cfg = self.config();
        cfg.check_weight_dims(w)?;
        for i in 0..self.len() {
            if forward(w, self.input(i), &cfg) != self.labels[i] {
                return Err(Error::CheckFailed(format!("label {i} does not match forward pass")));
            }
        }
        Ok(())
    }

    /// Wraps externally produced rows. Labels are stored as-is; the label
    /// invariant is only guaranteed for sets built by [`sample_dataset`]
    /// and remains checkable via [`SampleSet::check_labels`].
    pub fn from_raw(
        cfg: &ProblemConfig,
        seed: u64,
        inputs: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<SampleSet> {
        if inputs.len() != labels.len() * cfg.d {
            return Err(Error::Config(format!(
                "raw sample buffers disagree: {} inputs, {} labels, d={}",
                inputs.len(),
                labels.len(),
                cfg.d
            )));
        }
        Ok(SampleSet {
            d: cfg.d,
            k: cfg.k,
            r: cfg.r,
            t: cfg.t,
            activation: cfg.activation,
            seed,
            inputs,
            labels,
        })
    }

    /// New set holding the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        SampleSet { inputs, labels, ..*self }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(SAMPLE_MAGIC)?;
        w.write_all(&SAMPLE_VERSION.to_le_bytes())?;
        for dim in [self.d, self.k, self.r, self.t] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let name = self.activation.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.inputs.iter().chain(&self.labels) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<SampleSet> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SAMPLE_MAGIC {
            return Err(Error::Config("sample file: bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != SAMPLE_VERSION {
            return Err(Error::Config("sample file: unsupported version".into()));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            r.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let [d, k, rr, t] = dims;
        if d != rr * k || t > k || k == 0 || rr == 0 || t == 0 {
            return Err(Error::Config("sample file: inconsistent dimensions".into()));
        }
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        if name_len > 64 {
            return Err(Error::Config("sample file: activation name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Config("sample file: activation name not UTF-8".into()))?;
        let activation = Activation::parse(&name)?;
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let mut inputs = vec![0.0; n * d];
        let mut labels = vec![0.0; n];
        for v in inputs.iter_mut().chain(&mut labels) {
            r.read_exact(&mut u64buf)?;
            *v = f64::from_le_bytes(u64buf);
        }
        Ok(SampleSet { d, k, r: rr, t, activation, seed, inputs, labels })
    }

    /// Plain-text export: columns x_1..x_d, y.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        writeln!(w, "{},y", header.join(","))?;
        for i in 0..self.len() {
            for v in self.input(i) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", self.labels[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws n standard Gaussian inputs and labels them with the given weights.
/// Sample i comes from its own substream, so parallel and serial generation
/// agree bitwise and any subset can be regenerated independently.
pub fn sample_dataset(
    wstar: &WeightMatrix,
    cfg: &ProblemConfig,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    cfg.check_weight_dims(wstar)?;
    let d = cfg.d;
    let stream = SeedStream::new(seed);
    let mut inputs = vec![0.0; n * d];
    inputs.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut rng = stream.indexed("data", i as u64);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    });
    let mut labels = vec![0.0; n];
    labels.par_iter_mut().enumerate().for_each(|(i, y)| {
        *y = forward(wstar, &inputs[i * d..(i + 1) * d], cfg);
    });
    Ok(SampleSet {
        d,
        k: cfg.k,
        r: cfg.r,
        t: cfg.t,
        activation: cfg.activation,
        seed,
        inputs,
        labels,
    })
}

/// Frobenius distance between two k x t matrices minimized over column
/// permutations of the first (and column sign flips when the activation
/// leaves signs unidentifiable). Exhaustive search; t <= 8 enforced.
pub fn min_matching_error(
    w: &WeightMatrix,
    wref: &WeightMatrix,
    allow_sign_flips: bool,
) -> Result<f64> {
    if w.shape() != wref.shape() {
        return Err(Error::Config(format!(
            "matching shapes differ: {:?} vs {:?}",
            w.shape(),
            wref.shape()
        )));
    }
    let t = w.ncols();
    if t > 8 {
        return Err(Error::Config(format!("exhaustive matching limited to t <= 8, got {t}")));
    }
    // cost[a][b] = squared distance of column a of w to column b of wref,
    // minimized over the sign of column a when flips are allowed.
    let mut cost = vec![vec![0.0; t]; t];
    for a in 0..t {
        for b in 0..t {
            let plus = (w.column(a) - wref.column(b)).norm_squared();
            cost[a][b] = if allow_sign_flips {
                plus.min((w.column(a) + wref.column(b)).norm_squared())
            } else {
                plus
            };
        }
    }
    let mut perm: Vec<usize> = (0..t).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(b, &a)| cost[a][b]).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best.sqrt())
}

fn permute(items: &mut [usize], from: usize, visit: &mut impl FnMut(&[usize])) {
    if from == items.len() {
        visit(items);
        return;
    }
    for i in from..items.len() {
        items.swap(from, i);
        permute(items, from + 1, visit);
        items.swap(from, i);
    }
}

/// E[y] under the model: sum_j r * gamma0(||w_j||). Used as a statistical
/// oracle for the sampler.
pub fn label_mean(wstar: &WeightMatrix, cfg: &ProblemConfig) -> Result<f64> {
    let mut mean = 0.0;
    for j in 0..cfg.t {
        let norm = wstar.column(j).norm();
        mean += cfg.r as f64 * moment_profile(cfg.activation, norm)?.gamma0;
    }
    Ok(mean)
}

/// Serial-semantics parallel mean of f over the samples.
pub fn sample_mean(s: &SampleSet, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    parallel::indexed_sum_f64(s.len(), f) / s.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(k: usize, r: usize, t: usize, act: Activation) -> ProblemConfig {
        ProblemConfig::new(k, r, t, act, 7).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ProblemConfig::new(5, 2, 2, Activation::Relu, 0).is_ok());
        assert!(ProblemConfig::new(2, 2, 3, Activation::Relu, 0).is_err());
        assert!(ProblemConfig::new(0, 2, 0, Activation::Relu, 0).is_err());
        assert_eq!(cfg(5, 2, 2, Activation::Relu).d, 10);
    }

    #[test]
    fn patch_selects_blocks() {
        let c = cfg(2, 2, 1, Activation::Relu);
        let x = [1.0, -2.0, 3.0, -4.0];
        assert_eq!(patch(&x, 0, &c), &[1.0, -2.0]);
        assert_eq!(patch(&x, 1, &c), &[3.0, -4.0]);
        let c1 = cfg(4, 1, 1, Activation::Relu);
        assert_eq!(patch(&x, 0, &c1), &x);
    }

    #[test]
    fn patches_tile_input() {
        let c = cfg(3, 4, 2, Activation::Tanh);
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 3.0).collect();
        let mut rebuilt = Vec::new();
        for i in 0..c.r {
            rebuilt.extend_from_slice(patch(&x, i, &c));
        }
        assert_eq!(rebuilt, x);
    }

    #[test]
    fn forward_hand_example() {
        // relu, k=2, r=2, t=1, w=(1,0), x=(1,-2,3,-4): phi(1) + phi(3) = 4.
        let c = cfg(2, 2, 1, Activation::Relu);
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let x = [1.0, -2.0, 3.0, -4.0];
        assert_eq!(forward(&w, &x, &c), 4.0);
    }

    #[test]
    fn forward_zero_weights() {
        for act in Activation::ALL {
            if act.value(0.0) != 0.0 {
                continue;
            }
            let c = cfg(3, 2, 2, act);
            let w = DMatrix::zeros(3, 2);
            let x = [0.3, -0.1, 0.9, 1.5, -2.0, 0.4];
            assert_eq!(forward(&w, &x, &c), 0.0);
        }
    }

    proptest! {
        #[test]
        fn forward_homogeneity(scale in 0.1f64..4.0, entries in proptest::collection::vec(-2.0f64..2.0, 6 + 4)) {
            // Positive homogeneity of the forward pass. The degree is the
            // functional one (1 for the piecewise-linear family, 2 for the
            // squared kinds); linear sits in the p=1 derivative-bound class
            // but still scales with degree 1.
            for (act, degree) in [
                (Activation::Relu, 1),
                (Activation::LeakyRelu, 1),
                (Activation::SquaredRelu, 2),
                (Activation::Linear, 1),
                (Activation::Quadratic, 2),
            ] {
                let c = cfg(2, 3, 2, act);
                let w = DMatrix::from_column_slice(2, 2, &entries[..4]);
                let x = &entries[4..10];
                let lhs = forward(&(&w * scale), x, &c);
                let rhs = scale.powi(degree) * forward(&w, x, &c);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn matching_is_permutation_invariant(entries in proptest::collection::vec(-2.0f64..2.0, 12), swap in any::<bool>()) {
            let w = DMatrix::from_column_slice(4, 3, &entries);
            let mut shuffled = w.clone();
            if swap {
                shuffled.swap_columns(0, 2);
            }
            shuffled.swap_columns(1, 2);
            let err = min_matching_error(&shuffled, &w, false).unwrap();
            prop_assert!(err < 1e-12);
        }
    }

    #[test]
    fn ground_truth_singular_values() {
        let w = make_ground_truth(5, 2, 2.0, 3).unwrap();
        let svd = w.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_relative_eq!(sv[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sv[1], 1.0, epsilon = 1e-10);

        let w = make_ground_truth(4, 4, 3.0, 11).unwrap();
        let svd = w.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in sv.iter().zip([1.0, 5.0 / 3.0, 7.0 / 3.0, 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-10);
        }

        let w = make_ground_truth(3, 1, 1.0, 5).unwrap();
        assert_relative_eq!(w.column(0).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ground_truth_rejects_bad_kappa() {
        assert!(make_ground_truth(5, 2, 0.5, 0).is_err());
        assert!(make_ground_truth(3, 1, 2.0, 0).is_err());
        assert!(make_ground_truth(5, 2, f64::NAN, 0).is_err());
    }

    #[test]
    fn ground_truth_factors_orthonormal() {
        // Rebuild the factors the same way and check U^T U = I within 1e-12.
        let stream = SeedStream::new(42);
        let u = orthonormal_factor(&gaussian_matrix(&mut stream.stream("ground_truth_u"), 6, 3));
        let gram = u.transpose() * &u;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ground_truth_is_deterministic() {
        let a = make_ground_truth(5, 2, 2.0, 9).unwrap();
        let b = make_ground_truth(5, 2, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = make_ground_truth(5, 2, 2.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn conditioning_orthonormal_columns() {
        let w = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let rep = conditioning(&w, Activation::Relu).unwrap();
        assert_relative_eq!(rep.kappa, 1.0, epsilon = 1e-12);
        assert_relative_eq!(rep.lambda, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conditioning_relu_known_values() {
        // sigma = {1, 2}: kappa = 2, lambda = 2. rho for relu is scale-free,
        // rho = 1/4 - 1/(2 pi), so tau = 1/rho^2 = 121.168... (p = 0 kills
        // the prefactor).
        let w = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let rep = conditioning(&w, Activation::Relu).unwrap();
        assert_relative_eq!(rep.kappa, 2.0, epsilon = 1e-10);
        assert_relative_eq!(rep.lambda, 2.0, epsilon = 1e-10);
        let rho = 0.25 - 1.0 / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(rep.rho_min, rho, epsilon = 1e-9);
        assert_relative_eq!(rep.tau, 1.0 / (rho * rho), max_relative = 1e-6);
        // Two-decimal table value of rho gives tau ~ 120.8; stay within 1%.
        assert!((rep.tau - 120.8).abs() / 120.8 < 0.01);
    }

    #[test]
    fn conditioning_rejects_rank_deficient() {
        let w = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(conditioning(&w, Activation::Relu), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn sampling_labels_match_forward() {
        let c = cfg(3, 2, 2, Activation::SquaredRelu);
        let w = make_ground_truth(3, 2, 1.5, 1).unwrap();
        let s = sample_dataset(&w, &c, 37, 123).unwrap();
        s.check_labels(&w).unwrap();
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = cfg(3, 2, 1, Activation::Tanh);
        let w = make_ground_truth(3, 1, 1.0, 2).unwrap();
        let a = sample_dataset(&w, &c, 64, 99).unwrap();
        let b = sample_dataset(&w, &c, 64, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_matches_moment_oracle() {
        // Mean label = sum_j r gamma0(||w_j||); allow 4 standard errors.
        let c = cfg(5, 2, 2, Activation::Relu);
        let w = make_ground_truth(5, 2, 2.0, 17).unwrap();
        let n = 10_000;
        let s = sample_dataset(&w, &c, n, 4242).unwrap();
        let mean = sample_mean(&s, |i| s.label(i));
        let expect = label_mean(&w, &c).unwrap();
        let var = sample_mean(&s, |i| (s.label(i) - mean).powi(2));
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expect).abs() < 4.0 * se,
            "mean {mean} vs oracle {expect} (se {se})"
        );
    }

    #[test]
    fn binary_round_trip() {
        let c = cfg(3, 2, 2, Activation::Erf);
        let w = make_ground_truth(3, 2, 2.0, 8).unwrap();
        let s = sample_dataset(&w, &c, 11, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.bin");
        s.write_binary(&path).unwrap();
        let back = SampleSet::read_binary(&path).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.fingerprint(), back.fingerprint());
    }

    #[test]
    fn csv_export_shape() {
        let c = cfg(2, 1, 1, Activation::Linear);
        let w = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let s = sample_dataset(&w, &c, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "x_1,x_2,y");
        assert_eq!(lines[1].split(',').count(), 3);
    }

    #[test]
    fn subset_picks_rows() {
        let c = cfg(2, 2, 1, Activation::Relu);
        let w = make_ground_truth(2, 1, 1.0, 3).unwrap();
        let s = sample_dataset(&w, &c, 10, 1).unwrap();
        let sub = s.subset(&[7, 2]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.input(0), s.input(7));
        assert_eq!(sub.label(1), s.label(2));
    }

    #[test]
    fn min_matching_handles_signs() {
        let w = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut flipped = w.clone();
        flipped.column_mut(0).neg_mut();
        assert!(min_matching_error(&flipped, &w, true).unwrap() < 1e-15);
        assert!(min_matching_error(&flipped, &w, false).unwrap() > 1.0);
    }
}
