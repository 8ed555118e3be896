//! Experiment harness behind the `cnn-recover` binary: config parsing, the
//! five commands, and CSV/SVG emission.
//!
//! Every command is a pure function of (config, seeds): all randomness
//! flows through SeedStream, floats are written via their shortest
//! round-trip representation, and reruns produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;

use crate::activation::{closed_alpha_beta, moment_profile, Activation};
use crate::init_tensor::{estimate_moments, TensorInitOptions};
use crate::model::{make_ground_truth, min_matching_error, sample_dataset, ProblemConfig};
use crate::risk::{
    check_derivatives, hessian, population_hessian_mc, spectrum, DerivativeCheck,
};
use crate::rng::SeedStream;
use crate::train::{
    learn_cnn, partition, InitMethod, StepSize, TrainConfig, TrainReport,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Experiment configuration

/// Parsed `[experiment]` document. Every field is optional at parse time;
/// each command demands the keys it needs and re-validates geometry through
/// [`ProblemConfig`] before running.
#[derive(Clone, Debug, Default)]
pub struct ExperimentConfig {
    pub activations: Option<Vec<Activation>>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub t: Option<usize>,
    /// Redundant with r*k; cross-checked when present.
    pub d: Option<usize>,
    pub kappa: Option<f64>,
    pub n_grid: Option<Vec<usize>>,
    pub n_samples: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub step_size: Option<StepSize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub resample: Option<bool>,
    pub n_mc: Option<usize>,
    pub sigmas: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
    pub dump_m3: Option<bool>,
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|item| parse_scalar(key, item.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "config key `{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn parse_step_size(value: &str) -> Result<StepSize> {
    if value == "auto" {
        return Ok(StepSize::Auto);
    }
    let eta: f64 = parse_scalar("step_size", value)?;
    Ok(StepSize::Fixed(eta))
}

impl ExperimentConfig {
    /// Parses the flat key-value format: one `[experiment]` header, then
    /// `key = value` lines. `#` or `;` lines are comments. Unknown and
    /// duplicate keys are hard errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen_header = false;
        let mut seen_keys: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                if seen_header {
                    return Err(Error::Config(format!(
                        "line {}: only one [experiment] section is allowed",
                        lineno + 1
                    )));
                }
                if line != "[experiment]" {
                    return Err(Error::Config(format!(
                        "line {}: expected [experiment], got {line}",
                        lineno + 1
                    )));
                }
                seen_header = true;
                continue;
            }
            if !seen_header {
                return Err(Error::Config(format!(
                    "line {}: keys must appear under the [experiment] header",
                    lineno + 1
                )));
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen_keys.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            seen_keys.push(key.to_string());
            match key {
                "activations" => {
                    let names: Vec<&str> = value.split(',').map(str::trim).collect();
                    let acts: Result<Vec<Activation>> =
                        names.into_iter().map(Activation::parse).collect();
                    cfg.activations = Some(acts?);
                }
                "k" => cfg.k = Some(parse_scalar(key, value)?),
                "r" => cfg.r = Some(parse_scalar(key, value)?),
                "t" => cfg.t = Some(parse_scalar(key, value)?),
                "d" => cfg.d = Some(parse_scalar(key, value)?),
                "kappa" => cfg.kappa = Some(parse_scalar(key, value)?),
                "n_grid" => cfg.n_grid = Some(parse_list(key, value)?),
                "n_samples" => cfg.n_samples = Some(parse_scalar(key, value)?),
                "seeds" => cfg.seeds = Some(parse_list(key, value)?),
                "step_size" => cfg.step_size = Some(parse_step_size(value)?),
                "max_iters" => cfg.max_iters = Some(parse_scalar(key, value)?),
                "tol" => cfg.tol = Some(parse_scalar(key, value)?),
                "resample" => cfg.resample = Some(parse_bool(key, value)?),
                "n_mc" => cfg.n_mc = Some(parse_scalar(key, value)?),
                "sigmas" => cfg.sigmas = Some(parse_list(key, value)?),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "dump_m3" => cfg.dump_m3 = Some(parse_bool(key, value)?),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }
        if !seen_header {
            return Err(Error::Config("missing [experiment] header".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// (k, r, t, kappa) with the optional d cross-checked against r*k.
    pub fn geometry(&self) -> Result<(usize, usize, usize, f64)> {
        let k = self.require(self.k, "k")?;
        let r = self.require(self.r, "r")?;
        let t = self.require(self.t, "t")?;
        let kappa = self.require(self.kappa, "kappa")?;
        if let Some(d) = self.d {
            if d != r * k {
                return Err(Error::Config(format!(
                    "config says d={d} but r*k = {}",
                    r * k
                )));
            }
        }
        Ok((k, r, t, kappa))
    }

    fn require<T: Copy>(&self, field: Option<T>, key: &str) -> Result<T> {
        field.ok_or_else(|| Error::Config(format!("config key `{key}` is required")))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![0])
    }
}

// ---------------------------------------------------------------------------
// Output helpers

fn write_file(path: &Path, bytes: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Floor applied to values before log-scale plotting; display only, never
/// applied to CSV data.
const PLOT_FLOOR: f64 = 1e-18;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Minimal self-contained SVG line plot. y is always log10-scaled; x is
/// log10-scaled when `log_x`. Values below [`PLOT_FLOOR`] are clamped.
fn svg_log_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
) -> String {
    let (width, height) = (840.0, 520.0);
    let (ml, mr, mt, mb) = (70.0, 170.0, 40.0, 50.0);
    let tx = |x: f64| if log_x { x.max(PLOT_FLOOR).log10() } else { x };
    let ty = |y: f64| y.max(PLOT_FLOOR).log10();

    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (_, data) in series {
        for &(x, y) in data {
            if x.is_finite() && y.is_finite() {
                pts.push((tx(x), ty(y)));
            }
        }
    }
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (width - ml - mr);
    let py = |y: f64| height - mb - (y - y0) / (y1 - y0) * (height - mt - mb);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        ml + (width - ml - mr) / 2.0
    );

    // frame
    let _ = write!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        width - ml - mr,
        height - mt - mb
    );

    // y ticks: integer decades, thinned to at most ~10 labels
    let d0 = y0.floor() as i64;
    let d1 = y1.ceil() as i64;
    let step = (((d1 - d0) as f64 / 10.0).ceil() as i64).max(1);
    let mut dec = d0;
    while dec <= d1 {
        let y = py((dec as f64).clamp(y0, y1));
        let _ = write!(
            svg,
            "<line x1=\"{ml}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            width - mr
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{dec}</text>\n",
            ml - 6.0,
            y + 4.0
        );
        dec += step;
    }
    // x ticks
    if log_x {
        let d0 = x0.floor() as i64;
        let d1 = x1.ceil() as i64;
        for dec in d0..=d1 {
            let x = px((dec as f64).clamp(x0, x1));
            let _ = write!(
                svg,
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1e{dec}</text>\n",
                height - mb + 18.0
            );
        }
    } else {
        for i in 0..=5 {
            let x = x0 + (x1 - x0) * i as f64 / 5.0;
            let _ = write!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.0}</text>\n",
                px(x),
                height - mb + 18.0,
                x
            );
        }
    }
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x_label}</text>\n",
        ml + (width - ml - mr) / 2.0,
        height - 12.0
    );
    let _ = write!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{y_label}</text>\n",
        mt + (height - mt - mb) / 2.0,
        mt + (height - mt - mb) / 2.0
    );

    for (idx, (label, data)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut poly = String::new();
        for &(x, y) in data {
            if x.is_finite() && y.is_finite() {
                let _ = write!(poly, "{:.2},{:.2} ", px(tx(x)), py(ty(y)));
            }
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            poly.trim_end()
        );
        let ly = mt + 16.0 + 18.0 * idx as f64;
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            width - mr + 10.0,
            width - mr + 34.0
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">{label}</text>\n",
            width - mr + 40.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// fig-a: minimal Hessian eigenvalue vs sample size

#[derive(Clone, Debug)]
pub struct FigARow {
    pub activation: Activation,
    /// "empirical" or "population" (MC reference; n is then n_mc).
    pub kind: &'static str,
    pub n: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mc_stderr: f64,
}

const FIG_A_DEFAULT_ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::SquaredRelu,
    Activation::Sigmoid,
    Activation::Quadratic,
];

/// Smallest/largest Hessian eigenvalues at the ground truth over a sample
/// size grid, per activation, plus a Monte Carlo population reference row.
/// Writes fig_a.csv and fig_a.svg.
pub fn cmd_fig_a(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<FigARow>> {
    let (k, r, t, kappa) = cfg.geometry()?;
    let acts = cfg.activations.clone().unwrap_or_else(|| FIG_A_DEFAULT_ACTIVATIONS.to_vec());
    let grid = cfg.n_grid.clone().unwrap_or_else(|| vec![100, 1_000, 10_000, 100_000]);
    if grid.is_empty() || !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("n_grid must be non-empty and strictly increasing".into()));
    }
    let n_mc = cfg.n_mc.unwrap_or(1_000_000);
    let master = cfg.seeds()[0];
    let stream = SeedStream::new(master);
    let wstar = make_ground_truth(k, t, kappa, master)?;

    let mut rows = Vec::new();
    for (ai, &act) in acts.iter().enumerate() {
        let prob = ProblemConfig::new(k, r, t, act, master)?;
        for (ni, &n) in grid.iter().enumerate() {
            let cell_seed: u64 = stream.indexed("fig_a_cell", (ai * grid.len() + ni) as u64).gen();
            let s = sample_dataset(&wstar, &prob, n, cell_seed)?;
            let h = hessian(&wstar, &s, &prob)?;
            let rep = spectrum(&h, &wstar, act)?;
            rows.push(FigARow {
                activation: act,
                kind: "empirical",
                n,
                lambda_min: rep.lambda_min,
                lambda_max: rep.lambda_max,
                mc_stderr: 0.0,
            });
        }
        let pop_seed: u64 = stream.indexed("fig_a_population", ai as u64).gen();
        let (h, _) = population_hessian_mc(&wstar, &prob, n_mc, pop_seed)?;
        let rep = spectrum(&h, &wstar, act)?;
        rows.push(FigARow {
            activation: act,
            kind: "population",
            n: n_mc,
            lambda_min: rep.lambda_min,
            lambda_max: rep.lambda_max,
            mc_stderr: rep.mc_stderr,
        });
    }

    let mut csv = String::from("activation,kind,n,lambda_min,lambda_max,mc_stderr\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.activation.name(),
            row.kind,
            row.n,
            row.lambda_min,
            row.lambda_max,
            row.mc_stderr
        );
    }
    write_file(&out_dir.join("fig_a.csv"), &csv)?;

    let series: Vec<(String, Vec<(f64, f64)>)> = acts
        .iter()
        .map(|&act| {
            let data = rows
                .iter()
                .filter(|row| row.activation == act && row.kind == "empirical")
                .map(|row| (row.n as f64, row.lambda_min))
                .collect();
            (act.name().to_string(), data)
        })
        .collect();
    let svg = svg_log_plot(
        "smallest Hessian eigenvalue at the planted weights",
        "samples",
        "lambda_min",
        &series,
        true,
    );
    write_file(&out_dir.join("fig_a.svg"), &svg)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// fig-b: gradient descent loss traces from random inits

/// Per-seed descent traces with Gaussian random init (no resampling).
/// Writes fig_b.csv (iter column + one loss column per seed) and fig_b.svg.
pub fn cmd_fig_b(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<(u64, TrainReport)>> {
    let (k, r, t, kappa) = cfg.geometry()?;
    let act = cfg
        .activations
        .as_ref()
        .map(|a| a[0])
        .unwrap_or(Activation::SquaredRelu);
    let n = cfg.n_samples.unwrap_or(1000);
    let step_size = cfg.step_size.unwrap_or(StepSize::Fixed(0.01));
    let max_iters = cfg.max_iters.unwrap_or(10_000);
    let tol = cfg.tol.unwrap_or(1e-12);
    let seeds = cfg.seeds();
    let master = seeds[0];
    let stream = SeedStream::new(master);

    let prob = ProblemConfig::new(k, r, t, act, master)?;
    let wstar = make_ground_truth(k, t, kappa, master)?;
    let data_seed: u64 = stream.indexed("fig_b_data", 0).gen();
    let s = sample_dataset(&wstar, &prob, n, data_seed)?;

    let mut runs = Vec::new();
    for &seed in &seeds {
        let tc = TrainConfig { step_size, max_iters, tol, resample: false, seed };
        let report = learn_cnn(&s, &prob, &tc, &InitMethod::RandomGaussian, Some(&wstar))?;
        runs.push((seed, report));
    }

    // One row per recorded iteration; traces that stopped early leave
    // blank cells.
    let mut table: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (ri, (_, report)) in runs.iter().enumerate() {
        for rec in &report.trace {
            table.entry(rec.iter).or_insert_with(|| vec![None; runs.len()])[ri] = Some(rec.loss);
        }
    }
    let mut csv = String::from("iter");
    for (seed, _) in &runs {
        let _ = write!(csv, ",loss_s{seed}");
    }
    csv.push('\n');
    for (iter, losses) in &table {
        let _ = write!(csv, "{iter}");
        for cell in losses {
            match cell {
                Some(v) => {
                    let _ = write!(csv, ",{v}");
                }
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    write_file(&out_dir.join("fig_b.csv"), &csv)?;

    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(seed, report)| {
            let data = report
                .trace
                .iter()
                .map(|rec| (rec.iter as f64, rec.loss))
                .collect();
            (format!("seed {seed}"), data)
        })
        .collect();
    let svg = svg_log_plot(
        "gradient descent from random initializations",
        "iteration",
        "empirical risk",
        &series,
        false,
    );
    write_file(&out_dir.join("fig_b.svg"), &svg)?;
    Ok(runs)
}

// ---------------------------------------------------------------------------
// pipeline: tensor init + gradient descent

#[derive(Clone, Debug)]
pub struct PipelineRow {
    pub seed: u64,
    pub resample: bool,
    pub init_rel_error: f64,
    pub final_rel_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Printed to stdout, never written to the CSV (reruns must be
    /// byte-identical).
    pub wall_seconds: f64,
}

/// Full recovery pipeline per seed; errors are relative min-matching
/// Frobenius distances to the planted weights. Writes pipeline.csv.
pub fn cmd_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PipelineRow>> {
    let (k, r, t, kappa) = cfg.geometry()?;
    let act = cfg
        .activations
        .as_ref()
        .map(|a| a[0])
        .unwrap_or(Activation::SquaredRelu);
    let n = cfg.require(cfg.n_samples, "n_samples")?;
    let max_iters = cfg.require(cfg.max_iters, "max_iters")?;
    let step_size = cfg.step_size.unwrap_or(StepSize::Auto);
    let tol = cfg.tol.unwrap_or(1e-12);
    let resample = cfg.resample.unwrap_or(false);
    let dump_m3 = cfg.dump_m3.unwrap_or(false);
    let seeds = cfg.seeds();
    let master = seeds[0];
    let stream = SeedStream::new(master);

    let prob = ProblemConfig::new(k, r, t, act, master)?;
    let wstar = make_ground_truth(k, t, kappa, master)?;
    let wstar_norm = wstar.norm();

    let mut rows = Vec::new();
    for (si, &seed) in seeds.iter().enumerate() {
        let data_seed: u64 = stream.indexed("pipeline_data", si as u64).gen();
        let s = sample_dataset(&wstar, &prob, n, data_seed)?;
        if dump_m3 {
            // Mirror learn_cnn's carve rule so the dump shows the moments
            // the initialization actually saw.
            let s0 = if resample {
                partition(&s, max_iters + 1, seed)?.swap_remove(0)
            } else {
                s.subset(&(0..n / 2).collect::<Vec<_>>())
            };
            let est = estimate_moments(&s0, &prob)?;
            est.m3.write_binary(&out_dir.join(format!("m3_seed{seed}.bin")))?;
        }
        let tc = TrainConfig { step_size, max_iters, tol, resample, seed };
        let init = InitMethod::TensorInit(TensorInitOptions { seed, ..Default::default() });
        let start = Instant::now();
        let report = learn_cnn(&s, &prob, &tc, &init, Some(&wstar))?;
        let wall_seconds = start.elapsed().as_secs_f64();
        if report.diverged {
            return Err(Error::Numerical(format!(
                "descent diverged (non-finite loss) for seed {seed}"
            )));
        }
        let row = PipelineRow {
            seed,
            resample,
            init_rel_error: min_matching_error(&report.init_w, &wstar, false)? / wstar_norm,
            final_rel_error: min_matching_error(&report.final_w, &wstar, false)? / wstar_norm,
            iterations: report.trace.last().map_or(0, |rec| rec.iter),
            converged: report.converged,
            wall_seconds,
        };
        println!(
            "seed {}: init err {:.3e}, final err {:.3e}, {} iterations, {:.2}s wall",
            row.seed, row.init_rel_error, row.final_rel_error, row.iterations, row.wall_seconds
        );
        rows.push(row);
    }

    let mut csv =
        String::from("seed,resample,init_rel_error,final_rel_error,iterations,converged\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.seed, row.resample, row.init_rel_error, row.final_rel_error, row.iterations,
            row.converged
        );
    }
    write_file(&out_dir.join("pipeline.csv"), &csv)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// moments-table

#[derive(Clone, Debug)]
pub struct MomentsRow {
    pub activation: Activation,
    pub sigma: f64,
    pub quantity: &'static str,
    pub closed_form: Option<f64>,
    pub quadrature: f64,
}

/// The alpha/beta/rho table, one long-format row per quantity, with
/// closed-form and quadrature columns side by side. Writes
/// moments_table.csv.
pub fn cmd_moments_table(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<MomentsRow>> {
    let acts = cfg.activations.clone().unwrap_or_else(|| Activation::ALL.to_vec());
    let sigmas = cfg.sigmas.clone().unwrap_or_else(|| vec![1.0, 2.0]);
    for &sigma in &sigmas {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigmas must be positive, got {sigma}")));
        }
    }

    let mut rows = Vec::new();
    for &act in &acts {
        for &sigma in &sigmas {
            let profile = moment_profile(act, sigma)?;
            let closed = closed_alpha_beta(act, sigma);
            let closed_rho = closed.map(|[a0, a1, a2, b0, b2]| {
                (b0 - a0 * a0 - a1 * a1)
                    .min(b2 - a1 * a1 - a2 * a2)
                    .min(a0 * a2 - a1 * a1)
                    .min(a0 * a0)
            });
            let quantities: [(&'static str, Option<f64>, f64); 6] = [
                ("alpha0", closed.map(|c| c[0]), profile.alpha0),
                ("alpha1", closed.map(|c| c[1]), profile.alpha1),
                ("alpha2", closed.map(|c| c[2]), profile.alpha2),
                ("beta0", closed.map(|c| c[3]), profile.beta0),
                ("beta2", closed.map(|c| c[4]), profile.beta2),
                ("rho", closed_rho, profile.rho),
            ];
            for (quantity, closed_form, quadrature) in quantities {
                rows.push(MomentsRow { activation: act, sigma, quantity, closed_form, quadrature });
            }
        }
    }

    let mut csv = String::from("activation,sigma,quantity,closed_form,quadrature\n");
    for row in &rows {
        let closed = row.closed_form.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.activation.name(),
            row.sigma,
            row.quantity,
            closed,
            row.quadrature
        );
    }
    write_file(&out_dir.join("moments_table.csv"), &csv)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// check-derivatives

/// Finite-difference validation of the analytic gradient and Hessian.
/// Prints one line per activation; returns CheckFailed if any suite
/// exceeds its tolerance.
pub fn cmd_check_derivatives(cfg: &ExperimentConfig) -> Result<Vec<DerivativeCheck>> {
    let acts = cfg.activations.clone().unwrap_or_else(|| Activation::ALL.to_vec());
    let seed = cfg.seeds()[0];
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &act in &acts {
        let check = check_derivatives(act, 10, seed)?;
        match check.hess_rel_err {
            Some(h) => println!(
                "{}: gradient rel err {:.3e}, hessian rel err {:.3e} -> {}",
                act.name(),
                check.grad_rel_err,
                h,
                if check.passed() { "pass" } else { "FAIL" }
            ),
            None => println!(
                "{}: gradient rel err {:.3e}, hessian skipped (not twice differentiable) -> {}",
                act.name(),
                check.grad_rel_err,
                if check.passed() { "pass" } else { "FAIL" }
            ),
        }
        if !check.passed() {
            failures.push(act.name());
        }
        reports.push(check);
    }
    if !failures.is_empty() {
        return Err(Error::CheckFailed(format!(
            "derivative checks failed for: {}",
            failures.join(", ")
        )));
    }
    Ok(reports)
}
