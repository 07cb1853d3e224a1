//! Randomized quantile residuals, QQ reference data, and case-resampling
//! bootstrap bands.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::{FeatureScaling, Outcomes, ThresholdedSample};
use crate::loss::{Targets, PROB_FLOOR};
use crate::net::GLayer;
use crate::numeric::{normal_pdf, normal_quantile, sorted_quantile};
use crate::rng::{stream, BOOTSTRAP_STREAM_BASE, DATA_STREAM, RESIDUAL_STREAM_BASE};
use crate::simulation::run_indexed;
use crate::spline::SplineSpec;
use crate::training::{fit_targets, FitConfig, PocSurface};

pub const DEFAULT_TRAJECTORIES: usize = 10;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub seed: u64,
    /// What produced the probabilities, e.g. a model path or a scenario name.
    pub source: String,
    pub trajectories: Vec<Vec<f64>>,
}

impl ResidualSet {
    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.trajectories.concat()
    }
}

fn binary_outcomes(data: &ThresholdedSample) -> Result<&[f64]> {
    match &data.outcomes {
        Outcomes::Binary(d) => Ok(d),
        _ => Err(KaneError::InvalidArgument("residuals are defined for binary outcomes only".into())),
    }
}

/// `T` trajectories of Dunn-Smyth residuals. Row `i` with success probability
/// `a` maps a uniform draw on `(0, 1 - a)` (failure) or `(1 - a, 1)` (success)
/// through the standard normal quantile function. Trajectory `t` uses its own stream.
pub fn dunn_smyth(
    fit: &dyn PocSurface,
    data: &ThresholdedSample,
    trajectories: usize,
    seed: u64,
    source: impl Into<String>,
) -> Result<ResidualSet> {
    if trajectories == 0 {
        return Err(KaneError::InvalidArgument("at least one trajectory is required".into()));
    }
    if fit.width() != 1 {
        return Err(KaneError::InvalidArgument("residuals need a binary surface".into()));
    }
    let delta = binary_outcomes(data)?;
    let alpha = fit.evaluate_batch(data.features.view())?;
    let trajectories = (0..trajectories)
        .map(|t| {
            let mut rng = stream(seed, RESIDUAL_STREAM_BASE + t as u64);
            delta
                .iter()
                .zip(alpha.column(0))
                .map(|(&d, &a)| {
                    let split = 1.0 - a;
                    let v: f64 = rng.random();
                    let p = if d == 1.0 { split + v * a } else { v * split };
                    normal_quantile(p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
                })
                .collect()
        })
        .collect();
    Ok(ResidualSet { seed, source: source.into(), trajectories })
}

/// Sorted residuals against normal quantiles with a pointwise 95% band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub theoretical: Vec<f64>,
    pub sample: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Plotting positions `(i - 0.5) / n`; the band is `z +- 1.96 sqrt(p(1-p)/n) / phi(z)`.
pub fn qq_reference(residuals: &[f64]) -> Result<QqData> {
    if residuals.is_empty() {
        return Err(KaneError::Empty("qq_reference needs at least one residual".into()));
    }
    let n = residuals.len() as f64;
    let mut sample = residuals.to_vec();
    sample.sort_by(f64::total_cmp);
    let mut out = QqData { theoretical: vec![], sample, lower: vec![], upper: vec![] };
    for i in 0..residuals.len() {
        let p = (i as f64 + 0.5) / n;
        let z = normal_quantile(p);
        let half = 1.96 * (p * (1.0 - p) / n).sqrt() / normal_pdf(z);
        out.theoretical.push(z);
        out.lower.push(z - half);
        out.upper.push(z + half);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub grid: Array2<f64>,
    /// Full-data estimate on the grid.
    pub point: Array2<f64>,
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
    pub converged: usize,
    /// Resamples with a single outcome class, replaced by their constant rate.
    pub constant_fallbacks: usize,
    /// Grid rows where the point estimate falls outside its band.
    pub flagged_points: Vec<usize>,
}

impl BootstrapBand {
    pub fn mean_width(&self) -> f64 {
        (&self.upper - &self.lower).mean().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub widths: Vec<usize>,
    pub spec: SplineSpec,
    pub g_layer: GLayer,
    pub fit: FitConfig,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl BootstrapOptions {
    /// Canonical network with the given replicate count, 95% level.
    pub fn canonical(dim: usize, g_layer: GLayer, replicates: usize, seed: u64) -> Self {
        Self {
            widths: crate::net::KaneNetwork::canonical_widths(dim, g_layer),
            spec: SplineSpec::cubic_two_interval(),
            g_layer,
            fit: FitConfig::default(),
            replicates,
            level: 0.95,
            seed,
            threads: None,
        }
    }
}

struct Refit {
    values: Array2<f64>,
    converged: bool,
    fallback: bool,
}

fn refit_on_grid(
    features: ArrayView2<f64>,
    targets: &Targets,
    grid: ArrayView2<f64>,
    opts: &BootstrapOptions,
) -> Result<Refit> {
    if let Targets::Binary(d) = targets {
        let ones = d.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == d.len() {
            let rate = ones as f64 / d.len() as f64;
            return Ok(Refit { values: Array2::from_elem((grid.nrows(), 1), rate), converged: true, fallback: true });
        }
    }
    let (net, report, _) = fit_targets(features, targets, &opts.widths, opts.spec.clone(), opts.g_layer, &opts.fit)?;
    Ok(Refit { values: net.forward_batch(grid)?, converged: report.converged, fallback: false })
}

/// Percentile bootstrap band from `B` case resamples of the exceedance sample.
/// Resample `r` draws its rows from its own stream of `seed`.
pub fn bootstrap_ci(data: &ThresholdedSample, grid: ArrayView2<f64>, opts: &BootstrapOptions) -> Result<BootstrapBand> {
    if opts.replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(KaneError::InvalidArgument(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {}",
            opts.replicates
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(KaneError::InvalidArgument(format!("level {} must lie in (0, 1)", opts.level)));
    }
    if data.is_empty() {
        return Err(KaneError::Empty("bootstrap needs data".into()));
    }
    if grid.ncols() != data.dim() {
        return Err(KaneError::Shape(format!("grid has {} columns, data {}", grid.ncols(), data.dim())));
    }
    let targets = data.outcomes.targets()?;
    let point = refit_on_grid(data.features.view(), &targets, grid, opts)?.values;
    let n = data.len();
    let refits = run_indexed(opts.replicates, opts.threads, |r| {
        let mut rng = stream(opts.seed, BOOTSTRAP_STREAM_BASE + r as u64);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let x = data.features.select(Axis(0), &rows);
        refit_on_grid(x.view(), &targets.select(&rows), grid, opts)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (g, w) = point.dim();
    let mut lower = Array2::zeros((g, w));
    let mut upper = Array2::zeros((g, w));
    let lo_q = (1.0 - opts.level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let mut column = Vec::with_capacity(refits.len());
    let mut flagged_points = Vec::new();
    for i in 0..g {
        let mut flagged = false;
        for j in 0..w {
            column.clear();
            column.extend(refits.iter().map(|r| r.values[[i, j]]));
            column.sort_by(f64::total_cmp);
            lower[[i, j]] = sorted_quantile(&column, lo_q);
            upper[[i, j]] = sorted_quantile(&column, hi_q);
            flagged |= !(lower[[i, j]] <= point[[i, j]] && point[[i, j]] <= upper[[i, j]]);
        }
        if flagged {
            flagged_points.push(i);
        }
    }
    Ok(BootstrapBand {
        grid: grid.to_owned(),
        point,
        lower,
        upper,
        level: opts.level,
        replicates: opts.replicates,
        seed: opts.seed,
        converged: refits.iter().filter(|r| r.converged).count(),
        constant_fallbacks: refits.iter().filter(|r| r.fallback).count(),
        flagged_points,
    })
}

/// Exceedance sample with uniform features on `[0, 1]^dim` and Bernoulli(`rate`) outcomes.
pub fn constant_truth_sample(n_u: usize, dim: usize, rate: f64, seed: u64) -> Result<ThresholdedSample> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(KaneError::InvalidArgument(format!("rate {rate} outside [0, 1]")));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let mut features = Array2::zeros((n_u, dim));
    let mut flags = Vec::with_capacity(n_u);
    for i in 0..n_u {
        for j in 0..dim {
            features[[i, j]] = rng.random::<f64>();
        }
        flags.push((rng.random::<f64>() < rate) as u8 as f64);
    }
    Ok(ThresholdedSample {
        features,
        outcomes: Outcomes::Binary(flags),
        threshold: f64::NAN,
        quantile_level: f64::NAN,
        retained_rows: (0..n_u).collect(),
        scaling: FeatureScaling::unit(dim),
        clipped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub n_u: usize,
    pub replicates: usize,
    pub level: f64,
    pub truth: f64,
    /// Fraction of grid points covered, per outer run.
    pub per_run: Vec<f64>,
    /// Average of `per_run`.
    pub coverage: f64,
    pub mean_width: f64,
    pub constant_fallbacks: usize,
}

/// Outer Monte Carlo over constant-truth datasets: how often the pointwise
/// band covers the true rate. Run `k` uses data seed `seed + k` and bootstrap
/// seed `seed + k`; outer runs are spread over `threads` workers.
pub fn bootstrap_coverage(
    runs: usize,
    n_u: usize,
    truth: f64,
    grid: ArrayView2<f64>,
    opts: &BootstrapOptions,
) -> Result<CoverageReport> {
    if runs == 0 {
        return Err(KaneError::InvalidArgument("at least one outer run is required".into()));
    }
    let inner = BootstrapOptions { threads: Some(1), ..opts.clone() };
    let bands = run_indexed(runs, opts.threads, |k| {
        let seed = opts.seed.wrapping_add(k as u64);
        let data = constant_truth_sample(n_u, grid.ncols(), truth, seed)?;
        bootstrap_ci(&data, grid, &BootstrapOptions { seed, ..inner.clone() })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let per_run: Vec<f64> = bands
        .iter()
        .map(|b| {
            let hit = b.lower.iter().zip(b.upper.iter()).filter(|(lo, hi)| **lo <= truth && truth <= **hi).count();
            hit as f64 / b.lower.len() as f64
        })
        .collect();
    Ok(CoverageReport {
        runs,
        n_u,
        replicates: opts.replicates,
        level: opts.level,
        truth,
        coverage: per_run.iter().sum::<f64>() / runs as f64,
        per_run,
        mean_width: bands.iter().map(BootstrapBand::mean_width).sum::<f64>() / runs as f64,
        constant_fallbacks: bands.iter().map(|b| b.constant_fallbacks).sum(),
    })
}

/// Largest gap between the empirical distribution of `values` and the standard normal.
pub fn normal_sup_distance(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = crate::numeric::normal_cdf(x);
            (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}
