//! Artificial cascade scenarios, quadrature MISE, and the Monte Carlo study.
//!
//! Every scenario draws uniform features, a unit Fréchet trigger independent
//! of the features, thresholds the trigger at its empirical 95% quantile `u`,
//! and draws follow-up outcomes only on exceedance rows with success
//! probabilities `m(x; u)`. The true surfaces are the `u -> infinity` limits.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::distr::{Distribution, Open01};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::{
    build_threshold_sample, empirical_threshold, FeatureScaling, FollowUp, RawDataset, ScalingPolicy,
    ThresholdOptions, ThresholdedSample, Trigger,
};
use crate::net::{GLayer, KaneNetwork};
use crate::numeric::{median, normal_cdf, pairwise_sum};
use crate::rng::{stream, DATA_STREAM};
use crate::spline::SplineSpec;
use crate::training::{fit, FitConfig, PocSurface};

/// Quantile level used to threshold every scenario.
pub const SCENARIO_QUANTILE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    A1,
    A2,
    B1,
    B2,
    C,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::A1, ScenarioId::A2, ScenarioId::B1, ScenarioId::B2, ScenarioId::C];

    pub fn dim(self) -> usize {
        match self {
            ScenarioId::A1 | ScenarioId::A2 => 1,
            _ => 2,
        }
    }

    pub fn categories(self) -> usize {
        if self == ScenarioId::C {
            3
        } else {
            1
        }
    }

    pub fn g_layer(self) -> GLayer {
        if self == ScenarioId::C {
            GLayer::Softmax { categories: 3 }
        } else {
            GLayer::Sigmoid
        }
    }

    /// Desk-scale replicate count: 100 for curves, 50 for surfaces.
    pub fn default_replicates(self) -> usize {
        if self.dim() == 1 {
            100
        } else {
            50
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ScenarioId {
    type Err = KaneError;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| KaneError::InvalidArgument(format!("unknown scenario '{s}' (expected A1, A2, B1, B2 or C)")))
    }
}

/// Unit Fréchet variate from a uniform on `(0, 1)`.
pub fn frechet_from_uniform(u: f64) -> f64 {
    -1.0 / u.ln()
}

pub fn frechet_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    frechet_from_uniform(Open01.sample(rng))
}

fn bivariate_phi(x: &[f64], shift: f64) -> f64 {
    normal_cdf(x[0] - shift) * normal_cdf(x[1] - shift)
}

fn sine_bump(x: f64) -> f64 {
    0.2 * (3.0 * std::f64::consts::PI * (x - 1.0).powi(2)).sin() + 0.4
}

fn damped_cosine(x: &[f64]) -> f64 {
    0.4 * (-x[0]).exp() * (2.0 * std::f64::consts::PI * x[1]).cos() + 0.5
}

fn sine_ridge(x: &[f64]) -> f64 {
    0.8 * x[1] * (std::f64::consts::PI * x[0]).sin().powi(2)
}

fn check_point(id: ScenarioId, x: &[f64]) -> Result<()> {
    if x.len() != id.dim() {
        return Err(KaneError::Shape(format!("scenario {id} takes {} features, got {}", id.dim(), x.len())));
    }
    if let Some(&v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(KaneError::Domain { value: v });
    }
    Ok(())
}

/// Finite-threshold success probabilities `m(x; u)` (the normalized triple
/// for scenario C). Returns the values and how many were clamped into `[0, 1]`.
pub fn scenario_probability(id: ScenarioId, x: &[f64], u: f64) -> Result<(Vec<f64>, usize)> {
    check_point(id, x)?;
    if !(u > 0.0) {
        return Err(KaneError::InvalidArgument(format!("threshold {u} must be positive")));
    }
    let bump = 1.0 / (u * u);
    let shift = (-u).exp();
    let raw = match id {
        ScenarioId::A1 => vec![normal_cdf(x[0] - shift)],
        ScenarioId::A2 => vec![sine_bump(x[0]) + bump],
        ScenarioId::B1 => vec![bivariate_phi(x, shift)],
        ScenarioId::B2 => vec![damped_cosine(x) + bump],
        ScenarioId::C => vec![bivariate_phi(x, shift), damped_cosine(x) + bump, sine_ridge(x) + bump],
    };
    let mut clamped = 0;
    let mut values: Vec<f64> = raw
        .into_iter()
        .map(|m| {
            if !(0.0..=1.0).contains(&m) {
                clamped += 1;
            }
            m.clamp(0.0, 1.0)
        })
        .collect();
    if id == ScenarioId::C {
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
    }
    Ok((values, clamped))
}

/// The limiting surface as `u -> infinity`.
pub fn true_poc(id: ScenarioId, x: &[f64]) -> Result<Vec<f64>> {
    check_point(id, x)?;
    Ok(match id {
        ScenarioId::A1 => vec![normal_cdf(x[0])],
        ScenarioId::A2 => vec![sine_bump(x[0])],
        ScenarioId::B1 => vec![bivariate_phi(x, 0.0)],
        ScenarioId::B2 => vec![damped_cosine(x)],
        ScenarioId::C => {
            let m = [bivariate_phi(x, 0.0), damped_cosine(x), sine_ridge(x)];
            let total: f64 = m.iter().sum();
            m.iter().map(|v| v / total).collect()
        }
    })
}

/// Closed-form true surface of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioTruth(pub ScenarioId);

impl PocSurface for ScenarioTruth {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn width(&self) -> usize {
        self.0.categories()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        true_poc(self.0, x)
    }
}

/// A surface given by a closure.
pub struct FnSurface<F> {
    pub dim: usize,
    pub width: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> PocSurface for FnSurface<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn width(&self) -> usize {
        self.width
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(KaneError::Shape(format!("expected {} features, got {}", self.dim, x.len())));
        }
        Ok((self.f)(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDraw {
    pub scenario: ScenarioId,
    pub n: usize,
    pub seed: u64,
    pub raw: RawDataset,
    pub threshold: f64,
    /// Success probabilities clamped into `[0, 1]` while drawing outcomes.
    pub clamped: usize,
}

impl ScenarioDraw {
    /// Scenario C categories as ordinal levels `1..=3`.
    pub fn as_ordinal(&self) -> Result<RawDataset> {
        let FollowUp::Categorical { labels, categories } = &self.raw.follow_up else {
            return Err(KaneError::InvalidArgument(format!("scenario {} has no categorical outcome", self.scenario)));
        };
        RawDataset::new(
            self.raw.features.clone(),
            self.raw.trigger.clone(),
            FollowUp::Ordinal { levels: labels.iter().map(|l| l.map(|c| c + 1)).collect(), categories: *categories },
        )
    }

    /// The exceedance sample on the unit cube, which the features already fill.
    pub fn threshold_sample(&self) -> Result<ThresholdedSample> {
        build_threshold_sample(&self.raw, SCENARIO_QUANTILE, &scenario_threshold_options(self.scenario))
    }
}

pub fn scenario_threshold_options(id: ScenarioId) -> ThresholdOptions {
    ThresholdOptions { scaling: ScalingPolicy::Fixed(FeatureScaling::unit(id.dim())), ..Default::default() }
}

/// Draws `n` rows of a scenario from the data stream of `seed`.
pub fn generate(id: ScenarioId, n: usize, seed: u64) -> Result<ScenarioDraw> {
    let d = id.dim();
    let mut rng = stream(seed, DATA_STREAM);
    let mut features = Array2::zeros((n, d));
    let mut trigger = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d {
            features[[i, j]] = rng.random::<f64>();
        }
        trigger.push(frechet_sample(&mut rng));
    }
    let u = empirical_threshold(&trigger, SCENARIO_QUANTILE)?;
    let mut clamped = 0;
    let mut binary = vec![None; n];
    let mut labels = vec![None; n];
    for i in 0..n {
        if trigger[i] <= u {
            continue;
        }
        let x = features.row(i).to_vec();
        let (p, c) = scenario_probability(id, &x, u)?;
        clamped += c;
        let draw: f64 = rng.random();
        if id == ScenarioId::C {
            let mut acc = 0.0;
            let mut label = p.len() - 1;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if draw < acc {
                    label = k;
                    break;
                }
            }
            labels[i] = Some(label);
        } else {
            binary[i] = Some(draw < p[0]);
        }
    }
    let follow_up = if id == ScenarioId::C {
        FollowUp::Categorical { labels, categories: 3 }
    } else {
        FollowUp::Binary(binary)
    };
    let raw = RawDataset::new(features, Trigger::Single(trigger), follow_up)?;
    Ok(ScenarioDraw { scenario: id, n, seed, raw, threshold: u, clamped })
}

/// Uniform tensor grid on `[0, 1]^dim` with trapezoid weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub points_per_axis: usize,
}

impl Grid {
    /// 1001 points on the line, 101 x 101 on the square.
    pub fn standard(dim: usize) -> Self {
        Self { dim, points_per_axis: if dim == 1 { 1001 } else { 101 } }
    }

    /// 10^4 + 1 points on the line.
    pub fn refined_line() -> Self {
        Self { dim: 1, points_per_axis: 10_001 }
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.points_per_axis.pow((self.dim - 1 - axis) as u32)) % self.points_per_axis
    }

    /// Grid points, last coordinate varying fastest.
    pub fn points(&self) -> Array2<f64> {
        let h = 1.0 / (self.points_per_axis - 1) as f64;
        Array2::from_shape_fn((self.len(), self.dim), |(i, a)| self.axis_index(i, a) as f64 * h)
    }

    pub fn weights(&self) -> Vec<f64> {
        let m = self.points_per_axis;
        let h = 1.0 / (m - 1) as f64;
        let w1 = |k: usize| if k == 0 || k == m - 1 { 0.5 * h } else { h };
        (0..self.len()).map(|i| (0..self.dim).map(|a| w1(self.axis_index(i, a))).product()).collect()
    }

    /// Trapezoid integral of per-point values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let terms: Vec<f64> = self.weights().iter().zip(values).map(|(w, v)| w * v).collect();
        pairwise_sum(&terms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.points_per_axis < 2 {
            return Err(KaneError::InvalidArgument(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }
}

/// Integrated squared error of each column of two surfaces sampled on `grid`.
pub fn ise_of_values(estimate: ArrayView2<f64>, truth: ArrayView2<f64>, grid: &Grid) -> Result<Vec<f64>> {
    if estimate.dim() != truth.dim() || estimate.nrows() != grid.len() {
        return Err(KaneError::Shape(format!(
            "estimate {:?}, truth {:?}, grid of {} points",
            estimate.dim(),
            truth.dim(),
            grid.len()
        )));
    }
    Ok((0..estimate.ncols())
        .map(|j| {
            let sq: Vec<f64> = estimate.column(j).iter().zip(truth.column(j)).map(|(a, b)| (a - b).powi(2)).collect();
            grid.integrate(&sq)
        })
        .collect())
}

/// Integrated squared error over `[0, 1]^d`, one entry per output column.
pub fn mise(estimate: &dyn PocSurface, truth: &dyn PocSurface, grid: &Grid) -> Result<Vec<f64>> {
    grid.validate()?;
    if estimate.dim() != truth.dim() || estimate.dim() != grid.dim || estimate.width() != truth.width() {
        return Err(KaneError::Shape(format!(
            "estimate is {}->{}, truth is {}->{}, grid has dimension {}",
            estimate.dim(),
            estimate.width(),
            truth.dim(),
            truth.width(),
            grid.dim
        )));
    }
    let pts = grid.points();
    let a = estimate.evaluate_batch(pts.view())?;
    let b = truth.evaluate_batch(pts.view())?;
    ise_of_values(a.view(), b.view(), grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub init_seed: u64,
    pub n_u: usize,
    pub final_loss: Option<f64>,
    pub iterations: Option<usize>,
    /// Integrated squared error per category on the standard grid.
    pub ise: Option<Vec<f64>>,
    /// Same on the refined 10^4-point line (curves only).
    pub ise_refined: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// One replicate's record and its surface on the standard grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub record: ReplicateRecord,
    pub curve: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub fit: FitConfig,
    pub threads: Option<usize>,
    pub grid: Grid,
}

impl StudyOptions {
    pub fn new(id: ScenarioId, fit: FitConfig) -> Self {
        Self { fit, threads: None, grid: Grid::standard(id.dim()) }
    }
}

/// Generate, threshold, fit and score replicate `r` (data seed `base_seed + r`,
/// initialization seed `fit.init_seed + r`).
pub fn run_replicate(id: ScenarioId, n: usize, r: usize, base_seed: u64, opts: &StudyOptions) -> ReplicateOutcome {
    let seed = base_seed.wrapping_add(r as u64);
    let init_seed = opts.fit.init_seed.wrapping_add(r as u64);
    let mut record = ReplicateRecord {
        replicate: r,
        seed,
        init_seed,
        n_u: 0,
        final_loss: None,
        iterations: None,
        ise: None,
        ise_refined: None,
        error: None,
    };
    let mut attempt = || -> Result<Array2<f64>> {
        let sample = generate(id, n, seed)?.threshold_sample()?;
        record.n_u = sample.len();
        let g = id.g_layer();
        let widths = KaneNetwork::canonical_widths(id.dim(), g);
        let (est, report) = fit(&sample, &widths, SplineSpec::cubic_two_interval(), g, &opts.fit.with_seed(init_seed))?;
        record.final_loss = Some(report.final_loss);
        record.iterations = Some(report.iterations);
        let truth = ScenarioTruth(id);
        let pts = opts.grid.points();
        let curve = est.evaluate_batch(pts.view())?;
        let t = truth.evaluate_batch(pts.view())?;
        record.ise = Some(ise_of_values(curve.view(), t.view(), &opts.grid)?);
        if id.dim() == 1 {
            record.ise_refined = Some(mise(&est, &truth, &Grid::refined_line())?);
        }
        Ok(curve)
    };
    match attempt() {
        Ok(curve) => ReplicateOutcome { record, curve: Some(curve) },
        Err(e) => {
            record.error = Some(e.to_string());
            ReplicateOutcome { record, curve: None }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub scenario: ScenarioId,
    pub n: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub grid: Grid,
    pub records: Vec<ReplicateRecord>,
    pub failures: usize,
    /// Mean over successful replicates of the per-replicate ISE, per category.
    pub mean_ise: Vec<f64>,
    pub median_ise: Vec<f64>,
    pub mean_ise_refined: Option<Vec<f64>>,
    /// Pointwise mean of the fitted surfaces on the grid.
    pub mean_curve: Array2<f64>,
    pub truth_curve: Array2<f64>,
    /// ISE of the pointwise mean surface against the truth, per category.
    pub mean_curve_ise: Vec<f64>,
}

/// Aggregates replicate outcomes in the order given.
pub fn summarize(
    id: ScenarioId,
    n: usize,
    base_seed: u64,
    grid: Grid,
    outcomes: &[ReplicateOutcome],
) -> Result<MonteCarloSummary> {
    let width = id.categories();
    let pts = grid.points();
    let truth_curve = ScenarioTruth(id).evaluate_batch(pts.view())?;
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.curve.is_some() && o.record.ise.is_some()).collect();
    let failures = outcomes.len() - ok.len();
    let per_cat = |f: &dyn Fn(&ReplicateRecord) -> Option<&Vec<f64>>, agg: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        (0..width)
            .map(|j| {
                let v: Vec<f64> = ok.iter().filter_map(|o| f(&o.record).map(|e| e[j])).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    agg(&v)
                }
            })
            .collect()
    };
    let mean = |v: &[f64]| pairwise_sum(v) / v.len() as f64;
    let mean_ise = per_cat(&|r| r.ise.as_ref(), &mean);
    let median_ise = per_cat(&|r| r.ise.as_ref(), &median);
    let mean_ise_refined = (id.dim() == 1).then(|| per_cat(&|r| r.ise_refined.as_ref(), &mean));

    let mut mean_curve = Array2::zeros((grid.len(), width));
    if ok.is_empty() {
        mean_curve.fill(f64::NAN);
    } else {
        for o in &ok {
            mean_curve += o.curve.as_ref().unwrap();
        }
        mean_curve /= ok.len() as f64;
    }
    let mean_curve_ise = ise_of_values(mean_curve.view(), truth_curve.view(), &grid)?;
    Ok(MonteCarloSummary {
        scenario: id,
        n,
        replicates: outcomes.len(),
        base_seed,
        grid,
        records: outcomes.iter().map(|o| o.record.clone()).collect(),
        failures,
        mean_ise,
        median_ise,
        mean_ise_refined,
        mean_curve,
        truth_curve,
        mean_curve_ise,
    })
}

/// Runs `replicates` independent generate-threshold-fit-score experiments.
/// Results are identical for any thread count.
pub fn monte_carlo(
    id: ScenarioId,
    n: usize,
    replicates: usize,
    base_seed: u64,
    opts: &StudyOptions,
) -> Result<MonteCarloSummary> {
    if replicates == 0 {
        return Err(KaneError::InvalidArgument("at least one replicate is required".into()));
    }
    opts.fit.validate()?;
    opts.grid.validate()?;
    if opts.grid.dim != id.dim() {
        return Err(KaneError::Shape(format!("grid dimension {} for scenario {id}", opts.grid.dim)));
    }
    let outcomes = run_indexed(replicates, opts.threads, |r| run_replicate(id, n, r, base_seed, opts))?;
    summarize(id, n, base_seed, opts.grid, &outcomes)
}

/// Maps `f` over `0..count` on a pool of `threads` workers, keeping index order.
pub fn run_indexed<T, F>(count: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match threads {
        Some(1) => Ok((0..count).map(f).collect()),
        _ => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| KaneError::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn frechet_inverse_at_unit_point() {
        assert!((frechet_from_uniform((-1.0f64).exp()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frechet_distribution_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mut y: Vec<f64> = (0..n).map(|_| frechet_sample(&mut rng)).collect();
        y.sort_by(f64::total_cmp);
        assert!(y[0] > 0.0);
        let sup = y
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = (-1.0 / v).exp();
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(sup < 0.003, "sup distance {sup}");
        let med = median(&y);
        assert!((med / std::f64::consts::LOG2_E - 1.0).abs() < 0.02, "median {med}");
    }

    #[test]
    fn finite_threshold_probabilities() {
        let (a2, _) = scenario_probability(ScenarioId::A2, &[1.0], 1e9).unwrap();
        assert!((a2[0] - 0.4).abs() < 1e-15);
        let (a1, c) = scenario_probability(ScenarioId::A1, &[0.5], 20.0).unwrap();
        assert_eq!(c, 0);
        assert!((a1[0] - 0.691_462_460_548_352_4).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let u = rng.random_range(0.5..50.0);
            let (p, _) = scenario_probability(ScenarioId::C, &x, u).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
        // a 1/u^2 bump of 4 pushes B2 above one
        let (b2, c) = scenario_probability(ScenarioId::B2, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!((b2[0], c), (1.0, 1));
        assert!(scenario_probability(ScenarioId::A1, &[1.5], 20.0).is_err());
        assert!(scenario_probability(ScenarioId::B1, &[0.5], 20.0).is_err());
    }

    #[test]
    fn limiting_surfaces() {
        assert_eq!(true_poc(ScenarioId::A1, &[0.0]).unwrap(), vec![0.5]);
        assert!((true_poc(ScenarioId::A2, &[1.0]).unwrap()[0] - 0.4).abs() < 1e-15);
        assert!((true_poc(ScenarioId::B2, &[0.0, 0.0]).unwrap()[0] - 0.9).abs() < 1e-15);
        assert!((true_poc(ScenarioId::B2, &[0.0, 0.5]).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!((true_poc(ScenarioId::B1, &[0.0, 0.0]).unwrap()[0] - 0.25).abs() < 1e-15);
        for id in ScenarioId::ALL {
            let grid = Grid { dim: id.dim(), points_per_axis: 21 };
            let vals = ScenarioTruth(id).evaluate_batch(grid.points().view()).unwrap();
            assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
            if id == ScenarioId::C {
                assert!(vals.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn finite_u_approaches_limit() {
        for id in ScenarioId::ALL {
            let x = vec![0.3; id.dim()];
            let (p, _) = scenario_probability(id, &x, 1e8).unwrap();
            let t = true_poc(id, &x).unwrap();
            for (a, b) in p.iter().zip(&t) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn draws_have_exactly_five_percent_outcomes() {
        for id in ScenarioId::ALL {
            let draw = generate(id, 10_000, 3).unwrap();
            let present = match &draw.raw.follow_up {
                FollowUp::Binary(v) => v.iter().filter(|d| d.is_some()).count(),
                FollowUp::Categorical { labels, .. } => labels.iter().filter(|d| d.is_some()).count(),
                _ => unreachable!(),
            };
            assert_eq!(present, 500);
            assert_eq!(draw.threshold_sample().unwrap().len(), 500);
            assert_eq!(draw.clamped, 0);
            assert!(draw.raw.features.iter().all(|v| (0.0..1.0).contains(v)));
            assert_eq!(generate(id, 10_000, 3).unwrap(), draw);
        }
        assert_ne!(generate(ScenarioId::A1, 1000, 3).unwrap().raw, generate(ScenarioId::A1, 1000, 4).unwrap().raw);
    }

    #[test]
    fn outcome_rates_match_probabilities_in_bins() {
        let draw = generate(ScenarioId::A2, 200_000, 5).unwrap();
        let s = draw.threshold_sample().unwrap();
        let crate::evt::Outcomes::Binary(d) = &s.outcomes else { unreachable!() };
        let bins = 10;
        let mut hits = vec![0.0; bins];
        let mut expect = vec![0.0; bins];
        let mut var = vec![0.0; bins];
        for (i, row) in s.features.rows().into_iter().enumerate() {
            let b = ((row[0] * bins as f64) as usize).min(bins - 1);
            let p = scenario_probability(ScenarioId::A2, &[row[0]], s.threshold).unwrap().0[0];
            hits[b] += d[i];
            expect[b] += p;
            var[b] += p * (1.0 - p);
        }
        for b in 0..bins {
            assert!((hits[b] - expect[b]).abs() < 3.0 * var[b].sqrt(), "bin {b}");
        }
    }

    #[test]
    fn category_frequencies_pass_chi_square() {
        let draw = generate(ScenarioId::C, 200_000, 6).unwrap();
        let s = draw.threshold_sample().unwrap();
        let crate::evt::Outcomes::OneHot(d) = &s.outcomes else { unreachable!() };
        let side = 4;
        let mut obs = vec![[0.0; 3]; side * side];
        let mut exp = vec![[0.0; 3]; side * side];
        for (i, row) in s.features.rows().into_iter().enumerate() {
            let b = ((row[0] * side as f64) as usize).min(side - 1) * side + ((row[1] * side as f64) as usize).min(side - 1);
            let p = scenario_probability(ScenarioId::C, &[row[0], row[1]], s.threshold).unwrap().0;
            for j in 0..3 {
                obs[b][j] += d[[i, j]];
                exp[b][j] += p[j];
            }
        }
        let stat: f64 = obs.iter().zip(&exp).flat_map(|(o, e)| (0..3).map(move |j| (o[j] - e[j]).powi(2) / e[j])).sum();
        let df = (side * side * 2) as f64;
        assert!(stat < ChiSquared::new(df).unwrap().inverse_cdf(0.999), "chi-square {stat}");
    }

    #[test]
    fn quadrature_examples() {
        let truth = ScenarioTruth(ScenarioId::A2);
        let grid = Grid::standard(1);
        assert_eq!(mise(&truth, &truth, &grid).unwrap(), vec![0.0]);
        let eps = 0.03;
        let shifted = FnSurface { dim: 1, width: 1, f: |x: &[f64]| vec![true_poc(ScenarioId::A2, x).unwrap()[0] + eps] };
        assert!((mise(&shifted, &truth, &grid).unwrap()[0] - eps * eps).abs() < 1e-10);
        let g2 = Grid::standard(2);
        let b2 = ScenarioTruth(ScenarioId::B2);
        let shifted2 = FnSurface { dim: 2, width: 1, f: |x: &[f64]| vec![true_poc(ScenarioId::B2, x).unwrap()[0] - eps] };
        assert!((mise(&shifted2, &b2, &g2).unwrap()[0] - eps * eps).abs() < 1e-10);
        assert!(mise(&shifted, &b2, &g2).is_err());
    }

    #[test]
    fn kinked_error_matches_monte_carlo_integration() {
        let kink = |x: &[f64]| 0.05 * (x[0] - 0.3).max(0.0) + 0.2 * (x[1] - 0.6).max(0.0);
        let truth = ScenarioTruth(ScenarioId::B1);
        let est = FnSurface { dim: 2, width: 1, f: move |x: &[f64]| vec![true_poc(ScenarioId::B1, x).unwrap()[0] + kink(x)] };
        let quad = mise(&est, &truth, &Grid::standard(2)).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let terms: Vec<f64> = (0..n).map(|_| kink(&[rng.random(), rng.random()]).powi(2)).collect();
        let mc = pairwise_sum(&terms) / n as f64;
        assert!((quad - mc).abs() < 1e-6, "quadrature {quad} vs monte carlo {mc}");
    }

    #[test]
    fn grid_layout() {
        let g = Grid { dim: 2, points_per_axis: 3 };
        let p = g.points();
        assert_eq!(p.row(1).to_vec(), vec![0.0, 0.5]);
        assert_eq!(p.row(3).to_vec(), vec![0.5, 0.0]);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((Grid::refined_line().weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_replicate_study_is_the_single_sample_experiment() {
        let opts = StudyOptions::new(ScenarioId::A1, FitConfig { max_iterations: 20, ..Default::default() });
        let s = monte_carlo(ScenarioId::A1, 2000, 1, 11, &opts).unwrap();
        let single = run_replicate(ScenarioId::A1, 2000, 0, 11, &opts);
        assert_eq!(s.records[0], single.record);
        assert_eq!(&s.mean_curve, single.curve.as_ref().unwrap());
        assert_eq!(s.mean_ise, single.record.ise.clone().unwrap());
        assert_eq!(s.mean_curve_ise, s.mean_ise);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let opts = StudyOptions::new(ScenarioId::A2, FitConfig { max_iterations: 15, ..Default::default() });
        let serial = monte_carlo(ScenarioId::A2, 1000, 4, 20, &StudyOptions { threads: Some(1), ..opts.clone() }).unwrap();
        let pooled = monte_carlo(ScenarioId::A2, 1000, 4, 20, &StudyOptions { threads: Some(3), ..opts }).unwrap();
        assert_eq!(serial, pooled);
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        // 600 rows leave 30 exceedances; 400 rows leave only 20, below the fitting floor
        let opts = StudyOptions::new(ScenarioId::A1, FitConfig { max_iterations: 5, ..Default::default() });
        let s = monte_carlo(ScenarioId::A1, 400, 2, 0, &opts).unwrap();
        assert_eq!(s.failures, 2);
        assert!(s.records.iter().all(|r| r.error.is_some()));
        assert!(monte_carlo(ScenarioId::A1, 600, 2, 0, &opts).unwrap().failures == 0);
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("b2".parse::<ScenarioId>().unwrap(), ScenarioId::B2);
        assert!("D".parse::<ScenarioId>().is_err());
    }
}
