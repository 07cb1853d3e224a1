use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kane_core::csv_io::{read_dataset_file, ColumnMapping};
use kane_core::evt::{build_threshold_sample, FeatureScaling, Outcomes, ScalingPolicy, ThresholdOptions, ThresholdedSample};
use kane_core::ordinal::fit_ordinal;
use kane_core::{fit, FitConfig, FitReport, GLayer, Model, SplineSpec};
use serde_json::{json, Value};

use crate::manifest::RunManifest;
use crate::output::{ensure_dir, write_atomic, write_json};
use crate::{load_fit_config, usage, FitArgs, GLayerArg, ScalingArg};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";

pub fn read_mapping(path: &Path) -> Result<ColumnMapping> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading mapping {}", path.display()))?;
    let mapping: ColumnMapping =
        serde_json::from_str(&text).with_context(|| format!("parsing mapping {}", path.display()))?;
    mapping.validate()?;
    Ok(mapping)
}

/// Fit report without its wall-clock field, so reruns serialize identically.
pub fn report_value(report: &FitReport) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_seconds");
    }
    Ok(v)
}

/// Width vector `[d, h, ..., h, out]` with `layers` entries.
pub fn network_widths(d: usize, hidden: Option<usize>, layers: usize, out: usize) -> Result<Vec<usize>> {
    if layers < 2 {
        return Err(usage(format!("--layers must be at least 2, got {layers}")));
    }
    let h = hidden.unwrap_or(2 * d + 1);
    if h == 0 {
        return Err(usage("--hidden must be positive"));
    }
    let mut widths = vec![d];
    widths.extend(std::iter::repeat_n(h, layers - 2));
    widths.push(out);
    Ok(widths)
}

fn threshold_options(scaling: ScalingArg, d: usize) -> ThresholdOptions {
    let scaling = match scaling {
        ScalingArg::Retained => ScalingPolicy::RetainedMinMax,
        ScalingArg::Unit => ScalingPolicy::Fixed(FeatureScaling::unit(d)),
    };
    ThresholdOptions { scaling, ..Default::default() }
}

fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    let mut cfg = load_fit_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        cfg.init_seed = seed;
    }
    if let Some(m) = args.max_iterations {
        cfg.max_iterations = m;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Fits the model the outcome kind calls for; returns it with per-model reports.
pub fn fit_sample(
    sample: &ThresholdedSample,
    args: &FitArgs,
    config: &FitConfig,
) -> Result<(Model, Vec<Option<FitReport>>)> {
    let spec = SplineSpec::new(args.degree, args.intervals).map_err(|e| usage(e.to_string()))?;
    let d = sample.dim();
    match (&sample.outcomes, args.g_layer) {
        (Outcomes::Binary(_), None | Some(GLayerArg::Sigmoid)) => {
            let widths = network_widths(d, args.hidden, args.layers, 1)?;
            let (est, report) = fit(sample, &widths, spec, GLayer::Sigmoid, config)?;
            Ok((Model::Network(est), vec![Some(report)]))
        }
        (Outcomes::OneHot(y), None | Some(GLayerArg::Softmax)) => {
            let categories = y.ncols();
            let widths = network_widths(d, args.hidden, args.layers, categories)?;
            let (est, report) = fit(sample, &widths, spec, GLayer::Softmax { categories }, config)?;
            Ok((Model::Network(est), vec![Some(report)]))
        }
        (Outcomes::Ordinal { .. }, None | Some(GLayerArg::Sigmoid)) => {
            let widths = network_widths(d, args.hidden, args.layers, 1)?;
            let model = fit_ordinal(sample, &widths, spec, config)?;
            let reports = model.reports.clone();
            Ok((Model::FrankHall(model), reports))
        }
        (outcomes, Some(g)) => Err(usage(format!(
            "g-layer {g:?} does not fit {} outcomes",
            match outcomes {
                Outcomes::Binary(_) => "binary",
                Outcomes::OneHot(_) => "categorical",
                Outcomes::Ordinal { .. } => "ordinal",
            }
        ))),
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<Vec<PathBuf>> {
    if !(args.q > 0.0 && args.q < 1.0) {
        return Err(usage(format!("--q {} must lie in (0, 1)", args.q)));
    }
    let config = fit_config(args)?;
    let mapping = read_mapping(&args.mapping)?;
    let raw = read_dataset_file(&args.data, &mapping)?;
    let sample = build_threshold_sample(&raw, args.q, &threshold_options(args.scaling, raw.dim()))?;
    let (model, reports) = fit_sample(&sample, args, &config)?;

    let mut manifest = RunManifest::start(
        "fit",
        json!({
            "q": args.q,
            "degree": args.degree,
            "intervals": args.intervals,
            "layers": args.layers,
            "hidden": args.hidden,
            "g_layer": args.g_layer.map(|g| format!("{g:?}").to_lowercase()),
            "scaling": format!("{:?}", args.scaling).to_lowercase(),
            "mapping": mapping,
            "fit": config,
        }),
    )
    .seed("init", config.init_seed);
    manifest.input(&args.data)?;
    manifest.input(&args.mapping)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    ensure_dir(&args.out)?;
    let model_path = args.out.join(MODEL_FILE);
    write_atomic(&model_path, model.to_json()?.as_bytes())?;
    let report_path = args.out.join(REPORT_FILE);
    let values = reports.iter().map(|r| r.as_ref().map(report_value).transpose()).collect::<Result<Vec<_>>>()?;
    write_json(
        &report_path,
        &json!({ "n_u": sample.len(), "clipped": sample.clipped, "reports": values }),
    )?;
    manifest.notes.insert(
        "wall_seconds".into(),
        json!(reports.iter().flatten().map(|r| r.wall_seconds).collect::<Vec<_>>()),
    );
    manifest.finish(&args.out, &[model_path, report_path])
}
