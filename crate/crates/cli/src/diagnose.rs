use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use kane_core::csv_io::read_dataset_file;
use kane_core::diagnostics::{bootstrap_ci, dunn_smyth, qq_reference, BootstrapOptions};
use kane_core::evt::{build_threshold_sample, ScalingPolicy, ThresholdOptions};
use kane_core::simulation::Grid;
use kane_core::Model;
use serde_json::json;

use crate::fit::read_mapping;
use crate::manifest::RunManifest;
use crate::output::{ensure_dir, feature_names, fmt_f64, CsvOut};
use crate::{load_fit_config, resolve_threads, usage, DiagnoseArgs};

pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const QQ_FILE: &str = "qq.csv";
pub const BAND_FILE: &str = "band.csv";

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<Vec<PathBuf>> {
    if args.trajectories == 0 {
        return Err(usage("--trajectories must be at least 1"));
    }
    let threads = resolve_threads(args.threads)?;
    let model = Model::read(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let Model::Network(est) = &model else {
        bail!("residuals are defined for binary models; this is a Frank-Hall ensemble");
    };
    if est.network.output_dim() != 1 {
        bail!("residuals are defined for binary models; this model has {} outputs", est.network.output_dim());
    }
    if !est.quantile_level.is_finite() {
        bail!("the model does not record the quantile level it was trained at");
    }
    let mapping = read_mapping(&args.mapping)?;
    let raw = read_dataset_file(&args.data, &mapping)?;
    let d = est.network.input_dim();
    if raw.dim() != d {
        bail!("model takes {d} features, data has {}", raw.dim());
    }
    let opts = ThresholdOptions { scaling: ScalingPolicy::Fixed(est.scaling.clone()), ..Default::default() };
    let sample = build_threshold_sample(&raw, est.quantile_level, &opts)?;

    let mut manifest = RunManifest::start(
        "diagnose",
        json!({
            "trajectories": args.trajectories,
            "bootstrap": args.bootstrap,
            "band_grid": args.band_grid,
            "level": args.level,
            "mapping": mapping,
        }),
    )
    .seed("residuals", args.seed);
    manifest.input(&args.model)?;
    manifest.input(&args.data)?;
    manifest.input(&args.mapping)?;
    ensure_dir(&args.out)?;

    let set = dunn_smyth(est, &sample, args.trajectories, args.seed, args.model.display().to_string())?;
    let mut res = CsvOut::new(args.out.join(RESIDUALS_FILE), &["trajectory", "row", "residual"])?;
    let mut qq = CsvOut::new(args.out.join(QQ_FILE), &["trajectory", "index", "residual", "theoretical", "lower", "upper"])?;
    for (t, traj) in set.trajectories.iter().enumerate() {
        for (r, v) in sample.retained_rows.iter().zip(traj) {
            res.row(&[t.to_string(), r.to_string(), fmt_f64(*v)])?;
        }
        let q = qq_reference(traj)?;
        for i in 0..q.sample.len() {
            qq.row(&[
                t.to_string(),
                i.to_string(),
                fmt_f64(q.sample[i]),
                fmt_f64(q.theoretical[i]),
                fmt_f64(q.lower[i]),
                fmt_f64(q.upper[i]),
            ])?;
        }
    }
    let mut outputs = vec![res.finish()?, qq.finish()?];

    if let Some(b) = args.bootstrap {
        let fit = load_fit_config(args.config.as_ref())?.with_seed(est.metadata.init_seed);
        let bopts = BootstrapOptions {
            widths: est.network.widths().to_vec(),
            spec: est.network.spec().clone(),
            g_layer: est.network.g_layer(),
            fit,
            replicates: b,
            level: args.level,
            seed: args.seed,
            threads,
        };
        let grid = Grid { dim: d, points_per_axis: args.band_grid };
        grid.validate().map_err(|e| usage(e.to_string()))?;
        let unit = grid.points();
        let band = bootstrap_ci(&sample, unit.view(), &bopts).map_err(|e| match e {
            kane_core::KaneError::InvalidArgument(m) => usage(m),
            other => other.into(),
        })?;
        let coords = est.scaling.unscale(unit.view());
        let mut header = feature_names(d);
        header.extend(["lower", "point", "upper"].map(String::from));
        let mut out = CsvOut::new(args.out.join(BAND_FILE), &header)?;
        for i in 0..unit.nrows() {
            let mut row: Vec<String> = coords.row(i).iter().map(|&v| fmt_f64(v)).collect();
            row.extend([band.lower[[i, 0]], band.point[[i, 0]], band.upper[[i, 0]]].map(fmt_f64));
            out.row(&row)?;
        }
        outputs.push(out.finish()?);
        manifest.seeds.insert("bootstrap".into(), args.seed);
        manifest.notes.insert("bootstrap_converged".into(), json!(band.converged));
        manifest.notes.insert("bootstrap_constant_fallbacks".into(), json!(band.constant_fallbacks));
        manifest.notes.insert("bootstrap_flagged_points".into(), json!(band.flagged_points.len()));
    }
    manifest.finish(&args.out, &outputs)
}
