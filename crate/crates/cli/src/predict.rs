use std::path::PathBuf;

use anyhow::{Context, Result};
use kane_core::simulation::Grid;
use kane_core::Model;
use ndarray::Array2;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::output::{column_names, ensure_dir, feature_names, fmt_f64, CsvOut};
use crate::{usage, PredictArgs};

pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Reads a headed CSV of numbers; returns the header and the matrix.
pub fn read_points(path: &std::path::Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        for cell in rec?.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .with_context(|| format!("{} row {}: '{cell}' is not a number", path.display(), i + 2))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), Array2::from_shape_vec((rows, header.len()), values)?))
}

/// Model outputs at unit-cube grid points or at raw-unit points, plus the
/// coordinates to print beside them (always in original units).
pub fn predict(model: &Model, args: &PredictArgs) -> Result<(Vec<String>, Array2<f64>, Array2<f64>, usize)> {
    let d = model.surface().dim();
    if let Some(per_axis) = args.grid {
        let grid = Grid { dim: d, points_per_axis: per_axis };
        grid.validate().map_err(|e| usage(e.to_string()))?;
        let unit = grid.points();
        let values = model.surface().evaluate_batch(unit.view())?;
        let coords = model.scaling().unscale(unit.view());
        Ok((feature_names(d), coords, values, 0))
    } else {
        let path = args.points.as_ref().expect("clap requires --grid or --points");
        let (header, x) = read_points(path)?;
        if x.ncols() != d {
            anyhow::bail!("model takes {d} features but {} has {} columns", path.display(), x.ncols());
        }
        let (values, clipped) = model.predict_raw(x.view())?;
        Ok((header, x, values, clipped))
    }
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Vec<PathBuf>> {
    let model = Model::read(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let (mut header, coords, values, clipped) = predict(&model, args)?;
    let mut manifest = RunManifest::start("predict", json!({ "grid": args.grid, "points": args.points }));
    manifest.input(&args.model)?;
    if let Some(p) = &args.points {
        manifest.input(p)?;
    }
    ensure_dir(&args.out)?;
    header.extend(column_names("p", values.ncols()));
    let mut out = CsvOut::new(args.out.join(PREDICTIONS_FILE), &header)?;
    for (c, v) in coords.rows().into_iter().zip(values.rows()) {
        let row: Vec<String> = c.iter().chain(v.iter()).map(|&x| fmt_f64(x)).collect();
        out.row(&row)?;
    }
    let path = out.finish()?;
    manifest.notes.insert("clipped".into(), json!(clipped));
    manifest.finish(&args.out, &[path])
}
