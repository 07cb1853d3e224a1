use std::path::PathBuf;

use anyhow::Result;
use kane_core::csv_io::{ColumnMapping, FollowUpKind, FollowUpMapping};
use kane_core::evt::{FollowUp, Trigger};
use kane_core::simulation::{generate, Grid, ScenarioId, ScenarioTruth};
use kane_core::PocSurface;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::output::{column_names, ensure_dir, feature_names, fmt_f64, write_json, CsvOut};
use crate::{usage, SimulateArgs};

pub const DATA_FILE: &str = "data.csv";
pub const MAPPING_FILE: &str = "mapping.json";
pub const TRUTH_FILE: &str = "truth.csv";

pub fn parse_scenario(s: &str) -> Result<ScenarioId> {
    s.parse::<ScenarioId>().map_err(|e| usage(e.to_string()))
}

/// Mapping that reads back a simulated data file.
pub fn scenario_mapping(id: ScenarioId) -> ColumnMapping {
    let follow_up = if id.categories() > 1 {
        FollowUpMapping {
            kind: FollowUpKind::Categorical,
            column: None,
            columns: Some(column_names("z", id.categories())),
            categories: None,
            threshold: None,
        }
    } else {
        FollowUpMapping { kind: FollowUpKind::Binary, column: Some("z".into()), columns: None, categories: None, threshold: None }
    };
    ColumnMapping { features: feature_names(id.dim()), triggers: vec!["y".into()], follow_up }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let id = parse_scenario(&args.scenario)?;
    if args.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let manifest = RunManifest::start("simulate", json!({ "scenario": id.to_string(), "n": args.n, "seed": args.seed }))
        .seed("data", args.seed);
    ensure_dir(&args.out)?;
    let draw = generate(id, args.n, args.seed)?;
    let d = id.dim();
    let j = id.categories();
    let mapping = scenario_mapping(id);

    let mut header = mapping.features.clone();
    header.push("y".into());
    header.extend(column_names("z", j));
    let mut data = CsvOut::new(args.out.join(DATA_FILE), &header)?;
    let Trigger::Single(y) = &draw.raw.trigger else { unreachable!("scenarios have one trigger") };
    for i in 0..draw.n {
        let mut row: Vec<String> = draw.raw.features.row(i).iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(y[i]));
        match &draw.raw.follow_up {
            FollowUp::Binary(z) => row.push(z[i].map(|b| (b as u8).to_string()).unwrap_or_default()),
            FollowUp::Categorical { labels, .. } => {
                row.extend((0..j).map(|k| labels[i].map(|l| ((l == k) as u8).to_string()).unwrap_or_default()))
            }
            _ => unreachable!("scenarios draw binary or categorical outcomes"),
        }
        data.row(&row)?;
    }
    let data_path = data.finish()?;

    let grid = Grid::standard(d);
    let pts = grid.points();
    let truth = ScenarioTruth(id).evaluate_batch(pts.view())?;
    let mut header = feature_names(d);
    header.extend(column_names("truth", j));
    let mut t = CsvOut::new(args.out.join(TRUTH_FILE), &header)?;
    for (p, v) in pts.rows().into_iter().zip(truth.rows()) {
        let row: Vec<String> = p.iter().chain(v.iter()).map(|&x| fmt_f64(x)).collect();
        t.row(&row)?;
    }
    let truth_path = t.finish()?;

    let mapping_path = args.out.join(MAPPING_FILE);
    write_json(&mapping_path, &mapping)?;

    let mut manifest = manifest;
    manifest.notes.insert("threshold".into(), json!(fmt_f64(draw.threshold)));
    manifest.notes.insert("clamped_probabilities".into(), json!(draw.clamped));
    manifest.finish(&args.out, &[data_path, truth_path, mapping_path])
}
