//! Monte Carlo study cells with a per-cell replicate journal for resumption.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kane_core::simulation::{run_indexed, run_replicate, summarize, MonteCarloSummary, ReplicateOutcome, ReplicateRecord, ScenarioId, StudyOptions};
use kane_core::FitConfig;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::output::{column_names, ensure_dir, feature_names, fmt_f64, write_atomic, write_json, CsvOut};
use crate::simulate::parse_scenario;
use crate::{load_fit_config, resolve_threads, usage, StudyArgs};

pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_MD: &str = "table.md";
pub const SUMMARY_FILE: &str = "summary.json";

/// First journal line: the settings the stored replicates were produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JournalHeader {
    scenario: String,
    n: usize,
    base_seed: u64,
    grid_points_per_axis: usize,
    fit: FitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalEntry {
    record: ReplicateRecord,
    /// Row-major surface on the cell grid; absent for failed replicates.
    curve: Option<Vec<f64>>,
}

fn cell_stem(id: ScenarioId, n: usize) -> String {
    format!("{id}_n{n}")
}

fn journal_path(out: &Path, id: ScenarioId, n: usize) -> PathBuf {
    out.join(format!("replicates_{}.jsonl", cell_stem(id, n)))
}

fn read_journal(path: &Path, header: &JournalHeader, width: usize) -> Result<BTreeMap<usize, ReplicateOutcome>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let Some(first) = lines.next() else { return Ok(done) };
    let found: JournalHeader =
        serde_json::from_str(first).with_context(|| format!("reading journal header of {}", path.display()))?;
    if &found != header {
        return Err(usage(format!(
            "{} was written by a study with different settings; use a fresh output directory",
            path.display()
        )));
    }
    for (i, line) in lines.enumerate() {
        let e: JournalEntry =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 2))?;
        let curve = e
            .curve
            .map(|v| {
                let rows = v.len() / width;
                Array2::from_shape_vec((rows, width), v)
            })
            .transpose()?;
        done.insert(e.record.replicate, ReplicateOutcome { record: e.record, curve });
    }
    Ok(done)
}

fn write_journal(path: &Path, header: &JournalHeader, done: &BTreeMap<usize, ReplicateOutcome>) -> Result<()> {
    let mut s = serde_json::to_string(header)?;
    s.push('\n');
    for o in done.values() {
        let entry = JournalEntry { record: o.record.clone(), curve: o.curve.as_ref().map(|c| c.iter().copied().collect()) };
        s.push_str(&serde_json::to_string(&entry)?);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Progress of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRun {
    pub resumed: usize,
    pub computed: usize,
}

/// Runs (or resumes) one cell, checkpointing after every chunk of replicates.
pub fn run_cell(
    id: ScenarioId,
    n: usize,
    replicates: usize,
    base_seed: u64,
    opts: &StudyOptions,
    out: &Path,
) -> Result<(MonteCarloSummary, CellRun)> {
    let header = JournalHeader {
        scenario: id.to_string(),
        n,
        base_seed,
        grid_points_per_axis: opts.grid.points_per_axis,
        fit: opts.fit.clone(),
    };
    let path = journal_path(out, id, n);
    let mut done = read_journal(&path, &header, id.categories())?;
    done.retain(|&r, _| r < replicates);
    let resumed = done.len();
    let missing: Vec<usize> = (0..replicates).filter(|r| !done.contains_key(r)).collect();
    let workers = opts.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    for chunk in missing.chunks(workers * 4) {
        let batch = run_indexed(chunk.len(), opts.threads, |k| run_replicate(id, n, chunk[k], base_seed, opts))?;
        for o in batch {
            done.insert(o.record.replicate, o);
        }
        write_journal(&path, &header, &done)?;
    }
    if missing.is_empty() {
        write_journal(&path, &header, &done)?;
    }
    let outcomes: Vec<ReplicateOutcome> = done.into_values().collect();
    let summary = summarize(id, n, base_seed, opts.grid, &outcomes)?;
    Ok((summary, CellRun { resumed, computed: missing.len() }))
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_cell_files(s: &MonteCarloSummary, out: &Path) -> Result<Vec<PathBuf>> {
    let j = s.scenario.categories();
    let stem = cell_stem(s.scenario, s.n);
    let mut header: Vec<String> =
        ["replicate", "seed", "init_seed", "n_u", "final_loss", "iterations"].map(String::from).to_vec();
    header.extend(column_names("ise", j));
    if s.mean_ise_refined.is_some() {
        header.extend(column_names("ise_refined", j));
    }
    header.push("error".into());
    let mut rep = CsvOut::new(out.join(format!("replicates_{stem}.csv")), &header)?;
    for r in &s.records {
        let mut row = vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            r.init_seed.to_string(),
            r.n_u.to_string(),
            opt_fmt(r.final_loss),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
        ];
        row.extend((0..j).map(|k| opt_fmt(r.ise.as_ref().map(|v| v[k]))));
        if s.mean_ise_refined.is_some() {
            row.extend((0..j).map(|k| opt_fmt(r.ise_refined.as_ref().map(|v| v[k]))));
        }
        row.push(r.error.clone().unwrap_or_default());
        rep.row(&row)?;
    }

    let d = s.scenario.dim();
    let mut header = feature_names(d);
    header.extend(column_names("truth", j));
    header.extend(column_names("mean", j));
    let mut surf = CsvOut::new(out.join(format!("surface_{stem}.csv")), &header)?;
    let pts = s.grid.points();
    for i in 0..pts.nrows() {
        let row: Vec<String> = pts
            .row(i)
            .iter()
            .chain(s.truth_curve.row(i).iter())
            .chain(s.mean_curve.row(i).iter())
            .map(|&v| fmt_f64(v))
            .collect();
        surf.row(&row)?;
    }
    Ok(vec![rep.finish()?, surf.finish()?])
}

fn category_labels(id: ScenarioId) -> Vec<String> {
    if id.categories() == 1 {
        vec![id.to_string()]
    } else {
        (1..=id.categories()).map(|k| format!("{id} (j={k})")).collect()
    }
}

/// Table in the layout scenarios x sample sizes.
pub fn markdown_table(cells: &[MonteCarloSummary], ns: &[usize], pick: impl Fn(&MonteCarloSummary) -> &[f64]) -> String {
    let mut s = String::from("| Scenario |");
    for n in ns {
        let _ = write!(s, " n = {n} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(ns.len()));
    s.push('\n');
    let mut scenarios: Vec<ScenarioId> = Vec::new();
    for c in cells {
        if !scenarios.contains(&c.scenario) {
            scenarios.push(c.scenario);
        }
    }
    for id in scenarios {
        for (k, label) in category_labels(id).iter().enumerate() {
            let _ = write!(s, "| {label} |");
            for n in ns {
                match cells.iter().find(|c| c.scenario == id && c.n == *n) {
                    Some(c) if c.failures > 0 => {
                        let _ = write!(s, " {:.3e} ({} of {} failed) |", pick(c)[k], c.failures, c.replicates);
                    }
                    Some(c) => {
                        let _ = write!(s, " {:.3e} |", pick(c)[k]);
                    }
                    None => s.push_str(" |"),
                }
            }
            s.push('\n');
        }
    }
    s
}

fn table_files(cells: &[MonteCarloSummary], ns: &[usize], out: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = CsvOut::new(
        out.join(TABLE_CSV),
        &[
            "scenario",
            "category",
            "n",
            "replicates",
            "failures",
            "mean_curve_ise",
            "mean_ise",
            "median_ise",
            "mean_ise_refined",
        ],
    )?;
    for c in cells {
        for k in 0..c.scenario.categories() {
            csv.row(&[
                c.scenario.to_string(),
                (k + 1).to_string(),
                c.n.to_string(),
                c.replicates.to_string(),
                c.failures.to_string(),
                fmt_f64(c.mean_curve_ise[k]),
                fmt_f64(c.mean_ise[k]),
                fmt_f64(c.median_ise[k]),
                opt_fmt(c.mean_ise_refined.as_ref().map(|v| v[k])),
            ])?;
        }
    }
    let md = format!(
        "# Monte Carlo study\n\n\
         ## MISE: integrated squared error of the replicate-mean surface\n\n{}\n\
         ## Mean over replicates of the integrated squared error\n\n{}",
        markdown_table(cells, ns, |c| &c.mean_curve_ise),
        markdown_table(cells, ns, |c| &c.mean_ise),
    );
    let md_path = out.join(TABLE_MD);
    write_atomic(&md_path, md.as_bytes())?;
    let summary: Vec<_> = cells
        .iter()
        .map(|c| {
            json!({
                "scenario": c.scenario.to_string(),
                "n": c.n,
                "replicates": c.replicates,
                "base_seed": c.base_seed,
                "failures": c.failures,
                "mean_curve_ise": c.mean_curve_ise,
                "mean_ise": c.mean_ise,
                "median_ise": c.median_ise,
                "mean_ise_refined": c.mean_ise_refined,
            })
        })
        .collect();
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    Ok(vec![csv.finish()?, md_path, summary_path])
}

/// Runs every (scenario, n) cell and writes the table, per-cell files and manifest.
/// Returns the written paths; the summaries are in `summary.json`.
pub fn cmd_study(args: &StudyArgs) -> Result<Vec<PathBuf>> {
    Ok(run_study(args)?.1)
}

pub fn run_study(args: &StudyArgs) -> Result<(Vec<MonteCarloSummary>, Vec<PathBuf>)> {
    let ids = args.scenarios.iter().map(|s| parse_scenario(s.trim())).collect::<Result<Vec<_>>>()?;
    if ids.is_empty() || args.n.is_empty() {
        return Err(usage("at least one scenario and one sample size are required"));
    }
    if args.n.contains(&0) {
        return Err(usage("sample sizes must be positive"));
    }
    if args.replicates == Some(0) {
        return Err(usage("--replicates must be at least 1"));
    }
    let threads = resolve_threads(args.threads)?;
    let fit = load_fit_config(args.config.as_ref())?;
    let mut manifest = RunManifest::start(
        "study",
        json!({
            "scenarios": ids.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
            "n": args.n,
            "replicates": args.replicates,
            "fit": fit,
        }),
    )
    .seed("data_base", args.seed)
    .seed("init_base", fit.init_seed);
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    ensure_dir(&args.out)?;
    let mut cells = Vec::new();
    let mut outputs = Vec::new();
    let mut progress = BTreeMap::new();
    for &id in &ids {
        let m = args.replicates.unwrap_or_else(|| id.default_replicates());
        for &n in &args.n {
            let opts = StudyOptions { threads, ..StudyOptions::new(id, fit.clone()) };
            let (summary, run) = run_cell(id, n, m, args.seed, &opts, &args.out)?;
            if summary.failures == summary.replicates {
                bail!("every replicate of {id} at n = {n} failed; see {}", journal_path(&args.out, id, n).display());
            }
            progress.insert(cell_stem(id, n), json!({ "resumed": run.resumed, "computed": run.computed }));
            outputs.push(journal_path(&args.out, id, n));
            outputs.extend(write_cell_files(&summary, &args.out)?);
            cells.push(summary);
        }
    }
    outputs.extend(table_files(&cells, &args.n, &args.out)?);
    manifest.notes.insert("cells".into(), json!(progress));
    let written = manifest.finish(&args.out, &outputs)?;
    Ok((cells, written))
}
