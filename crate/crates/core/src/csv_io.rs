//! Reading raw datasets from headed, comma-separated files.
//!
//! Column roles come from a [`ColumnMapping`]. Empty cells and `NA` in
//! follow-up columns mean "not observed"; features and triggers must be present.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::{FollowUp, RawDataset, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowUpKind {
    Binary,
    Ordinal,
    Categorical,
    Continuous,
    ExceedsTrigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowUpMapping {
    pub kind: FollowUpKind,
    /// Single outcome column (binary 0/1, ordinal 1..=J, categorical 0..J, continuous values).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    /// One-hot flag columns, an alternative for categorical outcomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    /// Category count for ordinal and single-column categorical outcomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    /// Indicator threshold for continuous follow-ups; defaults to the trigger threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub features: Vec<String>,
    /// One column, or several reduced by their row-wise minimum.
    pub triggers: Vec<String>,
    pub follow_up: FollowUpMapping,
}

impl ColumnMapping {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(KaneError::InvalidArgument("mapping lists no feature columns".into()));
        }
        if self.triggers.is_empty() {
            return Err(KaneError::InvalidArgument("mapping lists no trigger column".into()));
        }
        let f = &self.follow_up;
        match (f.kind, &f.column, &f.columns) {
            (FollowUpKind::Categorical, None, Some(cols)) if cols.len() >= 2 => Ok(()),
            (FollowUpKind::Categorical, Some(_), None) if f.categories.is_some_and(|j| j >= 2) => Ok(()),
            (FollowUpKind::Ordinal, Some(_), None) if f.categories.is_some_and(|j| j >= 2) => Ok(()),
            (FollowUpKind::Binary | FollowUpKind::Continuous | FollowUpKind::ExceedsTrigger, Some(_), None) => Ok(()),
            _ => Err(KaneError::InvalidArgument(format!(
                "follow-up mapping for {:?} needs `column` (plus `categories` for ordinal/categorical) or, for categorical, `columns`",
                f.kind
            ))),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_f64(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KaneError::InvalidArgument(format!("row {row}, column '{col}': '{cell}' is not a finite number")))
}

fn parse_int(cell: &str, row: usize, col: &str) -> Result<usize> {
    let v = parse_f64(cell, row, col)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(KaneError::InvalidArgument(format!("row {row}, column '{col}': '{cell}' is not a non-negative integer")));
    }
    Ok(v as usize)
}

/// Reads a dataset from CSV text with a header row.
pub fn read_dataset<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<RawDataset> {
    mapping.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: HashMap<String, usize> =
        rdr.headers()?.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    let index = |name: &String| {
        headers
            .get(name.trim())
            .copied()
            .ok_or_else(|| KaneError::InvalidArgument(format!("column '{name}' not found in header")))
    };
    let feat_idx: Vec<usize> = mapping.features.iter().map(index).collect::<Result<_>>()?;
    let trig_idx: Vec<usize> = mapping.triggers.iter().map(index).collect::<Result<_>>()?;
    let fu = &mapping.follow_up;
    let single = fu.column.as_ref().map(index).transpose()?;
    let multi: Option<Vec<usize>> = fu.columns.as_ref().map(|c| c.iter().map(index).collect()).transpose()?;

    let mut features = Vec::new();
    let mut triggers = Vec::new();
    let mut cells: Vec<Option<Vec<String>>> = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        for (&i, name) in feat_idx.iter().zip(&mapping.features) {
            features.push(parse_f64(rec.get(i).unwrap_or(""), line, name)?);
        }
        for (&i, name) in trig_idx.iter().zip(&mapping.triggers) {
            triggers.push(parse_f64(rec.get(i).unwrap_or(""), line, name)?);
        }
        let raw: Vec<String> = match (&single, &multi) {
            (Some(i), _) => vec![rec.get(*i).unwrap_or("").to_string()],
            (_, Some(ix)) => ix.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect(),
            _ => unreachable!("validated mapping"),
        };
        cells.push(if raw.iter().all(|c| is_missing(c)) { None } else { Some(raw) });
        rows += 1;
    }
    if rows == 0 {
        return Err(KaneError::Empty("data file has no rows".into()));
    }

    let col_name = fu.column.clone().unwrap_or_default();
    let follow_up = match fu.kind {
        FollowUpKind::Binary => FollowUp::Binary(
            cells
                .iter()
                .enumerate()
                .map(|(r, c)| {
                    c.as_ref()
                        .map(|v| match parse_int(&v[0], r + 2, &col_name)? {
                            0 => Ok(false),
                            1 => Ok(true),
                            _ => Err(KaneError::InvalidArgument(format!("row {}: binary outcome must be 0 or 1", r + 2))),
                        })
                        .transpose()
                })
                .collect::<Result<_>>()?,
        ),
        FollowUpKind::Ordinal => FollowUp::Ordinal {
            levels: cells
                .iter()
                .enumerate()
                .map(|(r, c)| c.as_ref().map(|v| parse_int(&v[0], r + 2, &col_name)).transpose())
                .collect::<Result<_>>()?,
            categories: fu.categories.unwrap(),
        },
        FollowUpKind::Categorical if multi.is_some() => {
            let names = fu.columns.as_ref().unwrap();
            let labels = cells
                .iter()
                .enumerate()
                .map(|(r, c)| {
                    c.as_ref()
                        .map(|v| {
                            let flags: Vec<usize> =
                                v.iter().zip(names).map(|(cell, n)| parse_int(cell, r + 2, n)).collect::<Result<_>>()?;
                            match (flags.iter().sum::<usize>(), flags.iter().position(|&f| f == 1)) {
                                (1, Some(k)) => Ok(k),
                                _ => Err(KaneError::InvalidArgument(format!("row {}: outcome flags are not one-hot", r + 2))),
                            }
                        })
                        .transpose()
                })
                .collect::<Result<_>>()?;
            FollowUp::Categorical { labels, categories: names.len() }
        }
        FollowUpKind::Categorical => FollowUp::Categorical {
            labels: cells
                .iter()
                .enumerate()
                .map(|(r, c)| c.as_ref().map(|v| parse_int(&v[0], r + 2, &col_name)).transpose())
                .collect::<Result<_>>()?,
            categories: fu.categories.unwrap(),
        },
        FollowUpKind::Continuous | FollowUpKind::ExceedsTrigger => {
            let values = cells
                .iter()
                .enumerate()
                .map(|(r, c)| c.as_ref().map(|v| parse_f64(&v[0], r + 2, &col_name)).transpose())
                .collect::<Result<_>>()?;
            if fu.kind == FollowUpKind::Continuous {
                FollowUp::Continuous { values, threshold: fu.threshold }
            } else {
                FollowUp::ExceedsTrigger(values)
            }
        }
    };

    let d = mapping.features.len();
    let k = mapping.triggers.len();
    let features = Array2::from_shape_vec((rows, d), features).expect("row-major features");
    let trigger = if k == 1 {
        Trigger::Single(triggers)
    } else {
        Trigger::Multi(Array2::from_shape_vec((rows, k), triggers).expect("row-major triggers"))
    };
    RawDataset::new(features, trigger, follow_up)
}

pub fn read_dataset_file(path: &Path, mapping: &ColumnMapping) -> Result<RawDataset> {
    read_dataset(std::fs::File::open(path)?, mapping)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping(kind: FollowUpKind) -> ColumnMapping {
        ColumnMapping {
            features: vec!["x1".into(), "x2".into()],
            triggers: vec!["y".into()],
            follow_up: FollowUpMapping { kind, column: Some("z".into()), columns: None, categories: None, threshold: None },
        }
    }

    #[test]
    fn binary_with_missing_follow_ups() {
        let text = "x1,x2,y,z\n0.1,2,5.5,1\n0.2,3,1.0,\n0.3,4,7.0,0\n0.4,5,0.5,NA\n";
        let raw = read_dataset(text.as_bytes(), &mapping(FollowUpKind::Binary)).unwrap();
        assert_eq!(raw.len(), 4);
        assert_eq!(raw.features[[2, 1]], 4.0);
        assert_eq!(raw.follow_up, FollowUp::Binary(vec![Some(true), None, Some(false), None]));
        assert_eq!(raw.trigger, Trigger::Single(vec![5.5, 1.0, 7.0, 0.5]));
    }

    #[test]
    fn one_hot_columns_and_multi_trigger() {
        let m = ColumnMapping {
            features: vec!["x".into()],
            triggers: vec!["y1".into(), "y2".into()],
            follow_up: FollowUpMapping {
                kind: FollowUpKind::Categorical,
                column: None,
                columns: Some(vec!["c1".into(), "c2".into(), "c3".into()]),
                categories: None,
                threshold: None,
            },
        };
        let text = "x,y1,y2,c1,c2,c3\n0.5,1,2,0,0,1\n0.25,3,4,,,\n";
        let raw = read_dataset(text.as_bytes(), &m).unwrap();
        assert_eq!(raw.follow_up, FollowUp::Categorical { labels: vec![Some(2), None], categories: 3 });
        assert!(matches!(raw.trigger, Trigger::Multi(ref a) if a.dim() == (2, 2)));
        let bad = "x,y1,y2,c1,c2,c3\n0.5,1,2,1,0,1\n";
        assert!(read_dataset(bad.as_bytes(), &m).is_err());
    }

    #[test]
    fn errors_name_the_problem() {
        let m = mapping(FollowUpKind::Binary);
        let e = read_dataset("x1,y,z\n1,2,1\n".as_bytes(), &m).unwrap_err().to_string();
        assert!(e.contains("x2"), "{e}");
        let e = read_dataset("x1,x2,y,z\n1,oops,2,1\n".as_bytes(), &m).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("x2"), "{e}");
        assert!(read_dataset("x1,x2,y,z\n1,1,2,2\n".as_bytes(), &m).is_err());
        assert!(read_dataset("x1,x2,y,z\n".as_bytes(), &m).is_err());
        let mut ord = mapping(FollowUpKind::Ordinal);
        assert!(ord.validate().is_err());
        ord.follow_up.categories = Some(4);
        let raw = read_dataset("x1,x2,y,z\n1,1,2,4\n1,1,2,\n".as_bytes(), &ord).unwrap();
        assert_eq!(raw.follow_up, FollowUp::Ordinal { levels: vec![Some(4), None], categories: 4 });
        assert!(read_dataset("x1,x2,y,z\n1,1,2,5\n".as_bytes(), &ord).is_err());
    }

    #[test]
    fn continuous_kinds() {
        let text = "x1,x2,y,z\n0,0,3,2.5\n1,1,4,\n";
        let raw = read_dataset(text.as_bytes(), &mapping(FollowUpKind::Continuous)).unwrap();
        assert_eq!(raw.follow_up, FollowUp::Continuous { values: vec![Some(2.5), None], threshold: None });
        let raw = read_dataset(text.as_bytes(), &mapping(FollowUpKind::ExceedsTrigger)).unwrap();
        assert_eq!(raw.follow_up, FollowUp::ExceedsTrigger(vec![Some(2.5), None]));
    }

    #[test]
    fn mapping_from_json() {
        let m: ColumnMapping = serde_json::from_str(
            r#"{"features": ["x1", "x2"], "triggers": ["y"], "follow_up": {"kind": "ordinal", "column": "z", "categories": 5}}"#,
        )
        .unwrap();
        assert!(m.validate().is_ok());
        assert!(serde_json::from_str::<ColumnMapping>(r#"{"features": [], "triggers": [], "follow_up": {"kind": "odd"}}"#).is_err());
    }
}
