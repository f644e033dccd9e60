//! Cartesian parameter sweeps over [`ExperimentConfig`] fields.

use std::cmp::Ordering;
use std::io::Write;

use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, Report, RunOptions};
use crate::manifest::Dataset;

pub const SWEEP_FORMAT_VERSION: u32 = 1;

/// One swept parameter and its values, in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub assignment: Vec<(String, Value)>,
    pub outcome: std::result::Result<Report, String>,
}

fn canonical_key(key: &str) -> &str {
    match key {
        "N" | "n" => "capacity",
        "epsilon" => "s_th",
        other => other,
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Parses `key=v1,v2,...`. `N` is an alias for `capacity`; `g=3,4` expands to
/// `vr_strategy=grid:3,grid:4`.
pub fn parse_axis(spec: &str) -> Result<Axis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep axis '{spec}' is not of the form key=v1,v2")))?;
    let key = key.trim();
    let raw: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if raw.is_empty() {
        return Err(Error::Config(format!("sweep axis '{key}' has no values")));
    }
    if key == "g" {
        let values = raw.iter().map(|g| Value::String(format!("grid:{g}"))).collect();
        return Ok(Axis { key: "vr_strategy".into(), values });
    }
    let key = canonical_key(key);
    let known = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    if !known.as_object().is_some_and(|m| m.contains_key(key)) {
        return Err(Error::Config(format!("unknown sweep key '{key}'")));
    }
    Ok(Axis { key: key.to_string(), values: raw.into_iter().map(parse_value).collect() })
}

fn apply(base: &Map<String, Value>, assignment: &[(String, Value)]) -> std::result::Result<ExperimentConfig, String> {
    let mut obj = base.clone();
    for (k, v) in assignment {
        obj.insert(k.clone(), v.clone());
    }
    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn cmp_value(a: &Value, b: &Value) -> Ordering {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => value_text(a).cmp(&value_text(b)),
    }
}

fn cmp_assignment(a: &[(String, Value)], b: &[(String, Value)]) -> Ordering {
    a.iter().zip(b).map(|((_, x), (_, y))| cmp_value(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Runs every cell of the product; invalid cells carry their error and the
/// sweep continues. Rows are sorted by assignment.
pub fn sweep(base: &ExperimentConfig, axes: &[Axis], ds: &Dataset) -> Result<Vec<SweepRow>> {
    let Value::Object(base_obj) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("config serializes to an object")
    };
    let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                axis.values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells.sort_by(|a, b| cmp_assignment(a, b));
    let mut rows = Vec::with_capacity(cells.len());
    for assignment in cells {
        let outcome = apply(&base_obj, &assignment).and_then(|cfg| {
            run_experiment(&cfg, ds, RunOptions::default()).map(|o| o.report).map_err(|e| e.to_string())
        });
        if let Err(e) = &outcome {
            log::warn!("sweep cell {assignment:?} failed: {e}");
        }
        rows.push(SweepRow { assignment, outcome });
    }
    Ok(rows)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// CSV with columns `format_version, <keys>, mean_accuracy, std_accuracy,
/// queues_with_fallback, total_fallback, error`.
pub fn write_csv<W: Write>(rows: &[SweepRow], axes: &[Axis], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["format_version".to_string()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header
        .extend(["mean_accuracy", "std_accuracy", "queues_with_fallback", "total_fallback", "error"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![SWEEP_FORMAT_VERSION.to_string()];
        rec.extend(row.assignment.iter().map(|(_, v)| value_text(v)));
        match &row.outcome {
            Ok(r) => rec.extend([
                r.mean.to_string(),
                r.std.to_string(),
                r.fallback.queues_with_fallback.to_string(),
                r.fallback.total_fallback.to_string(),
                String::new(),
            ]),
            Err(e) => rec.extend([String::new(), String::new(), String::new(), String::new(), e.clone()]),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Data(format!("cannot write sweep table: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aliases() {
        let a = parse_axis("N=10,20").unwrap();
        assert_eq!(a.key, "capacity");
        assert_eq!(a.values, vec![Value::from(10), Value::from(20)]);
        let g = parse_axis("g=3,4").unwrap();
        assert_eq!(g.key, "vr_strategy");
        assert_eq!(g.values[1], Value::from("grid:4"));
        let m = parse_axis("mode=bifta,wca").unwrap();
        assert_eq!(m.values[0], Value::from("bifta"));
    }

    #[test]
    fn bad_axes_rejected() {
        assert!(parse_axis("eta").is_err());
        assert!(parse_axis("eta=").is_err());
        assert!(parse_axis("nope=1").is_err());
    }

    #[test]
    fn assignments_sort_numerically() {
        let a = vec![("eta".to_string(), Value::from(0.9))];
        let b = vec![("eta".to_string(), Value::from(0.10))];
        assert_eq!(cmp_assignment(&a, &b), Ordering::Greater);
    }
}
