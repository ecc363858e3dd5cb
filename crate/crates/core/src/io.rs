//! Text formats for events, models and ground truths.
//!
//! Events file:
//!
//! ```text
//! #d 2
//! #window <id> <t_minus> <t_plus>
//! ...
//! id,time,type
//! <id>,<time>,<type>
//! ```
//!
//! Types are 1-based in files. Realizations keep the order of their
//! `#window` lines; events of one realization must be sorted by time.
//! Model file: JSON with `d`, `K`, `alpha` and `X` nested `[v][u][k]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::data::{Dataset, Event, Realization};
use crate::error::{Error, Result};
use crate::model::{ExpSumModel, GroundTruthModel};

pub const MODEL_FORMAT: &str = "memip-model";
pub const MODEL_VERSION: u32 = 1;

/// Scientific notation with 17 significant digits; parses back to
/// the identical double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// 15 significant digits, for reports.
pub fn fmt15(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.14e}")
    } else {
        x.to_string()
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(|c: char| c == ',' || c.is_whitespace()) {
        return Err(Error::InvalidData(format!(
            "realization id `{id}` must be non-empty without commas or whitespace"
        )));
    }
    Ok(())
}

pub fn write_events(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "#d {}", dataset.d()).unwrap();
    for r in dataset.realizations() {
        check_id(&r.id)?;
        writeln!(out, "#window {} {} {}", r.id, fmt_f64(r.t_minus), fmt_f64(r.t_plus)).unwrap();
    }
    out.push_str("id,time,type\n");
    for r in dataset.realizations() {
        for e in &r.events {
            writeln!(out, "{},{},{}", r.id, fmt_f64(e.time), e.kind + 1).unwrap();
        }
    }
    Ok(out)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let x: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{s}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("`{s}` is not finite"),
        });
    }
    Ok(x)
}

/// Parse an events file. The dataset is shifted so its earliest window
/// starts at 0.
pub fn read_events(text: &str) -> Result<Dataset> {
    let mut declared_d: Option<usize> = None;
    let mut windows: Vec<(String, f64, f64)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut events: Vec<Vec<Event>> = Vec::new();
    let mut max_type = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            match parts.next() {
                Some("d") => {
                    let v = parts.next().ok_or(Error::Parse {
                        line,
                        msg: "missing value after #d".into(),
                    })?;
                    declared_d = Some(v.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("`{v}` is not a type count"),
                    })?);
                }
                Some("window") => {
                    let f: Vec<&str> = parts.collect();
                    if f.len() != 3 {
                        return Err(Error::Parse {
                            line,
                            msg: "expected `#window <id> <t_minus> <t_plus>`".into(),
                        });
                    }
                    if index.contains_key(f[0]) {
                        return Err(Error::Parse {
                            line,
                            msg: format!("window of `{}` declared twice", f[0]),
                        });
                    }
                    index.insert(f[0].to_string(), windows.len());
                    windows.push((f[0].to_string(), parse_f64(f[1], line)?, parse_f64(f[2], line)?));
                    events.push(Vec::new());
                }
                // free comment
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: "expected `id,time,type`".into(),
            });
        }
        if f == ["id", "time", "type"] {
            continue;
        }
        let h = *index.get(f[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("realization `{}` has no #window declaration", f[0]),
        })?;
        let time = parse_f64(f[1], line)?;
        let kind: usize = f[2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` is not an event type", f[2]),
        })?;
        if kind == 0 {
            return Err(Error::Parse {
                line,
                msg: "event types start at 1".into(),
            });
        }
        max_type = max_type.max(kind);
        events[h].push(Event::new(time, kind - 1));
    }
    let d = declared_d.unwrap_or(max_type);
    if d == 0 {
        return Err(Error::InvalidData("no event types declared or observed".into()));
    }
    let realizations = windows
        .into_iter()
        .zip(events)
        .map(|((id, lo, hi), ev)| Realization::new(id, lo, hi, ev))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(d, realizations)?.normalized())
}

pub fn read_events_file(path: &Path) -> Result<Dataset> {
    read_events(&fs::read_to_string(path)?)
}

pub fn write_events_file(path: &Path, dataset: &Dataset) -> Result<()> {
    fs::write(path, write_events(dataset)?)?;
    Ok(())
}

pub fn write_model(model: &ExpSumModel) -> String {
    let (d, k) = (model.d(), model.k());
    let mut out = String::new();
    writeln!(out, "{{").unwrap();
    writeln!(out, "  \"format\": \"{MODEL_FORMAT}\",").unwrap();
    writeln!(out, "  \"version\": {MODEL_VERSION},").unwrap();
    writeln!(out, "  \"d\": {d},").unwrap();
    writeln!(out, "  \"K\": {k},").unwrap();
    writeln!(out, "  \"alpha\": {},", fmt_f64(model.alpha())).unwrap();
    writeln!(out, "  \"X\": [").unwrap();
    for v in 0..d {
        writeln!(out, "    [").unwrap();
        for u in 0..=d {
            let row: Vec<String> = (0..k).map(|j| fmt_f64(model.get(v, u, j))).collect();
            let sep = if u < d { "," } else { "" };
            writeln!(out, "      [{}]{sep}", row.join(", ")).unwrap();
        }
        writeln!(out, "    ]{}", if v + 1 < d { "," } else { "" }).unwrap();
    }
    writeln!(out, "  ]").unwrap();
    writeln!(out, "}}").unwrap();
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    #[serde(rename = "X")]
    x: Vec<Vec<Vec<f64>>>,
}

pub fn read_model(text: &str) -> Result<ExpSumModel> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
        return Err(Error::InvalidModel(format!(
            "unsupported model format `{}` version {}",
            f.format, f.version
        )));
    }
    if f.x.len() != f.d || f.x.iter().any(|b| b.len() != f.d + 1 || b.iter().any(|r| r.len() != f.k)) {
        return Err(Error::InvalidModel(format!(
            "X must have shape [{}][{}][{}]",
            f.d,
            f.d + 1,
            f.k
        )));
    }
    let coeffs = f.x.into_iter().flatten().flatten().collect();
    ExpSumModel::from_coeffs(f.d, f.k, f.alpha, coeffs)
}

pub fn read_model_file(path: &Path) -> Result<ExpSumModel> {
    read_model(&fs::read_to_string(path)?)
}

pub fn write_model_file(path: &Path, model: &ExpSumModel) -> Result<()> {
    fs::write(path, write_model(model))?;
    Ok(())
}

pub fn write_truth(model: &GroundTruthModel) -> String {
    serde_json::to_string_pretty(model).expect("serializable") + "\n"
}

pub fn read_truth(text: &str) -> Result<GroundTruthModel> {
    let m: GroundTruthModel = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    m.validate()?;
    Ok(m)
}

pub fn read_truth_file(path: &Path) -> Result<GroundTruthModel> {
    read_truth(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = "#d 2
#window a 0.0000000000000000e0 1.0000000000000000e1
#window b 2.5000000000000000e0 3.0000000000000000e0
id,time,type
a,1.0000000000000001e-1,1
a,3.3333333333333335e0,2
a,3.3333333333333335e0,1
b,2.9999999999999996e0,2
";

    #[test]
    fn events_round_trip_is_byte_identical() {
        let ds = read_events(CANONICAL).unwrap();
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.total_events(), 4);
        assert_eq!(ds.realizations()[0].events[1].kind, 1);
        assert_eq!(write_events(&ds).unwrap(), CANONICAL);
    }

    #[test]
    fn load_normalizes_origin() {
        let text = CANONICAL
            .replace("#window a 0.0000000000000000e0", "#window a 5.0000000000000000e-1")
            .replace("a,1.0000000000000001e-1", "a,6.0000000000000000e-1");
        let ds = read_events(&text).unwrap();
        assert_eq!(ds.origin(), 0.0);
        assert_eq!(ds.realizations()[0].t_plus, 9.5);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let missing = "#window a 0 1\nid,time,type\nz,0.5,1\n";
        assert!(matches!(read_events(missing), Err(Error::Parse { line: 3, .. })));
        let zero_type = "#window a 0 1\na,0.5,0\n";
        assert!(matches!(read_events(zero_type), Err(Error::Parse { line: 2, .. })));
        let outside = "#window a 0 1\na,1.5,1\n";
        assert!(matches!(read_events(outside), Err(Error::InvalidData(_))));
        let big_type = "#d 1\n#window a 0 1\na,0.5,2\n";
        assert!(read_events(big_type).is_err());
    }

    #[test]
    fn model_round_trip() {
        let coeffs: Vec<f64> = (0..12).map(|i| (i as f64 - 5.5) / 3.0).collect();
        let m = ExpSumModel::from_coeffs(2, 2, 0.7, coeffs).unwrap();
        let text = write_model(&m);
        assert_eq!(read_model(&text).unwrap(), m);
        assert_eq!(write_model(&read_model(&text).unwrap()), text);
    }

    #[test]
    fn malformed_model_rejected() {
        assert!(read_model("{").is_err());
        let m = ExpSumModel::zeros(1, 2, 1.0).unwrap();
        let wrong_shape = write_model(&m).replace("\"K\": 2", "\"K\": 3");
        assert!(matches!(read_model(&wrong_shape), Err(Error::InvalidModel(_))));
        let wrong_format = write_model(&m).replace(MODEL_FORMAT, "other");
        assert!(read_model(&wrong_format).is_err());
    }

    #[test]
    fn truth_round_trip() {
        let m = crate::simulate::generate_toy(3);
        assert_eq!(read_truth(&write_truth(&m)).unwrap(), m);
    }
}
