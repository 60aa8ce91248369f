//! File formats: datasets as CSV (`y,x0,...`), JSON with sorted keys and
//! 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use jointard::Dataset;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

/// Rows of a numeric CSV together with its header.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| io_err(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| io_err(path, format!("data row {}: {e}", line + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(io_err(path, "no data rows"));
    }
    Ok(Table { header, rows })
}

fn check_features(path: &Path, names: &[String]) -> CliResult<()> {
    for (j, h) in names.iter().enumerate() {
        if *h != format!("x{j}") {
            return Err(io_err(path, format!("column {h:?} where x{j} was expected")));
        }
    }
    Ok(())
}

/// Reads a dataset in the `y,x0,...,x{d-1}` format.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let t = read_table(path)?;
    if t.header.first().map(String::as_str) != Some("y") || t.header.len() < 2 {
        return Err(io_err(path, "header must be y,x0,...,x{d-1}"));
    }
    check_features(path, &t.header[1..])?;
    let y: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
    let x: Vec<Vec<f64>> = t.rows.iter().map(|r| r[1..].to_vec()).collect();
    Dataset::from_rows(&x, &y).map_err(|e| io_err(path, e))
}

/// Reads inputs only; a leading `y` column is allowed and ignored.
pub fn read_inputs(path: &Path) -> CliResult<DMatrix<f64>> {
    let t = read_table(path)?;
    let skip = usize::from(t.header.first().map(String::as_str) == Some("y"));
    check_features(path, &t.header[skip..])?;
    let d = t.header.len() - skip;
    if d == 0 {
        return Err(io_err(path, "no feature columns"));
    }
    Ok(DMatrix::from_fn(t.rows.len(), d, |i, j| t.rows[i][skip + j]))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["y".to_string()];
    header.extend((0..data.d()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for i in 0..data.n() {
        let mut rec = vec![cell(data.y()[i])];
        rec.extend(data.x().row(i).iter().map(|v| cell(*v)));
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes rows of already formatted fields under `header`.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Shortest round-trip form; exponent notation for very large or small
/// magnitudes, `inf`/`NaN` for non-finite values.
pub fn cell(v: f64) -> String {
    format!("{v:?}")
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                write!(out, "{:.16e}", n.as_f64().unwrap()).unwrap();
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(item, indent, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            // serde_json's default map is ordered by key.
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                write!(out, "{}{}: ", pad(indent + 1), Value::String(key.clone())).unwrap();
                write_value(item, indent + 1, out);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Sorted keys, floats in `{:.16e}` form (17 significant digits).
pub fn canonical_json<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::input(format!("serializing: {e}")))?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, canonical_json(value)?).map_err(|e| io_err(path, e))
}

pub fn read_json_value(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Keys of `input` that do not survive a parse/serialize round trip.
fn unknown_keys(input: &Value, canonical: &Value, at: &str, found: &mut Vec<String>) {
    match (input, canonical) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &here, found),
                    None => found.push(here),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (k, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{at}[{k}]"), found);
            }
        }
        _ => {}
    }
}

/// Parses a JSON document into `T`, rejecting any key `T` does not know.
pub fn parse_strict<T: Serialize + DeserializeOwned>(value: Value, what: &str) -> CliResult<T> {
    let parsed: T = serde_json::from_value(value.clone()).map_err(|e| CliError::input(format!("{what}: {e}")))?;
    let canonical = serde_json::to_value(&parsed).map_err(|e| CliError::input(format!("{what}: {e}")))?;
    let mut found = Vec::new();
    unknown_keys(&value, &canonical, "", &mut found);
    if !found.is_empty() {
        return Err(CliError::input(format!("{what}: unknown field(s) {}", found.join(", "))));
    }
    Ok(parsed)
}

pub fn read_strict<T: Serialize + DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_strict(read_json_value(path)?, &path.display().to_string())
}
