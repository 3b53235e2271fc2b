//! CSV datasets and JSON reports.
//!
//! CSV files need a header with covariate columns `x1..xp`; `y` and `yhat`
//! are optional. Other columns are ignored.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Features};
use crate::error::{Error, Result};

fn parse_error(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Reads a dataset from CSV text; `source` names the input in error locations.
pub fn read_csv_from<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(format!("{source}:1"), e.to_string()))?
        .clone();

    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    let (mut y_col, mut yhat_col) = (None, None);
    for (c, name) in headers.iter().enumerate() {
        let dup = |what: &str| parse_error(format!("{source}:1"), format!("duplicate column '{what}'"));
        match name {
            "y" if y_col.is_some() => return Err(dup(name)),
            "y" => y_col = Some(c),
            "yhat" if yhat_col.is_some() => return Err(dup(name)),
            "yhat" => yhat_col = Some(c),
            _ => match name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => {
                    if x_cols.iter().any(|&(kk, _)| kk == k) {
                        return Err(dup(name));
                    }
                    x_cols.push((k, c));
                }
                _ => log::warn!("{source}: ignoring column '{name}'"),
            },
        }
    }
    x_cols.sort_unstable();
    if x_cols.is_empty() {
        return Err(parse_error(format!("{source}:1"), "no covariate columns x1..xp"));
    }
    if let Some((pos, _)) = x_cols.iter().enumerate().find(|(i, &(k, _))| k != i + 1) {
        return Err(parse_error(
            format!("{source}:1"),
            format!(
                "covariate columns must be x1..x{}; x{} is missing",
                x_cols.len(),
                pos + 1
            ),
        ));
    }
    let p = x_cols.len();

    let mut data = Vec::new();
    let mut y = y_col.map(|_| Vec::new());
    let mut yhat = yhat_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(format!("{source}:{line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize, name: &str| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                parse_error(
                    format!("{source}:{line}"),
                    format!("column '{name}': cannot parse '{raw}'"),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    format!("{source}:{line}"),
                    format!("column '{name}': non-finite value '{raw}'"),
                ));
            }
            Ok(v)
        };
        for &(k, c) in &x_cols {
            data.push(field(c, &format!("x{k}"))?);
        }
        if let (Some(c), Some(ys)) = (y_col, y.as_mut()) {
            ys.push(field(c, "y")?);
        }
        if let (Some(c), Some(ys)) = (yhat_col, yhat.as_mut()) {
            ys.push(field(c, "yhat")?);
        }
    }
    let n = data.len() / p;
    Ok(Dataset {
        x: Features::new(n, p, data)?,
        y,
        yhat,
    })
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv_from(file, &path.display().to_string())
}

/// Writes `x1..xp[,y][,yhat]` with shortest round-trip float formatting.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let p = data.x.p();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    if data.y.is_some() {
        header.push("y".into());
    }
    if data.yhat.is_some() {
        header.push("yhat".into());
    }
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(y) = &data.y {
            row.push(y[i].to_string());
        }
        if let Some(yh) = &data.yhat {
            row.push(yh[i].to_string());
        }
        w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Top-level JSON document: version, config echo, summaries and optional records.
#[derive(Debug, Serialize)]
pub struct Report<C: Serialize, S: Serialize, R: Serialize> {
    pub version: &'static str,
    pub command: &'static str,
    pub config: C,
    pub summaries: S,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<R>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
