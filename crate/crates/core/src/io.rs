//! Reading and writing p-value files.
//!
//! CSV: a header `id,p[,family]`, one hypothesis per row, `#` starts a
//! comment line. JSON: an array of `{"id", "p", "family"?}` objects.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hypothesis, PValueVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guess from the file extension; anything other than `.json` is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

pub fn load_pvalues(path: impl AsRef<Path>, format: Format) -> Result<PValueVector> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    match format {
        Format::Csv => parse_csv(&text),
        Format::Json => parse_json(&text),
    }
}

pub fn parse_csv(text: &str) -> Result<PValueVector> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: e.position().map_or(1, |p| p.line()),
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_family = match cols.as_slice() {
        ["id", "p"] => false,
        ["id", "p", "family"] => true,
        [] => return Err(Error::validation("empty file")),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `id,p[,family]`, found `{}`", cols.join(",")),
            })
        }
    };

    let mut hypotheses = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let width = record.len();
        if width < 2 || width > if has_family { 3 } else { 2 } {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {width}", if has_family { "2 or 3" } else { "2" }),
            });
        }
        let id = record[0].to_owned();
        let p: f64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("p-value for {id} is not a number: {:?}", &record[1]),
        })?;
        let family = record.get(2).filter(|f| !f.is_empty()).map(str::to_owned);
        hypotheses.push(Hypothesis { id, p, family });
        lines.push(line);
    }
    if hypotheses.is_empty() {
        return Err(Error::validation("empty file: no hypotheses"));
    }
    PValueVector::with_lines(hypotheses, Some(&lines))
}

pub fn parse_json(text: &str) -> Result<PValueVector> {
    let rows: Vec<Hypothesis> = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    PValueVector::new(rows)
}

/// Serialize `v` in the given format. CSV numbers are written with 17
/// significant digits so they parse back to the same f64.
pub fn write_pvalues(v: &PValueVector, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(v).expect("p-value vectors always serialize"),
        Format::Csv => {
            let has_family = v.hypotheses().iter().any(|h| h.family.is_some());
            let mut out = String::from(if has_family { "id,p,family\n" } else { "id,p\n" });
            for h in v.hypotheses() {
                let _ = write!(out, "{},{:.16e}", csv_field(&h.id), h.p);
                if has_family {
                    out.push(',');
                    if let Some(f) = &h.family {
                        out.push_str(&csv_field(f));
                    }
                }
                out.push('\n');
            }
            out
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.starts_with('#') || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
