use std::io::{Read, Write};
use std::path::Path;

use super::{SeriesError, TimeSeries};

/// Loads a CSV file with header `index,value` or `index,value,label`.
///
/// Rows are ordered by their `index` column and then reindexed to `0..T`.
/// The series name is the file stem.
pub fn load_series(path: &Path, has_labels: bool) -> Result<TimeSeries, SeriesError> {
    if !path.exists() {
        return Err(SeriesError::FileMissing(path.display().to_string()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let file = std::fs::File::open(path)?;
    parse_series(name, file, has_labels)
}

/// Parses CSV content; see [`load_series`].
pub fn parse_series<R: Read>(
    name: impl Into<String>,
    reader: R,
    has_labels: bool,
) -> Result<TimeSeries, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| SeriesError::ParseError {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let header_has_label = match cols.as_slice() {
        ["index", "value"] => false,
        ["index", "value", "label"] => true,
        _ => {
            return Err(SeriesError::ParseError {
                row: 0,
                reason: format!("expected header `index,value[,label]`, got `{}`", cols.join(",")),
            })
        }
    };
    if has_labels && !header_has_label {
        return Err(SeriesError::LabelLengthMismatch {
            values: 0,
            labels: 0,
        });
    }

    let mut rows: Vec<(i64, f64, Option<u8>)> = Vec::new();
    let mut label_count = 0usize;
    for (i, record) in rdr.records().enumerate() {
        // Row numbers count data rows from 1 (the header is row 0).
        let row = i + 1;
        let record = record.map_err(|e| SeriesError::ParseError {
            row,
            reason: e.to_string(),
        })?;
        if record.len() < 2 || record.len() > 3 {
            return Err(SeriesError::ParseError {
                row,
                reason: format!("expected 2 or 3 fields, got {}", record.len()),
            });
        }
        let index: i64 = record[0].parse().map_err(|_| SeriesError::ParseError {
            row,
            reason: format!("bad index `{}`", &record[0]),
        })?;
        let value = parse_value(&record[1]).ok_or_else(|| SeriesError::ParseError {
            row,
            reason: format!("bad value `{}`", &record[1]),
        })?;
        let label = match record.get(2) {
            Some("") | None => None,
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => {
                return Err(SeriesError::ParseError {
                    row,
                    reason: format!("bad label `{other}`"),
                })
            }
        };
        if label.is_some() {
            label_count += 1;
        }
        rows.push((index, value, label));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).position(|w| w[0].0 == w[1].0) {
        return Err(SeriesError::ParseError {
            row: w + 2,
            reason: format!("duplicate index {}", rows[w].0),
        });
    }

    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let labels = if header_has_label {
        if label_count != values.len() {
            return Err(SeriesError::LabelLengthMismatch {
                values: values.len(),
                labels: label_count,
            });
        }
        has_labels.then(|| rows.iter().map(|r| r.2.unwrap_or(0)).collect())
    } else {
        None
    };
    TimeSeries::new(name, values, labels)
}

/// Only plain decimal numbers are accepted; `nan`, `inf` and friends are rejected.
fn parse_value(token: &str) -> Option<f64> {
    let ok = !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if !ok {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes a series in the ingestion format (LF endings, label column if present).
pub fn write_series<W: Write>(series: &TimeSeries, mut out: W) -> std::io::Result<()> {
    match &series.labels {
        Some(labels) => {
            writeln!(out, "index,value,label")?;
            for (i, (v, l)) in series.values.iter().zip(labels).enumerate() {
                writeln!(out, "{i},{v},{l}")?;
            }
        }
        None => {
            writeln!(out, "index,value")?;
            for (i, v) in series.values.iter().enumerate() {
                writeln!(out, "{i},{v}")?;
            }
        }
    }
    Ok(())
}
