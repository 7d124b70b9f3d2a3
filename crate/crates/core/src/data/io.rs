use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Binarizer, DataError, InteractionEvent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// `.tsv`, `.tab`, `.inter` are tab separated; anything else is sniffed
    /// from the header line.
    #[default]
    Auto,
    Comma,
    Tab,
}

/// Column mapping for an interaction file.
///
/// Columns are matched by exact header name first, then by the part of the
/// header before a `:` (so `user_id` matches `user_id:token`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schema {
    pub user: String,
    pub item: String,
    /// Explicit 0/1 click column. Takes precedence over `rating`.
    pub label: Option<String>,
    /// Numeric rating, binarized when no label column is mapped.
    pub rating: Option<String>,
    pub timestamp: String,
    pub delimiter: Delimiter,
    pub binarizer: Binarizer,
    /// Numeric per-user feature columns (first row seen per user wins).
    pub user_features: Vec<String>,
    /// Numeric per-item feature columns (first row seen per item wins).
    pub item_features: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self::ratings()
    }
}

impl Schema {
    /// The layout written by [`write_events`].
    pub fn canonical() -> Self {
        Self {
            user: "user_id".into(),
            item: "item_id".into(),
            label: Some("label".into()),
            rating: Some("rating".into()),
            timestamp: "timestamp".into(),
            delimiter: Delimiter::Comma,
            binarizer: Binarizer::default(),
            user_features: Vec::new(),
            item_features: Vec::new(),
        }
    }

    /// Rating-based layout (`user_id,item_id,rating,timestamp`) with no
    /// click column. This is the default, so an omitted `label` key means
    /// clicks come from binarized ratings.
    pub fn ratings() -> Self {
        Self {
            label: None,
            delimiter: Delimiter::Auto,
            ..Self::canonical()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    pub events: Vec<InteractionEvent>,
    pub malformed: usize,
    /// 1-based line numbers of the first malformed rows (at most 20).
    pub malformed_lines: Vec<u64>,
    pub user_features: BTreeMap<String, Vec<f64>>,
    pub item_features: BTreeMap<String, Vec<f64>>,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .or_else(|| {
            headers
                .iter()
                .position(|h| h.split(':').next() == Some(name))
        })
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn delimiter_for(path: &Path, choice: Delimiter) -> Result<u8, DataError> {
    Ok(match choice {
        Delimiter::Comma => b',',
        Delimiter::Tab => b'\t',
        Delimiter::Auto => {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            match ext.as_str() {
                "tsv" | "tab" | "inter" => b'\t',
                "csv" => b',',
                _ => {
                    use std::io::BufRead;
                    let f = File::open(path).map_err(|source| DataError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?;
                    let mut first = String::new();
                    std::io::BufReader::new(f)
                        .read_line(&mut first)
                        .map_err(|source| DataError::Io {
                            path: path.to_path_buf(),
                            source,
                        })?;
                    if first.contains('\t') {
                        b'\t'
                    } else {
                        b','
                    }
                }
            }
        }
    })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

fn parse_real(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads an interaction file. Rows that cannot be parsed are skipped and
/// tallied in [`ParseReport::malformed`].
pub fn parse_interactions(path: &Path, schema: &Schema) -> Result<ParseReport, DataError> {
    if schema.label.is_none() && schema.rating.is_none() {
        return Err(DataError::Schema(
            "either a label or a rating column must be mapped".into(),
        ));
    }
    let delim = delimiter_for(path, schema.delimiter)?;
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();

    let user_col = find_column(&headers, &schema.user)?;
    let item_col = find_column(&headers, &schema.item)?;
    let ts_col = find_column(&headers, &schema.timestamp)?;
    let label_col = schema
        .label
        .as_deref()
        .map(|c| find_column(&headers, c))
        .transpose()?;
    // With a label column the rating column is optional provenance.
    let rating_col = match (&schema.rating, label_col) {
        (Some(c), None) => Some(find_column(&headers, c)?),
        (Some(c), Some(_)) => find_column(&headers, c).ok(),
        (None, _) => None,
    };
    let user_feature_cols = schema
        .user_features
        .iter()
        .map(|c| find_column(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let item_feature_cols = schema
        .item_features
        .iter()
        .map(|c| find_column(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = ParseReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                report.malformed += 1;
                if report.malformed_lines.len() < 20 {
                    report.malformed_lines.push(line);
                }
                continue;
            }
        }
        match parse_row(
            &record,
            schema,
            (user_col, item_col, ts_col, label_col, rating_col),
            &user_feature_cols,
            &item_feature_cols,
        ) {
            Some((event, uf, itf)) => {
                if !user_feature_cols.is_empty() {
                    report
                        .user_features
                        .entry(event.user_id.clone())
                        .or_insert(uf);
                }
                if !item_feature_cols.is_empty() {
                    report
                        .item_features
                        .entry(event.item_id.clone())
                        .or_insert(itf);
                }
                report.events.push(event);
            }
            None => {
                report.malformed += 1;
                if report.malformed_lines.len() < 20 {
                    report
                        .malformed_lines
                        .push(record.position().map_or(line, |p| p.line()));
                }
            }
        }
    }
    Ok(report)
}

type Columns = (usize, usize, usize, Option<usize>, Option<usize>);

fn parse_row(
    record: &csv::StringRecord,
    schema: &Schema,
    (user_col, item_col, ts_col, label_col, rating_col): Columns,
    user_feature_cols: &[usize],
    item_feature_cols: &[usize],
) -> Option<(InteractionEvent, Vec<f64>, Vec<f64>)> {
    let user_id = record.get(user_col)?.trim();
    let item_id = record.get(item_col)?.trim();
    if user_id.is_empty() || item_id.is_empty() {
        return None;
    }
    let timestamp = parse_timestamp(record.get(ts_col)?)?;
    let raw_rating = match rating_col {
        Some(c) => {
            let field = record.get(c).unwrap_or("").trim();
            if field.is_empty() && label_col.is_some() {
                None
            } else {
                Some(parse_real(field)?)
            }
        }
        None => None,
    };
    let label = match label_col {
        Some(c) => match record.get(c)?.trim() {
            "0" => 0,
            "1" => 1,
            _ => return None,
        },
        None => schema.binarizer.label(raw_rating?),
    };
    let features = |cols: &[usize]| -> Option<Vec<f64>> {
        cols.iter().map(|&c| parse_real(record.get(c)?)).collect()
    };
    let uf = features(user_feature_cols)?;
    let itf = features(item_feature_cols)?;
    Some((
        InteractionEvent {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            label,
            timestamp,
            raw_rating,
        },
        uf,
        itf,
    ))
}

/// Writes events in the canonical comma-separated layout
/// `user_id,item_id,label,timestamp,rating`.
pub fn write_events(path: &Path, events: &[InteractionEvent]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["user_id", "item_id", "label", "timestamp", "rating"])?;
    for e in events {
        let rating = e.raw_rating.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([
            e.user_id.as_str(),
            e.item_id.as_str(),
            if e.label == 1 { "1" } else { "0" },
            &e.timestamp.to_string(),
            &rating,
        ])?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Reads a canonical event file.
pub fn read_events(path: &Path) -> Result<ParseReport, DataError> {
    parse_interactions(path, &Schema::canonical())
}
