//! Dataset manifests, delimited-text loading and dataset reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{DataProfile, Dataset, Frequency, Splits, TimeSeries};
use crate::error::{Error, Result};

/// Declarative description of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub data_path: PathBuf,
    pub timestamp_column: String,
    pub endogenous_column: String,
    #[serde(default)]
    pub exogenous_columns: Vec<String>,
    pub frequency: String,
    /// (train, validation, test) sample counts.
    pub split_sizes: (usize, usize, usize),
    pub profile: DataProfile,
}

impl DatasetManifest {
    /// Reads a TOML manifest. A relative `data_path` is resolved against the
    /// manifest's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if manifest.data_path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.data_path = dir.join(&manifest.data_path);
            }
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
];

/// Parses an ISO-8601 timestamp (date, date-time, or RFC 3339 with offset,
/// which is normalized to UTC).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let frequency: Frequency = manifest.frequency.parse()?;

    let mut seen = HashSet::new();
    let wanted: Vec<&String> = std::iter::once(&manifest.timestamp_column)
        .chain(std::iter::once(&manifest.endogenous_column))
        .chain(manifest.exogenous_columns.iter())
        .collect();
    for name in &wanted {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.to_string()));
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&manifest.data_path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: manifest.data_path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            },
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let ts_idx = index_of(&manifest.timestamp_column)?;
    let value_cols: Vec<(String, usize)> = std::iter::once(&manifest.endogenous_column)
        .chain(manifest.exogenous_columns.iter())
        .map(|name| index_of(name).map(|i| (name.clone(), i)))
        .collect::<Result<_>>()?;

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::UnparseableCell {
            row,
            column: manifest.timestamp_column.clone(),
            value: raw_ts.to_string(),
        })?;
        if let Some(prev) = timestamps.last() {
            let gap = ts - *prev;
            if gap.num_seconds() <= 0 {
                return Err(Error::NonMonotonicTimestamps {
                    row,
                    timestamp: raw_ts.to_string(),
                });
            }
            if gap.num_seconds() != frequency.seconds() || gap.subsec_nanos() != 0 {
                return Err(Error::IrregularSpacing {
                    row,
                    expected_secs: frequency.seconds(),
                    actual_secs: gap.num_seconds(),
                });
            }
        }
        timestamps.push(ts);
        for ((name, idx), column) in value_cols.iter().zip(columns.iter_mut()) {
            let raw = record.get(*idx).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => column.push(v),
                _ => {
                    return Err(Error::UnparseableCell {
                        row,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
    }

    let rows = timestamps.len();
    let (train, validation, test) = manifest.split_sizes;
    let splits = Splits::from_sizes(train, validation, test, rows)?;

    let timestamps = Arc::new(timestamps);
    let profile = &manifest.profile;
    let mut channels = value_cols
        .into_iter()
        .zip(columns)
        .map(|((name, _), values)| {
            let description = profile
                .variable_descriptions
                .get(&name)
                .cloned()
                .unwrap_or_default();
            TimeSeries::new(name, description, timestamps.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    let endogenous = channels.remove(0);
    Dataset::new(endogenous, channels, profile.clone(), frequency, splits)
}

/// Writes the dataset back as comma-delimited text with the manifest's
/// column names. Values use the shortest representation that round-trips.
pub fn write_dataset_csv(dataset: &Dataset, timestamp_column: &str, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![timestamp_column.to_string()];
    header.extend(dataset.channels().map(|c| c.name.clone()));
    writer.write_record(&header)?;
    for (i, ts) in dataset.timestamps().iter().enumerate() {
        let mut row = vec![ts.format(crate::TIMESTAMP_FORMAT).to_string()];
        row.extend(dataset.channels().map(|c| format!("{}", c.values()[i])));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Human-readable summary used by `inspect`.
pub fn describe_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    let ts = dataset.timestamps();
    let _ = writeln!(out, "dataset: {}", dataset.name());
    if !dataset.profile.domain_description.is_empty() {
        let _ = writeln!(out, "domain: {}", dataset.profile.domain_description);
    }
    let _ = writeln!(out, "frequency: {}", dataset.frequency);
    let _ = writeln!(out, "samples: {}", dataset.len());
    if let (Some(first), Some(last)) = (ts.first(), ts.last()) {
        let _ = writeln!(
            out,
            "time range: {} .. {}",
            first.format(crate::TIMESTAMP_FORMAT),
            last.format(crate::TIMESTAMP_FORMAT)
        );
    }
    let s = &dataset.splits;
    let _ = writeln!(
        out,
        "splits: train {:?} ({}), validation {:?} ({}), test {:?} ({})",
        s.train,
        s.train.len(),
        s.validation,
        s.validation.len(),
        s.test,
        s.test.len()
    );
    let _ = writeln!(out, "endogenous channel:");
    describe_channel(&mut out, &dataset.endogenous);
    let _ = writeln!(out, "{} exogenous channels:", dataset.exogenous.len());
    for channel in &dataset.exogenous {
        describe_channel(&mut out, channel);
    }
    out
}

fn describe_channel(out: &mut String, channel: &TimeSeries) {
    let values = channel.values();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let _ = write!(
        out,
        "  - {}: min {min:.4}, max {max:.4}, mean {mean:.4}",
        channel.name
    );
    if !channel.description.is_empty() {
        let _ = write!(out, " ({})", channel.description);
    }
    out.push('\n');
}

/// Convenience for building manifests in code.
pub fn profile_for(
    dataset_name: &str,
    domain_description: &str,
    frequency_text: &str,
    variables: &[(&str, &str)],
) -> DataProfile {
    DataProfile {
        dataset_name: dataset_name.to_string(),
        domain_description: domain_description.to_string(),
        variable_descriptions: variables
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        frequency_text: frequency_text.to_string(),
    }
}
