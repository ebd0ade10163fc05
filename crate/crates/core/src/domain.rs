//! Domain types: series, datasets, forecasting tasks and windows.
//!
//! Anchors are sample indices. Wall-clock time only lives in the shared
//! timestamp vector and is used for serialization and context lookups.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed sampling period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frequency {
    seconds: i64,
    text: String,
}

impl Frequency {
    pub fn from_seconds(seconds: i64) -> Result<Self> {
        if seconds <= 0 {
            return Err(Error::invalid("frequency", "period must be positive"));
        }
        let text = if seconds % 86_400 == 0 {
            format!("{}d", seconds / 86_400)
        } else if seconds % 3_600 == 0 {
            format!("{}h", seconds / 3_600)
        } else if seconds % 60 == 0 {
            format!("{}min", seconds / 60)
        } else {
            format!("{seconds}s")
        };
        Ok(Self { seconds, text })
    }

    pub fn seconds(&self) -> i64 {
        self.seconds
    }

    pub fn step(&self) -> Duration {
        Duration::seconds(self.seconds)
    }

    /// Dominant seasonal period in samples: the daily cycle for sub-daily
    /// data, the weekly cycle for daily data, 1 otherwise.
    pub fn seasonal_period(&self) -> usize {
        const DAY: i64 = 86_400;
        if self.seconds < DAY && DAY % self.seconds == 0 {
            (DAY / self.seconds) as usize
        } else if self.seconds == DAY {
            7
        } else {
            1
        }
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(|| Error::invalid("frequency", format!("missing unit in '{s}'")))?;
        let (count, unit) = s.split_at(split);
        let count: i64 = if count.is_empty() {
            1
        } else {
            count
                .parse()
                .map_err(|_| Error::invalid("frequency", format!("bad count in '{s}'")))?
        };
        let unit_secs = match unit.trim().to_ascii_lowercase().as_str() {
            "s" | "sec" | "second" | "seconds" => 1,
            "min" | "t" | "minute" | "minutes" => 60,
            "h" | "hour" | "hours" => 3_600,
            "d" | "day" | "days" => 86_400,
            other => {
                return Err(Error::invalid(
                    "frequency",
                    format!("unknown unit '{other}' in '{s}'"),
                ))
            }
        };
        Self::from_seconds(count * unit_secs)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// One real-valued channel on a fixed-frequency time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub description: String,
    timestamps: Arc<Vec<NaiveDateTime>>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        timestamps: Arc<Vec<NaiveDateTime>>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if timestamps.len() != values.len() {
            return Err(Error::InvalidSeries(format!(
                "channel '{name}': {} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "channel '{name}': non-finite value at index {i}"
            )));
        }
        check_spacing(&timestamps)?;
        Ok(Self {
            name,
            description: description.into(),
            timestamps,
            values,
        })
    }

    pub fn timestamps(&self) -> &Arc<Vec<NaiveDateTime>> {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_spacing(timestamps: &[NaiveDateTime]) -> Result<()> {
    if timestamps.len() < 2 {
        return Ok(());
    }
    let step = timestamps[1] - timestamps[0];
    for (i, pair) in timestamps.windows(2).enumerate() {
        let gap = pair[1] - pair[0];
        if gap <= Duration::zero() {
            return Err(Error::NonMonotonicTimestamps {
                row: i + 1,
                timestamp: pair[1].to_string(),
            });
        }
        if gap != step {
            return Err(Error::IrregularSpacing {
                row: i + 1,
                expected_secs: step.num_seconds(),
                actual_secs: gap.num_seconds(),
            });
        }
    }
    Ok(())
}

/// Textual description of a dataset and its variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProfile {
    pub dataset_name: String,
    #[serde(default)]
    pub domain_description: String,
    #[serde(default)]
    pub variable_descriptions: BTreeMap<String, String>,
    #[serde(default)]
    pub frequency_text: String,
}

/// Contiguous train / validation / test index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn from_sizes(train: usize, validation: usize, test: usize, rows: usize) -> Result<Self> {
        if train + validation + test > rows {
            return Err(Error::SplitOverflow {
                train,
                validation,
                test,
                rows,
            });
        }
        Ok(Self {
            train: 0..train,
            validation: train..train + validation,
            test: train + validation..train + validation + test,
        })
    }
}

/// A single-target dataset: channels ordered `[endogenous, exogenous...]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub endogenous: TimeSeries,
    pub exogenous: Vec<TimeSeries>,
    pub profile: DataProfile,
    pub frequency: Frequency,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(
        endogenous: TimeSeries,
        exogenous: Vec<TimeSeries>,
        profile: DataProfile,
        frequency: Frequency,
        splits: Splits,
    ) -> Result<Self> {
        for exo in &exogenous {
            if exo.timestamps() != endogenous.timestamps() {
                return Err(Error::InvalidSeries(format!(
                    "channel '{}' does not share the endogenous timestamps",
                    exo.name
                )));
            }
        }
        let n = endogenous.len();
        if splits.test.end > n || splits.train.end > splits.validation.start {
            return Err(Error::SplitOverflow {
                train: splits.train.len(),
                validation: splits.validation.len(),
                test: splits.test.len(),
                rows: n,
            });
        }
        let ts = endogenous.timestamps();
        if ts.len() >= 2 && (ts[1] - ts[0]).num_seconds() != frequency.seconds() {
            return Err(Error::IrregularSpacing {
                row: 1,
                expected_secs: frequency.seconds(),
                actual_secs: (ts[1] - ts[0]).num_seconds(),
            });
        }
        for channel in std::iter::once(&endogenous).chain(&exogenous) {
            if !profile.variable_descriptions.contains_key(&channel.name) {
                return Err(Error::InvalidSeries(format!(
                    "data profile lacks a description for channel '{}'",
                    channel.name
                )));
            }
        }
        Ok(Self {
            endogenous,
            exogenous,
            profile,
            frequency,
            splits,
        })
    }

    pub fn name(&self) -> &str {
        &self.profile.dataset_name
    }

    pub fn len(&self) -> usize {
        self.endogenous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endogenous.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        self.endogenous.timestamps()
    }

    pub fn channels(&self) -> impl Iterator<Item = &TimeSeries> {
        std::iter::once(&self.endogenous).chain(self.exogenous.iter())
    }

    /// Instant of sample `index`, extrapolated past the end of the data.
    pub fn timestamp_at(&self, index: usize) -> Option<NaiveDateTime> {
        let ts = self.timestamps();
        match ts.get(index) {
            Some(t) => Some(*t),
            None => {
                let last = *ts.last()?;
                let ahead = (index + 1 - ts.len()) as i64;
                Some(last + Duration::seconds(self.frequency.seconds() * ahead))
            }
        }
    }
}

/// Look-back/horizon lengths fixed per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskProfile {
    /// H = 168, L = 24.
    Short,
    /// H = 96, L = 96.
    Long,
    Custom { lookback: usize, horizon: usize },
}

impl TaskProfile {
    pub fn lookback(&self) -> usize {
        match self {
            TaskProfile::Short => 168,
            TaskProfile::Long => 96,
            TaskProfile::Custom { lookback, .. } => *lookback,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            TaskProfile::Short => 24,
            TaskProfile::Long => 96,
            TaskProfile::Custom { horizon, .. } => *horizon,
        }
    }
}

/// One forecasting request: predict `horizon_len` samples after `anchor`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastTask {
    pub lookback_len: usize,
    pub horizon_len: usize,
    /// Index of the last observed sample.
    pub anchor: usize,
    pub task_prompt: String,
}

impl ForecastTask {
    pub fn new(dataset: &Dataset, profile: TaskProfile, anchor: usize) -> Self {
        let (h, l) = (profile.lookback(), profile.horizon());
        let task_prompt = format!(
            "Forecast the next {l} values of '{}' sampled every {}, using the previous {h} observations \
             ending at {}.",
            dataset.endogenous.name,
            dataset.frequency,
            dataset
                .timestamp_at(anchor)
                .map(|t| t.format(crate::TIMESTAMP_FORMAT).to_string())
                .unwrap_or_else(|| format!("index {anchor}")),
        );
        Self {
            lookback_len: h,
            horizon_len: l,
            anchor,
            task_prompt,
        }
    }

    pub fn lookback_range(&self) -> Range<usize> {
        self.anchor + 1 - self.lookback_len..self.anchor + 1
    }

    pub fn horizon_range(&self) -> Range<usize> {
        self.anchor + 1..self.anchor + 1 + self.horizon_len
    }
}

/// A look-back window with its optional realized future.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lookback: Vec<f64>,
    pub future: Option<Vec<f64>>,
    pub anchor: usize,
    pub channel: String,
}

/// Every window whose look-back and future both lie inside `range`, anchors
/// spaced by `stride` in ascending order.
pub fn enumerate_windows(
    series: &TimeSeries,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let anchors = window_anchors(range.clone(), lookback, horizon, stride)?;
    if range.end > series.len() {
        return Err(Error::invalid(
            "range",
            format!("{range:?} exceeds series length {}", series.len()),
        ));
    }
    let values = series.values();
    Ok(anchors
        .into_iter()
        .map(|anchor| Window {
            lookback: values[anchor + 1 - lookback..=anchor].to_vec(),
            future: Some(values[anchor + 1..anchor + 1 + horizon].to_vec()),
            anchor,
            channel: series.name.clone(),
        })
        .collect())
}

/// Anchor indices of [`enumerate_windows`] without copying data.
pub fn window_anchors(
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::invalid(
            "window",
            format!("lookback ({lookback}), horizon ({horizon}) and stride ({stride}) must be >= 1"),
        ));
    }
    let len = range.end.saturating_sub(range.start);
    if len < lookback + horizon {
        return Err(Error::insufficient(
            format!(
                "window enumeration over {range:?} (no window of {lookback} + {horizon} fits)"
            ),
            lookback + horizon,
            len,
        ));
    }
    let first = range.start + lookback - 1;
    let last = range.end - horizon - 1;
    Ok((first..=last).step_by(stride).collect())
}

/// Model inputs for one task: endogenous look-back, exogenous look-back plus
/// horizon, timestamps over look-back plus horizon, and the truth if known.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInputs {
    pub endogenous: Vec<f64>,
    /// `d` rows of `H + L` values.
    pub exogenous: Vec<Vec<f64>>,
    pub timestamps: Vec<NaiveDateTime>,
    /// `None` when the horizon runs past the end of the data.
    pub truth: Option<Vec<f64>>,
}

pub fn slice_task_inputs(dataset: &Dataset, task: &ForecastTask) -> Result<TaskInputs> {
    let (h, l, t) = (task.lookback_len, task.horizon_len, task.anchor);
    if h == 0 || l == 0 {
        return Err(Error::invalid("task", "lookback and horizon must be >= 1"));
    }
    let n = dataset.len();
    if t + 1 < h || t >= n {
        return Err(Error::insufficient(
            format!("task anchored at {t} (series length {n})"),
            h,
            t + 1,
        ));
    }
    let lookback = t + 1 - h..t + 1;
    let full = t + 1 - h..t + 1 + l;
    let mut exogenous = Vec::with_capacity(dataset.exogenous.len());
    for exo in &dataset.exogenous {
        if full.end > exo.len() {
            return Err(Error::UnavailableCovariate {
                channel: exo.name.clone(),
                start: exo.len().max(full.start),
                end: full.end,
                len: exo.len(),
            });
        }
        exogenous.push(exo.values()[full.clone()].to_vec());
    }
    let timestamps = full
        .clone()
        .map(|i| dataset.timestamp_at(i).expect("non-empty dataset"))
        .collect();
    let endo = dataset.endogenous.values();
    let truth = (full.end <= n).then(|| endo[t + 1..t + 1 + l].to_vec());
    Ok(TaskInputs {
        endogenous: endo[lookback].to_vec(),
        exogenous,
        timestamps,
        truth,
    })
}
