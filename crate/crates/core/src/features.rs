//! The twenty-feature statistical/temporal description of a look-back window.
//!
//! Conventions, shared by every estimator here:
//!
//! * moments use `n` denominators (`basic_variance` is the population variance);
//! * a window is *constant* when its minimum equals its maximum; features that
//!   are undefined on constant input are reported as `0` and flagged degenerate;
//! * autocorrelations are `r_k = Σ_{t<n-k} (x_t - x̄)(x_{t+k} - x̄) / Σ (x_t - x̄)²`,
//!   and the `*_acf10` features are `Σ_{k=1..10} r_k²`;
//! * spectral entropy is the Shannon entropy of the periodogram bins
//!   `1..=n/2` (DC excluded), normalized by `ln(n/2)`;
//! * sample entropy uses embedding dimension 2, tolerance `0.2·std`, Chebyshev
//!   distance `<= r`, natural log, capped at 10;
//! * lumpiness uses non-overlapping full tiles of width `max(m, 10)`;
//! * seasonal strength comes from a classical additive decomposition with a
//!   centered moving-average trend (`2×m` for even `m`).

use std::collections::BTreeSet;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 20;

/// Sample-entropy value reported when no template matches exist.
pub const SAMPLE_ENTROPY_CAP: f64 = 10.0;

const MIN_WINDOW: usize = 4;
const MIN_LUMPINESS_TILE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    BasicCount,
    BasicMean,
    BasicStd,
    BasicVariance,
    BasicMin,
    BasicMax,
    BasicSkewness,
    BasicKurtosis,
    SpectralEntropy,
    Xacf1,
    Xacf10,
    Diff1Acf1,
    Diff1Acf10,
    Diff2Acf1,
    Diff2Acf10,
    SampleEntropy,
    Lumpiness,
    FlatSpots,
    CrossingPoints,
    SeasonalStrength,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::BasicCount,
        Feature::BasicMean,
        Feature::BasicStd,
        Feature::BasicVariance,
        Feature::BasicMin,
        Feature::BasicMax,
        Feature::BasicSkewness,
        Feature::BasicKurtosis,
        Feature::SpectralEntropy,
        Feature::Xacf1,
        Feature::Xacf10,
        Feature::Diff1Acf1,
        Feature::Diff1Acf10,
        Feature::Diff2Acf1,
        Feature::Diff2Acf10,
        Feature::SampleEntropy,
        Feature::Lumpiness,
        Feature::FlatSpots,
        Feature::CrossingPoints,
        Feature::SeasonalStrength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::BasicCount => "basic_count",
            Feature::BasicMean => "basic_mean",
            Feature::BasicStd => "basic_std",
            Feature::BasicVariance => "basic_variance",
            Feature::BasicMin => "basic_min",
            Feature::BasicMax => "basic_max",
            Feature::BasicSkewness => "basic_skewness",
            Feature::BasicKurtosis => "basic_kurtosis",
            Feature::SpectralEntropy => "spectral_entropy",
            Feature::Xacf1 => "xacf1",
            Feature::Xacf10 => "xacf10",
            Feature::Diff1Acf1 => "diff1_acf1",
            Feature::Diff1Acf10 => "diff1_acf10",
            Feature::Diff2Acf1 => "diff2_acf1",
            Feature::Diff2Acf10 => "diff2_acf10",
            Feature::SampleEntropy => "sample_entropy",
            Feature::Lumpiness => "lumpiness",
            Feature::FlatSpots => "flat_spots",
            Feature::CrossingPoints => "crossing_points",
            Feature::SeasonalStrength => "seasonal_strength",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Features that only make sense for seasonal data.
    pub fn is_seasonal(self) -> bool {
        matches!(self, Feature::SeasonalStrength)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single estimate plus whether it was defaulted on degenerate input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureValue {
    pub value: f64,
    pub degenerate: bool,
}

impl FeatureValue {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn defaulted() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: [f64; FEATURE_COUNT],
    degenerate: BTreeSet<Feature>,
}

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> f64 {
        self.values[feature.index()]
    }

    pub fn is_degenerate(&self, feature: Feature) -> bool {
        self.degenerate.contains(&feature)
    }

    pub fn degenerate_flags(&self) -> &BTreeSet<Feature> {
        &self.degenerate
    }

    pub fn iter(&self) -> impl Iterator<Item = (Feature, f64)> + '_ {
        Feature::ALL.into_iter().map(|f| (f, self.values[f.index()]))
    }

    fn set(&mut self, feature: Feature, value: FeatureValue) {
        self.values[feature.index()] = value.value;
        if value.degenerate {
            self.degenerate.insert(feature);
        }
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(FEATURE_COUNT))?;
        for (feature, value) in self.iter() {
            map.serialize_entry(feature.name(), &value)?;
        }
        map.end()
    }
}

/// Features for one channel of a task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelFeatures {
    pub channel: String,
    pub features: FeatureVector,
}

struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    min: f64,
    max: f64,
}

impl Moments {
    fn of(x: &[f64]) -> Self {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in x {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
            min = min.min(v);
            max = max.max(v);
        }
        let nf = n as f64;
        Self {
            n,
            mean,
            m2: m2 / nf,
            m3: m3 / nf,
            m4: m4 / nf,
            min,
            max,
        }
    }

    fn constant(&self) -> bool {
        self.min == self.max
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Autocorrelation at lag `k`.
pub fn acf_at_lag(x: &[f64], k: usize) -> Result<FeatureValue> {
    if k >= x.len() {
        return Err(Error::invalid(
            "lag",
            format!("lag {k} must be below the window length {}", x.len()),
        ));
    }
    if is_constant(x) {
        return Ok(FeatureValue::defaulted());
    }
    let centered = center(x);
    Ok(FeatureValue::ok(acf_centered(&centered, k)))
}

/// Sum of squared autocorrelations over lags 1..=10.
pub fn acf10_sum(x: &[f64]) -> Result<FeatureValue> {
    if x.len() < 12 {
        return Err(Error::insufficient("acf10_sum", 12, x.len()));
    }
    if is_constant(x) {
        return Ok(FeatureValue::defaulted());
    }
    let centered = center(x);
    Ok(FeatureValue::ok(
        (1..=10).map(|k| acf_centered(&centered, k).powi(2)).sum(),
    ))
}

fn center(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn acf_centered(c: &[f64], k: usize) -> f64 {
    let denom: f64 = c.iter().map(|v| v * v).sum();
    let num: f64 = c.iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
    num / denom
}

/// `k`-th order differences.
pub fn difference(x: &[f64], order: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for _ in 0..order {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

pub fn spectral_entropy(x: &[f64]) -> Result<FeatureValue> {
    if x.len() < 8 {
        return Err(Error::insufficient("spectral_entropy", 8, x.len()));
    }
    if is_constant(x) {
        return Ok(FeatureValue::defaulted());
    }
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2;
    let power: Vec<f64> = buf[1..=bins].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return Ok(FeatureValue::defaulted());
    }
    let entropy: f64 = power
        .iter()
        .map(|p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(FeatureValue::ok((entropy / (bins as f64).ln()).clamp(0.0, 1.0)))
}

/// Variance of per-tile variances over non-overlapping tiles of width `tile`.
pub fn lumpiness(x: &[f64], tile: usize) -> Result<FeatureValue> {
    if tile < 2 {
        return Err(Error::invalid("tile", "lumpiness tile width must be >= 2"));
    }
    if x.len() < 2 * tile {
        return Ok(FeatureValue::defaulted());
    }
    let variances: Vec<f64> = x.chunks_exact(tile).map(|c| Moments::of(c).m2).collect();
    Ok(FeatureValue::ok(Moments::of(&variances).m2))
}

/// Longest run inside one of ten equal-width bins spanning `[min, max]`.
pub fn flat_spots(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        return x.len() as f64;
    }
    let width = max - min;
    let bin = |v: f64| (((v - min) / width * 10.0).floor() as usize).min(9);
    let (mut best, mut run) = (1usize, 1usize);
    for w in x.windows(2) {
        if bin(w[0]) == bin(w[1]) {
            run += 1;
            best = best.max(run);
        } else {
            run = 1;
        }
    }
    best as f64
}

/// Number of consecutive pairs on opposite sides of the sample median
/// (`<= median` versus `> median`).
pub fn crossing_points(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let median = median(x);
    x.windows(2)
        .filter(|w| (w[0] <= median) != (w[1] <= median))
        .count() as f64
}

pub(crate) fn median(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Centered moving average of width `period` (2×m for even periods). Returns
/// the index of the first valid point and the trend over valid points.
fn centered_trend(x: &[f64], period: usize) -> (usize, Vec<f64>) {
    let half = period / 2;
    let n = x.len();
    let trend = (half..n - half)
        .map(|t| {
            if period % 2 == 0 {
                let inner: f64 = x[t + 1 - half..t + half].iter().sum();
                (0.5 * x[t - half] + inner + 0.5 * x[t + half]) / period as f64
            } else {
                x[t - half..=t + half].iter().sum::<f64>() / period as f64
            }
        })
        .collect();
    (half, trend)
}

pub fn seasonal_strength(x: &[f64], period: usize) -> Result<FeatureValue> {
    if period < 2 {
        return Err(Error::invalid("period", "seasonal period must be >= 2"));
    }
    if x.len() < 2 * period || is_constant(x) {
        return Ok(FeatureValue::defaulted());
    }
    let (offset, trend) = centered_trend(x, period);
    let detrended: Vec<f64> = trend
        .iter()
        .enumerate()
        .map(|(i, t)| x[offset + i] - t)
        .collect();

    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, d) in detrended.iter().enumerate() {
        let pos = (offset + i) % period;
        sums[pos] += d;
        counts[pos] += 1;
    }
    let mut seasonal: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let seasonal_mean = seasonal.iter().sum::<f64>() / period as f64;
    seasonal.iter_mut().for_each(|s| *s -= seasonal_mean);

    let remainder: Vec<f64> = detrended
        .iter()
        .enumerate()
        .map(|(i, d)| d - seasonal[(offset + i) % period])
        .collect();
    let var_detrended = Moments::of(&detrended).m2;
    if var_detrended == 0.0 {
        return Ok(FeatureValue::defaulted());
    }
    let var_remainder = Moments::of(&remainder).m2;
    Ok(FeatureValue::ok((1.0 - var_remainder / var_detrended).max(0.0)))
}

/// Sample entropy with embedding dimension 2 and tolerance `0.2·std`.
pub fn sample_entropy(x: &[f64]) -> FeatureValue {
    const DIM: usize = 2;
    let moments = Moments::of(x);
    if x.len() <= DIM || moments.constant() {
        return FeatureValue::defaulted();
    }
    let r = 0.2 * moments.m2.sqrt();
    let templates = x.len() - DIM;
    let (mut shorter, mut longer) = (0u64, 0u64);
    for i in 0..templates {
        for j in i + 1..templates {
            if (0..DIM).all(|k| (x[i + k] - x[j + k]).abs() <= r) {
                shorter += 1;
                if (x[i + DIM] - x[j + DIM]).abs() <= r {
                    longer += 1;
                }
            }
        }
    }
    if shorter == 0 || longer == 0 {
        return FeatureValue::ok(SAMPLE_ENTROPY_CAP);
    }
    FeatureValue::ok((-(longer as f64 / shorter as f64).ln()).min(SAMPLE_ENTROPY_CAP))
}

/// Moment skewness `m3 / m2^{3/2}`.
pub fn skewness(x: &[f64]) -> FeatureValue {
    let m = Moments::of(x);
    if x.is_empty() || m.constant() {
        return FeatureValue::defaulted();
    }
    FeatureValue::ok(m.m3 / m.m2.powf(1.5))
}

/// Excess kurtosis `m4 / m2² - 3`.
pub fn kurtosis(x: &[f64]) -> FeatureValue {
    let m = Moments::of(x);
    if x.is_empty() || m.constant() {
        return FeatureValue::defaulted();
    }
    FeatureValue::ok(m.m4 / (m.m2 * m.m2) - 3.0)
}

fn diff_acf_pair(x: &[f64], order: usize) -> (FeatureValue, FeatureValue) {
    if x.len() < order + 12 {
        return (FeatureValue::defaulted(), FeatureValue::defaulted());
    }
    let d = difference(x, order);
    (
        acf_at_lag(&d, 1).expect("length checked"),
        acf10_sum(&d).expect("length checked"),
    )
}

/// All twenty features of one window. `period` is the seasonal period in
/// samples; a period below 2 disables seasonal strength.
pub fn extract_feature_vector(window: &[f64], period: usize) -> Result<FeatureVector> {
    if window.len() < MIN_WINDOW {
        return Err(Error::insufficient("feature extraction", MIN_WINDOW, window.len()));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries("window contains non-finite values".into()));
    }
    let mut fv = FeatureVector {
        values: [0.0; FEATURE_COUNT],
        degenerate: BTreeSet::new(),
    };
    let m = Moments::of(window);
    fv.set(Feature::BasicCount, FeatureValue::ok(m.n as f64));
    fv.set(Feature::BasicMean, FeatureValue::ok(m.mean));
    fv.set(Feature::BasicStd, FeatureValue::ok(m.m2.sqrt()));
    fv.set(Feature::BasicVariance, FeatureValue::ok(m.m2));
    fv.set(Feature::BasicMin, FeatureValue::ok(m.min));
    fv.set(Feature::BasicMax, FeatureValue::ok(m.max));
    fv.set(Feature::BasicSkewness, skewness(window));
    fv.set(Feature::BasicKurtosis, kurtosis(window));
    fv.set(
        Feature::SpectralEntropy,
        spectral_entropy(window).unwrap_or(FeatureValue::defaulted()),
    );
    fv.set(Feature::Xacf1, acf_at_lag(window, 1)?);
    fv.set(
        Feature::Xacf10,
        acf10_sum(window).unwrap_or(FeatureValue::defaulted()),
    );
    let (d1_acf1, d1_acf10) = diff_acf_pair(window, 1);
    fv.set(Feature::Diff1Acf1, d1_acf1);
    fv.set(Feature::Diff1Acf10, d1_acf10);
    let (d2_acf1, d2_acf10) = diff_acf_pair(window, 2);
    fv.set(Feature::Diff2Acf1, d2_acf1);
    fv.set(Feature::Diff2Acf10, d2_acf10);
    fv.set(Feature::SampleEntropy, sample_entropy(window));
    fv.set(
        Feature::Lumpiness,
        lumpiness(window, period.max(MIN_LUMPINESS_TILE))?,
    );
    fv.set(Feature::FlatSpots, FeatureValue::ok(flat_spots(window)));
    fv.set(Feature::CrossingPoints, FeatureValue::ok(crossing_points(window)));
    fv.set(
        Feature::SeasonalStrength,
        if period < 2 {
            FeatureValue::defaulted()
        } else {
            seasonal_strength(window, period)?
        },
    );
    Ok(fv)
}

/// Features for the endogenous look-back and each exogenous channel's
/// look-back portion (the first `endogenous.len()` values of each row).
pub fn extract_dataset_features(
    endogenous: (&str, &[f64]),
    exogenous: &[(&str, &[f64])],
    period: usize,
) -> Result<Vec<ChannelFeatures>> {
    let lookback = endogenous.1.len();
    std::iter::once(endogenous)
        .chain(exogenous.iter().copied())
        .map(|(name, values)| {
            let window = &values[..lookback.min(values.len())];
            extract_feature_vector(window, period)
                .map(|features| ChannelFeatures {
                    channel: name.to_string(),
                    features,
                })
                .map_err(|e| Error::Channel {
                    channel: name.to_string(),
                    source: Box::new(e),
                })
        })
        .collect()
}
