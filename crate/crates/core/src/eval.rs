//! Rolling-window evaluation, metrics and report files.
//!
//! Errors are pooled: MSE and MAE average every (window, step) error rather
//! than averaging per-window scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{run_session, Backends, ForecastSession, SessionConfig, SessionResources};
use crate::baselines::{ExternalForecaster, ForecastModelSpec};
use crate::caselib::{retrieve, CaseLibrary, RetrievalConfig};
use crate::domain::{window_anchors, Dataset, ForecastTask, TaskProfile};
use crate::error::{Error, Result};
use crate::grounding::{Ablation, AblationFlag};
use crate::knowledge::KnowledgeStore;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric", "vectors must be non-empty"));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::invalid("metric", "vectors must be finite"));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// What produces the forecasts being scored.
#[derive(Clone)]
pub enum Method {
    Baseline(ForecastModelSpec),
    /// The auxiliary forecast of the case library alone.
    AuxiliaryOnly,
    Session {
        backends: Backends,
        config: SessionConfig,
    },
    External(Arc<dyn ExternalForecaster>),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Baseline(spec) => spec.label(),
            Method::AuxiliaryOnly => "auxiliary".into(),
            Method::Session { config, .. } => format!("session-{}", config.ablation.label()),
            Method::External(f) => f.name(),
        }
    }

    fn ablation(&self) -> Ablation {
        match self {
            Method::Session { config, .. } => config.ablation.clone(),
            _ => Ablation::none(),
        }
    }
}

/// Shared inputs of an evaluation run.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub dataset: &'a Dataset,
    pub library: Option<&'a CaseLibrary>,
    pub store: &'a KnowledgeStore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub profile: TaskProfile,
    /// Defaults to the horizon length.
    pub stride: Option<usize>,
    /// Fingerprint of the run configuration, embedded in file names.
    pub fingerprint: String,
}

impl EvalConfig {
    pub fn new(profile: TaskProfile, fingerprint: impl Into<String>) -> Self {
        Self {
            profile,
            stride: None,
            fingerprint: fingerprint.into(),
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.profile.horizon())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub anchor: usize,
    pub forecast: Vec<f64>,
    pub truth: Vec<f64>,
    /// Set when the method failed on this window.
    pub error: Option<String>,
}

impl WindowRecord {
    pub fn squared_errors(&self) -> Vec<f64> {
        self.forecast
            .iter()
            .zip(&self.truth)
            .map(|(p, t)| (p - t) * (p - t))
            .collect()
    }

    pub fn absolute_errors(&self) -> Vec<f64> {
        self.forecast
            .iter()
            .zip(&self.truth)
            .map(|(p, t)| (p - t).abs())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub dataset: String,
    pub method: String,
    pub fingerprint: String,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub ablation: Ablation,
    pub windows: Vec<WindowRecord>,
    /// Pooled over successful windows; NaN when none succeeded.
    pub mse: f64,
    pub mae: f64,
    pub partial: bool,
    pub wall_time_ms: u64,
    /// Sessions behind each window for session methods.
    pub sessions: Vec<ForecastSession>,
}

/// The deterministic part of a report, written as the `.summary` file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub dataset: String,
    pub method: String,
    pub fingerprint: String,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub ablation: String,
    pub windows: usize,
    pub failed_windows: usize,
    pub partial: bool,
    pub mse: f64,
    pub mae: f64,
}

impl EvalReport {
    pub fn failed_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.error.is_some()).count()
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            dataset: self.dataset.clone(),
            method: self.method.clone(),
            fingerprint: self.fingerprint.clone(),
            lookback: self.lookback,
            horizon: self.horizon,
            stride: self.stride,
            ablation: self.ablation.label(),
            windows: self.windows.len(),
            failed_windows: self.failed_windows(),
            partial: self.partial,
            mse: self.mse,
            mae: self.mae,
        }
    }

    pub fn summary_text(&self) -> String {
        let s = self.summary();
        // NaN has no TOML literal, so aggregates are written by hand
        let mut out = String::new();
        let _ = writeln!(out, "dataset = {:?}", s.dataset);
        let _ = writeln!(out, "method = {:?}", s.method);
        let _ = writeln!(out, "fingerprint = {:?}", s.fingerprint);
        let _ = writeln!(out, "lookback = {}", s.lookback);
        let _ = writeln!(out, "horizon = {}", s.horizon);
        let _ = writeln!(out, "stride = {}", s.stride);
        let _ = writeln!(out, "ablation = {:?}", s.ablation);
        let _ = writeln!(out, "windows = {}", s.windows);
        let _ = writeln!(out, "failed_windows = {}", s.failed_windows);
        let _ = writeln!(out, "partial = {}", s.partial);
        let _ = writeln!(out, "mse = {}", fmt_metric(s.mse));
        let _ = writeln!(out, "mae = {}", fmt_metric(s.mae));
        out
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from("anchor,step,truth,pred\n");
        for w in self.windows.iter().filter(|w| w.error.is_none()) {
            for (step, (t, p)) in w.truth.iter().zip(&w.forecast).enumerate() {
                let _ = writeln!(out, "{},{},{},{}", w.anchor, step + 1, t, p);
            }
        }
        out
    }

    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}",
            sanitize(&self.dataset),
            sanitize(&self.method),
            sanitize(&self.fingerprint)
        )
    }

    /// Writes `<stem>.summary` and `<stem>.windows.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.file_stem();
        let summary = dir.join(format!("{stem}.summary"));
        let windows = dir.join(format!("{stem}.windows.csv"));
        std::fs::write(&summary, self.summary_text()).map_err(|e| Error::io(&summary, e))?;
        std::fs::write(&windows, self.windows_csv()).map_err(|e| Error::io(&windows, e))?;
        Ok((summary, windows))
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        "nan".into()
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Pooled MSE and MAE over the successful windows.
pub fn pooled_metrics(windows: &[WindowRecord]) -> (f64, f64) {
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    for w in windows.iter().filter(|w| w.error.is_none()) {
        se += w.squared_errors().iter().sum::<f64>();
        ae += w.absolute_errors().iter().sum::<f64>();
        n += w.forecast.len();
    }
    if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (se / n as f64, ae / n as f64)
    }
}

/// Forecasts every test-split window and scores it.
pub fn evaluate_method(ctx: EvalContext<'_>, method: &Method, config: &EvalConfig) -> Result<EvalReport> {
    let started = Instant::now();
    let ds = ctx.dataset;
    let (h, l) = (config.profile.lookback(), config.profile.horizon());
    let stride = config.stride();
    let anchors = window_anchors(ds.splits.test.clone(), h, l, stride)?;
    let values = ds.endogenous.values();
    let period = ds.frequency.seasonal_period();

    if matches!(method, Method::AuxiliaryOnly | Method::Session { .. }) {
        if let Some(lib) = ctx.library {
            if lib.config.lookback != h || lib.config.horizon != l {
                return Err(Error::invalid(
                    "case library",
                    format!(
                        "built for H={} L={} but evaluation uses H={h} L={l}",
                        lib.config.lookback, lib.config.horizon
                    ),
                ));
            }
        } else if matches!(method, Method::AuxiliaryOnly) {
            return Err(Error::invalid("method", "auxiliary evaluation needs a case library"));
        }
    }

    let results: Vec<(WindowRecord, Option<ForecastSession>)> = anchors
        .par_iter()
        .map(|&anchor| {
            let lookback = &values[anchor + 1 - h..=anchor];
            let truth = values[anchor + 1..anchor + 1 + l].to_vec();
            let (forecast, session) = match method {
                Method::Baseline(spec) => (spec.fit_predict(lookback, l, period), None),
                Method::External(f) => (f.forecast(lookback, l, period), None),
                Method::AuxiliaryOnly => {
                    let lib = ctx.library.expect("checked above");
                    (
                        retrieve(lib, lookback, &RetrievalConfig::default())
                            .map(|r| r.auxiliary_forecast),
                        None,
                    )
                }
                Method::Session { backends, config: sc } => {
                    let task = ForecastTask::new(ds, config.profile, anchor);
                    let res = SessionResources {
                        dataset: ds,
                        library: ctx.library,
                        store: ctx.store,
                    };
                    match run_session(&task, res, backends, sc) {
                        Ok(s) => (Ok(s.final_forecast.clone()), Some(s)),
                        Err(e) => (Err(e), None),
                    }
                }
            };
            let record = match forecast {
                Ok(f) if f.len() == l && f.iter().all(|v| v.is_finite()) => WindowRecord {
                    anchor,
                    forecast: f,
                    truth,
                    error: None,
                },
                Ok(f) => WindowRecord {
                    anchor,
                    forecast: Vec::new(),
                    truth,
                    error: Some(format!("invalid forecast of length {}", f.len())),
                },
                Err(e) => WindowRecord {
                    anchor,
                    forecast: Vec::new(),
                    truth,
                    error: Some(e.to_string()),
                },
            };
            (record, session)
        })
        .collect();

    let mut windows = Vec::with_capacity(results.len());
    let mut sessions = Vec::new();
    for (w, s) in results {
        windows.push(w);
        sessions.extend(s);
    }
    let (mse, mae) = pooled_metrics(&windows);
    let partial = windows.iter().any(|w| w.error.is_some());
    Ok(EvalReport {
        dataset: ds.name().to_string(),
        method: method.name(),
        fingerprint: config.fingerprint.clone(),
        lookback: h,
        horizon: l,
        stride,
        ablation: method.ablation(),
        windows,
        mse,
        mae,
        partial,
        wall_time_ms: started.elapsed().as_millis() as u64,
        sessions,
    })
}

/// Full run plus one run per flag.
pub struct AblationMatrix {
    pub reports: Vec<EvalReport>,
}

impl AblationMatrix {
    /// Aligned text table: one row per configuration.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self
            .reports
            .iter()
            .map(|r| r.ablation.label().len())
            .max()
            .unwrap_or(0)
            .max("configuration".len());
        let _ = writeln!(out, "{:<width$}  {:>14}  {:>14}  partial", "configuration", "MSE", "MAE");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<width$}  {:>14.6}  {:>14.6}  {}",
                r.ablation.label(),
                r.mse,
                r.mae,
                r.partial
            );
        }
        out
    }
}

pub fn run_ablation_matrix(
    ctx: EvalContext<'_>,
    backends: &Backends,
    base: &SessionConfig,
    flags: &[AblationFlag],
    config: &EvalConfig,
) -> Result<AblationMatrix> {
    let mut reports = Vec::with_capacity(flags.len() + 1);
    let mut variants = vec![base.ablation.clone()];
    for flag in flags {
        let mut a = base.ablation.clone();
        a.flags.insert(*flag);
        variants.push(a);
    }
    for ablation in variants {
        let method = Method::Session {
            backends: backends.clone(),
            config: SessionConfig {
                ablation,
                ..base.clone()
            },
        };
        reports.push(evaluate_method(ctx, &method, config)?);
    }
    Ok(AblationMatrix { reports })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureUsage {
    pub feature: String,
    pub channel: String,
    /// Fraction of sessions that selected the feature for the channel.
    pub frequency: f64,
}

pub fn emit_feature_usage(sessions: &[ForecastSession]) -> Vec<FeatureUsage> {
    if sessions.is_empty() {
        return Vec::new();
    }
    let channels: BTreeSet<&String> = sessions
        .iter()
        .flat_map(|s| s.feature_usage_log.keys())
        .collect();
    let mut rows = Vec::new();
    for feature in crate::features::Feature::ALL {
        for channel in &channels {
            let count = sessions
                .iter()
                .filter(|s| {
                    s.feature_usage_log
                        .get(*channel)
                        .is_some_and(|set| set.contains(feature.name()))
                })
                .count();
            rows.push(FeatureUsage {
                feature: feature.name().to_string(),
                channel: channel.to_string(),
                frequency: count as f64 / sessions.len() as f64,
            });
        }
    }
    rows
}

/// Long-format CSV: `feature,channel,frequency`.
pub fn feature_usage_csv(rows: &[FeatureUsage]) -> String {
    let mut out = String::from("feature,channel,frequency\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.feature, r.channel, r.frequency);
    }
    out
}

/// Published long-horizon reference scores for the statistical baselines
/// (dataset family, method, MSE, MAE).
pub const PROTOCOL_REFERENCE: [(&str, &str, f64, f64); 4] = [
    ("ETTh", "snaive", 10.753, 2.469),
    ("ETTh", "historic_average", 10.309, 2.571),
    ("ETTm", "snaive", 2.746, 1.186),
    ("ETTm", "historic_average", 3.298, 1.306),
];

pub const PROTOCOL_GAP_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolRow {
    pub dataset: String,
    pub method: String,
    pub mse: f64,
    pub reference_mse: f64,
    pub mse_gap: f64,
    pub mae: f64,
    pub reference_mae: f64,
    pub mae_gap: f64,
    /// Either relative gap exceeds the threshold.
    pub flagged: bool,
    pub stride: usize,
}

/// Compares a report with the reference table; `None` when no reference
/// row matches the dataset and method.
pub fn protocol_check(report: &EvalReport) -> Option<ProtocolRow> {
    let family = if report.dataset.starts_with("ETTh") {
        "ETTh"
    } else if report.dataset.starts_with("ETTm") {
        "ETTm"
    } else {
        return None;
    };
    let (_, _, ref_mse, ref_mae) = PROTOCOL_REFERENCE
        .iter()
        .find(|(d, m, _, _)| *d == family && *m == report.method)?;
    let mse_gap = (report.mse - ref_mse).abs() / ref_mse;
    let mae_gap = (report.mae - ref_mae).abs() / ref_mae;
    Some(ProtocolRow {
        dataset: report.dataset.clone(),
        method: report.method.clone(),
        mse: report.mse,
        reference_mse: *ref_mse,
        mse_gap,
        mae: report.mae,
        reference_mae: *ref_mae,
        mae_gap,
        flagged: !(mse_gap <= PROTOCOL_GAP_THRESHOLD && mae_gap <= PROTOCOL_GAP_THRESHOLD),
        stride: report.stride,
    })
}

pub fn protocol_table(rows: &[ProtocolRow]) -> String {
    let mut out = String::from(
        "dataset  method            MSE (ref)           gap     MAE (ref)           gap     flag\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8} {:<17} {:>8.3} ({:>7.3})  {:>6.1}%  {:>7.3} ({:>6.3})  {:>6.1}%  {}",
            r.dataset,
            r.method,
            r.mse,
            r.reference_mse,
            100.0 * r.mse_gap,
            r.mae,
            r.reference_mae,
            100.0 * r.mae_gap,
            if r.flagged { "GAP>20% (stride/scale assumptions)" } else { "ok" }
        );
    }
    out
}

/// Side-by-side comparison: one row per method, MSE and MAE per dataset.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
    let mut by_method: BTreeMap<&str, BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
    for r in reports {
        by_method
            .entry(r.method.as_str())
            .or_default()
            .insert(r.dataset.as_str(), (r.mse, r.mae));
    }
    let mut out = format!("{:<28}", "method");
    for d in &datasets {
        let _ = write!(out, " {:>12} {:>12}", format!("{d} MSE"), format!("{d} MAE"));
    }
    out.push('\n');
    for (method, cells) in by_method {
        let _ = write!(out, "{method:<28}");
        for d in &datasets {
            match cells.get(d) {
                Some((m, a)) => {
                    let _ = write!(out, " {m:>12.4} {a:>12.4}");
                }
                None => {
                    let _ = write!(out, " {:>12} {:>12}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
