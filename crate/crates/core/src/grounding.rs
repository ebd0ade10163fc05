//! Context bundles and their wire format.
//!
//! A [`ContextBundle`] gathers everything a reasoning backend sees for one
//! forecast: task text, data profile, the numeric series block, selected
//! features, knowledge, context events and case-library evidence.
//! [`serialize_prompt`] renders it into a fixed section layout; numbers use
//! six significant digits so identical bundles give identical bytes.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::caselib::{NeighborCase, RetrievalResult};
use crate::domain::{Dataset, ForecastTask, TaskInputs};
use crate::error::{Error, Result};
use crate::features::Feature;
use crate::knowledge::{ContextEvent, KnowledgeEntry};

/// Prompt sections in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    Task,
    DataProfile,
    Series,
    Features,
    Knowledge,
    ContextEvents,
    AuxiliaryForecast,
    NeighborCase,
    ReflectionFeedback,
    PartialForecast,
    OutputFormat,
}

impl Section {
    pub const ALL: [Section; 11] = [
        Section::Task,
        Section::DataProfile,
        Section::Series,
        Section::Features,
        Section::Knowledge,
        Section::ContextEvents,
        Section::AuxiliaryForecast,
        Section::NeighborCase,
        Section::ReflectionFeedback,
        Section::PartialForecast,
        Section::OutputFormat,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Section::Task => "[TASK]",
            Section::DataProfile => "[DATA PROFILE]",
            Section::Series => "[SERIES]",
            Section::Features => "[FEATURES]",
            Section::Knowledge => "[KNOWLEDGE]",
            Section::ContextEvents => "[CONTEXT EVENTS]",
            Section::AuxiliaryForecast => "[AUXILIARY FORECAST]",
            Section::NeighborCase => "[NEIGHBOR CASE]",
            Section::ReflectionFeedback => "[REFLECTION FEEDBACK]",
            Section::PartialForecast => "[PARTIAL FORECAST]",
            Section::OutputFormat => "[OUTPUT FORMAT]",
        }
    }
}

/// One ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationFlag {
    NoFeatures,
    NoKnowledge,
    NoCaselib,
    NoReflection,
    NoExo,
    NoTimestamps,
    NoAttributes,
    NoContext,
    TwoStage,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 9] = [
        AblationFlag::NoFeatures,
        AblationFlag::NoKnowledge,
        AblationFlag::NoCaselib,
        AblationFlag::NoReflection,
        AblationFlag::NoExo,
        AblationFlag::NoTimestamps,
        AblationFlag::NoAttributes,
        AblationFlag::NoContext,
        AblationFlag::TwoStage,
    ];

    /// The standard ablation matrix (everything except `no-context`).
    pub const MATRIX: [AblationFlag; 8] = [
        AblationFlag::NoFeatures,
        AblationFlag::NoKnowledge,
        AblationFlag::NoCaselib,
        AblationFlag::NoReflection,
        AblationFlag::NoExo,
        AblationFlag::NoTimestamps,
        AblationFlag::NoAttributes,
        AblationFlag::TwoStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::NoFeatures => "no-features",
            AblationFlag::NoKnowledge => "no-knowledge",
            AblationFlag::NoCaselib => "no-caselib",
            AblationFlag::NoReflection => "no-reflection",
            AblationFlag::NoExo => "no-exo",
            AblationFlag::NoTimestamps => "no-timestamps",
            AblationFlag::NoAttributes => "no-attributes",
            AblationFlag::NoContext => "no-context",
            AblationFlag::TwoStage => "two-stage",
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationFlag::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::invalid("ablation", format!("unknown flag `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub flags: BTreeSet<AblationFlag>,
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_flags(flags: impl IntoIterator<Item = AblationFlag>) -> Self {
        Self {
            flags: flags.into_iter().collect(),
        }
    }

    pub fn has(&self, flag: AblationFlag) -> bool {
        self.flags.contains(&flag)
    }

    /// Sections removed from every prompt under these flags.
    pub fn masked_sections(&self) -> BTreeSet<Section> {
        let mut out = BTreeSet::new();
        for flag in &self.flags {
            match flag {
                AblationFlag::NoFeatures => {
                    out.insert(Section::Features);
                }
                AblationFlag::NoKnowledge => {
                    out.insert(Section::Knowledge);
                }
                AblationFlag::NoCaselib => {
                    out.insert(Section::AuxiliaryForecast);
                    out.insert(Section::NeighborCase);
                }
                AblationFlag::NoReflection => {
                    out.insert(Section::ReflectionFeedback);
                }
                AblationFlag::NoContext => {
                    out.insert(Section::ContextEvents);
                }
                _ => {}
            }
        }
        out
    }

    pub fn label(&self) -> String {
        if self.flags.is_empty() {
            return "full".into();
        }
        self.flags.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
    }
}

/// Selected feature values of one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSelection {
    pub channel: String,
    pub features: Vec<(Feature, f64)>,
}

/// The slice of the horizon a generator call must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputRequest {
    /// Zero-based first horizon step.
    pub start: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExogenousColumn {
    pub name: String,
    /// `H + L` values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextBundle {
    pub task_prompt: String,
    pub data_profile: String,
    pub lookback_len: usize,
    pub horizon_len: usize,
    /// `H + L` instants, absent under `no-timestamps`.
    pub timestamps: Option<Vec<NaiveDateTime>>,
    pub exogenous: Vec<ExogenousColumn>,
    pub endogenous_name: String,
    pub endogenous: Vec<f64>,
    pub selected_features: Vec<ChannelSelection>,
    pub knowledge: Vec<KnowledgeEntry>,
    pub context_events: Vec<ContextEvent>,
    pub auxiliary_forecast: Option<Vec<f64>>,
    pub neighbor_case: Option<NeighborCase>,
    pub feedback: Vec<String>,
    /// Values already produced by an earlier call of a two-stage forecast.
    pub partial_forecast: Option<Vec<f64>>,
    pub output: OutputRequest,
    pub ablation_mask: BTreeSet<Section>,
}

impl ContextBundle {
    /// Copy asking for `count` steps from `start`, with earlier values shown.
    pub fn for_range(&self, start: usize, count: usize, partial: Option<Vec<f64>>) -> Self {
        let mut next = self.clone();
        next.output = OutputRequest { start, count };
        next.partial_forecast = partial;
        next
    }

    pub fn with_feedback(&self, feedback: Vec<String>) -> Self {
        let mut next = self.clone();
        if !next.ablation_mask.contains(&Section::ReflectionFeedback) {
            next.feedback = feedback;
        }
        next
    }
}

/// Everything `assemble_bundle` draws on.
pub struct BundleSources<'a> {
    pub task: &'a ForecastTask,
    pub dataset: &'a Dataset,
    pub inputs: &'a TaskInputs,
    pub features: &'a [ChannelSelection],
    pub knowledge: &'a [KnowledgeEntry],
    pub context: &'a [ContextEvent],
    pub retrieval: Option<&'a RetrievalResult>,
}

fn assembly(section: &'static str, reason: impl Into<String>) -> Error {
    Error::Assembly {
        section,
        reason: reason.into(),
    }
}

/// Renders the dataset profile; `exogenous = false` lists only the target.
pub fn render_data_profile(dataset: &Dataset, attributes: bool, exogenous: bool) -> String {
    let p = &dataset.profile;
    let mut out = format!("dataset: {}\nfrequency: {}", p.dataset_name, p.frequency_text);
    if attributes {
        if !p.domain_description.is_empty() {
            let _ = write!(out, "\ndomain: {}", p.domain_description);
        }
        out.push_str("\nvariables:");
        for channel in dataset.channels() {
            if !exogenous && channel.name != dataset.endogenous.name {
                continue;
            }
            let desc = p
                .variable_descriptions
                .get(&channel.name)
                .map(String::as_str)
                .unwrap_or("");
            let _ = write!(out, "\n  - {}: {}", channel.name, desc);
        }
    }
    out
}

pub fn assemble_bundle(src: &BundleSources<'_>, ablation: &Ablation) -> Result<ContextBundle> {
    let (h, l) = (src.task.lookback_len, src.task.horizon_len);
    let d = src.dataset.exogenous.len();
    let inputs = src.inputs;
    if inputs.endogenous.len() != h {
        return Err(assembly(
            "SERIES",
            format!("endogenous block has {} values, expected {h}", inputs.endogenous.len()),
        ));
    }
    if inputs.timestamps.len() != h + l {
        return Err(assembly(
            "SERIES",
            format!("{} timestamps, expected {}", inputs.timestamps.len(), h + l),
        ));
    }
    if inputs.exogenous.len() != d {
        return Err(assembly(
            "SERIES",
            format!("{} exogenous rows, expected {d}", inputs.exogenous.len()),
        ));
    }
    if let Some(row) = inputs.exogenous.iter().position(|r| r.len() != h + l) {
        return Err(assembly(
            "SERIES",
            format!(
                "exogenous row {row} has {} values, expected {}",
                inputs.exogenous[row].len(),
                h + l
            ),
        ));
    }
    if let Some(r) = src.retrieval {
        if r.auxiliary_forecast.len() != l {
            return Err(assembly(
                "AUXILIARY FORECAST",
                format!("{} values, expected {l}", r.auxiliary_forecast.len()),
            ));
        }
        if r.neighbor.lookback.len() != h || r.neighbor.future.len() != l {
            return Err(assembly(
                "NEIGHBOR CASE",
                format!(
                    "neighbor has {} + {} values, expected {h} + {l}",
                    r.neighbor.lookback.len(),
                    r.neighbor.future.len()
                ),
            ));
        }
    }

    let mask = ablation.masked_sections();
    let no_exo = ablation.has(AblationFlag::NoExo);
    let endo_name = src.dataset.endogenous.name.clone();

    let exogenous = if no_exo {
        Vec::new()
    } else {
        src.dataset
            .exogenous
            .iter()
            .zip(&inputs.exogenous)
            .map(|(s, v)| ExogenousColumn {
                name: s.name.clone(),
                values: v.clone(),
            })
            .collect()
    };
    let selected_features = if mask.contains(&Section::Features) {
        Vec::new()
    } else {
        src.features
            .iter()
            .filter(|c| !no_exo || c.channel == endo_name)
            .cloned()
            .collect()
    };
    let caselib = !mask.contains(&Section::AuxiliaryForecast);

    Ok(ContextBundle {
        task_prompt: src.task.task_prompt.clone(),
        data_profile: render_data_profile(
            src.dataset,
            !ablation.has(AblationFlag::NoAttributes),
            !no_exo,
        ),
        lookback_len: h,
        horizon_len: l,
        timestamps: (!ablation.has(AblationFlag::NoTimestamps)).then(|| inputs.timestamps.clone()),
        exogenous,
        endogenous_name: endo_name,
        endogenous: inputs.endogenous.clone(),
        selected_features,
        knowledge: if mask.contains(&Section::Knowledge) {
            Vec::new()
        } else {
            src.knowledge.to_vec()
        },
        context_events: if mask.contains(&Section::ContextEvents) {
            Vec::new()
        } else {
            src.context.to_vec()
        },
        auxiliary_forecast: src
            .retrieval
            .filter(|_| caselib)
            .map(|r| r.auxiliary_forecast.clone()),
        neighbor_case: src.retrieval.filter(|_| caselib).map(|r| r.neighbor.clone()),
        feedback: Vec::new(),
        partial_forecast: None,
        output: OutputRequest { start: 0, count: l },
        ablation_mask: mask,
    })
}

/// Six significant digits, trailing zeros kept; scientific notation outside
/// `1e-4 <= |x| < 1e6`.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let x = if x == 0.0 { 0.0 } else { x };
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if x == 0.0 || (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

fn join_sig6(values: &[f64]) -> String {
    values.iter().map(|v| fmt_sig6(*v)).collect::<Vec<_>>().join(", ")
}

fn fmt_time(t: &NaiveDateTime) -> String {
    t.format(crate::TIMESTAMP_FORMAT).to_string()
}

const NONE_MARKER: &str = "(none)";

pub fn serialize_prompt(bundle: &ContextBundle) -> String {
    let mut out = String::new();
    let mut section = |s: Section, body: String| {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(s.header());
        out.push('\n');
        out.push_str(body.trim_end());
        out.push('\n');
    };
    let shown = |s: Section| !bundle.ablation_mask.contains(&s);

    section(Section::Task, bundle.task_prompt.clone());
    section(Section::DataProfile, bundle.data_profile.clone());
    section(Section::Series, render_series(bundle));

    if shown(Section::Features) {
        let mut body = String::new();
        for c in &bundle.selected_features {
            let _ = writeln!(body, "channel {}:", c.channel);
            for (f, v) in &c.features {
                let _ = writeln!(body, "  {}: {}", f.name(), fmt_sig6(*v));
            }
        }
        section(Section::Features, or_none(body));
    }
    if shown(Section::Knowledge) {
        let mut body = String::new();
        for e in &bundle.knowledge {
            let _ = write!(body, "- [{}] {}", e.kind, e.entry_id);
            if !e.tags.is_empty() {
                let _ = write!(body, " (tags: {})", e.tags.join(", "));
            }
            let _ = writeln!(body, ": {}", e.body.trim());
        }
        section(Section::Knowledge, or_none(body));
    }
    if shown(Section::ContextEvents) {
        let mut body = String::new();
        for e in &bundle.context_events {
            let _ = writeln!(
                body,
                "- {} [{}] {} to {}: {}",
                e.event_id,
                e.category,
                fmt_time(&e.start),
                fmt_time(&e.end),
                e.body.trim()
            );
        }
        section(Section::ContextEvents, or_none(body));
    }
    if shown(Section::AuxiliaryForecast) {
        let body = match &bundle.auxiliary_forecast {
            Some(aux) => format!(
                "Weighted forecast from similar historical cases ({} values):\n{}",
                aux.len(),
                join_sig6(aux)
            ),
            None => String::new(),
        };
        section(Section::AuxiliaryForecast, or_none(body));
    }
    if shown(Section::NeighborCase) {
        let body = match &bundle.neighbor_case {
            Some(n) => format!(
                "Most similar historical window (distance {}):\nlookback: {}\nfuture: {}",
                fmt_sig6(n.distance),
                join_sig6(&n.lookback),
                join_sig6(&n.future)
            ),
            None => String::new(),
        };
        section(Section::NeighborCase, or_none(body));
    }
    if shown(Section::ReflectionFeedback) && !bundle.feedback.is_empty() {
        let body = bundle
            .feedback
            .iter()
            .enumerate()
            .map(|(i, f)| format!("review {}: {}", i + 1, f.trim()))
            .collect::<Vec<_>>()
            .join("\n");
        section(Section::ReflectionFeedback, body);
    }
    if let Some(partial) = &bundle.partial_forecast {
        section(
            Section::PartialForecast,
            format!(
                "Forecast steps 1 to {} were already produced:\n{}",
                partial.len(),
                join_sig6(partial)
            ),
        );
    }
    let OutputRequest { start, count } = bundle.output;
    let range = if start == 0 && count == bundle.horizon_len {
        String::new()
    } else {
        format!(" for forecast steps {} to {}", start + 1, start + count)
    };
    section(
        Section::OutputFormat,
        format!(
            "Reply with exactly {count} values{range}, one number per line, inside a single fenced \
             block delimited by ``` lines.\nAfter the block write a REASONING: section explaining \
             the forecast step by step."
        ),
    );
    out
}

fn or_none(body: String) -> String {
    if body.trim().is_empty() {
        NONE_MARKER.to_string()
    } else {
        body
    }
}

fn render_series(bundle: &ContextBundle) -> String {
    let (h, l) = (bundle.lookback_len, bundle.horizon_len);
    let mut columns: Vec<&str> = Vec::new();
    if bundle.timestamps.is_some() {
        columns.push("timestamp");
    }
    columns.extend(bundle.exogenous.iter().map(|c| c.name.as_str()));
    columns.push(&bundle.endogenous_name);
    let mut out = format!(
        "{h} observed rows then {l} forecast rows ('?' marks values to predict)\n{}\n",
        columns.join(",")
    );
    for row in 0..h + l {
        let mut cells: Vec<String> = Vec::with_capacity(columns.len());
        if let Some(ts) = &bundle.timestamps {
            cells.push(fmt_time(&ts[row]));
        }
        cells.extend(bundle.exogenous.iter().map(|c| fmt_sig6(c.values[row])));
        cells.push(if row < h {
            fmt_sig6(bundle.endogenous[row])
        } else {
            "?".to_string()
        });
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of a prompt document.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseParseError {
    #[error("no fenced ``` block found in the response")]
    MissingBlock,
    #[error("expected exactly {expected} values, found {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("token `{token}` is not a finite number")]
    NonNumeric { token: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedForecast {
    pub values: Vec<f64>,
    /// Response text outside the first fenced block.
    pub cot: String,
}

/// Extracts the first fenced block, parses exactly `expected` finite numbers
/// (separated by newlines, whitespace or commas) and keeps the rest as CoT.
pub fn parse_forecast_response(
    text: &str,
    expected: usize,
) -> std::result::Result<ParsedForecast, ResponseParseError> {
    let open = text.find("```").ok_or(ResponseParseError::MissingBlock)?;
    // an info string may follow the opening fence on the same line
    let body_start = text[open + 3..]
        .find('\n')
        .map(|i| open + 3 + i + 1)
        .ok_or(ResponseParseError::MissingBlock)?;
    let close = text[body_start..]
        .find("```")
        .map(|i| body_start + i)
        .ok_or(ResponseParseError::MissingBlock)?;

    let mut values = Vec::with_capacity(expected);
    for token in text[body_start..close]
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
    {
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ => {
                return Err(ResponseParseError::NonNumeric {
                    token: token.to_string(),
                })
            }
        }
    }
    if values.len() != expected {
        return Err(ResponseParseError::WrongCount {
            expected,
            got: values.len(),
        });
    }
    let cot = format!("{}\n{}", &text[..open], &text[close + 3..])
        .trim()
        .to_string();
    Ok(ParsedForecast { values, cot })
}

/// Formats a forecast in the documented response grammar at full precision.
pub fn render_forecast_response(values: &[f64], reasoning: &str) -> String {
    let mut out = String::from("```\n");
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    out.push_str("```\nREASONING: ");
    out.push_str(reasoning);
    out.push('\n');
    out
}
