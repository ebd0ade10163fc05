//! Investigator, generator and reflector orchestration.
//!
//! One session runs: select features, retrieve from the case library,
//! assemble the bundle, generate, reflect. A `revise` verdict appends the
//! feedback to the next bundle and loops, up to `max_iterations`.

mod backend;
mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

pub use backend::{
    parse_stub, AlwaysAccept, AlwaysRevise, BackendRequest, BackendSpec, EchoAuxiliary, Failing,
    ReasoningBackend, Role, ScriptedBackend, ScriptedReflector, ECHO_REASONING,
};
pub use remote::{RemoteBackend, RemoteConfig, Semaphore};

use crate::caselib::{retrieve, CaseLibrary, RetrievalConfig, RetrievalResult};
use crate::domain::{slice_task_inputs, Dataset, ForecastTask};
use crate::error::{Error, Result};
use crate::features::{extract_dataset_features, ChannelFeatures, Feature};
use crate::grounding::{
    assemble_bundle, parse_forecast_response, prompt_hash, serialize_prompt, AblationFlag,
    BundleSources, ChannelSelection, ContextBundle, Ablation, Section,
};
use crate::knowledge::{KnowledgeStore, DEFAULT_KNOWLEDGE_BUDGET};

pub const DEFAULT_MAX_ITERATIONS: usize = 3;
pub const DEFAULT_PARSE_RETRIES: usize = 2;
/// Seasonal features survive rule-based selection above this strength.
pub const SEASONAL_KEEP_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    #[default]
    StaticAll,
    RuleBased,
    BackendAdvised,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-all" => Ok(Self::StaticAll),
            "rule-based" => Ok(Self::RuleBased),
            "backend-advised" => Ok(Self::BackendAdvised),
            _ => Err(Error::invalid("selection policy", format!("unknown policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_iterations: usize,
    /// Repair re-prompts after a malformed generator reply.
    pub parse_retries: usize,
    pub selection: SelectionPolicy,
    pub ablation: Ablation,
    pub knowledge_budget: usize,
    pub retrieval: RetrievalConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            parse_retries: DEFAULT_PARSE_RETRIES,
            selection: SelectionPolicy::StaticAll,
            ablation: Ablation::none(),
            knowledge_budget: DEFAULT_KNOWLEDGE_BUDGET,
            retrieval: RetrievalConfig::default(),
        }
    }
}

#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn ReasoningBackend>,
    pub reflector: Arc<dyn ReasoningBackend>,
    /// Consulted by the backend-advised selection policy; defaults to the
    /// generator.
    pub investigator: Option<Arc<dyn ReasoningBackend>>,
}

impl Backends {
    pub fn new(generator: Arc<dyn ReasoningBackend>, reflector: Arc<dyn ReasoningBackend>) -> Self {
        Self {
            generator,
            reflector,
            investigator: None,
        }
    }

    /// EchoAuxiliary generator with an AlwaysAccept reflector.
    pub fn echo() -> Self {
        Self::new(Arc::new(EchoAuxiliary), Arc::new(AlwaysAccept))
    }
}

/// Shared read-only inputs of a session.
#[derive(Clone, Copy)]
pub struct SessionResources<'a> {
    pub dataset: &'a Dataset,
    pub library: Option<&'a CaseLibrary>,
    pub store: &'a KnowledgeStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub plausibility: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reflection {
    pub verdict: Verdict,
    pub feedback: String,
    pub scores: Option<Scores>,
    /// Set when the reply did not follow the verdict grammar.
    pub malformed: bool,
    /// Set when the reflector could not be reached.
    pub transport_failure: bool,
}

/// One backend exchange of the generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationCall {
    pub prompt: String,
    pub prompt_hash: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub index: usize,
    pub calls: Vec<GenerationCall>,
    /// The raw forecast, absent when generation failed.
    pub forecast: Option<Vec<f64>>,
    pub cot: String,
    pub reflection_prompt: Option<String>,
    pub reflection_response: Option<String>,
    pub reflection: Option<Reflection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastSession {
    pub task: ForecastTask,
    pub generator: String,
    pub reflector: String,
    pub bundles: Vec<ContextBundle>,
    pub attempts: Vec<Attempt>,
    pub iteration_count: usize,
    pub final_forecast: Vec<f64>,
    pub final_explanation: String,
    /// Attempt that supplied the final forecast; `None` on fallback.
    pub final_attempt: Option<usize>,
    /// Why the fallback forecast was used.
    pub failure: Option<String>,
    pub auxiliary_forecast: Option<Vec<f64>>,
    pub retrieval: Option<RetrievalResult>,
    /// Channel name to the feature names selected for it.
    pub feature_usage_log: BTreeMap<String, BTreeSet<String>>,
    pub warnings: Vec<String>,
    /// Milliseconds per attempt; written to session logs only.
    #[serde(skip)]
    pub timings_ms: Vec<u64>,
}

impl ForecastSession {
    pub fn verdicts(&self) -> Vec<Verdict> {
        self.attempts
            .iter()
            .filter_map(|a| a.reflection.as_ref().map(|r| r.verdict))
            .collect()
    }

    pub fn generator_calls(&self) -> usize {
        self.attempts.iter().map(|a| a.calls.len()).sum()
    }

    /// Every prompt sent to the generator, in order.
    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.attempts
            .iter()
            .flat_map(|a| a.calls.iter().map(|c| c.prompt.as_str()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Applies `policy` to every channel's features.
pub fn investigate(
    features: &[ChannelFeatures],
    policy: SelectionPolicy,
    investigator: Option<&dyn ReasoningBackend>,
    call_index: usize,
    attempt: usize,
    warnings: &mut Vec<String>,
) -> Vec<ChannelSelection> {
    let advised: Option<BTreeSet<Feature>> = match (policy, investigator) {
        (SelectionPolicy::BackendAdvised, Some(backend)) => {
            let prompt = investigator_prompt(features);
            let request = BackendRequest {
                role: Role::Investigator,
                prompt: &prompt,
                bundle: None,
                call_index,
                attempt,
            };
            match backend.complete(&request) {
                Ok(reply) => Some(parse_feature_reply(&reply, warnings)),
                Err(e) => {
                    warnings.push(format!("feature selection fell back to all features: {e}"));
                    None
                }
            }
        }
        _ => None,
    };
    features
        .iter()
        .map(|c| {
            let fv = &c.features;
            let keep = |f: Feature| match policy {
                SelectionPolicy::StaticAll => true,
                SelectionPolicy::RuleBased => {
                    !fv.is_degenerate(f)
                        && (!f.is_seasonal() || fv.get(Feature::SeasonalStrength) > SEASONAL_KEEP_THRESHOLD)
                }
                SelectionPolicy::BackendAdvised => advised.as_ref().is_none_or(|set| set.contains(&f)),
            };
            ChannelSelection {
                channel: c.channel.clone(),
                features: fv.iter().filter(|(f, _)| keep(*f)).collect(),
            }
        })
        .collect()
}

fn investigator_prompt(features: &[ChannelFeatures]) -> String {
    let mut out = String::from("[FEATURES]\n");
    for c in features {
        out.push_str(&format!("channel {}:\n", c.channel));
        for (f, v) in c.features.iter() {
            out.push_str(&format!("  {}: {}\n", f.name(), crate::grounding::fmt_sig6(v)));
        }
    }
    out.push_str(
        "\n[OUTPUT FORMAT]\nChoose the features most useful for forecasting. Reply with one line: \
         FEATURES: name1, name2, ...\n",
    );
    out
}

fn parse_feature_reply(reply: &str, warnings: &mut Vec<String>) -> BTreeSet<Feature> {
    let line = reply
        .lines()
        .find_map(|l| l.trim().strip_prefix("FEATURES:"))
        .unwrap_or("");
    let mut out = BTreeSet::new();
    for name in line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match Feature::from_name(name) {
            Some(f) => {
                out.insert(f);
            }
            None => {
                warn!("investigator named unknown feature `{name}`");
                warnings.push(format!("dropped unknown feature `{name}`"));
            }
        }
    }
    out
}

/// Outcome of one generator exchange sequence.
struct Generated {
    values: Option<Vec<f64>>,
    cot: String,
    error: Option<String>,
}

/// Prompts for `bundle.output.count` values, re-prompting with the parse
/// error up to `parse_retries` times.
fn generate_range(
    bundle: &ContextBundle,
    backend: &dyn ReasoningBackend,
    parse_retries: usize,
    call_counter: &mut usize,
    attempt: usize,
    calls: &mut Vec<GenerationCall>,
) -> Generated {
    let base = serialize_prompt(bundle);
    let mut last_error: Option<String> = None;
    for _ in 0..=parse_retries {
        let prompt = match &last_error {
            None => base.clone(),
            Some(e) => format!(
                "{base}\nYour previous reply could not be used ({e}). Reply again following the \
                 output format exactly.\n"
            ),
        };
        let request = BackendRequest {
            role: Role::Generator,
            prompt: &prompt,
            bundle: Some(bundle),
            call_index: *call_counter,
            attempt,
        };
        *call_counter += 1;
        let reply = backend.complete(&request);
        let hash = prompt_hash(&prompt);
        match reply {
            Err(e) => {
                calls.push(GenerationCall {
                    prompt,
                    prompt_hash: hash,
                    response: None,
                    error: Some(e.to_string()),
                });
                return Generated {
                    values: None,
                    cot: String::new(),
                    error: Some(e.to_string()),
                };
            }
            Ok(text) => match parse_forecast_response(&text, bundle.output.count) {
                Ok(parsed) => {
                    calls.push(GenerationCall {
                        prompt,
                        prompt_hash: hash,
                        response: Some(text),
                        error: None,
                    });
                    return Generated {
                        values: Some(parsed.values),
                        cot: parsed.cot,
                        error: None,
                    };
                }
                Err(e) => {
                    calls.push(GenerationCall {
                        prompt,
                        prompt_hash: hash,
                        response: Some(text),
                        error: Some(e.to_string()),
                    });
                    last_error = Some(e.to_string());
                }
            },
        }
    }
    Generated {
        values: None,
        cot: String::new(),
        error: Some(format!(
            "unparseable after {} repair attempts: {}",
            parse_retries,
            last_error.unwrap_or_default()
        )),
    }
}

/// Runs the generator over the full horizon (or in two halves).
fn generate(
    bundle: &ContextBundle,
    backend: &dyn ReasoningBackend,
    two_stage: bool,
    parse_retries: usize,
    call_counter: &mut usize,
    attempt: usize,
    calls: &mut Vec<GenerationCall>,
) -> Generated {
    let l = bundle.horizon_len;
    if !two_stage || l < 2 {
        return generate_range(bundle, backend, parse_retries, call_counter, attempt, calls);
    }
    let first_len = l.div_ceil(2);
    let first = bundle.for_range(0, first_len, None);
    let head = generate_range(&first, backend, parse_retries, call_counter, attempt, calls);
    let Some(mut values) = head.values else {
        return head;
    };
    let second = bundle.for_range(first_len, l - first_len, Some(values.clone()));
    let tail = generate_range(&second, backend, parse_retries, call_counter, attempt, calls);
    match tail.values {
        Some(rest) => {
            values.extend(rest);
            Generated {
                values: Some(values),
                cot: format!("{}\n{}", head.cot, tail.cot).trim().to_string(),
                error: None,
            }
        }
        None => tail,
    }
}

pub fn reflection_prompt(bundle: &ContextBundle, forecast: &[f64], cot: &str) -> String {
    let base = serialize_prompt(bundle);
    let values = forecast
        .iter()
        .map(|v| crate::grounding::fmt_sig6(*v))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "{base}\n[CANDIDATE FORECAST]\n{values}\n\n[CANDIDATE REASONING]\n{}\n\n[REVIEW]\n\
         Part 1: judge whether the forecast is reliable and supported by the evidence above: its \
         deviation from the auxiliary forecast, whether its range is plausible given the look-back, \
         and whether it accounts for the context events.\n\
         Part 2: audit the reasoning step by step for hallucinated facts, circular arguments and \
         skipped steps.\n\
         Reply with:\nVERDICT: accept or revise\nFEEDBACK: <what to change>\n\
         SCORES: plausibility=<0-1> coherence=<0-1>\n",
        cot.trim()
    )
}

/// Parses the verdict grammar; anything unrecognized means revise.
pub fn parse_reflection(reply: &str) -> Reflection {
    let mut verdict = None;
    let mut feedback: Option<String> = None;
    let mut scores = None;
    let mut in_feedback = false;
    for line in reply.lines() {
        let t = line.trim();
        let upper = t.to_ascii_uppercase();
        if upper.starts_with("VERDICT:") {
            in_feedback = false;
            verdict = match t[8..].trim().to_ascii_lowercase().as_str() {
                "accept" => Some(Verdict::Accept),
                "revise" => Some(Verdict::Revise),
                _ => None,
            };
        } else if upper.starts_with("FEEDBACK:") {
            in_feedback = true;
            feedback = Some(t[9..].trim().to_string());
        } else if upper.starts_with("SCORES:") {
            in_feedback = false;
            scores = parse_scores(&t[7..]);
        } else if in_feedback && !t.is_empty() {
            let f = feedback.get_or_insert_with(String::new);
            f.push('\n');
            f.push_str(t);
        }
    }
    match verdict {
        Some(verdict) => Reflection {
            verdict,
            feedback: feedback.unwrap_or_default(),
            scores,
            malformed: false,
            transport_failure: false,
        },
        None => Reflection {
            verdict: Verdict::Revise,
            feedback: format!(
                "The previous review was malformed (no valid VERDICT line). {}",
                feedback.unwrap_or_default()
            )
            .trim()
            .to_string(),
            scores,
            malformed: true,
            transport_failure: false,
        },
    }
}

fn parse_scores(text: &str) -> Option<Scores> {
    let mut p = None;
    let mut c = None;
    for part in text.split_whitespace() {
        let (k, v) = part.split_once('=')?;
        let v: f64 = v.trim_end_matches(',').parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        match k.to_ascii_lowercase().as_str() {
            "plausibility" => p = Some(v),
            "coherence" => c = Some(v),
            _ => {}
        }
    }
    Some(Scores {
        plausibility: p?,
        coherence: c.unwrap_or(0.0),
    })
}

pub fn reflect(
    bundle: &ContextBundle,
    forecast: &[f64],
    cot: &str,
    backend: &dyn ReasoningBackend,
    call_index: usize,
    attempt: usize,
) -> (String, Option<String>, Reflection) {
    let prompt = reflection_prompt(bundle, forecast, cot);
    let request = BackendRequest {
        role: Role::Reflector,
        prompt: &prompt,
        bundle: Some(bundle),
        call_index,
        attempt,
    };
    match backend.complete(&request) {
        Ok(reply) => {
            let r = parse_reflection(&reply);
            (prompt, Some(reply), r)
        }
        Err(e) => {
            warn!("reflector unavailable, accepting: {e}");
            (
                prompt,
                None,
                Reflection {
                    verdict: Verdict::Accept,
                    feedback: format!("reflector unavailable: {e}"),
                    scores: None,
                    malformed: false,
                    transport_failure: true,
                },
            )
        }
    }
}

/// Best plausibility score, later attempts winning ties. Attempts without
/// scores count as zero.
fn best_attempt(attempts: &[Attempt]) -> Option<usize> {
    attempts
        .iter()
        .filter(|a| a.forecast.is_some())
        .map(|a| {
            let s = a
                .reflection
                .as_ref()
                .and_then(|r| r.scores.as_ref())
                .map_or(0.0, |s| s.plausibility);
            (a.index, s)
        })
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, bs)) if bs > s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

pub fn run_session(
    task: &ForecastTask,
    res: SessionResources<'_>,
    backends: &Backends,
    config: &SessionConfig,
) -> Result<ForecastSession> {
    if config.max_iterations == 0 {
        return Err(Error::invalid("max_iterations", "must be >= 1"));
    }
    let dataset = res.dataset;
    let ablation = &config.ablation;
    let inputs = slice_task_inputs(dataset, task)?;
    let (h, l) = (task.lookback_len, task.horizon_len);
    let mut warnings = Vec::new();

    let mut retrieval = None;
    if let Some(library) = res.library {
        if library.config.lookback != h || library.config.horizon != l {
            return Err(Error::invalid(
                "case library",
                format!(
                    "built for H={} L={} but the task uses H={h} L={l}",
                    library.config.lookback, library.config.horizon
                ),
            ));
        }
        match retrieve(library, &inputs.endogenous, &config.retrieval) {
            Ok(r) => retrieval = Some(r),
            Err(e) => warnings.push(format!("retrieval failed: {e}")),
        }
    }
    let auxiliary = retrieval.as_ref().map(|r| r.auxiliary_forecast.clone());

    let use_features = !ablation.has(AblationFlag::NoFeatures);
    let channel_features = if use_features {
        let exo: Vec<(&str, &[f64])> = if ablation.has(AblationFlag::NoExo) {
            Vec::new()
        } else {
            dataset
                .exogenous
                .iter()
                .zip(&inputs.exogenous)
                .map(|(s, v)| (s.name.as_str(), v.as_slice()))
                .collect()
        };
        match extract_dataset_features(
            (&dataset.endogenous.name, &inputs.endogenous),
            &exo,
            dataset.frequency.seasonal_period(),
        ) {
            Ok(f) => f,
            Err(e) => {
                warnings.push(format!("feature extraction skipped: {e}"));
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };

    let name = dataset.name();
    let knowledge = res.store.query_knowledge(name, None, config.knowledge_budget);
    let ts = &inputs.timestamps;
    let context = res.store.query_context(name, ts[0], ts[ts.len() - 1])?;

    let generator = backends.generator.as_ref();
    let reflector = backends.reflector.as_ref();
    let investigator = backends.investigator.as_deref().unwrap_or(generator);
    let reflection_on = !ablation.has(AblationFlag::NoReflection);
    let two_stage = ablation.has(AblationFlag::TwoStage);

    let mut session = ForecastSession {
        task: task.clone(),
        generator: generator.id(),
        reflector: reflector.id(),
        bundles: Vec::new(),
        attempts: Vec::new(),
        iteration_count: 0,
        final_forecast: Vec::new(),
        final_explanation: String::new(),
        final_attempt: None,
        failure: None,
        auxiliary_forecast: auxiliary.clone(),
        retrieval: retrieval.clone(),
        feature_usage_log: BTreeMap::new(),
        warnings: Vec::new(),
        timings_ms: Vec::new(),
    };
    let mut feedback: Vec<String> = Vec::new();
    let mut gen_calls = 0;
    let mut accepted = None;

    for attempt in 0..config.max_iterations {
        let started = Instant::now();
        session.iteration_count = attempt + 1;
        let selection = if use_features {
            investigate(
                &channel_features,
                config.selection,
                Some(investigator),
                attempt,
                attempt,
                &mut warnings,
            )
        } else {
            Vec::new()
        };
        for c in &selection {
            session
                .feature_usage_log
                .entry(c.channel.clone())
                .or_default()
                .extend(c.features.iter().map(|(f, _)| f.name().to_string()));
        }
        let bundle = assemble_bundle(
            &BundleSources {
                task,
                dataset,
                inputs: &inputs,
                features: &selection,
                knowledge: &knowledge,
                context: &context,
                retrieval: retrieval.as_ref(),
            },
            ablation,
        )?
        .with_feedback(feedback.clone());

        let mut calls = Vec::new();
        let generated = generate(
            &bundle,
            generator,
            two_stage,
            config.parse_retries,
            &mut gen_calls,
            attempt,
            &mut calls,
        );
        let mut record = Attempt {
            index: attempt,
            calls,
            forecast: generated.values.clone(),
            cot: generated.cot.clone(),
            reflection_prompt: None,
            reflection_response: None,
            reflection: None,
        };

        let Some(forecast) = generated.values else {
            let reason = generated.error.unwrap_or_else(|| "generation failed".into());
            warnings.push(format!("attempt {}: {reason}", attempt + 1));
            session.attempts.push(record);
            session.bundles.push(bundle);
            session.timings_ms.push(started.elapsed().as_millis() as u64);
            session.failure = Some(reason);
            break;
        };

        if reflection_on {
            let (prompt, reply, reflection) =
                reflect(&bundle, &forecast, &generated.cot, reflector, attempt, attempt);
            if reflection.transport_failure {
                warnings.push(reflection.feedback.clone());
            }
            let verdict = reflection.verdict;
            if verdict == Verdict::Revise && !reflection.feedback.is_empty() {
                feedback.push(reflection.feedback.clone());
            }
            record.reflection_prompt = Some(prompt);
            record.reflection_response = reply;
            record.reflection = Some(reflection);
            session.attempts.push(record);
            session.bundles.push(bundle);
            session.timings_ms.push(started.elapsed().as_millis() as u64);
            if verdict == Verdict::Accept {
                accepted = Some(attempt);
                break;
            }
        } else {
            session.attempts.push(record);
            session.bundles.push(bundle);
            session.timings_ms.push(started.elapsed().as_millis() as u64);
            accepted = Some(attempt);
            break;
        }
    }

    let chosen = accepted.or_else(|| best_attempt(&session.attempts));
    match chosen {
        Some(i) => {
            let a = &session.attempts[i];
            session.final_forecast = a.forecast.clone().expect("chosen attempts have forecasts");
            session.final_explanation = a.cot.clone();
            session.final_attempt = Some(i);
            if accepted.is_none() && session.failure.is_none() {
                warnings.push(format!(
                    "no attempt accepted within {} iterations; using attempt {}",
                    config.max_iterations,
                    i + 1
                ));
            }
        }
        None => {
            let (values, source) = match &auxiliary {
                Some(aux) => (aux.clone(), "auxiliary forecast"),
                None => (vec![inputs.endogenous[h - 1]; l], "naive_last"),
            };
            session.final_explanation = format!(
                "Fallback to the {source}: {}",
                session.failure.as_deref().unwrap_or("no usable attempt")
            );
            session.final_forecast = values;
        }
    }
    debug_assert_eq!(session.final_forecast.len(), l);
    session.warnings = warnings;
    Ok(session)
}

/// Appends one JSON record per attempt, with prompts and timings.
pub fn append_session_log(session: &ForecastSession, path: &Path) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for (i, attempt) in session.attempts.iter().enumerate() {
        let reflection = attempt.reflection.as_ref();
        let record = serde_json::json!({
            "anchor": session.task.anchor,
            "attempt": attempt.index,
            "calls": attempt.calls,
            "forecast": attempt.forecast,
            "verdict": reflection.map(|r| r.verdict),
            "feedback": reflection.map(|r| r.feedback.as_str()),
            "scores": reflection.and_then(|r| r.scores.as_ref()),
            "reflection_prompt_hash": attempt.reflection_prompt.as_deref().map(prompt_hash),
            "reflection_response": attempt.reflection_response,
            "elapsed_ms": session.timings_ms.get(i),
        });
        writeln!(file, "{record}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads the generator prompts back out of a session log.
pub fn logged_prompts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut prompts = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Serialization(e.to_string()))?;
        for call in v["calls"].as_array().into_iter().flatten() {
            if let Some(p) = call["prompt"].as_str() {
                prompts.push(p.to_string());
            }
        }
    }
    Ok(prompts)
}

/// Whether a prompt contains the given section header.
pub fn has_section(prompt: &str, section: Section) -> bool {
    prompt.lines().any(|l| l == section.header())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_grammar() {
        let r = parse_reflection(
            "VERDICT: revise\nFEEDBACK: too flat\nlook at the peak\nSCORES: plausibility=0.4 coherence=0.9",
        );
        assert_eq!(r.verdict, Verdict::Revise);
        assert_eq!(r.feedback, "too flat\nlook at the peak");
        assert_eq!(
            r.scores,
            Some(Scores {
                plausibility: 0.4,
                coherence: 0.9
            })
        );
        let r = parse_reflection("maybe");
        assert_eq!(r.verdict, Verdict::Revise);
        assert!(r.malformed);
        assert!(r.feedback.contains("malformed"));
        let r = parse_reflection("VERDICT: Accept");
        assert_eq!(r.verdict, Verdict::Accept);
        assert!(r.scores.is_none());
    }

    #[test]
    fn feature_reply_drops_unknown_names() {
        let mut warnings = Vec::new();
        let set = parse_feature_reply(
            "sure\nFEATURES: xacf1, basic_mean, basic_std, lumpiness, flat_spots, bogus\n",
            &mut warnings,
        );
        assert_eq!(set.len(), 5);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn best_attempt_prefers_latest_on_ties() {
        let mk = |index, p| Attempt {
            index,
            calls: vec![],
            forecast: Some(vec![index as f64]),
            cot: String::new(),
            reflection_prompt: None,
            reflection_response: None,
            reflection: Some(Reflection {
                verdict: Verdict::Revise,
                feedback: String::new(),
                scores: Some(Scores {
                    plausibility: p,
                    coherence: 0.0,
                }),
                malformed: false,
                transport_failure: false,
            }),
        };
        assert_eq!(best_attempt(&[mk(0, 0.2), mk(1, 0.7), mk(2, 0.5)]), Some(1));
        assert_eq!(best_attempt(&[mk(0, 0.7), mk(1, 0.7), mk(2, 0.5)]), Some(1));
        assert_eq!(best_attempt(&[]), None);
    }
}
