//! Reasoning backends: the trait plus deterministic stubs.
//!
//! Stubs are stateless. Any scripted behavior is keyed by the call or
//! attempt index carried in the request, so concurrent sessions sharing one
//! stub stay deterministic.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::remote::{RemoteBackend, RemoteConfig};
use crate::error::{Error, Result};
use crate::grounding::{render_forecast_response, ContextBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Investigator,
    Generator,
    Reflector,
}

pub struct BackendRequest<'a> {
    pub role: Role,
    pub prompt: &'a str,
    /// The structured bundle behind the prompt.
    pub bundle: Option<&'a ContextBundle>,
    /// Zero-based count of earlier calls in this role within the session.
    pub call_index: usize,
    /// Zero-based reflection iteration.
    pub attempt: usize,
}

pub trait ReasoningBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String>;
}

pub const ECHO_REASONING: &str = "Echoing the auxiliary forecast from the case library.";

/// Generator that answers with the bundle's auxiliary forecast over the
/// requested range, or repeats the last observation when there is none.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoAuxiliary;

impl ReasoningBackend for EchoAuxiliary {
    fn id(&self) -> String {
        "stub:echo-auxiliary".into()
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        let bundle = request
            .bundle
            .ok_or_else(|| Error::Transport("echo-auxiliary needs the structured bundle".into()))?;
        let out = bundle.output;
        let values = match &bundle.auxiliary_forecast {
            Some(aux) => aux[out.start..out.start + out.count].to_vec(),
            None => {
                let last = *bundle.endogenous.last().expect("non-empty look-back");
                vec![last; out.count]
            }
        };
        Ok(render_forecast_response(&values, ECHO_REASONING))
    }
}

fn verdict_reply(verdict: &str, feedback: &str, plausibility: f64, coherence: f64) -> String {
    format!(
        "VERDICT: {verdict}\nFEEDBACK: {feedback}\nSCORES: plausibility={plausibility} coherence={coherence}\n"
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAccept;

impl ReasoningBackend for AlwaysAccept {
    fn id(&self) -> String {
        "stub:always-accept".into()
    }

    fn complete(&self, _: &BackendRequest<'_>) -> Result<String> {
        Ok(verdict_reply("accept", "The forecast is consistent with the evidence.", 1.0, 1.0))
    }
}

/// Rejects the first `reject` attempts, then accepts.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedReflector {
    pub reject: usize,
}

impl ReasoningBackend for ScriptedReflector {
    fn id(&self) -> String {
        format!("stub:reject:{}", self.reject)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        Ok(if request.attempt < self.reject {
            verdict_reply(
                "revise",
                &format!("Attempt {} needs another pass.", request.attempt + 1),
                0.5,
                0.5,
            )
        } else {
            verdict_reply("accept", "Revisions addressed.", 1.0, 1.0)
        })
    }
}

/// Never accepts; attempt `i` gets plausibility `scores[i % scores.len()]`.
#[derive(Debug, Clone)]
pub struct AlwaysRevise {
    pub scores: Vec<f64>,
}

impl ReasoningBackend for AlwaysRevise {
    fn id(&self) -> String {
        "stub:always-revise".into()
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        let score = if self.scores.is_empty() {
            0.0
        } else {
            self.scores[request.attempt % self.scores.len()]
        };
        Ok(verdict_reply(
            "revise",
            &format!("Attempt {} is not convincing.", request.attempt + 1),
            score,
            score,
        ))
    }
}

/// Replies from a fixed list; call `i` gets `replies[min(i, len - 1)]`.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub replies: Vec<String>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Result<Self> {
        if replies.is_empty() {
            return Err(Error::invalid("scripted backend", "needs at least one reply"));
        }
        Ok(Self { replies })
    }

    /// Replies in a text file, separated by lines containing only `---`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut replies = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim() == "---" {
                replies.push(std::mem::take(&mut current));
            } else {
                current.push_str(line);
                current.push('\n');
            }
        }
        if !current.trim().is_empty() {
            replies.push(current);
        }
        Self::new(replies)
    }
}

impl ReasoningBackend for ScriptedBackend {
    fn id(&self) -> String {
        "stub:scripted".into()
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        Ok(self.replies[request.call_index.min(self.replies.len() - 1)].clone())
    }
}

/// Always fails with a transport error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Failing;

impl ReasoningBackend for Failing {
    fn id(&self) -> String {
        "stub:failing".into()
    }

    fn complete(&self, _: &BackendRequest<'_>) -> Result<String> {
        Err(Error::Transport("stub backend configured to fail".into()))
    }
}

/// Backend selection as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendSpec {
    /// `stub:echo-auxiliary`, `stub:always-accept`, `stub:always-revise`,
    /// `stub:reject:<n>`, `stub:failing` or `stub:scripted:<file>`.
    Stub(String),
    Remote(RemoteConfig),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn ReasoningBackend>> {
        match self {
            BackendSpec::Stub(name) => parse_stub(name),
            BackendSpec::Remote(config) => Ok(Arc::new(RemoteBackend::new(config.clone())?)),
        }
    }
}

pub fn parse_stub(name: &str) -> Result<Arc<dyn ReasoningBackend>> {
    let rest = name
        .strip_prefix("stub:")
        .ok_or_else(|| Error::invalid("backend", format!("`{name}` is not a stub backend")))?;
    Ok(match rest {
        "echo-auxiliary" => Arc::new(EchoAuxiliary),
        "always-accept" => Arc::new(AlwaysAccept),
        "always-revise" => Arc::new(AlwaysRevise { scores: vec![0.5] }),
        "failing" => Arc::new(Failing),
        _ => {
            if let Some(file) = rest.strip_prefix("scripted:") {
                Arc::new(ScriptedBackend::from_file(Path::new(file))?)
            } else if let Some(n) = rest.strip_prefix("reject:") {
                let reject = n
                    .parse()
                    .map_err(|_| Error::invalid("backend", format!("bad reject count `{n}`")))?;
                Arc::new(ScriptedReflector { reject })
            } else {
                return Err(Error::invalid("backend", format!("unknown stub `{name}`")));
            }
        }
    })
}
