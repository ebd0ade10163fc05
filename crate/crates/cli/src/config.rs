//! Run configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groundcast::agents::{BackendSpec, SelectionPolicy, DEFAULT_MAX_ITERATIONS};
use groundcast::baselines::{default_pool, ForecastModelSpec};
use groundcast::caselib::{KPolicy, LibraryConfig};
use groundcast::domain::TaskProfile;
use groundcast::grounding::{Ablation, AblationFlag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run depends on. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_profile")]
    pub profile: TaskProfile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k_policy")]
    pub k_policy: KPolicy,
    #[serde(default)]
    pub znorm: bool,
    /// Candidate models; the full default pool when absent.
    #[serde(default)]
    pub pool: Option<Vec<ForecastModelSpec>>,
    #[serde(default = "default_generator")]
    pub generator: BackendSpec,
    #[serde(default = "default_reflector")]
    pub reflector: BackendSpec,
    #[serde(default)]
    pub ablation: Vec<AblationFlag>,
    /// Evaluation stride; the horizon length when absent.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub selection: SelectionPolicy,
    /// Directory with `knowledge/` and `context/` entries.
    #[serde(default)]
    pub knowledge: Option<PathBuf>,
}

fn default_profile() -> TaskProfile {
    TaskProfile::Short
}

fn default_k_policy() -> KPolicy {
    KPolicy::Auto
}

fn default_generator() -> BackendSpec {
    BackendSpec::Stub("stub:echo-auxiliary".into())
}

fn default_reflector() -> BackendSpec {
    BackendSpec::Stub("stub:always-accept".into())
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing run config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.manifest);
        join(&mut self.out);
        if let Some(k) = &mut self.knowledge {
            join(k);
        }
        for spec in [&mut self.generator, &mut self.reflector] {
            *spec = resolve_scripted(spec, base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            bail!("max_iterations must be >= 1");
        }
        if self.stride == Some(0) {
            bail!("stride must be >= 1");
        }
        if let TaskProfile::Custom { lookback, horizon } = self.profile {
            if lookback == 0 || horizon == 0 {
                bail!("custom profile needs lookback >= 1 and horizon >= 1");
            }
        }
        if let KPolicy::Fixed(0) = self.k_policy {
            bail!("k must be >= 1");
        }
        for spec in self.pool() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn pool(&self) -> Vec<ForecastModelSpec> {
        self.pool.clone().unwrap_or_else(default_pool)
    }

    pub fn ablation(&self) -> Ablation {
        Ablation::from_flags(self.ablation.iter().copied())
    }

    pub fn library_config(&self, period: usize) -> LibraryConfig {
        let mut c = LibraryConfig::new(self.profile.lookback(), self.profile.horizon(), period);
        c.k_policy = self.k_policy;
        c.seed = self.seed;
        c.znorm = self.znorm;
        c
    }

    /// Short hex digest of the serialized config.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).expect("run config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..6])
    }
}

/// Makes `stub:scripted:<file>` paths relative to `base`.
pub fn resolve_scripted(spec: &BackendSpec, base: &Path) -> BackendSpec {
    match spec {
        BackendSpec::Stub(name) => match name.strip_prefix("stub:scripted:") {
            Some(file) if Path::new(file).is_relative() => {
                BackendSpec::Stub(format!("stub:scripted:{}", base.join(file).display()))
            }
            _ => spec.clone(),
        },
        other => other.clone(),
    }
}
