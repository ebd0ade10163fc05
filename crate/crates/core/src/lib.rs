//! Retrieval-grounded, reflective time-series forecasting.
//!
//! The pipeline ingests a dataset, mines a clustered case library from its
//! training split, grounds each forecast in statistical features, domain
//! knowledge, context events and case-library evidence, and runs a
//! generate/reflect loop over a pluggable reasoning backend.
//!
//! ```no_run
//! use groundcast::prelude::*;
//!
//! let manifest = DatasetManifest::from_file(std::path::Path::new("configs/np/manifest.toml"))?;
//! let dataset = load_dataset(&manifest)?;
//! let config = LibraryConfig::new(168, 24, dataset.frequency.seasonal_period());
//! let library = build_case_library(&dataset, &config, &default_pool())?;
//! let task = ForecastTask::new(&dataset, TaskProfile::Short, dataset.len() - 1);
//! let store = KnowledgeStore::empty();
//! let res = SessionResources { dataset: &dataset, library: Some(&library), store: &store };
//! let session = run_session(&task, res, &Backends::echo(), &SessionConfig::default())?;
//! println!("{:?}", session.final_forecast);
//! # Ok::<(), groundcast::Error>(())
//! ```

pub mod agents;
pub mod baselines;
pub mod caselib;
pub mod domain;
pub mod error;
pub mod eval;
pub mod features;
pub mod grounding;
pub mod ingest;
pub mod knowledge;

pub use error::{Error, Result};

/// Rendering of timestamps in prompts, reports and CSV output.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub mod prelude {
    pub use crate::agents::{
        run_session, Backends, ForecastSession, SelectionPolicy, SessionConfig, SessionResources,
    };
    pub use crate::baselines::{default_pool, ForecastModelSpec, ModelId};
    pub use crate::caselib::{
        build_case_library, load_library, retrieve, save_library, CaseLibrary, KPolicy,
        LibraryConfig, RetrievalConfig,
    };
    pub use crate::domain::{Dataset, ForecastTask, TaskProfile};
    pub use crate::eval::{evaluate_method, EvalConfig, EvalContext, EvalReport, Method};
    pub use crate::grounding::{Ablation, AblationFlag};
    pub use crate::ingest::{load_dataset, DatasetManifest};
    pub use crate::knowledge::{load_corpus, KnowledgeStore};
    pub use crate::{Error, Result};
}
