//! The case library: every training window labeled with its best pool model,
//! clustered by look-back shape, and queried for auxiliary forecasts and the
//! nearest historical neighbor.

mod kmeans;
mod store;

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{evaluate_pool, ForecastModelSpec, ModelId};
use crate::domain::{window_anchors, Dataset};
use crate::error::{Error, Result};

pub use kmeans::{kmeans, squared_distance, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use store::{load_library, save_library, FORMAT_VERSION};

/// SHA-256 digest binding a library to its inputs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..8])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.short())
    }
}

/// Digest of the dataset name, frequency, split layout and training values.
pub fn dataset_fingerprint(dataset: &Dataset) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(dataset.name().as_bytes());
    h.update([0]);
    h.update(dataset.frequency.seconds().to_le_bytes());
    let s = &dataset.splits;
    for r in [&s.train, &s.validation, &s.test] {
        h.update((r.start as u64).to_le_bytes());
        h.update((r.end as u64).to_le_bytes());
    }
    for v in &dataset.endogenous.values()[s.train.clone()] {
        h.update(v.to_le_bytes());
    }
    Fingerprint(h.finalize().into())
}

/// Digest of the pool specs (in order) and the seasonal period.
pub fn pool_fingerprint(pool: &[ForecastModelSpec], period: usize) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(pool).expect("pool serializes"));
    h.update((period as u64).to_le_bytes());
    Fingerprint(h.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "k")]
pub enum KPolicy {
    /// `clamp(round(sqrt(N / 2)), 8, 64)`.
    Auto,
    Fixed(usize),
}

impl KPolicy {
    pub fn resolve(self, cases: usize) -> usize {
        let k = match self {
            KPolicy::Auto => ((cases as f64 / 2.0).sqrt().round() as usize).clamp(8, 64),
            KPolicy::Fixed(k) => k,
        };
        if k > cases {
            warn!("k = {k} exceeds the {cases} available cases; clamping");
        }
        k.min(cases).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub lookback: usize,
    pub horizon: usize,
    /// Seasonal period handed to the pool models.
    pub period: usize,
    pub k_policy: KPolicy,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Cluster and search on z-normalized look-backs.
    pub znorm: bool,
}

impl LibraryConfig {
    pub fn new(lookback: usize, horizon: usize, period: usize) -> Self {
        Self {
            lookback,
            horizon,
            period,
            k_policy: KPolicy::Auto,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            znorm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub case_id: usize,
    /// Index of the last look-back sample in the source series.
    pub anchor: usize,
    pub lookback: Vec<f64>,
    pub future: Vec<f64>,
    /// Position of the best model in the library pool.
    pub best_model: usize,
    /// MSE of each pool member on this case, `None` where unavailable.
    pub per_model_mse: Vec<Option<f64>>,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseLibrary {
    pub config: LibraryConfig,
    pub pool: Vec<ForecastModelSpec>,
    pub cases: Vec<Case>,
    pub clusters: ClusterModel,
    pub dataset_fingerprint: Fingerprint,
    pub pool_fingerprint: Fingerprint,
}

impl CaseLibrary {
    pub fn best_model(&self, case: &Case) -> &ForecastModelSpec {
        &self.pool[case.best_model]
    }

    /// Per-model MSE keyed by model label.
    pub fn per_model_mse(&self, case: &Case) -> BTreeMap<String, f64> {
        self.pool
            .iter()
            .zip(&case.per_model_mse)
            .filter_map(|(spec, e)| e.map(|e| (spec.label(), e)))
            .collect()
    }

    /// The vector used for clustering and search.
    pub fn embed(&self, lookback: &[f64]) -> Vec<f64> {
        embed(lookback, self.config.znorm)
    }

    /// Fails with a stale-library error unless the library was built from
    /// this dataset and pool.
    pub fn verify(&self, dataset: &Dataset, pool: &[ForecastModelSpec]) -> Result<()> {
        let data_fp = dataset_fingerprint(dataset);
        if data_fp != self.dataset_fingerprint {
            return Err(Error::StaleLibrary(format!(
                "built from dataset {} but the current dataset hashes to {}",
                self.dataset_fingerprint.short(),
                data_fp.short()
            )));
        }
        let pool_fp = pool_fingerprint(pool, self.config.period);
        if pool_fp != self.pool_fingerprint {
            return Err(Error::StaleLibrary(format!(
                "built with pool {} but the current pool hashes to {}",
                self.pool_fingerprint.short(),
                pool_fp.short()
            )));
        }
        Ok(())
    }
}

fn embed(lookback: &[f64], znorm: bool) -> Vec<f64> {
    if !znorm {
        return lookback.to_vec();
    }
    let n = lookback.len() as f64;
    let mean = lookback.iter().sum::<f64>() / n;
    let std = (lookback.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![0.0; lookback.len()];
    }
    lookback.iter().map(|v| (v - mean) / std).collect()
}

/// Mines every training window (stride 1), labels it with the best pool
/// model, and clusters the look-backs.
pub fn build_case_library(
    dataset: &Dataset,
    config: &LibraryConfig,
    pool: &[ForecastModelSpec],
) -> Result<CaseLibrary> {
    if pool.is_empty() {
        return Err(Error::invalid("pool", "candidate pool is empty"));
    }
    for spec in pool {
        spec.validate()?;
    }
    let (h, l) = (config.lookback, config.horizon);
    let anchors = window_anchors(dataset.splits.train.clone(), h, l, 1)?;
    let values = dataset.endogenous.values();

    let evaluated: Vec<_> = anchors
        .par_iter()
        .map(|&anchor| {
            let lookback = &values[anchor + 1 - h..=anchor];
            let future = &values[anchor + 1..anchor + 1 + l];
            evaluate_pool(lookback, future, pool, config.period)
        })
        .collect::<Result<_>>()?;

    let points: Vec<Vec<f64>> = anchors
        .iter()
        .map(|&a| embed(&values[a + 1 - h..=a], config.znorm))
        .collect();
    let k = config.k_policy.resolve(points.len());
    let clusters = kmeans(&points, k, config.seed, config.max_iter, config.tol)?;

    let cases = anchors
        .iter()
        .zip(evaluated)
        .enumerate()
        .map(|(case_id, (&anchor, eval))| Case {
            case_id,
            anchor,
            lookback: values[anchor + 1 - h..=anchor].to_vec(),
            future: values[anchor + 1..anchor + 1 + l].to_vec(),
            best_model: eval.best,
            per_model_mse: eval.mse,
            cluster_id: clusters.assignments[case_id],
        })
        .collect();

    Ok(CaseLibrary {
        config: config.clone(),
        pool: pool.to_vec(),
        cases,
        clusters,
        dataset_fingerprint: dataset_fingerprint(dataset),
        pool_fingerprint: pool_fingerprint(pool, config.period),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Cases of the chosen cluster that contribute, nearest first.
    pub top_n: usize,
    /// Added to distances before inverting them into weights.
    pub epsilon: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_n: 16,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborCase {
    pub case_id: usize,
    pub distance: f64,
    pub lookback: Vec<f64>,
    pub future: Vec<f64>,
}

/// One distinct model's share of the auxiliary forecast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelContribution {
    pub model: String,
    pub weight: f64,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub cluster_id: usize,
    pub auxiliary_forecast: Vec<f64>,
    /// Normalized weight of each contributing case.
    pub weights: BTreeMap<usize, f64>,
    pub contributions: Vec<ModelContribution>,
    pub neighbor: NeighborCase,
    /// True when every contributing model was unavailable and the auxiliary
    /// forecast fell back to repeating the last value.
    pub fallback: bool,
}

/// Nearest cluster, distance-weighted auxiliary forecast from the cluster's
/// labeled models, and the globally nearest case.
pub fn retrieve(
    library: &CaseLibrary,
    query: &[f64],
    config: &RetrievalConfig,
) -> Result<RetrievalResult> {
    let (h, l) = (library.config.lookback, library.config.horizon);
    if query.len() != h {
        return Err(Error::LengthMismatch {
            left: query.len(),
            right: h,
        });
    }
    let q = library.embed(query);
    let (cluster_id, _) = library.clusters.nearest(&q);

    let distances: Vec<f64> = library
        .cases
        .par_iter()
        .map(|c| squared_distance(&q, &library.embed(&c.lookback)).sqrt())
        .collect();

    let neighbor_id = distances
        .iter()
        .enumerate()
        .fold(0, |best, (i, &d)| if d < distances[best] { i } else { best });
    let nn = &library.cases[neighbor_id];
    let neighbor = NeighborCase {
        case_id: nn.case_id,
        distance: distances[neighbor_id],
        lookback: nn.lookback.clone(),
        future: nn.future.clone(),
    };

    let mut members: Vec<usize> = library.clusters.members(cluster_id).collect();
    members.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    members.truncate(config.top_n.max(1));

    // each distinct pool model is fitted on the query once
    let mut forecasts: BTreeMap<usize, Option<Vec<f64>>> = BTreeMap::new();
    for &m in &members {
        let idx = library.cases[m].best_model;
        forecasts.entry(idx).or_insert_with(|| {
            library.pool[idx]
                .fit_predict(query, l, library.config.period)
                .ok()
        });
    }

    let raw: Vec<(usize, f64)> = members
        .iter()
        .filter(|&&m| forecasts[&library.cases[m].best_model].is_some())
        .map(|&m| (m, 1.0 / (config.epsilon + distances[m])))
        .collect();

    if raw.is_empty() {
        warn!("no model of cluster {cluster_id} handles the query; falling back to naive_last");
        return Ok(RetrievalResult {
            cluster_id,
            auxiliary_forecast: vec![query[h - 1]; l],
            weights: BTreeMap::new(),
            contributions: vec![ModelContribution {
                model: ModelId::NaiveLast.name().to_string(),
                weight: 1.0,
                forecast: vec![query[h - 1]; l],
            }],
            neighbor,
            fallback: true,
        });
    }

    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    let weights: BTreeMap<usize, f64> = raw
        .iter()
        .map(|&(m, w)| (library.cases[m].case_id, w / total))
        .collect();

    let mut model_weight: BTreeMap<usize, f64> = BTreeMap::new();
    for &(m, w) in &raw {
        *model_weight.entry(library.cases[m].best_model).or_default() += w / total;
    }
    let mut auxiliary = vec![0.0; l];
    let mut contributions = Vec::with_capacity(model_weight.len());
    for (&idx, &w) in &model_weight {
        let forecast = forecasts[&idx].as_ref().expect("filtered above");
        for (a, f) in auxiliary.iter_mut().zip(forecast) {
            *a += w * f;
        }
        contributions.push(ModelContribution {
            model: library.pool[idx].label(),
            weight: w,
            forecast: forecast.clone(),
        });
    }

    Ok(RetrievalResult {
        cluster_id,
        auxiliary_forecast: auxiliary,
        weights,
        contributions,
        neighbor,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::default_pool;
    use crate::domain::{DataProfile, Splits, TimeSeries};
    use chrono::{Duration, NaiveDate};
    use std::sync::Arc;

    pub(crate) fn toy_dataset(values: Vec<f64>, train: usize) -> Dataset {
        let n = values.len();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let ts = Arc::new((0..n).map(|i| start + Duration::hours(i as i64)).collect());
        let endo = TimeSeries::new("y", "", ts, values).unwrap();
        let profile = DataProfile {
            dataset_name: "toy".into(),
            domain_description: String::new(),
            variable_descriptions: [("y".to_string(), "target".to_string())].into(),
            frequency_text: "1 Hour".into(),
        };
        Dataset::new(
            endo,
            vec![],
            profile,
            "1h".parse().unwrap(),
            Splits::from_sizes(train, 0, n - train, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn singleton_library() {
        let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let ds = toy_dataset(values.clone(), 12);
        let config = LibraryConfig::new(8, 4, 4);
        let lib = build_case_library(&ds, &config, &default_pool()).unwrap();
        assert_eq!(lib.cases.len(), 1);
        assert_eq!(lib.clusters.k, 1);
        assert_eq!(lib.clusters.centers[0], values[..8].to_vec());
    }

    #[test]
    fn k_policy_clamps() {
        assert_eq!(KPolicy::Auto.resolve(10_033), 64);
        assert_eq!(KPolicy::Auto.resolve(200), 10);
        assert_eq!(KPolicy::Auto.resolve(20), 8);
        assert_eq!(KPolicy::Auto.resolve(3), 3);
        assert_eq!(KPolicy::Fixed(50).resolve(7), 7);
    }

    #[test]
    fn single_naive_case_cluster_repeats_last_value() {
        let values: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let ds = toy_dataset(values, 12);
        let pool = vec![ForecastModelSpec::new(ModelId::NaiveLast)];
        let lib = build_case_library(&ds, &LibraryConfig::new(8, 4, 4), &pool).unwrap();
        let query = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let r = retrieve(&lib, &query, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.auxiliary_forecast, vec![6.0; 4]);
        assert_eq!(r.weights, BTreeMap::from([(0, 1.0)]));
        assert!(!r.fallback);
    }

    #[test]
    fn exact_match_is_neighbor_with_top_weight() {
        let values: Vec<f64> = (0..300)
            .map(|i| (i as f64 * 0.3).sin() * 5.0 + (i % 7) as f64)
            .collect();
        let ds = toy_dataset(values, 200);
        let lib = build_case_library(&ds, &LibraryConfig::new(24, 6, 24), &default_pool()).unwrap();
        let target = &lib.cases[77];
        let r = retrieve(&lib, &target.lookback, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.neighbor.case_id, 77);
        assert_eq!(r.neighbor.distance, 0.0);
        assert_eq!(r.cluster_id, target.cluster_id);
        let top = r
            .weights
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(id, _)| *id);
        assert_eq!(top, Some(77));
    }

    #[test]
    fn unavailable_models_fall_back() {
        let values: Vec<f64> = (0..40).map(|i| ((i % 4) as f64) * 2.0).collect();
        let ds = toy_dataset(values, 40);
        let pool = vec![ForecastModelSpec::new(ModelId::Snaive).with("season", 4.0)];
        let lib = build_case_library(&ds, &LibraryConfig::new(8, 2, 4), &pool).unwrap();
        // a 4-sample season is always available on an 8-sample query, so
        // force unavailability with a pool whose season exceeds the query
        let mut broken = lib.clone();
        broken.pool = vec![ForecastModelSpec::new(ModelId::Snaive).with("season", 9.0)];
        let r = retrieve(&broken, &[1.0; 8], &RetrievalConfig::default()).unwrap();
        assert!(r.fallback);
        assert_eq!(r.auxiliary_forecast, vec![1.0; 2]);
    }

    #[test]
    fn verify_detects_modified_dataset() {
        let values: Vec<f64> = (0..60).map(|i| (i as f64).cos()).collect();
        let ds = toy_dataset(values.clone(), 40);
        let pool = default_pool();
        let lib = build_case_library(&ds, &LibraryConfig::new(8, 4, 4), &pool).unwrap();
        lib.verify(&ds, &pool).unwrap();
        let mut changed = values;
        changed[3] += 1.0;
        let other = toy_dataset(changed, 40);
        assert!(matches!(lib.verify(&other, &pool), Err(Error::StaleLibrary(_))));
        assert!(matches!(
            lib.verify(&ds, &pool[..3]),
            Err(Error::StaleLibrary(_))
        ));
    }

    #[test]
    fn znorm_clusters_shapes() {
        let values: Vec<f64> = (0..200)
            .map(|i| (i as f64 * 0.5).sin() * (1.0 + i as f64 / 50.0))
            .collect();
        let ds = toy_dataset(values, 150);
        let mut config = LibraryConfig::new(16, 4, 8);
        config.znorm = true;
        let lib = build_case_library(&ds, &config, &default_pool()).unwrap();
        let q = lib.cases[10].lookback.iter().map(|v| v * 3.0 + 1.0).collect::<Vec<_>>();
        let r = retrieve(&lib, &q, &RetrievalConfig::default()).unwrap();
        assert!(r.neighbor.distance < 1e-9);
    }
}
