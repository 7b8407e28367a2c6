//! Clustered retrieval set and nearest-demonstration search.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use log::warn;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, catalog, FeatureMap, FeatureVector, StandardizationStats};
use crate::pipeline::{BootstrapOutcome, BootstrapStatus};
use crate::prompt::FeatureDescription;
use crate::tabular::{LabeledCorpusRecord, VisualizationType};

pub const MAX_DEMONSTRATIONS: usize = 8;
pub const KMEANS_MAX_ITERS: usize = 300;

/// Order in which the selected demonstrations are placed in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrdering {
    #[default]
    NearestFirst,
    FurthestFirst,
    Random,
}

impl DemoOrdering {
    pub const ALL: [DemoOrdering; 3] = [DemoOrdering::NearestFirst, DemoOrdering::FurthestFirst, DemoOrdering::Random];

    pub fn name(self) -> &'static str {
        match self {
            DemoOrdering::NearestFirst => "nearest_first",
            DemoOrdering::FurthestFirst => "furthest_first",
            DemoOrdering::Random => "random",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s || o.name().replace('_', "-") == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Number of clusters (C).
    pub clusters: usize,
    /// Representatives kept per cluster (R).
    pub representatives: usize,
    /// Demonstrations per prompt (K).
    pub k: usize,
    pub seed: u64,
    pub ordering: DemoOrdering,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { clusters: 4, representatives: 15, k: 8, seed: 0, ordering: DemoOrdering::NearestFirst }
    }
}

impl RetrievalConfig {
    /// Target retrieval set size M = C × R.
    pub fn target_size(&self) -> usize {
        self.clusters * self.representatives
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::Config("retrieval.clusters must be at least 1".into()));
        }
        if self.representatives == 0 {
            return Err(Error::Config("retrieval.representatives must be at least 1".into()));
        }
        if self.k > MAX_DEMONSTRATIONS {
            return Err(Error::Config(format!("retrieval.k must be at most {MAX_DEMONSTRATIONS}, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every centroid update.
    pub inertia: Vec<f64>,
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_centroids(vectors: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &vectors[chosen[0]])).collect();
    while chosen.len() < c {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(v, &vectors[next]));
        }
    }
    chosen.into_iter().map(|i| vectors[i].clone()).collect()
}

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    vectors.iter().map(|v| nearest_centroid(v, centroids).0).collect()
}

/// Gives every empty cluster the point furthest from its centroid, taken
/// from a cluster that keeps at least one member.
fn fill_empty_clusters(vectors: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize]) {
    let c = centroids.len();
    loop {
        let mut sizes = vec![0usize; c];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donor = (0..vectors.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&i, &j| {
                let di = squared_distance(&vectors[i], &centroids[assignments[i]]);
                let dj = squared_distance(&vectors[j], &centroids[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .expect("at least as many points as clusters");
        assignments[donor] = empty;
    }
}

fn update_centroids(vectors: &[Vec<f64>], assignments: &[usize], c: usize) -> Vec<Vec<f64>> {
    let dim = vectors[0].len();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= *n as f64);
    }
    sums
}

pub fn inertia(vectors: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    vectors.iter().zip(assignments).map(|(v, &a)| squared_distance(v, &centroids[a])).sum()
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Stops when assignments no longer change or after [`KMEANS_MAX_ITERS`]
/// updates. Every returned cluster is nonempty.
pub fn kmeans(vectors: &[Vec<f64>], c: usize, seed: u64) -> Result<KMeans> {
    if c == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    if c > vectors.len() {
        return Err(Error::TooFewPoints { clusters: c, points: vectors.len() });
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::LengthMismatch { left: dim, right: bad.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(vectors, c, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITERS {
        let mut next = assign(vectors, &centroids);
        fill_empty_clusters(vectors, &centroids, &mut next);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        centroids = update_centroids(vectors, &assignments, c);
        trace.push(inertia(vectors, &assignments, &centroids));
    }
    Ok(KMeans { assignments, centroids, inertia: trace, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub id: String,
    pub label: VisualizationType,
    pub cluster_id: usize,
    /// Position within the cluster by distance to the centroid, 0 = closest.
    pub cluster_rank: usize,
    pub features: FeatureMap,
    pub vector: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<FeatureDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapOutcome>,
}

impl RetrievalEntry {
    pub fn is_accepted(&self) -> bool {
        self.bootstrap.as_ref().is_some_and(|b| b.status == BootstrapStatus::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub schema_version: String,
    pub stats: StandardizationStats,
    pub config: RetrievalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    pub schema_version: String,
    pub stats: StandardizationStats,
    pub config: RetrievalConfig,
    pub entries: Vec<RetrievalEntry>,
    /// Build-time notices such as undersized clusters; not persisted.
    pub warnings: Vec<String>,
}

impl RetrievalSet {
    pub fn accepted(&self) -> impl Iterator<Item = &RetrievalEntry> {
        self.entries.iter().filter(|e| e.is_accepted())
    }

    pub fn entry(&self, id: &str) -> Option<&RetrievalEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn render_store(&self) -> String {
        let header = StoreHeader { schema_version: self.schema_version.clone(), stats: self.stats.clone(), config: self.config.clone() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_store(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::EmptyCorpus)?;
        let header: StoreHeader =
            serde_json::from_str(first).map_err(|e| Error::Corpus { line: 1, message: format!("bad store header: {e}") })?;
        if header.schema_version != catalog().version() {
            return Err(Error::SchemaMismatch { expected: catalog().version().to_string(), found: header.schema_version });
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let entry: RetrievalEntry =
                serde_json::from_str(line).map_err(|e| Error::Corpus { line: i + 1, message: format!("bad store entry: {e}") })?;
            if entry.vector.schema_version != header.schema_version || entry.features.schema_version() != header.schema_version {
                return Err(Error::SchemaMismatch {
                    expected: header.schema_version.clone(),
                    found: entry.vector.schema_version.clone(),
                });
            }
            entries.push(entry);
        }
        Ok(RetrievalSet {
            schema_version: header.schema_version,
            stats: header.stats,
            config: header.config,
            entries,
            warnings: Vec::new(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render_store()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_store(&text)
    }
}

/// Extracts, standardizes and clusters the pool, then keeps the R entries
/// closest to each centroid.
pub fn build_retrieval_set(pool: &[LabeledCorpusRecord], cfg: &RetrievalConfig) -> Result<RetrievalSet> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if pool.len() < cfg.clusters {
        return Err(Error::TooFewPoints { clusters: cfg.clusters, points: pool.len() });
    }
    let schema = catalog();
    let maps: Vec<FeatureMap> = pool.par_iter().map(|r| features::extract_features(&r.dataset)).collect();
    let stats = StandardizationStats::compute(schema, maps.iter());
    let vectors = maps.iter().map(|m| features::vectorize(m, schema, &stats)).collect::<Result<Vec<_>>>()?;
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let km = kmeans(&points, cfg.clusters, cfg.seed)?;

    let mut rank = vec![None; pool.len()];
    let mut warnings = Vec::new();
    for cluster in 0..cfg.clusters {
        let mut members: Vec<usize> = (0..pool.len()).filter(|&i| km.assignments[i] == cluster).collect();
        members.sort_by(|&a, &b| {
            squared_distance(&points[a], &km.centroids[cluster])
                .total_cmp(&squared_distance(&points[b], &km.centroids[cluster]))
                .then_with(|| pool[a].dataset.id.cmp(&pool[b].dataset.id))
        });
        if members.len() < cfg.representatives {
            let msg = format!(
                "cluster {cluster} has {} members, fewer than the {} representatives requested",
                members.len(),
                cfg.representatives
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        for (r, &i) in members.iter().take(cfg.representatives).enumerate() {
            rank[i] = Some(r);
        }
    }

    let entries = pool
        .iter()
        .zip(maps)
        .zip(vectors)
        .enumerate()
        .filter_map(|(i, ((record, features), vector))| {
            rank[i].map(|cluster_rank| RetrievalEntry {
                id: record.dataset.id.clone(),
                label: record.label,
                cluster_id: km.assignments[i],
                cluster_rank,
                features,
                vector,
                description: None,
                bootstrap: None,
            })
        })
        .collect();

    Ok(RetrievalSet { schema_version: schema.version().to_string(), stats, config: cfg.clone(), entries, warnings })
}

/// Cosine similarity in [−1, 1]; 0 when either vector has zero norm.
pub fn cosine_similarity(u: &FeatureVector, v: &FeatureVector) -> Result<f64> {
    if u.schema_version != v.schema_version {
        return Err(Error::SchemaMismatch { expected: u.schema_version.clone(), found: v.schema_version.clone() });
    }
    cosine(&u.values, &v.values)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch { left: u.len(), right: v.len() });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    // + 0.0 folds −0.0 into 0.0 so exact ties compare equal
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0) + 0.0)
}

/// The `k` candidates most similar to `query` (similarity descending, id
/// ascending on ties), arranged by `ordering`.
pub fn rank_candidates<'a, T>(
    query: &FeatureVector,
    candidates: &'a [T],
    id: impl Fn(&T) -> &str,
    vector: impl Fn(&T) -> &FeatureVector,
    k: usize,
    ordering: DemoOrdering,
    seed: u64,
) -> Result<Vec<(&'a T, f64)>> {
    if k > candidates.len() {
        return Err(Error::NotEnoughDemonstrations { requested: k, available: candidates.len() });
    }
    let mut scored = candidates
        .iter()
        .map(|c| cosine_similarity(query, vector(c)).map(|s| (c, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => id(a.0).cmp(id(b.0)),
        o => o,
    });
    scored.truncate(k);
    match ordering {
        DemoOrdering::NearestFirst => {}
        DemoOrdering::FurthestFirst => scored.reverse(),
        DemoOrdering::Random => scored.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    Ok(scored)
}

/// The `k` accepted entries most similar to `query`.
pub fn nearest_demonstrations<'a>(
    query: &FeatureVector,
    set: &'a RetrievalSet,
    k: usize,
    ordering: DemoOrdering,
    seed: u64,
) -> Result<Vec<&'a RetrievalEntry>> {
    let accepted: Vec<&RetrievalEntry> = set.accepted().collect();
    let ranked = rank_candidates(query, &accepted, |e| e.id.as_str(), |e| &e.vector, k, ordering, seed)?;
    Ok(ranked.into_iter().map(|(e, _)| *e).collect())
}
