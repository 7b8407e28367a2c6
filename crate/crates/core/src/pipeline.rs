//! Explanation bootstrapping, recommendation and evaluation.

use std::collections::{HashMap, HashSet};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, catalog, stats, FeatureMap, FeatureVector};
use crate::llm::{cache_key, CacheKey, Gateway, LlmSettings};
use crate::prompt::{
    check_prompt_length, parse_score_vector, parse_scores, Explanation, FeatureDescription, HintFill, ScoreVector, Templates,
    DEFAULT_SUM_TOLERANCE,
};
use crate::retrieval::{nearest_demonstrations, DemoOrdering, RetrievalConfig, RetrievalEntry, RetrievalSet, MAX_DEMONSTRATIONS};
use crate::tabular::{LabeledCorpusRecord, TabularDataset, VisualizationType};

/// Slack for comparing a score gap with the margin, so that decimal
/// answers such as 0.6 vs 0.5 count as a gap of exactly 0.1.
pub const MARGIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub margin: f64,
    pub max_iters: usize,
    pub sum_tolerance: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { margin: 0.1, max_iters: 3, sum_tolerance: DEFAULT_SUM_TOLERANCE }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config(format!("bootstrap.margin must be in (0, 1), got {}", self.margin)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("bootstrap.max_iters must be at least 1".into()));
        }
        if !(self.sum_tolerance >= 0.0 && self.sum_tolerance < 1.0) {
            return Err(Error::Config(format!("bootstrap.sum_tolerance must be in [0, 1), got {}", self.sum_tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStatus {
    Accepted,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub scores: ScoreVector,
    pub explanation: Explanation,
}

/// One refinement iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BootstrapStep {
    Parsed { scores: ScoreVector, explanation: Explanation },
    Failed { error: String, raw: String },
}

impl BootstrapStep {
    pub fn scores(&self) -> Option<&ScoreVector> {
        match self {
            BootstrapStep::Parsed { scores, .. } => Some(scores),
            BootstrapStep::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub status: BootstrapStatus,
    pub iterations: usize,
    pub history: Vec<BootstrapStep>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<ScoredAnswer>,
}

/// True iff `gt` has the unique highest score, ahead of every other type
/// by at least `margin`.
pub fn accept_scores(scores: &ScoreVector, gt: VisualizationType, margin: f64) -> bool {
    let own = scores.get(gt);
    let runner_up = VisualizationType::ALL.iter().filter(|&&t| t != gt).map(|&t| scores.get(t)).fold(f64::NEG_INFINITY, f64::max);
    own > runner_up && own - runner_up >= margin - MARGIN_SLACK
}

/// Hint naming the ground truth and the best-scored wrong type (canonical
/// order on ties).
pub fn compose_hint(prev: &ScoreVector, gt: VisualizationType, margin: f64) -> Result<HintFill> {
    if accept_scores(prev, gt, margin) {
        return Err(Error::Precondition(format!("scores already accept {gt}; no hint is needed")));
    }
    let b = prev.ranked().into_iter().find(|&t| t != gt).expect("four types");
    Ok(HintFill { a: gt, b, c: *prev })
}

/// Everything a pipeline step needs to talk to the model.
#[derive(Clone, Copy)]
pub struct LlmContext<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a Templates,
    pub settings: &'a LlmSettings,
}

impl LlmContext<'_> {
    fn ask(&self, prompt: String) -> Result<(CacheKey, String)> {
        check_prompt_length(&prompt, self.settings.max_prompt_chars)?;
        let req = self.settings.request(prompt);
        let resp = self.gateway.complete(&req)?;
        Ok((cache_key(&req), resp.text))
    }

    pub fn describe(&self, features: &FeatureMap) -> Result<FeatureDescription> {
        self.templates.describe_dataset(features, self.gateway, self.settings)
    }
}

/// Zero-shot answer, then hint-guided retries until the ground truth wins
/// by the margin or `max_iters` is spent.
pub fn bootstrap_example(entry: &RetrievalEntry, ctx: LlmContext, cfg: &BootstrapConfig) -> Result<BootstrapOutcome> {
    cfg.validate()?;
    let desc = entry
        .description
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("entry {} has no description", entry.id)))?;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut previous: Option<ScoreVector> = None;
    for _ in 0..cfg.max_iters {
        let prompt = match &previous {
            None => ctx.templates.render_recommendation_prompt(desc, &[]),
            Some(prev) => ctx.templates.render_hint_prompt(desc, &compose_hint(prev, entry.label, cfg.margin)?)?,
        };
        let (_, text) = ctx.ask(prompt)?;
        match parse_scores(&text, cfg.sum_tolerance) {
            Ok((scores, explanation)) => {
                history.push(BootstrapStep::Parsed { scores, explanation: explanation.clone() });
                if accept_scores(&scores, entry.label, cfg.margin) {
                    return Ok(BootstrapOutcome {
                        status: BootstrapStatus::Accepted,
                        iterations: history.len(),
                        history,
                        final_answer: Some(ScoredAnswer { scores, explanation }),
                    });
                }
                previous = Some(scores);
            }
            Err(e) => {
                warn!("entry {}: unparseable answer ({e})", entry.id);
                history.push(BootstrapStep::Failed { error: e.to_string(), raw: text });
            }
        }
    }
    Ok(BootstrapOutcome { status: BootstrapStatus::Pruned, iterations: history.len(), history, final_answer: None })
}

/// Runs `f` over `items` on at most `parallelism` threads, keeping order.
pub fn run_bounded<T, R, F>(items: &[T], parallelism: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Describes every entry lacking a description, then bootstraps every entry
/// lacking an outcome.
pub fn bootstrap_retrieval_set(set: &mut RetrievalSet, ctx: LlmContext, cfg: &BootstrapConfig, parallelism: usize) -> Result<()> {
    cfg.validate()?;
    let threads = ctx.gateway.effective_parallelism(parallelism);
    let done = run_bounded(&set.entries, threads, |entry| {
        let mut entry = entry.clone();
        if entry.description.is_none() {
            entry.description = Some(ctx.describe(&entry.features)?);
        }
        if entry.bootstrap.is_none() {
            entry.bootstrap = Some(bootstrap_example(&entry, ctx, cfg)?);
        }
        Ok(entry)
    })?;
    set.entries = done;
    Ok(())
}

/// Keeps only accepted entries. The standardization statistics still
/// describe the original pool.
pub fn prune_retrieval_set(set: &RetrievalSet) -> Result<RetrievalSet> {
    if let Some(e) = set.entries.iter().find(|e| e.bootstrap.is_none()) {
        return Err(Error::Precondition(format!("entry {} has not been bootstrapped", e.id)));
    }
    let entries: Vec<RetrievalEntry> = set.accepted().cloned().collect();
    let pruned = set.entries.len() - entries.len();
    let mut warnings = set.warnings.clone();
    if entries.is_empty() && !set.entries.is_empty() {
        let msg = "every retrieval entry was pruned; only zero-shot recommendation (k = 0) is possible".to_string();
        warn!("{msg}");
        warnings.push(msg);
    } else if pruned > 0 {
        info!("pruned {pruned} of {} retrieval entries", set.entries.len());
    }
    Ok(RetrievalSet {
        schema_version: set.schema_version.clone(),
        stats: set.stats.clone(),
        config: set.config.clone(),
        entries,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    #[serde(rename = "id")]
    pub dataset_id: String,
    pub scores: ScoreVector,
    pub top2: [VisualizationType; 2],
    pub explanation: Explanation,
    pub demo_ids: Vec<String>,
    pub prompt_digest: CacheKey,
}

/// Features, description and vector of a test dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub id: String,
    pub features: FeatureMap,
    pub description: FeatureDescription,
    pub vector: FeatureVector,
}

pub fn prepare_query(test: &TabularDataset, set: &RetrievalSet, ctx: LlmContext) -> Result<PreparedQuery> {
    let features = features::extract_features(test);
    let vector = features::vectorize(&features, catalog(), &set.stats)?;
    let description = ctx.describe(&features)?;
    Ok(PreparedQuery { id: test.id.clone(), features, description, vector })
}

/// One recommendation call for a prepared query.
///
/// An unparseable answer is re-requested once when the backend can answer
/// differently; cached and scripted backends fail straight away.
pub fn recommend_prepared(
    query: &PreparedQuery,
    set: &RetrievalSet,
    rcfg: &RetrievalConfig,
    ctx: LlmContext,
    pcfg: &BootstrapConfig,
) -> Result<Recommendation> {
    rcfg.validate()?;
    let demos = nearest_demonstrations(&query.vector, set, rcfg.k, rcfg.ordering, rcfg.seed)?;
    let blocks = demos.iter().map(|e| ctx.templates.build_demonstration(e)).collect::<Result<Vec<_>>>()?;
    let prompt = ctx.templates.render_recommendation_prompt(&query.description, &blocks);
    let (digest, mut text) = ctx.ask(prompt.clone())?;
    let mut parsed = parse_scores(&text, pcfg.sum_tolerance);
    if parsed.is_err() && ctx.gateway.can_resample() {
        warn!("dataset {}: unparseable answer, asking again", query.id);
        text = ctx.ask(prompt)?.1;
        parsed = parse_scores(&text, pcfg.sum_tolerance);
    }
    let (scores, explanation) = parsed.map_err(|source| Error::Unparseable { source, raw: text })?;
    Ok(Recommendation {
        dataset_id: query.id.clone(),
        scores,
        top2: scores.top2(),
        explanation,
        demo_ids: demos.iter().map(|e| e.id.clone()).collect(),
        prompt_digest: digest,
    })
}

pub fn recommend(
    test: &TabularDataset,
    set: &RetrievalSet,
    rcfg: &RetrievalConfig,
    ctx: LlmContext,
    pcfg: &BootstrapConfig,
) -> Result<Recommendation> {
    let query = prepare_query(test, set, ctx)?;
    recommend_prepared(&query, set, rcfg, ctx, pcfg)
}

/// Recommendations for many datasets, in input order.
pub fn recommend_all(
    tests: &[TabularDataset],
    set: &RetrievalSet,
    rcfg: &RetrievalConfig,
    ctx: LlmContext,
    pcfg: &BootstrapConfig,
    parallelism: usize,
) -> Result<Vec<Recommendation>> {
    rcfg.validate()?;
    let available = set.accepted().count();
    if rcfg.k > available {
        return Err(Error::NotEnoughDemonstrations { requested: rcfg.k, available });
    }
    let threads = ctx.gateway.effective_parallelism(parallelism);
    run_bounded(tests, threads, |t| recommend(t, set, rcfg, ctx, pcfg))
}

/// Hits@2 in percent per class (`None` for classes without examples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub line: Option<f64>,
    pub scatter: Option<f64>,
    pub bar: Option<f64>,
    #[serde(rename = "box")]
    pub box_plot: Option<f64>,
    pub overall: f64,
    pub n: ClassCountsJson,
}

/// `n` as it appears in the metrics JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCountsJson {
    pub line: usize,
    pub scatter: usize,
    pub bar: usize,
    #[serde(rename = "box")]
    pub box_plot: usize,
    pub total: usize,
}

impl Metrics {
    pub fn class(&self, t: VisualizationType) -> Option<f64> {
        match t {
            VisualizationType::LineChart => self.line,
            VisualizationType::ScatterPlot => self.scatter,
            VisualizationType::BarChart => self.bar,
            VisualizationType::BoxPlot => self.box_plot,
        }
    }
}

pub fn evaluate_hits_at_2(recs: &[Recommendation], gts: &[VisualizationType]) -> Result<Metrics> {
    if recs.is_empty() {
        return Err(Error::Precondition("no recommendations to evaluate".into()));
    }
    if recs.len() != gts.len() {
        return Err(Error::LengthMismatch { left: recs.len(), right: gts.len() });
    }
    let mut hits = [0usize; 4];
    let mut counts = [0usize; 4];
    for (r, &gt) in recs.iter().zip(gts) {
        counts[gt.index()] += 1;
        if r.top2.contains(&gt) {
            hits[gt.index()] += 1;
        }
    }
    let pct = |h: usize, n: usize| (n > 0).then(|| 100.0 * h as f64 / n as f64);
    let total_hits: usize = hits.iter().sum();
    Ok(Metrics {
        line: pct(hits[0], counts[0]),
        scatter: pct(hits[1], counts[1]),
        bar: pct(hits[2], counts[2]),
        box_plot: pct(hits[3], counts[3]),
        overall: 100.0 * total_hits as f64 / recs.len() as f64,
        n: ClassCountsJson { line: counts[0], scatter: counts[1], bar: counts[2], box_plot: counts[3], total: recs.len() },
    })
}

/// Ground-truth labels aligned with `recs`; ids must match one to one.
pub fn labels_for(recs: &[Recommendation], corpus: &[LabeledCorpusRecord]) -> Result<Vec<VisualizationType>> {
    let by_id: HashMap<&str, VisualizationType> = corpus.iter().map(|r| (r.dataset.id.as_str(), r.label)).collect();
    let mut seen = HashSet::new();
    let mut labels = Vec::with_capacity(recs.len());
    for r in recs {
        if !seen.insert(r.dataset_id.as_str()) {
            return Err(Error::Precondition(format!("recommendation for {} appears twice", r.dataset_id)));
        }
        let label = by_id
            .get(r.dataset_id.as_str())
            .ok_or_else(|| Error::Precondition(format!("recommendation {} has no labeled dataset", r.dataset_id)))?;
        labels.push(*label);
    }
    if let Some(missing) = corpus.iter().find(|c| !seen.contains(c.dataset.id.as_str())) {
        return Err(Error::Precondition(format!("labeled dataset {} has no recommendation", missing.dataset.id)));
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Pooled Pearson r; `None` when either series has zero variance.
    pub pearson_r: Option<f64>,
    pub used: usize,
    pub excluded: Vec<String>,
}

/// Agreement between each recommendation's scores and the scores the model
/// assigns from the explanation alone.
pub fn explanation_consistency(recs: &[Recommendation], ctx: LlmContext, tolerance: f64) -> Result<ConsistencyReport> {
    if recs.len() < 2 {
        return Err(Error::Precondition(format!("explanation consistency needs at least 2 recommendations, got {}", recs.len())));
    }
    let mut original = Vec::new();
    let mut repredicted = Vec::new();
    let mut excluded = Vec::new();
    for r in recs {
        let (_, text) = ctx.ask(ctx.templates.render_rescore_prompt(&r.explanation))?;
        match parse_score_vector(&text, tolerance) {
            Ok(s) => {
                original.extend(r.scores.values());
                repredicted.extend(s.values());
            }
            Err(e) => {
                warn!("re-scoring {} failed ({e}); excluded", r.dataset_id);
                excluded.push(r.dataset_id.clone());
            }
        }
    }
    let used = recs.len() - excluded.len();
    if used < 2 {
        return Err(Error::Precondition(format!("only {used} recommendation(s) could be re-scored")));
    }
    Ok(ConsistencyReport { pearson_r: stats::pearson(&original, &repredicted).map(|(r, _)| r), used, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    K,
    RetrievalSize,
    Ordering,
}

impl AblationAxis {
    pub fn from_name(s: &str) -> Option<Self> {
        match s.replace('-', "_").as_str() {
            "k" | "K" => Some(AblationAxis::K),
            "retrieval_size" => Some(AblationAxis::RetrievalSize),
            "ordering" => Some(AblationAxis::Ordering),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPoint {
    K(usize),
    RetrievalSize(usize),
    Ordering(DemoOrdering),
}

impl AblationPoint {
    pub fn axis(&self) -> AblationAxis {
        match self {
            AblationPoint::K(_) => AblationAxis::K,
            AblationPoint::RetrievalSize(_) => AblationAxis::RetrievalSize,
            AblationPoint::Ordering(_) => AblationAxis::Ordering,
        }
    }

    pub fn parse(axis: AblationAxis, value: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid {axis:?} grid value {value:?}"));
        Ok(match axis {
            AblationAxis::K => AblationPoint::K(value.trim().parse().map_err(|_| bad())?),
            AblationAxis::RetrievalSize => AblationPoint::RetrievalSize(value.trim().parse().map_err(|_| bad())?),
            AblationAxis::Ordering => AblationPoint::Ordering(DemoOrdering::from_name(value.trim()).ok_or_else(bad)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub point: AblationPoint,
    pub metrics: Metrics,
}

/// The first `size` accepted entries taking cluster ranks round-robin
/// (every cluster's closest entry, then every cluster's second, ...).
pub fn subset_by_size(set: &RetrievalSet, size: usize) -> Result<RetrievalSet> {
    let mut accepted: Vec<&RetrievalEntry> = set.accepted().collect();
    if size > accepted.len() {
        return Err(Error::Config(format!("retrieval size {size} exceeds the {} accepted entries", accepted.len())));
    }
    accepted.sort_by(|a, b| (a.cluster_rank, a.cluster_id, &a.id).cmp(&(b.cluster_rank, b.cluster_id, &b.id)));
    let keep: HashSet<&str> = accepted.iter().take(size).map(|e| e.id.as_str()).collect();
    let mut subset = set.clone();
    subset.entries.retain(|e| keep.contains(e.id.as_str()));
    Ok(subset)
}

/// Hits@2 for each grid point with every other setting held fixed. Test
/// datasets are described once and reused across the grid.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    grid: &[AblationPoint],
    set: &RetrievalSet,
    tests: &[LabeledCorpusRecord],
    rcfg: &RetrievalConfig,
    ctx: LlmContext,
    pcfg: &BootstrapConfig,
    parallelism: usize,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::Config("empty ablation grid".into()));
    }
    if tests.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let accepted = set.accepted().count();
    let mut variants = Vec::with_capacity(grid.len());
    for point in grid {
        let mut cfg = rcfg.clone();
        let mut subset = None;
        match *point {
            AblationPoint::K(k) => {
                if k > MAX_DEMONSTRATIONS || k > accepted {
                    return Err(Error::Config(format!(
                        "k = {k} is outside 0..={}",
                        MAX_DEMONSTRATIONS.min(accepted)
                    )));
                }
                cfg.k = k;
            }
            AblationPoint::RetrievalSize(size) => {
                let s = subset_by_size(set, size)?;
                if cfg.k > size {
                    return Err(Error::Config(format!("retrieval size {size} is smaller than k = {}", cfg.k)));
                }
                subset = Some(s);
            }
            AblationPoint::Ordering(o) => {
                if cfg.k > accepted {
                    return Err(Error::NotEnoughDemonstrations { requested: cfg.k, available: accepted });
                }
                cfg.ordering = o;
            }
        }
        cfg.validate()?;
        variants.push((*point, cfg, subset));
    }

    let threads = ctx.gateway.effective_parallelism(parallelism);
    let queries = run_bounded(tests, threads, |t| prepare_query(&t.dataset, set, ctx))?;
    let labels: Vec<VisualizationType> = tests.iter().map(|t| t.label).collect();
    let mut rows = Vec::with_capacity(variants.len());
    for (point, cfg, subset) in &variants {
        let target = subset.as_ref().unwrap_or(set);
        let recs = run_bounded(&queries, threads, |q| recommend_prepared(q, target, cfg, ctx, pcfg))?;
        rows.push(AblationRow { point: *point, metrics: evaluate_hits_at_2(&recs, &labels)? });
    }
    Ok(rows)
}
