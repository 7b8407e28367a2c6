//! Prompt templates, feature serialization, dataset descriptions and the
//! score/explanation parser.

use std::fmt;
use std::fs;
use std::path::Path;

use log::warn;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureValue};
use crate::llm::{Gateway, LlmSettings};
use crate::retrieval::RetrievalEntry;
use crate::tabular::VisualizationType;

pub const DEFAULT_SUM_TOLERANCE: f64 = 0.05;

/// Sums this close to 1 are floating-point noise and are left untouched.
const EXACT_SUM_EPS: f64 = 1e-12;

pub const DESCRIPTION_TEMPLATE: &str = "The features of a given tabular dataset are provided in the following delimited by triple backticks. Your task is to generate a detailed text description, in 1000 characters, that focus on features that are important for visualization type selection and comprehensively analyzes this tabuar dataset based on its feature values from both single-column and cross-column perspectives. Note that the response must exclude words such as line chart, scatter plot, bar chart, and box plot, since these words will mislead further visualization recommendation. The response format can be as \"Single-column perspective: [...] \nCross-column perspective: [...].\"\nEnsure that the summary maintains strong generalization ability and includes all vital information.\n\nFeatures for a tabular dataset: ```{feature_block}```";

pub const RECOMMENDATION_TEMPLATE: &str = "Determine whether each visualization type in the following list of visualization types is a suitable visualization type in the text description for a tabular dataset below, which is delimited with triple backticks. \nGive your explanation and your answer at the end as json (Explanation is as below: .\n The final answer in JSON format would be:), where each element consists of a visualization type and a score ranging from 0 to 1 (1 means the most suitable). \nThe scores should sum to be 1 (line + scatter + bar + box = 1.0). \nList of visualization types: [line chart, scatter plot, bar chart, and box plot]. \nText description for a tabular dataset:```{description}```";

pub const HINT_TEMPLATE: &str = "Determine whether each visualization type in the following list of visualization types is a suitable visualization type in the text description for a tabular dataset below, which is delimited with triple backticks. \nHint: {hint_a} may be more suitable than {hint_b}, however, previous score is {hint_c}. \nWith the given hint, editing your explanation and improve your answer at the end as json (Explanation is as below: .\n The final answer in JSON format would be:), where each element consists of a visualization type and a score ranging from 0 to 1 (1 means the most suitable). \nThe scores should sum to be 1 (line + scatter + bar + box = 1.0). \nList of visualization types: [line chart, scatter plot, bar chart, and box plot]. \nText description for a tabular dataset: ```{description}```";

pub const RESCORE_TEMPLATE: &str = "Based only on the following explanation, assign a suitability score to each visualization type in the following list of visualization types for the tabular dataset that the explanation discusses. The explanation is delimited with triple backticks. \nGive your answer at the end as json, where each element consists of a visualization type and a score ranging from 0 to 1 (1 means the most suitable). \nThe scores should sum to be 1 (line + scatter + bar + box = 1.0). \nList of visualization types: [line chart, scatter plot, bar chart, and box plot]. \nExplanation: ```{explanation}```";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty response")]
    EmptyResponse,
    #[error("no JSON object found in response")]
    NoJson,
    #[error("JSON answer has no score for {0}")]
    MissingType(&'static str),
    #[error("score for {0} is not a number")]
    NotANumber(&'static str),
    #[error("scores sum to {sum}, outside 1 ± {tolerance}")]
    BadSum { sum: f64, tolerance: f64 },
    #[error("no explanation precedes the JSON answer")]
    EmptyExplanation,
}

/// One score per visualization type, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreVector([f64; 4]);

impl ScoreVector {
    pub fn new(scores: [f64; 4]) -> Self {
        ScoreVector(scores)
    }

    pub fn uniform() -> Self {
        ScoreVector([0.25; 4])
    }

    pub fn get(&self, t: VisualizationType) -> f64 {
        self.0[t.index()]
    }

    pub fn values(&self) -> [f64; 4] {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VisualizationType, f64)> + '_ {
        VisualizationType::ALL.into_iter().map(|t| (t, self.get(t)))
    }

    /// Types by descending score; equal scores keep canonical order.
    pub fn ranked(&self) -> [VisualizationType; 4] {
        let mut order = VisualizationType::ALL;
        order.sort_by(|a, b| self.get(*b).total_cmp(&self.get(*a)));
        order
    }

    pub fn top2(&self) -> [VisualizationType; 2] {
        let r = self.ranked();
        [r[0], r[1]]
    }

    /// `{"line chart": v, "scatter plot": v, "bar chart": v, "box plot": v}`.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scores serialize")
    }

    /// `line chart: v, scatter plot: v, bar chart: v, box plot: v`.
    pub fn render_inline(&self) -> String {
        self.iter().map(|(t, v)| format!("{}: {}", t.display_name(), format_score(v))).collect::<Vec<_>>().join(", ")
    }
}

fn format_score(v: f64) -> String {
    serde_json::to_string(&v).expect("finite score")
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(4))?;
        for (t, v) in self.iter() {
            m.serialize_entry(t.display_name(), &v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ScoreVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of the four visualization type scores")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<ScoreVector, A::Error> {
                let mut out = [None; 4];
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    let t = resolve_type_key(&k).ok_or_else(|| de::Error::custom(format!("unknown visualization type {k:?}")))?;
                    out[t.index()] = Some(v);
                }
                let mut scores = [0.0; 4];
                for t in VisualizationType::ALL {
                    scores[t.index()] = out[t.index()].ok_or_else(|| de::Error::missing_field(t.display_name()))?;
                }
                Ok(ScoreVector(scores))
            }
        }
        d.deserialize_map(V)
    }
}

/// The prose rationale preceding the JSON answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Explanation(pub String);

impl Explanation {
    pub fn full_text(&self) -> &str {
        &self.0
    }
}

/// Maps a JSON key such as "Line Chart", "line_chart" or "box" to a type.
pub fn resolve_type_key(key: &str) -> Option<VisualizationType> {
    let norm: String = key
        .trim()
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    match norm.as_str() {
        "line chart" | "line" | "linechart" | "line graph" | "line plot" => Some(VisualizationType::LineChart),
        "scatter plot" | "scatter" | "scatterplot" | "scatter chart" => Some(VisualizationType::ScatterPlot),
        "bar chart" | "bar" | "barchart" | "bar graph" | "bar plot" => Some(VisualizationType::BarChart),
        "box plot" | "box" | "boxplot" | "box chart" | "box and whisker plot" => Some(VisualizationType::BoxPlot),
        _ => None,
    }
}

/// End index (exclusive) of the balanced object starting at `start`.
fn matching_brace(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Byte span and value of the last top-level JSON object in `text`.
fn last_json_object(text: &str) -> Option<(usize, usize, Map<String, Value>)> {
    let bytes = text.as_bytes();
    let mut found = None;
    let mut i = 0;
    while let Some(offset) = text[i..].find('{') {
        let start = i + offset;
        match matching_brace(bytes, start).and_then(|end| {
            serde_json::from_str::<Map<String, Value>>(&text[start..end]).ok().map(|m| (end, m))
        }) {
            Some((end, m)) => {
                found = Some((start, end, m));
                i = end;
            }
            None => i = start + 1,
        }
    }
    found
}

fn strip_answer_lead_in(prefix: &str) -> &str {
    let mut s = prefix.trim_end();
    loop {
        let before = s;
        for tag in ["```json", "```JSON", "```"] {
            if let Some(rest) = s.strip_suffix(tag) {
                s = rest.trim_end();
            }
        }
        if s.len() >= 4 && s[s.len() - 4..].eq_ignore_ascii_case("json") {
            let rest = &s[..s.len() - 4];
            if rest.is_empty() || rest.ends_with(char::is_whitespace) {
                s = rest.trim_end();
            }
        }
        if s == before {
            return s.trim();
        }
    }
}

fn score_from_value(v: &Value, t: VisualizationType) -> std::result::Result<f64, ParseError> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite()).ok_or(ParseError::NotANumber(t.display_name()))
}

fn scores_from_object(obj: &Map<String, Value>, tolerance: f64) -> std::result::Result<ScoreVector, ParseError> {
    let mut found: [Option<f64>; 4] = [None; 4];
    for (k, v) in obj {
        if let Some(t) = resolve_type_key(k) {
            found[t.index()] = Some(score_from_value(v, t)?);
        }
    }
    let mut scores = [0.0; 4];
    for t in VisualizationType::ALL {
        scores[t.index()] = found[t.index()].ok_or(ParseError::MissingType(t.display_name()))?.clamp(0.0, 1.0);
    }
    let sum: f64 = scores.iter().sum();
    if sum <= 0.0 || (sum - 1.0).abs() > tolerance {
        return Err(ParseError::BadSum { sum, tolerance });
    }
    if (sum - 1.0).abs() > EXACT_SUM_EPS {
        scores.iter_mut().for_each(|s| *s /= sum);
    }
    Ok(ScoreVector(scores))
}

/// Scores and explanation from a model response.
///
/// The last JSON object in the text is the answer; everything before it
/// (minus a trailing code fence or `json` tag) is the explanation.
pub fn parse_scores(text: &str, tolerance: f64) -> std::result::Result<(ScoreVector, Explanation), ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    let (start, _, obj) = last_json_object(text).ok_or(ParseError::NoJson)?;
    let scores = scores_from_object(&obj, tolerance)?;
    let explanation = strip_answer_lead_in(&text[..start]);
    if explanation.is_empty() {
        return Err(ParseError::EmptyExplanation);
    }
    Ok((scores, Explanation(explanation.to_string())))
}

/// Like [`parse_scores`] but accepts a bare JSON answer.
pub fn parse_score_vector(text: &str, tolerance: f64) -> std::result::Result<ScoreVector, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    let (_, _, obj) = last_json_object(text).ok_or(ParseError::NoJson)?;
    scores_from_object(&obj, tolerance)
}

/// LLM-written description of a dataset's features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDescription {
    text: String,
    has_single_column_section: bool,
    has_cross_column_section: bool,
    contains_forbidden_chart_words: bool,
}

impl FeatureDescription {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyDescription);
        }
        let lower = text.to_lowercase();
        Ok(FeatureDescription {
            has_single_column_section: lower.contains("single-column perspective"),
            has_cross_column_section: lower.contains("cross-column perspective"),
            contains_forbidden_chart_words: VisualizationType::ALL.iter().any(|t| lower.contains(t.display_name())),
            text,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn has_single_column_section(&self) -> bool {
        self.has_single_column_section
    }

    pub fn has_cross_column_section(&self) -> bool {
        self.has_cross_column_section
    }

    pub fn contains_forbidden_chart_words(&self) -> bool {
        self.contains_forbidden_chart_words
    }
}

impl Serialize for FeatureDescription {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for FeatureDescription {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        FeatureDescription::new(String::deserialize(d)?).map_err(de::Error::custom)
    }
}

/// Slots of the hint-guided prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct HintFill {
    /// Ground truth.
    pub a: VisualizationType,
    /// Highest-scoring wrong type.
    pub b: VisualizationType,
    /// Previous scores.
    pub c: ScoreVector,
}

/// A self-contained few-shot block: prompt, explanation and JSON answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemonstrationBlock {
    pub entry_id: String,
    pub text: String,
}

/// Formats a feature value for the description prompt.
pub fn format_feature_value(v: &FeatureValue) -> String {
    match v {
        FeatureValue::Bool(true) => "True".into(),
        FeatureValue::Bool(false) => "False".into(),
        FeatureValue::Missing => "NaN".into(),
        FeatureValue::Number(x) => {
            let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(*x);
            let rounded = if rounded == 0.0 { 0.0 } else { rounded };
            let s = format!("{rounded}");
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        }
    }
}

/// One `name=value` line per feature, in schema order.
pub fn serialize_features(features: &FeatureMap) -> String {
    features.iter().map(|(k, v)| format!("{k}={}", format_feature_value(v))).collect::<Vec<_>>().join("\n")
}

/// Replaces `{name}` placeholders in one pass, so substituted text is never
/// re-scanned.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|s| s.1.len()).sum::<usize>());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in slots {
            if tail.len() > name.len() + 1 && tail[1..].starts_with(name) && tail[1 + name.len()..].starts_with('}') {
                out.push_str(value);
                rest = &tail[name.len() + 2..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// The four prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub description: String,
    pub recommendation: String,
    pub hint: String,
    pub rescore: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            description: DESCRIPTION_TEMPLATE.into(),
            recommendation: RECOMMENDATION_TEMPLATE.into(),
            hint: HINT_TEMPLATE.into(),
            rescore: RESCORE_TEMPLATE.into(),
        }
    }
}

impl Templates {
    /// Built-in templates, overridden by `description.txt`,
    /// `recommendation.txt`, `hint.txt` and `rescore.txt` when present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Config(format!("templates directory {} does not exist", dir.display())));
        }
        let mut t = Templates::default();
        let slots: [(&str, &mut String, &[&str]); 4] = [
            ("description.txt", &mut t.description, &["{feature_block}"]),
            ("recommendation.txt", &mut t.recommendation, &["{description}"]),
            ("hint.txt", &mut t.hint, &["{description}", "{hint_a}", "{hint_b}", "{hint_c}"]),
            ("rescore.txt", &mut t.rescore, &["{explanation}"]),
        ];
        for (file, target, required) in slots {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if let Some(missing) = required.iter().find(|p| !text.contains(*p)) {
                return Err(Error::Config(format!("template {} lacks the {missing} placeholder", path.display())));
            }
            *target = text;
        }
        Ok(t)
    }

    pub fn render_description_prompt(&self, features: &FeatureMap) -> String {
        fill(&self.description, &[("feature_block", &serialize_features(features))])
    }

    fn recommendation_block(&self, desc: &FeatureDescription) -> String {
        fill(&self.recommendation, &[("description", desc.text())])
    }

    /// Demonstration blocks in the given order, then the test block.
    pub fn render_recommendation_prompt(&self, test: &FeatureDescription, demos: &[DemonstrationBlock]) -> String {
        let mut parts: Vec<&str> = demos.iter().map(|d| d.text.as_str()).collect();
        let test_block = self.recommendation_block(test);
        parts.push(&test_block);
        parts.join("\n\n")
    }

    pub fn render_hint_prompt(&self, desc: &FeatureDescription, hint: &HintFill) -> Result<String> {
        if hint.a == hint.b {
            return Err(Error::Precondition(format!("hint names {} as both the better and the worse type", hint.a)));
        }
        Ok(fill(
            &self.hint,
            &[
                ("description", desc.text()),
                ("hint_a", hint.a.display_name()),
                ("hint_b", hint.b.display_name()),
                ("hint_c", &hint.c.render_inline()),
            ],
        ))
    }

    pub fn render_rescore_prompt(&self, explanation: &Explanation) -> String {
        fill(&self.rescore, &[("explanation", explanation.full_text())])
    }

    /// Recommendation prompt for the entry, its accepted explanation and the
    /// canonical JSON of its accepted scores.
    pub fn build_demonstration(&self, entry: &RetrievalEntry) -> Result<DemonstrationBlock> {
        let accepted = entry
            .bootstrap
            .as_ref()
            .filter(|_| entry.is_accepted())
            .and_then(|b| b.final_answer.as_ref())
            .ok_or_else(|| Error::NotAccepted(entry.id.clone()))?;
        let desc = entry
            .description
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("entry {} has no description", entry.id)))?;
        let text = format!(
            "{}\n{}\n{}",
            self.recommendation_block(desc),
            accepted.explanation.full_text(),
            accepted.scores.canonical_json()
        );
        Ok(DemonstrationBlock { entry_id: entry.id.clone(), text })
    }

    /// Asks the model to describe a dataset from its features.
    pub fn describe_dataset(&self, features: &FeatureMap, gateway: &Gateway, settings: &LlmSettings) -> Result<FeatureDescription> {
        let prompt = self.render_description_prompt(features);
        check_prompt_length(&prompt, settings.max_prompt_chars)?;
        let resp = gateway.complete(&settings.request(prompt))?;
        let desc = FeatureDescription::new(resp.text)?;
        if desc.contains_forbidden_chart_words() {
            warn!("feature description mentions a chart type name");
        }
        Ok(desc)
    }
}

pub fn check_prompt_length(prompt: &str, limit: usize) -> Result<()> {
    let chars = prompt.chars().count();
    if chars > limit {
        return Err(Error::PromptTooLong { chars, limit });
    }
    Ok(())
}

pub fn render_description_prompt(features: &FeatureMap) -> String {
    Templates::default().render_description_prompt(features)
}

pub fn render_recommendation_prompt(test: &FeatureDescription, demos: &[DemonstrationBlock]) -> String {
    Templates::default().render_recommendation_prompt(test, demos)
}

pub fn render_hint_prompt(desc: &FeatureDescription, hint: &HintFill) -> Result<String> {
    Templates::default().render_hint_prompt(desc, hint)
}

pub fn describe_dataset(features: &FeatureMap, gateway: &Gateway, settings: &LlmSettings) -> Result<FeatureDescription> {
    Templates::default().describe_dataset(features, gateway, settings)
}

pub fn build_demonstration(entry: &RetrievalEntry) -> Result<DemonstrationBlock> {
    Templates::default().build_demonstration(entry)
}
