//! Dataset model, corpus ingestion and column kind inference.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Share of non-missing values that must parse as dates for a Time column.
const TIME_SHARE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Number(f64),
    /// Seconds since the Unix epoch, UTC.
    Timestamp(i64),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// String rendering used for element comparisons across columns.
    pub fn render(&self) -> Option<String> {
        match self {
            Cell::Text(s) => Some(s.clone()),
            Cell::Number(v) => Some(format!("{v}")),
            Cell::Timestamp(t) => Some(format_timestamp(*t)),
            Cell::Missing => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    String,
    Integer,
    Decimal,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneralType {
    C,
    Q,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ColumnKind {
    pub data_type: DataType,
    pub general_type: GeneralType,
}

impl ColumnKind {
    pub fn of(data_type: DataType) -> Self {
        let general_type = match data_type {
            DataType::String => GeneralType::C,
            DataType::Integer | DataType::Decimal => GeneralType::Q,
            DataType::Time => GeneralType::T,
        };
        ColumnKind { data_type, general_type }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    cells: Vec<Cell>,
    kind: ColumnKind,
}

impl Column {
    /// Builds a column after checking that every cell fits `kind`.
    pub fn new(name: impl Into<String>, cells: Vec<Cell>, kind: ColumnKind) -> Result<Self> {
        let name = name.into();
        if cells.is_empty() {
            return Err(Error::Precondition(format!("column {name:?} has no cells")));
        }
        let fits = |c: &Cell| match (c, kind.data_type) {
            (Cell::Missing, _) => true,
            (Cell::Text(_), DataType::String) => true,
            (Cell::Number(v), DataType::Decimal) => v.is_finite(),
            (Cell::Number(v), DataType::Integer) => v.is_finite() && v.fract() == 0.0,
            (Cell::Timestamp(_), DataType::Time) => true,
            _ => false,
        };
        if let Some(bad) = cells.iter().find(|c| !fits(c)) {
            return Err(Error::Precondition(format!(
                "column {name:?}: cell {bad:?} is not coercible to {:?}",
                kind.data_type
            )));
        }
        Ok(Column { name, cells, kind })
    }

    /// Infers the column kind from raw renderings and coerces every cell.
    ///
    /// `None` entries are missing values. In a Time column the few values
    /// that do not parse as dates become missing.
    pub fn from_raw(name: impl Into<String>, raw: &[Option<&str>]) -> Result<Self> {
        let kind = infer_column_kind(raw);
        let cells = raw
            .iter()
            .map(|v| match v {
                None => Cell::Missing,
                Some(s) => match kind.data_type {
                    DataType::String => Cell::Text((*s).to_string()),
                    DataType::Integer | DataType::Decimal => {
                        parse_decimal(s).map(Cell::Number).unwrap_or(Cell::Missing)
                    }
                    DataType::Time => parse_timestamp(s).map(Cell::Timestamp).unwrap_or(Cell::Missing),
                },
            })
            .collect();
        Column::new(name, cells, kind)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Non-missing numeric values in row order.
    pub fn numbers(&self) -> Vec<f64> {
        self.cells.iter().filter_map(Cell::as_number).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub id: String,
    pub x: Column,
    pub y: Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VisualizationType {
    LineChart,
    ScatterPlot,
    BarChart,
    BoxPlot,
}

impl VisualizationType {
    /// Canonical order, also used as the tie-break order.
    pub const ALL: [VisualizationType; 4] = [
        VisualizationType::LineChart,
        VisualizationType::ScatterPlot,
        VisualizationType::BarChart,
        VisualizationType::BoxPlot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn display_name(self) -> &'static str {
        match self {
            VisualizationType::LineChart => "line chart",
            VisualizationType::ScatterPlot => "scatter plot",
            VisualizationType::BarChart => "bar chart",
            VisualizationType::BoxPlot => "box plot",
        }
    }

    /// Lowercase label used in corpus files.
    pub fn label(self) -> &'static str {
        match self {
            VisualizationType::LineChart => "line",
            VisualizationType::ScatterPlot => "scatter",
            VisualizationType::BarChart => "bar",
            VisualizationType::BoxPlot => "box",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.label() == label)
    }

    pub fn from_display_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.display_name() == name)
    }
}

impl fmt::Display for VisualizationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl Serialize for VisualizationType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for VisualizationType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        VisualizationType::from_label(&s)
            .or_else(|| VisualizationType::from_display_name(&s))
            .ok_or_else(|| serde::de::Error::custom(format!("unknown visualization type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpusRecord {
    pub dataset: TabularDataset,
    pub label: VisualizationType,
}

/// A corpus line; `label` is absent in unlabeled test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub dataset: TabularDataset,
    pub label: Option<VisualizationType>,
}

impl CorpusRecord {
    pub fn into_labeled(self) -> Option<LabeledCorpusRecord> {
        let label = self.label?;
        Some(LabeledCorpusRecord { dataset: self.dataset, label })
    }
}

fn allowed_labels() -> String {
    VisualizationType::ALL.iter().map(|t| format!("{:?}", t.label())).collect::<Vec<_>>().join(", ")
}

/// Reads a corpus file. With `labeled`, every record must carry a label.
pub fn load_corpus(path: impl AsRef<Path>, labeled: bool) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_corpus(&text, labeled)
}

pub fn load_labeled_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledCorpusRecord>> {
    Ok(load_corpus(path, true)?.into_iter().filter_map(CorpusRecord::into_labeled).collect())
}

pub fn parse_corpus(text: &str, labeled: bool) -> Result<Vec<CorpusRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(line, labeled).map_err(|message| Error::Corpus { line: line_no, message })?;
        if !seen.insert(record.dataset.id.clone()) {
            return Err(Error::Corpus {
                line: line_no,
                message: format!("duplicate dataset id {:?}", record.dataset.id),
            });
        }
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn parse_record(line: &str, labeled: bool) -> std::result::Result<CorpusRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "id" | "x" | "y" | "label") {
            return Err(format!(
                "unexpected field {key:?}; datasets must have exactly two columns named x and y"
            ));
        }
    }
    let id = obj.get("id").and_then(Value::as_str).ok_or("missing string field \"id\"")?;
    if id.is_empty() {
        return Err("dataset id must be nonempty".into());
    }
    let x = parse_column(obj, "x")?;
    let y = parse_column(obj, "y")?;
    let label = match obj.get("label") {
        None | Some(Value::Null) if !labeled => None,
        None | Some(Value::Null) => return Err("missing label".into()),
        Some(Value::String(s)) => Some(
            VisualizationType::from_label(s)
                .ok_or_else(|| format!("unknown label {s:?}; allowed labels are {}", allowed_labels()))?,
        ),
        Some(other) => return Err(format!("label must be a string, found {other}")),
    };
    Ok(CorpusRecord { dataset: TabularDataset { id: id.to_string(), x, y }, label })
}

fn parse_column(obj: &Map<String, Value>, key: &str) -> std::result::Result<Column, String> {
    let col = obj.get(key).and_then(Value::as_object).ok_or_else(|| format!("missing column object {key:?}"))?;
    let name = col
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("column {key:?} is missing a string \"name\""))?;
    let values = col
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| format!("column {key:?} is missing a \"values\" array"))?;
    if values.is_empty() {
        return Err(format!("column {key:?} has no values"));
    }
    let mut raw: Vec<Option<String>> = Vec::with_capacity(values.len());
    for v in values {
        raw.push(match v {
            Value::Null => None,
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            other => return Err(format!("column {key:?}: unsupported value {other}")),
        });
    }
    let borrowed: Vec<Option<&str>> = raw.iter().map(Option::as_deref).collect();
    Column::from_raw(name, &borrowed).map_err(|e| e.to_string())
}

/// Serializes records in the corpus line format, one record per line.
pub fn write_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(render_corpus(records).as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn render_corpus(records: &[CorpusRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(r.dataset.id.clone()));
        obj.insert("x".into(), column_json(&r.dataset.x));
        obj.insert("y".into(), column_json(&r.dataset.y));
        if let Some(label) = r.label {
            obj.insert("label".into(), Value::String(label.label().into()));
        }
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

fn column_json(col: &Column) -> Value {
    let values = col
        .cells()
        .iter()
        .map(|c| match c {
            Cell::Missing => Value::Null,
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Timestamp(t) => Value::String(format_timestamp(*t)),
            Cell::Number(v) if col.kind().data_type == DataType::Integer && v.abs() < 9.0e15 => {
                Value::from(*v as i64)
            }
            Cell::Number(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
        })
        .collect();
    serde_json::json!({ "name": col.name(), "values": Value::Array(values) })
}

/// Infers data and general type from raw renderings (`None` = missing).
///
/// Time wins when at least 95% of the non-missing values parse as dates,
/// then Integer, then Decimal; String is the fallback.
pub fn infer_column_kind(raw_values: &[Option<&str>]) -> ColumnKind {
    let present: Vec<&str> = raw_values.iter().flatten().copied().collect();
    if present.is_empty() {
        return ColumnKind::of(DataType::String);
    }
    let dates = present.iter().filter(|s| parse_timestamp(s).is_some()).count();
    if dates as f64 >= TIME_SHARE * present.len() as f64 {
        return ColumnKind::of(DataType::Time);
    }
    if present.iter().all(|s| parse_integer(s).is_some()) {
        return ColumnKind::of(DataType::Integer);
    }
    if present.iter().all(|s| parse_decimal(s).is_some()) {
        return ColumnKind::of(DataType::Decimal);
    }
    ColumnKind::of(DataType::String)
}

fn parse_integer(s: &str) -> Option<i64> {
    s.trim().parse::<i64>().ok()
}

fn parse_decimal(s: &str) -> Option<f64> {
    let t = s.trim();
    // Rust accepts "inf"/"nan" spellings; those are text here.
    if !t.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses the accepted date formats into Unix seconds (UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let t = s.trim();
    if t.len() < 8 {
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.timestamp());
    }
    const DATETIME: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for fmt in DATETIME {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    const DATE: [&str; 3] = ["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"];
    for fmt in DATE {
        if let Ok(d) = NaiveDate::parse_from_str(t, fmt) {
            return d.and_hms_opt(0, 0, 0).map(|dt| dt.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}
