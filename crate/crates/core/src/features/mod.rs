//! Statistical feature catalog of a two-column dataset.
//!
//! Every dataset maps to a [`FeatureMap`] whose names follow the versioned
//! [`FeatureSchema`] exactly. [`vectorize`] turns a map into a fixed-order
//! numeric [`FeatureVector`] for clustering and similarity search.

mod cross;
mod single;
pub mod stats;

use std::collections::HashSet;
use std::sync::LazyLock;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tabular::TabularDataset;

pub use cross::{edit_distance, extract_cross_column_features, CROSS_COLUMN_FEATURES};
pub use single::{extract_single_column_features, Role, SINGLE_COLUMN_FEATURES};

pub const SCHEMA_VERSION: &str = "llm4vis-cat-1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue {
    Number(f64),
    Bool(bool),
    Missing,
}

impl FeatureValue {
    /// Non-finite numbers collapse to `Missing`.
    pub fn num(v: f64) -> Self {
        if v.is_finite() {
            FeatureValue::Number(v)
        } else {
            FeatureValue::Missing
        }
    }

    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(FeatureValue::Missing, FeatureValue::num)
    }

    pub fn flag(v: Option<bool>) -> Self {
        v.map_or(FeatureValue::Missing, FeatureValue::Bool)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            FeatureValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Missing)
    }
}

impl Serialize for FeatureValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FeatureValue::Number(v) => s.serialize_f64(*v),
            FeatureValue::Bool(b) => s.serialize_bool(*b),
            FeatureValue::Missing => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for FeatureValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match serde_json::Value::deserialize(d)? {
            serde_json::Value::Null => FeatureValue::Missing,
            serde_json::Value::Bool(b) => FeatureValue::Bool(b),
            serde_json::Value::Number(n) => FeatureValue::opt(n.as_f64()),
            other => return Err(serde::de::Error::custom(format!("invalid feature value {other}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Boolean,
}

/// Partial feature output of one extractor, in emission order.
pub type PartialFeatures = IndexMap<String, FeatureValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    version: String,
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
}

impl FeatureSchema {
    pub fn new(version: impl Into<String>, features: Vec<(String, FeatureKind)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &features {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate feature name {name:?}")));
            }
        }
        let (names, kinds) = features.into_iter().unzip();
        Ok(FeatureSchema { version: version.into(), names, kinds })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, FeatureKind)> {
        self.names.iter().map(String::as_str).zip(self.kinds.iter().copied())
    }
}

static CATALOG: LazyLock<FeatureSchema> = LazyLock::new(|| {
    let mut features = Vec::new();
    for role in [Role::X, Role::Y] {
        for (name, kind) in SINGLE_COLUMN_FEATURES {
            features.push((format!("{name}_{}", role.suffix()), *kind));
        }
    }
    for (name, kind) in CROSS_COLUMN_FEATURES {
        features.push(((*name).to_string(), *kind));
    }
    FeatureSchema::new(SCHEMA_VERSION, features).expect("catalog names are unique")
});

/// The built-in catalog (`llm4vis-cat-1`).
pub fn catalog() -> &'static FeatureSchema {
    &CATALOG
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    schema_version: String,
    entries: IndexMap<String, FeatureValue>,
}

impl FeatureMap {
    /// Orders `entries` by `schema`; names must match the schema exactly.
    pub fn new(schema: &FeatureSchema, mut entries: PartialFeatures) -> Result<Self> {
        let mut ordered = IndexMap::with_capacity(schema.len());
        for name in schema.names() {
            let value = entries.shift_remove(name).ok_or_else(|| Error::SchemaMismatch {
                expected: schema.version().to_string(),
                found: format!("map without feature {name:?}"),
            })?;
            ordered.insert(name.clone(), value);
        }
        if let Some(extra) = entries.keys().next() {
            return Err(Error::SchemaMismatch {
                expected: schema.version().to_string(),
                found: format!("map with unknown feature {extra:?}"),
            });
        }
        Ok(FeatureMap { schema_version: schema.version().to_string(), entries: ordered })
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn get(&self, name: &str) -> Option<&FeatureValue> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("feature maps always serialize")
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureMapRepr {
    schema_version: String,
    features: IndexMap<String, FeatureValue>,
}

impl Serialize for FeatureMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FeatureMapRepr { schema_version: self.schema_version.clone(), features: self.entries.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = FeatureMapRepr::deserialize(d)?;
        Ok(FeatureMap { schema_version: repr.schema_version, entries: repr.features })
    }
}

/// Full catalog for a dataset: x features, y features, then cross-column.
pub fn extract_features(dataset: &TabularDataset) -> FeatureMap {
    let mut all = extract_single_column_features(&dataset.x, Role::X);
    all.extend(extract_single_column_features(&dataset.y, Role::Y));
    all.extend(extract_cross_column_features(&dataset.x, &dataset.y));
    FeatureMap::new(catalog(), all).expect("extractors emit exactly the catalog")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_version: String,
    pub values: Vec<f64>,
    pub standardized: bool,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean and standard deviation of one numeric feature over the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandardizationStats {
    pub features: IndexMap<String, Moments>,
}

impl StandardizationStats {
    /// Population mean/std of every numeric feature, ignoring missing values.
    pub fn compute<'a>(schema: &FeatureSchema, maps: impl IntoIterator<Item = &'a FeatureMap> + Clone) -> Self {
        let mut features = IndexMap::new();
        for (name, kind) in schema.iter() {
            if kind != FeatureKind::Numeric {
                continue;
            }
            let values: Vec<f64> = maps.clone().into_iter().filter_map(|m| m.get(name).and_then(FeatureValue::as_f64)).collect();
            let moments = match (stats::mean(&values), stats::variance(&values)) {
                (Some(mean), Some(var)) => Moments { mean, std: var.sqrt() },
                _ => Moments { mean: 0.0, std: 0.0 },
            };
            features.insert(name.to_string(), moments);
        }
        StandardizationStats { features }
    }

    /// Mean 0, std 1 for every numeric feature: vectorize leaves values as is.
    pub fn identity(schema: &FeatureSchema) -> Self {
        let features = schema
            .iter()
            .filter(|(_, k)| *k == FeatureKind::Numeric)
            .map(|(n, _)| (n.to_string(), Moments { mean: 0.0, std: 1.0 }))
            .collect();
        StandardizationStats { features }
    }
}

/// Encodes a feature map in schema order.
///
/// Booleans become 0/1, numbers are z-scored with the pool statistics
/// (a zero std maps to 0) and missing values land on 0 after
/// standardization.
pub fn vectorize(features: &FeatureMap, schema: &FeatureSchema, stats: &StandardizationStats) -> Result<FeatureVector> {
    if features.schema_version() != schema.version() {
        return Err(Error::SchemaMismatch {
            expected: schema.version().to_string(),
            found: features.schema_version().to_string(),
        });
    }
    let mut values = Vec::with_capacity(schema.len());
    for (name, kind) in schema.iter() {
        let value = features.get(name).ok_or_else(|| Error::SchemaMismatch {
            expected: schema.version().to_string(),
            found: format!("map without feature {name:?}"),
        })?;
        let encoded = match (kind, value) {
            (_, FeatureValue::Missing) => 0.0,
            (_, FeatureValue::Bool(b)) => f64::from(u8::from(*b)),
            (FeatureKind::Boolean, FeatureValue::Number(v)) => *v,
            (FeatureKind::Numeric, FeatureValue::Number(v)) => {
                let m = stats
                    .features
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("no standardization statistics for {name:?}")))?;
                if m.std > 0.0 {
                    (v - m.mean) / m.std
                } else {
                    0.0
                }
            }
        };
        values.push(if encoded.is_finite() { encoded } else { 0.0 });
    }
    Ok(FeatureVector { schema_version: schema.version().to_string(), values, standardized: true })
}
