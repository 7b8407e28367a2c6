use std::collections::{BTreeMap, HashMap, HashSet};

use super::stats;
use super::{FeatureKind, FeatureValue, PartialFeatures};
use crate::tabular::{Cell, Column, DataType, GeneralType};

use FeatureKind::{Boolean as B, Numeric as N};

const SPACING_TOLERANCE: f64 = 1e-3;
const ENTROPY_BINS: usize = 10;
const CURRENCY_SYMBOLS: &[char] = &['$', '€', '£', '¥', '₹', '₩', '₽', '¢', '₺', '₪', '฿'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    X,
    Y,
}

impl Role {
    pub fn suffix(self) -> &'static str {
        match self {
            Role::X => "x",
            Role::Y => "y",
        }
    }
}

/// Per-column feature names (without the role suffix) in catalog order.
pub const SINGLE_COLUMN_FEATURES: &[(&str, FeatureKind)] = &[
    ("data_type_is_string", B),
    ("data_type_is_integer", B),
    ("data_type_is_decimal", B),
    ("data_type_is_time", B),
    ("general_type_is_c", B),
    ("general_type_is_q", B),
    ("general_type_is_t", B),
    ("length", N),
    ("percentage_none", N),
    ("num_unique", N),
    ("percent_unique", N),
    ("has_none", B),
    ("is_unique", B),
    ("mean", N),
    ("median", N),
    ("mode", N),
    ("var", N),
    ("std", N),
    ("min", N),
    ("max", N),
    ("range", N),
    ("q25", N),
    ("q75", N),
    ("normalized_mean", N),
    ("normalized_median", N),
    ("normalized_range", N),
    ("coeff_var", N),
    ("skewness", N),
    ("kurtosis", N),
    ("gini", N),
    ("entropy", N),
    ("normality_statistic", N),
    ("normality_p", N),
    ("is_normal_5", B),
    ("is_normal_1", B),
    ("percent_outliers_15iqr", N),
    ("percent_outliers_1_99", N),
    ("percent_outliers_3std", N),
    ("has_outliers_15iqr", B),
    ("has_outliers_1_99", B),
    ("has_outliers_3std", B),
    ("is_sorted", B),
    ("is_monotonic", B),
    ("is_lin_space", B),
    ("is_log_space", B),
    ("min_value_length", N),
    ("max_value_length", N),
    ("mean_value_length", N),
    ("name_length", N),
    ("num_words_in_name", N),
    ("has_uppercase_in_name", B),
    ("has_digit_in_name", B),
    ("has_currency_symbol_in_name", B),
];

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

fn fraction_outside(xs: &[f64], lo: f64, hi: f64) -> f64 {
    xs.iter().filter(|&&x| x < lo || x > hi).count() as f64 / xs.len() as f64
}

/// Most frequent value; ties go to the smallest.
fn mode(xs: &[f64]) -> Option<f64> {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &x in xs {
        let key = if x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() };
        counts.entry(key).or_insert((x, 0)).1 += 1;
    }
    counts
        .into_values()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map(|(v, _)| v)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= SPACING_TOLERANCE * a.abs().max(b.abs())
}

/// Equal consecutive steps (within tolerance) and a nonzero step; n ≥ 3.
fn is_lin_space(xs: &[f64]) -> Option<bool> {
    if xs.len() < 3 {
        return None;
    }
    let d0 = xs[1] - xs[0];
    Some(d0 != 0.0 && xs.windows(2).all(|w| close(w[1] - w[0], d0)))
}

/// Equal consecutive ratios of positive values, ratio ≠ 1; n ≥ 3.
fn is_log_space(xs: &[f64]) -> Option<bool> {
    if xs.len() < 3 {
        return None;
    }
    if xs.iter().any(|&x| x <= 0.0) {
        return Some(false);
    }
    let r0 = xs[1] / xs[0];
    Some(!close(r0, 1.0) && xs.windows(2).all(|w| close(w[1] / w[0], r0)))
}

fn sortedness<T: PartialOrd>(values: &[T]) -> (Option<bool>, Option<bool>) {
    if values.is_empty() {
        return (None, None);
    }
    let ascending = values.windows(2).all(|w| w[0] <= w[1]);
    let descending = values.windows(2).all(|w| w[0] >= w[1]);
    (Some(ascending), Some(ascending || descending))
}

/// Features of one column, suffixed by `role`, in catalog order.
pub fn extract_single_column_features(col: &Column, role: Role) -> PartialFeatures {
    let kind = col.kind();
    let mut f: HashMap<&'static str, FeatureValue> = HashMap::new();
    let mut put = |name: &'static str, v: FeatureValue| {
        f.insert(name, v);
    };
    let flag = |b: bool| FeatureValue::Bool(b);

    put("data_type_is_string", flag(kind.data_type == DataType::String));
    put("data_type_is_integer", flag(kind.data_type == DataType::Integer));
    put("data_type_is_decimal", flag(kind.data_type == DataType::Decimal));
    put("data_type_is_time", flag(kind.data_type == DataType::Time));
    put("general_type_is_c", flag(kind.general_type == GeneralType::C));
    put("general_type_is_q", flag(kind.general_type == GeneralType::Q));
    put("general_type_is_t", flag(kind.general_type == GeneralType::T));

    let cells = col.cells();
    let present: Vec<&Cell> = cells.iter().filter(|c| !c.is_missing()).collect();
    let n_missing = cells.len() - present.len();
    put("length", FeatureValue::num(cells.len() as f64));
    put("percentage_none", FeatureValue::opt(ratio(n_missing as f64, cells.len() as f64)));

    let renderings: Vec<String> = present.iter().filter_map(|c| c.render()).collect();
    let unique: HashSet<&str> = renderings.iter().map(String::as_str).collect();
    put("num_unique", FeatureValue::num(unique.len() as f64));
    put("percent_unique", FeatureValue::opt(ratio(unique.len() as f64, present.len() as f64)));
    put("has_none", flag(n_missing > 0));
    put("is_unique", FeatureValue::flag((!present.is_empty()).then_some(unique.len() == present.len())));

    let xs = col.numbers();
    let q = kind.general_type == GeneralType::Q && !xs.is_empty();
    let num = |v: Option<f64>| FeatureValue::opt(if q { v } else { None });
    let bool_q = |v: Option<bool>| FeatureValue::flag(if q { v } else { None });

    let sorted = stats::sorted(&xs);
    let mean = stats::mean(&xs);
    let var = stats::variance(&xs);
    let std = var.map(f64::sqrt);
    let median = stats::quantile_sorted(&sorted, 0.5);
    let min = sorted.first().copied();
    let max = sorted.last().copied();
    let range = min.zip(max).map(|(lo, hi)| hi - lo);
    let q25 = stats::quantile_sorted(&sorted, 0.25);
    let q75 = stats::quantile_sorted(&sorted, 0.75);
    put("mean", num(mean));
    put("median", num(median));
    put("mode", num(mode(&xs)));
    put("var", num(var));
    put("std", num(std));
    put("min", num(min));
    put("max", num(max));
    put("range", num(range));
    put("q25", num(q25));
    put("q75", num(q75));
    put("normalized_mean", num(mean.zip(max).and_then(|(m, hi)| ratio(m, hi))));
    put("normalized_median", num(median.zip(max).and_then(|(m, hi)| ratio(m, hi))));
    put("normalized_range", num(range.zip(mean).and_then(|(r, m)| ratio(r, m))));
    put("coeff_var", num(std.zip(mean).and_then(|(s, m)| ratio(s, m))));
    put("skewness", num(stats::skewness(&xs)));
    put("kurtosis", num(stats::kurtosis(&xs)));
    put("gini", num(stats::gini(&xs)));

    let entropy = match kind.general_type {
        GeneralType::Q if !xs.is_empty() => Some(stats::shannon_entropy(&stats::histogram(&xs, ENTROPY_BINS))),
        GeneralType::C if !renderings.is_empty() => {
            let mut counts: HashMap<&str, f64> = HashMap::new();
            for r in &renderings {
                *counts.entry(r.as_str()).or_default() += 1.0;
            }
            let mut weights: Vec<f64> = counts.into_values().collect();
            weights.sort_by(f64::total_cmp);
            Some(stats::shannon_entropy(&weights))
        }
        _ => None,
    };
    put("entropy", FeatureValue::opt(entropy));

    let normality = if q { stats::dagostino_normality(&xs) } else { None };
    put("normality_statistic", FeatureValue::opt(normality.map(|(k2, _)| k2)));
    put("normality_p", FeatureValue::opt(normality.map(|(_, p)| p)));
    put("is_normal_5", FeatureValue::flag(normality.map(|(_, p)| p > 0.05)));
    put("is_normal_1", FeatureValue::flag(normality.map(|(_, p)| p > 0.01)));

    let iqr_out = q25.zip(q75).map(|(a, b)| {
        let iqr = b - a;
        fraction_outside(&xs, a - 1.5 * iqr, b + 1.5 * iqr)
    });
    let pct_out = stats::quantile_sorted(&sorted, 0.01)
        .zip(stats::quantile_sorted(&sorted, 0.99))
        .map(|(lo, hi)| fraction_outside(&xs, lo, hi));
    let std_out = mean.zip(std).map(|(m, s)| fraction_outside(&xs, m - 3.0 * s, m + 3.0 * s));
    put("percent_outliers_15iqr", num(iqr_out));
    put("percent_outliers_1_99", num(pct_out));
    put("percent_outliers_3std", num(std_out));
    put("has_outliers_15iqr", bool_q(iqr_out.map(|v| v > 0.0)));
    put("has_outliers_1_99", bool_q(pct_out.map(|v| v > 0.0)));
    put("has_outliers_3std", bool_q(std_out.map(|v| v > 0.0)));

    let (is_sorted, is_monotonic) = match kind.general_type {
        GeneralType::Q => sortedness(&xs),
        GeneralType::C => sortedness(&renderings),
        GeneralType::T => {
            let ts: Vec<i64> = present.iter().filter_map(|c| if let Cell::Timestamp(t) = c { Some(*t) } else { None }).collect();
            sortedness(&ts)
        }
    };
    put("is_sorted", FeatureValue::flag(is_sorted));
    put("is_monotonic", FeatureValue::flag(is_monotonic));
    let lin = match kind.general_type {
        GeneralType::Q => is_lin_space(&xs),
        GeneralType::T => {
            let ts: Vec<f64> = present.iter().filter_map(|c| if let Cell::Timestamp(t) = c { Some(*t as f64) } else { None }).collect();
            is_lin_space(&ts)
        }
        GeneralType::C => None,
    };
    put("is_lin_space", FeatureValue::flag(lin));
    put("is_log_space", bool_q(is_log_space(&xs)));

    let lengths: Vec<f64> = if kind.general_type == GeneralType::C {
        renderings.iter().map(|s| s.chars().count() as f64).collect()
    } else {
        Vec::new()
    };
    put("min_value_length", FeatureValue::opt(lengths.iter().copied().reduce(f64::min)));
    put("max_value_length", FeatureValue::opt(lengths.iter().copied().reduce(f64::max)));
    put("mean_value_length", FeatureValue::opt(stats::mean(&lengths)));

    let name = col.name();
    put("name_length", FeatureValue::num(name.chars().count() as f64));
    put("num_words_in_name", FeatureValue::num(name.split_whitespace().count() as f64));
    put("has_uppercase_in_name", flag(name.chars().any(char::is_uppercase)));
    put("has_digit_in_name", flag(name.chars().any(|c| c.is_ascii_digit())));
    put("has_currency_symbol_in_name", flag(name.chars().any(|c| CURRENCY_SYMBOLS.contains(&c))));

    SINGLE_COLUMN_FEATURES
        .iter()
        .map(|(base, _)| {
            let v = f.remove(base).unwrap_or_else(|| panic!("feature {base} not computed"));
            (format!("{base}_{}", role.suffix()), v)
        })
        .collect()
}
