use std::collections::{BTreeMap, HashMap, HashSet};

use super::stats;
use super::{FeatureKind, FeatureValue, PartialFeatures};
use crate::tabular::{Cell, Column, GeneralType};

use FeatureKind::{Boolean as B, Numeric as N};

const SIGNIFICANCE: f64 = 0.05;

/// Cross-column feature names in catalog order.
pub const CROSS_COLUMN_FEATURES: &[(&str, FeatureKind)] = &[
    ("identical", B),
    ("identical_unique", B),
    ("has_shared_elements", B),
    ("num_shared_elements", N),
    ("percent_shared_elements", N),
    ("has_shared_unique_elements", B),
    ("num_shared_unique_elements", N),
    ("percent_shared_unique_elements", N),
    ("has_shared_words", B),
    ("has_range_overlap", B),
    ("name_edit_distance", N),
    ("name_edit_distance_normalized", N),
    ("nestedness", N),
    ("correlation_value", N),
    ("correlation_p", N),
    ("correlation_significant_005", B),
    ("ks_statistic", N),
    ("ks_p", N),
    ("ks_significant_005", B),
    ("linregress_slope", N),
    ("linregress_intercept", N),
    ("linregress_r_value", N),
    ("linregress_p", N),
    ("linregress_significant_005", B),
    ("chi2_statistic", N),
    ("chi2_p", N),
    ("chi2_significant_005", B),
    ("one_way_anova_F", N),
    ("one_way_anova_p", N),
    ("one_way_anova_significant_005", B),
];

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn counts(values: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for v in values {
        *m.entry(v.as_str()).or_insert(0) += 1;
    }
    m
}

fn name_words(name: &str) -> HashSet<String> {
    name.split_whitespace().map(str::to_lowercase).collect()
}

fn span(col: &Column) -> Option<(f64, f64)> {
    let values: Vec<f64> = match col.kind().general_type {
        GeneralType::Q => col.numbers(),
        GeneralType::T => {
            col.cells().iter().filter_map(|c| if let Cell::Timestamp(t) = c { Some(*t as f64) } else { None }).collect()
        }
        GeneralType::C => return None,
    };
    let lo = values.iter().copied().reduce(f64::min)?;
    let hi = values.iter().copied().reduce(f64::max)?;
    Some((lo, hi))
}

/// Rows where both columns hold a value, truncated to the shorter column.
fn paired<'a>(x: &'a Column, y: &'a Column) -> impl Iterator<Item = (&'a Cell, &'a Cell)> {
    x.cells().iter().zip(y.cells()).filter(|(a, b)| !a.is_missing() && !b.is_missing())
}

fn anova(categories: &Column, values: &Column) -> Option<(f64, f64)> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (c, v) in paired(categories, values) {
        if let (Some(key), Some(v)) = (c.render(), v.as_number()) {
            groups.entry(key).or_default().push(v);
        }
    }
    stats::one_way_anova(&groups.into_values().collect::<Vec<_>>())
}

/// Features relating the two columns of a dataset, in catalog order.
pub fn extract_cross_column_features(x: &Column, y: &Column) -> PartialFeatures {
    let mut f: HashMap<&'static str, FeatureValue> = HashMap::new();
    let mut put = |name: &'static str, v: FeatureValue| {
        f.insert(name, v);
    };

    let xr: Vec<String> = x.cells().iter().filter_map(Cell::render).collect();
    let yr: Vec<String> = y.cells().iter().filter_map(Cell::render).collect();
    let xu: HashSet<&str> = xr.iter().map(String::as_str).collect();
    let yu: HashSet<&str> = yr.iter().map(String::as_str).collect();

    let identical = x.len() == y.len() && x.cells().iter().zip(y.cells()).all(|(a, b)| a.render() == b.render());
    put("identical", FeatureValue::Bool(identical));
    put("identical_unique", FeatureValue::Bool(xu == yu));

    let (xc, yc) = (counts(&xr), counts(&yr));
    let shared: usize = xc.iter().map(|(k, n)| (*n).min(yc.get(k).copied().unwrap_or(0))).sum();
    let denom = xr.len().max(yr.len());
    put("has_shared_elements", FeatureValue::Bool(shared > 0));
    put("num_shared_elements", FeatureValue::num(shared as f64));
    put("percent_shared_elements", FeatureValue::opt((denom > 0).then(|| shared as f64 / denom as f64)));

    let shared_unique = xu.intersection(&yu).count();
    let union = xu.union(&yu).count();
    put("has_shared_unique_elements", FeatureValue::Bool(shared_unique > 0));
    put("num_shared_unique_elements", FeatureValue::num(shared_unique as f64));
    put(
        "percent_shared_unique_elements",
        FeatureValue::opt((union > 0).then(|| shared_unique as f64 / union as f64)),
    );

    put("has_shared_words", FeatureValue::Bool(!name_words(x.name()).is_disjoint(&name_words(y.name()))));

    let same_axis = matches!(
        (x.kind().general_type, y.kind().general_type),
        (GeneralType::Q, GeneralType::Q) | (GeneralType::T, GeneralType::T)
    );
    let overlap = if same_axis {
        span(x).zip(span(y)).map(|((a0, a1), (b0, b1))| a0 <= b1 && b0 <= a1)
    } else {
        None
    };
    put("has_range_overlap", FeatureValue::flag(overlap));

    let distance = edit_distance(x.name(), y.name());
    let longest = x.name().chars().count().max(y.name().chars().count());
    put("name_edit_distance", FeatureValue::num(distance as f64));
    put("name_edit_distance_normalized", FeatureValue::opt((longest > 0).then(|| distance as f64 / longest as f64)));

    let nestedness = (!xu.is_empty() && !yu.is_empty())
        .then(|| (shared_unique as f64 / xu.len() as f64).max(shared_unique as f64 / yu.len() as f64));
    put("nestedness", FeatureValue::opt(nestedness));

    let pair = (x.kind().general_type, y.kind().general_type);
    let qq = pair == (GeneralType::Q, GeneralType::Q);
    let (px, py): (Vec<f64>, Vec<f64>) = if qq {
        paired(x, y).filter_map(|(a, b)| a.as_number().zip(b.as_number())).unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    let significant = |p: Option<f64>| FeatureValue::flag(p.map(|p| p < SIGNIFICANCE));

    let corr = if qq { stats::pearson(&px, &py) } else { None };
    put("correlation_value", FeatureValue::opt(corr.map(|c| c.0)));
    put("correlation_p", FeatureValue::opt(corr.map(|c| c.1)));
    put("correlation_significant_005", significant(corr.map(|c| c.1)));

    let ks = if qq { stats::two_sample_ks(&x.numbers(), &y.numbers()) } else { None };
    put("ks_statistic", FeatureValue::opt(ks.map(|k| k.0)));
    put("ks_p", FeatureValue::opt(ks.map(|k| k.1)));
    put("ks_significant_005", significant(ks.map(|k| k.1)));

    let lr = if qq { stats::linregress(&px, &py) } else { None };
    put("linregress_slope", FeatureValue::opt(lr.map(|l| l.slope)));
    put("linregress_intercept", FeatureValue::opt(lr.map(|l| l.intercept)));
    put("linregress_r_value", FeatureValue::opt(lr.map(|l| l.r)));
    put("linregress_p", FeatureValue::opt(lr.map(|l| l.p)));
    put("linregress_significant_005", significant(lr.map(|l| l.p)));

    let chi2 = if pair == (GeneralType::C, GeneralType::C) {
        let (a, b): (Vec<String>, Vec<String>) =
            paired(x, y).filter_map(|(a, b)| a.render().zip(b.render())).unzip();
        stats::chi2_independence(&a, &b)
    } else {
        None
    };
    put("chi2_statistic", FeatureValue::opt(chi2.map(|c| c.0)));
    put("chi2_p", FeatureValue::opt(chi2.map(|c| c.1)));
    put("chi2_significant_005", significant(chi2.map(|c| c.1)));

    let aov = match pair {
        (GeneralType::C, GeneralType::Q) => anova(x, y),
        (GeneralType::Q, GeneralType::C) => anova(y, x),
        _ => None,
    };
    put("one_way_anova_F", FeatureValue::opt(aov.map(|a| a.0)));
    put("one_way_anova_p", FeatureValue::opt(aov.map(|a| a.1)));
    put("one_way_anova_significant_005", significant(aov.map(|a| a.1)));

    CROSS_COLUMN_FEATURES
        .iter()
        .map(|(name, _)| {
            let v = f.remove(name).unwrap_or_else(|| panic!("feature {name} not computed"));
            ((*name).to_string(), v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnKind, DataType};

    fn q(name: &str, xs: &[f64]) -> Column {
        Column::new(name, xs.iter().map(|&x| Cell::Number(x)).collect(), ColumnKind::of(DataType::Decimal)).unwrap()
    }

    fn c(name: &str, xs: &[&str]) -> Column {
        Column::new(name, xs.iter().map(|s| Cell::Text(s.to_string())).collect(), ColumnKind::of(DataType::String)).unwrap()
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("abcd", "abce"), 1);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn identical_columns() {
        let a = q("v", &[1.0, 2.0, 3.0, 5.0]);
        let f = extract_cross_column_features(&a, &a);
        assert_eq!(f["identical"], FeatureValue::Bool(true));
        assert_eq!(f["identical_unique"], FeatureValue::Bool(true));
        assert_eq!(f["has_range_overlap"], FeatureValue::Bool(true));
        assert_eq!(f["percent_shared_elements"], FeatureValue::Number(1.0));
        assert_eq!(f["nestedness"], FeatureValue::Number(1.0));
        assert_eq!(f["ks_statistic"], FeatureValue::Number(0.0));
        assert_eq!(f["chi2_p"], FeatureValue::Missing);
    }

    #[test]
    fn names_and_ranges() {
        let f = extract_cross_column_features(&q("abcd", &[0.0, 1.0]), &q("abce", &[2.0, 3.0]));
        assert_eq!(f["name_edit_distance"], FeatureValue::Number(1.0));
        assert_eq!(f["name_edit_distance_normalized"], FeatureValue::Number(0.25));
        assert_eq!(f["has_range_overlap"], FeatureValue::Bool(false));
        assert_eq!(f["has_shared_words"], FeatureValue::Bool(false));
        assert_eq!(f["correlation_value"], FeatureValue::Missing);
    }

    #[test]
    fn categorical_against_numeric() {
        let x = c("Group", &["a", "a", "b", "b", "c", "c"]);
        let y = q("group score", &[1.0, 2.0, 5.0, 6.0, 9.0, 10.0]);
        let f = extract_cross_column_features(&x, &y);
        assert_eq!(f["has_shared_words"], FeatureValue::Bool(true));
        assert_eq!(f["has_range_overlap"], FeatureValue::Missing);
        assert_eq!(f["one_way_anova_significant_005"], FeatureValue::Bool(true));
        assert_eq!(f["chi2_statistic"], FeatureValue::Missing);
        assert_eq!(f["ks_p"], FeatureValue::Missing);
    }

    #[test]
    fn shared_element_counts() {
        let f = extract_cross_column_features(&c("a", &["x", "x", "y", "z"]), &c("b", &["x", "y", "y", "w"]));
        assert_eq!(f["num_shared_elements"], FeatureValue::Number(2.0));
        assert_eq!(f["percent_shared_elements"], FeatureValue::Number(0.5));
        assert_eq!(f["num_shared_unique_elements"], FeatureValue::Number(2.0));
        assert_eq!(f["percent_shared_unique_elements"], FeatureValue::Number(0.5));
        assert!(f["chi2_statistic"].as_f64().is_some());
    }
}
