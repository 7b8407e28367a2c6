//! Reference implementations used as test oracles, plus dataset builders.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use vizrec_core::tabular::{Cell, Column, ColumnKind, DataType, LabeledCorpusRecord, TabularDataset, VisualizationType};

pub fn direct_mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn direct_central(xs: &[f64], k: i32) -> f64 {
    let m = direct_mean(xs);
    xs.iter().map(|x| (x - m).powi(k)).sum::<f64>() / xs.len() as f64
}

pub fn direct_skewness(xs: &[f64]) -> f64 {
    direct_central(xs, 3) / direct_central(xs, 2).powf(1.5)
}

pub fn direct_kurtosis(xs: &[f64]) -> f64 {
    let m2 = direct_central(xs, 2);
    direct_central(xs, 4) / (m2 * m2) - 3.0
}

pub fn direct_pearson_r(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (direct_mean(xs), direct_mean(ys));
    let mut num = 0.0;
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for i in 0..xs.len() {
        num += (xs[i] - mx) * (ys[i] - my);
        dx2 += (xs[i] - mx).powi(2);
        dy2 += (ys[i] - my).powi(2);
    }
    num / (dx2 * dy2).sqrt()
}

/// Gini via the mean absolute difference over all ordered pairs.
pub fn gini_mean_abs_difference(xs: &[f64]) -> f64 {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let v: Vec<f64> = xs.iter().map(|x| if min < 0.0 { x - min } else { *x }).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in &v {
        for b in &v {
            total += (a - b).abs();
        }
    }
    total / (2.0 * n * n * mean)
}

pub fn direct_entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    -counts.iter().filter(|c| **c > 0.0).map(|c| (c / total) * (c / total).ln()).sum::<f64>()
}

/// Levenshtein distance by memoized recursion on suffixes.
pub fn edit_distance_recursive(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo).min(go(a, b, i, j + 1, memo)).min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, 0, 0, &mut HashMap::new())
}

/// Two-sided Student t p-value for integer df by the closed-form finite
/// series in θ = atan(t/√ν).
pub fn student_t_two_sided_series(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let theta = (t.abs() / nu.sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    let a = if df % 2 == 1 {
        if df == 1 {
            2.0 * theta / PI
        } else {
            let mut term = 1.0;
            let mut sum = 1.0;
            let mut k = 2;
            while k <= df - 3 {
                term *= k as f64 / (k + 1) as f64 * c * c;
                sum += term;
                k += 2;
            }
            2.0 / PI * (theta + s * c * sum)
        }
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k + 1 < df {
            term *= k as f64 / (k + 1) as f64 * c * c;
            sum += term;
            k += 2;
        }
        s * sum
    };
    1.0 - a
}

/// Chi-square survival function for even df: e^{−x/2} Σ (x/2)^i / i!.
pub fn chi2_sf_even_series(x: f64, df: u32) -> f64 {
    assert!(df.is_multiple_of(2));
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..df / 2 {
        term *= h / i as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// F-distribution survival function for 2 numerator df.
pub fn f_sf_two_numerator_df(f: f64, df2: f64) -> f64 {
    (df2 / (df2 + 2.0 * f)).powf(df2 / 2.0)
}

/// Kolmogorov survival function by its alternating series.
pub fn kolmogorov_sf_series(lambda: f64) -> f64 {
    let mut s = 0.0;
    for j in 1..=10_000 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS distance by evaluating both ECDFs at every sample point.
pub fn ks_distance_brute(xs: &[f64], ys: &[f64]) -> f64 {
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|x| **x <= v).count() as f64 / s.len() as f64;
    xs.iter().chain(ys).map(|&v| (ecdf(xs, v) - ecdf(ys, v)).abs()).fold(0.0, f64::max)
}

pub fn numeric(name: &str, xs: &[f64]) -> Column {
    let integral = xs.iter().all(|x| x.fract() == 0.0);
    let kind = ColumnKind::of(if integral { DataType::Integer } else { DataType::Decimal });
    Column::new(name, xs.iter().map(|&x| Cell::Number(x)).collect(), kind).unwrap()
}

pub fn categorical(name: &str, xs: &[&str]) -> Column {
    Column::new(name, xs.iter().map(|s| Cell::Text((*s).to_string())).collect(), ColumnKind::of(DataType::String)).unwrap()
}

pub fn dataset(id: &str, x: Column, y: Column) -> TabularDataset {
    TabularDataset { id: id.into(), x, y }
}

pub fn labeled(id: &str, x: Column, y: Column, label: VisualizationType) -> LabeledCorpusRecord {
    LabeledCorpusRecord { dataset: dataset(id, x, y), label }
}

/// A synthetic labeled record of one of four shapes, keyed by `label`.
pub fn synthetic_record(id: &str, label: VisualizationType, rows: usize, rng: &mut impl Rng) -> LabeledCorpusRecord {
    match label {
        VisualizationType::LineChart => {
            let xs: Vec<f64> = (0..rows).map(|i| i as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 10.0 + rng.random::<f64>()).collect();
            labeled(id, numeric("year", &xs), numeric("sales", &ys), label)
        }
        VisualizationType::ScatterPlot => {
            let xs: Vec<f64> = (0..rows).map(|_| rng.random::<f64>() * 50.0 + 0.5).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.4 + rng.random::<f64>() * 20.0 + 0.25).collect();
            labeled(id, numeric("height", &xs), numeric("weight", &ys), label)
        }
        VisualizationType::BarChart => {
            let cats = ["north", "south", "east", "west", "central"];
            let xs: Vec<&str> = (0..rows).map(|i| cats[i % cats.len()]).collect();
            let ys: Vec<f64> = (0..rows).map(|_| (rng.random::<f64>() * 100.0).round()).collect();
            labeled(id, categorical("Region", &xs), numeric("Revenue $", &ys), label)
        }
        VisualizationType::BoxPlot => {
            let groups = ["a", "b"];
            let xs: Vec<&str> = (0..rows).map(|i| groups[i % 2]).collect();
            let ys: Vec<f64> = (0..rows).map(|i| rng.random::<f64>().powi(4) * 1000.0 + (i % 2) as f64 * 0.37).collect();
            labeled(id, categorical("group", &xs), numeric("latency ms", &ys), label)
        }
    }
}
