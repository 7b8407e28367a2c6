//! Statistical kernels behind the feature catalog.
//!
//! Kernels return `None` when the sample is below the minimum size for the
//! test or the statistic is undefined (zero variance and similar), so the
//! caller can emit a missing feature instead of failing.

use std::collections::HashMap;
use std::f64::consts::PI;

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

/// Minimum sample size for the omnibus normality test.
pub const NORMALITY_MIN_N: usize = 8;

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population variance.
pub fn variance(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64)
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Central moments m2, m3, m4 (population).
fn central_moments(xs: &[f64]) -> Option<(f64, f64, f64)> {
    let m = mean(xs)?;
    let n = xs.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    Some((m2 / n, m3 / n, m4 / n))
}

/// Moment skewness m3 / m2^1.5; 0 for a constant sample.
pub fn skewness(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    if is_constant(xs) {
        return Some(0.0);
    }
    let (m2, m3, _) = central_moments(xs)?;
    Some(m3 / m2.powf(1.5))
}

/// Excess kurtosis m4 / m2² − 3; −3 for a constant sample.
pub fn kurtosis(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    if is_constant(xs) {
        return Some(-3.0);
    }
    let (m2, _, m4) = central_moments(xs)?;
    Some(m4 / (m2 * m2) - 3.0)
}

/// Quantile of an ascending sample with linear interpolation between order
/// statistics (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Shannon entropy (natural log) of a set of nonnegative weights.
pub fn shannon_entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum()
}

/// Bin counts of an equal-width histogram spanning [min, max]; the last
/// bin is closed on the right.
pub fn histogram(xs: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    if xs.is_empty() || bins == 0 {
        return counts;
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let idx = if width > 0.0 { (((x - lo) / width).floor() as usize).min(bins - 1) } else { 0 };
        counts[idx] += 1.0;
    }
    counts
}

/// Gini coefficient; values are shifted by −min when min < 0. An all-zero
/// sample is perfectly equal (0).
pub fn gini(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = sorted(xs);
    let min = v[0];
    if min < 0.0 {
        v.iter_mut().for_each(|x| *x -= min);
    }
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        return Some(0.0);
    }
    let n = v.len() as f64;
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x).sum();
    Some(weighted / (n * total))
}

fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Pearson correlation and its two-sided p-value (t test with n − 2 df).
/// Needs n ≥ 3 paired values and nonzero variance on both sides.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return None;
    }
    let (xs, ys) = (&xs[..n], &ys[..n]);
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || is_constant(xs) || is_constant(ys) {
        return None;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Some((r, correlation_p(r, n)))
}

fn correlation_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / ((1.0 - r) * (1.0 + r))).sqrt();
    student_t_two_sided(t, df)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinRegress {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub p: f64,
}

/// Least-squares line y = slope·x + intercept with the p-value of the
/// slope (two-sided, n − 2 df). Needs n ≥ 3 and a non-constant x.
pub fn linregress(xs: &[f64], ys: &[f64]) -> Option<LinRegress> {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return None;
    }
    let (xs, ys) = (&xs[..n], &ys[..n]);
    if is_constant(xs) {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = if syy == 0.0 || is_constant(ys) { 0.0 } else { (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0) };
    Some(LinRegress { slope, intercept, r, p: correlation_p(r, n) })
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ.
        let k = -PI * PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for j in 1..=50 {
            let odd = (2 * j - 1) as f64;
            let term = (k * odd * odd).exp();
            s += term;
            if term < 1e-18 {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            s += if j % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic with the asymptotic p-value
/// (effective size correction of Stephens).
pub fn two_sample_ks(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let a = sorted(xs);
    let b = sorted(ys);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    Some((d, p))
}

/// Pearson chi-square test of independence on paired categorical labels.
/// Needs at least two distinct values on each side.
pub fn chi2_independence(a: &[String], b: &[String]) -> Option<(f64, f64)> {
    let n = a.len().min(b.len());
    if n == 0 {
        return None;
    }
    let mut rows: HashMap<&str, usize> = HashMap::new();
    let mut cols: HashMap<&str, usize> = HashMap::new();
    for k in 0..n {
        let r = rows.len();
        rows.entry(a[k].as_str()).or_insert(r);
        let c = cols.len();
        cols.entry(b[k].as_str()).or_insert(c);
    }
    let (nr, nc) = (rows.len(), cols.len());
    if nr < 2 || nc < 2 {
        return None;
    }
    let mut table = vec![0.0; nr * nc];
    for k in 0..n {
        table[rows[a[k].as_str()] * nc + cols[b[k].as_str()]] += 1.0;
    }
    let row_tot: Vec<f64> = (0..nr).map(|r| (0..nc).map(|c| table[r * nc + c]).sum()).collect();
    let col_tot: Vec<f64> = (0..nc).map(|c| (0..nr).map(|r| table[r * nc + c]).sum()).collect();
    let total = n as f64;
    let mut stat = 0.0;
    for r in 0..nr {
        for c in 0..nc {
            let e = row_tot[r] * col_tot[c] / total;
            stat += (table[r * nc + c] - e).powi(2) / e;
        }
    }
    let df = ((nr - 1) * (nc - 1)) as f64;
    let p = ChiSquared::new(df).ok()?.sf(stat).clamp(0.0, 1.0);
    Some((stat, p))
}

/// One-way ANOVA F test. Needs two nonempty groups, more observations than
/// groups and nonzero within-group variation.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Option<(f64, f64)> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if k < 2 || total <= k {
        return None;
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for g in &groups {
        let m = mean(g)?;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if ssw <= 0.0 {
        return None;
    }
    let (df1, df2) = ((k - 1) as f64, (total - k) as f64);
    let f = (ssb / df1) / (ssw / df2);
    let p = FisherSnedecor::new(df1, df2).ok()?.sf(f).clamp(0.0, 1.0);
    Some((f, p))
}

/// D'Agostino–Pearson omnibus normality test (skewness and kurtosis
/// z-scores combined into a chi-square with 2 df). Needs n ≥ 8 and a
/// non-constant sample.
pub fn dagostino_normality(xs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < NORMALITY_MIN_N || is_constant(xs) {
        return None;
    }
    let zs = skew_z(xs)?;
    let zk = kurtosis_z(xs)?;
    let k2 = zs * zs + zk * zk;
    if !k2.is_finite() {
        return None;
    }
    // chi-square survival with 2 df
    Some((k2, (-k2 / 2.0).exp().clamp(0.0, 1.0)))
}

fn skew_z(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let b2 = skewness(xs)?;
    let mut y = b2 * (((n + 1.0) * (n + 3.0)) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    if y == 0.0 {
        y = 1.0;
    }
    let ya = y / alpha;
    Some(delta * (ya + (ya * ya + 1.0).sqrt()).ln())
}

fn kurtosis_z(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let b2 = kurtosis(xs)? + 3.0;
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let varb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / varb2.sqrt();
    let sqrtbeta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + (1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return None;
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    Some((term1 - term2) / (2.0 / (9.0 * a)).sqrt())
}
