//! Run metrics, rank statistics and a 2-D diversity projection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::encode;
use crate::error::{Error, Result};
use crate::types::{DiscriminatoryRecord, FeatureSchema, Value};

/// Seconds per discriminatory sample; `None` when nothing was found.
pub fn dss(elapsed: f64, dsn: u64) -> Option<f64> {
    (dsn > 0).then(|| elapsed / dsn as f64)
}

/// Fraction of checks that found a new discriminatory sample.
pub fn sur(dsn: u64, tsn: u64) -> f64 {
    if tsn == 0 {
        0.0
    } else {
        dsn as f64 / tsn as f64
    }
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Total sample size up to which the p-value is computed exactly.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Mann-Whitney U of `a` against `b` with a two-sided p-value.
///
/// Ties get midranks. For `|a| + |b| <= 20` the p-value is the exact
/// permutation probability of a rank sum at least as far from its mean;
/// above that, a tie-corrected normal approximation with continuity
/// correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("Mann-Whitney needs two nonempty samples".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let n = n1 + n2;
    if n <= EXACT_LIMIT {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let observed: usize = doubled[..n1].iter().sum();
        return Ok(MannWhitney { u, p: exact_p(&doubled, n1, observed), exact: true });
    }

    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let mu = n1f * n2f / 2.0;
    let mut ties = BTreeMap::<u64, usize>::new();
    for r in &ranks {
        *ties.entry(r.to_bits()).or_default() += 1;
    }
    let tie_term: f64 = ties.values().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u, p, exact: false })
}

/// Probability, over all size-`k` subsets of the items, that the doubled
/// rank sum deviates from its mean by at least as much as `observed`.
fn exact_p(doubled: &[usize], k: usize, observed: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0f64; total + 1]; k + 1];
    counts[0][0] = 1.0;
    for &r in doubled {
        for j in (1..=k).rev() {
            for s in (r..=total).rev() {
                let add = counts[j - 1][s - r];
                if add != 0.0 {
                    counts[j][s] += add;
                }
            }
        }
    }
    // mean doubled sum is k * (N + 1); compare in doubled units
    let mean2 = (k * (doubled.len() + 1)) as i64;
    let dev = (observed as i64 - mean2).abs();
    let all: f64 = counts[k].iter().sum();
    let extreme: f64 = counts[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - mean2).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    (extreme / all).min(1.0)
}

/// Vargha-Delaney effect size: chance that a draw from `a` beats one from `b`.
pub fn vargha_delaney_a12(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("A12 needs two nonempty samples".into()));
    }
    let mut score = 0.0;
    for x in a {
        for y in b {
            if x > y {
                score += 1.0;
            } else if x == y {
                score += 0.5;
            }
        }
    }
    Ok(score / (a.len() * b.len()) as f64)
}

/// Statistical comparison of per-run DSS between two approaches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub dss_samples_a: Vec<f64>,
    pub dss_samples_b: Vec<f64>,
    pub u: f64,
    pub p_value: f64,
    pub a12: f64,
}

pub fn compare_runs(dss_a: Vec<f64>, dss_b: Vec<f64>) -> Result<RunComparison> {
    let mw = mann_whitney_u(&dss_a, &dss_b)?;
    let a12 = vargha_delaney_a12(&dss_a, &dss_b)?;
    Ok(RunComparison { dss_samples_a: dss_a, dss_samples_b: dss_b, u: mw.u, p_value: mw.p, a12 })
}

/// DSS for rank statistics: a run without findings counts as finding one
/// sample at the very end.
pub fn dss_or_elapsed(elapsed: f64, dsn: u64) -> f64 {
    elapsed / dsn.max(1) as f64
}

const PCA_TOL: f64 = 1e-9;
const PCA_MAX_ITER: usize = 100_000;

/// Top-2 principal components of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<(f64, f64)>,
    /// Eigenvalues of the covariance matrix for the two components.
    pub variances: (f64, f64),
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Dominant eigenpair by power iteration, starting orthogonal to `against`.
fn power_iteration(cov: &[Vec<f64>], against: Option<&[f64]>) -> (f64, Vec<f64>) {
    let d = cov.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64 + 0.01 * (i * i) as f64).collect();
    let project_out = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    };
    project_out(&mut v);
    if normalize(&mut v) == 0.0 {
        return (0.0, vec![0.0; d]);
    }
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITER {
        let mut w = matvec(cov, &v);
        project_out(&mut w);
        let next_lambda = dot(&v, &w);
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        let diff = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let flip = v.iter().zip(&w).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        v = w;
        let settled = (next_lambda - lambda).abs() <= PCA_TOL * next_lambda.abs().max(1.0);
        lambda = next_lambda;
        if settled && diff.min(flip) <= PCA_TOL {
            break;
        }
    }
    // deterministic sign: largest component positive
    let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (lambda, v)
}

/// Projects `rows` onto the two leading eigenvectors of their covariance.
///
/// Fails with `DegenerateData` (carrying the rank-1 fallback projection)
/// when the covariance has rank below two.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Projection> {
    if rows.len() < 3 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 3 points, got {}", rows.len())));
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    let floor = 1e-12 * trace.max(1e-300);
    let (l1, v1) = power_iteration(&cov, None);
    if d == 0 || l1 <= floor {
        return Err(Error::DegenerateData { points: vec![(0.0, 0.0); rows.len()] });
    }
    let (l2, v2) = power_iteration(&cov, Some(&v1));
    if d < 2 || l2 <= floor {
        let points = centered.iter().map(|r| (dot(r, &v1), 0.0)).collect();
        return Err(Error::DegenerateData { points });
    }
    let points = centered.iter().map(|r| (dot(r, &v1), dot(r, &v2))).collect();
    Ok(Projection { points, variances: (l1, l2) })
}

/// Numeric rows for records: the tabular encoding, or token presence over
/// the records' combined vocabulary for text.
pub fn record_rows(records: &[DiscriminatoryRecord], schema: &FeatureSchema) -> Vec<Vec<f64>> {
    if !schema.is_text() {
        return records.iter().map(|r| encode(&r.sample, schema)).collect();
    }
    let mut vocab = BTreeMap::new();
    for r in records {
        for v in &r.sample.values {
            if let Value::Token(t) = v {
                let next = vocab.len();
                vocab.entry(t.clone()).or_insert(next);
            }
        }
    }
    records
        .iter()
        .map(|r| {
            let mut row = vec![0.0; vocab.len()];
            for v in &r.sample.values {
                if let Value::Token(t) = v {
                    row[vocab[t]] = 1.0;
                }
            }
            row
        })
        .collect()
}

/// 2-D projection of discriminatory samples; degenerate clouds fall back
/// to the rank-1 projection.
pub fn pca_project(records: &[DiscriminatoryRecord], schema: &FeatureSchema) -> Result<Vec<(f64, f64)>> {
    pca_2d(&record_rows(records, schema)).map(|p| p.points)
}

/// Writes `x,y,label` rows.
pub fn write_diversity_csv(path: &Path, points: &[(f64, f64, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "label"])?;
    for (x, y, label) in points {
        w.write_record([x.to_string(), y.to_string(), label.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_json(path: &Path, cmp: &RunComparison) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, cmp)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(sur(0, 100), 0.0);
        assert_eq!(sur(5, 5), 1.0);
        assert_eq!(sur(0, 0), 0.0);
        assert_eq!(dss(10.0, 0), None);
        assert!((dss(3600.0, 141_049).unwrap() - 0.025523).abs() < 1e-5);
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn separated_samples() {
        let mw = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mw.u, 0.0);
        assert!(mw.exact);
        assert!((mw.p - 0.1).abs() < 1e-12);
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((same.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_branch_large_samples() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (100..130).map(f64::from).collect();
        let mw = mann_whitney_u(&a, &b).unwrap();
        assert!(!mw.exact);
        assert!(mw.p < 1e-9);
        let flat = mann_whitney_u(&[1.0; 15], &[1.0; 15]).unwrap();
        assert_eq!(flat.p, 1.0);
    }

    #[test]
    fn a12_examples() {
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), 0.125);
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn pca_axis_aligned() {
        let rows = vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let p = pca_2d(&rows).unwrap();
        for (row, (x, y)) in rows.iter().zip(&p.points) {
            assert!((x.abs() - row[0].abs()).abs() < 1e-7);
            assert!((y.abs() - row[1].abs()).abs() < 1e-7);
        }
    }

    #[test]
    fn pca_degenerate() {
        let same = vec![vec![1.0, 2.0]; 4];
        match pca_2d(&same) {
            Err(Error::DegenerateData { points }) => assert!(points.iter().all(|&p| p == (0.0, 0.0))),
            other => panic!("{other:?}"),
        }
        let line = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        match pca_2d(&line) {
            Err(Error::DegenerateData { points }) => {
                assert!(points.iter().all(|p| p.1 == 0.0));
                assert!((points[2].0 - 2f64.sqrt()).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }
}
