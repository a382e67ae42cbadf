//! Partition agreement and cluster-separation scores.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

struct Contingency {
    n: usize,
    cells: Vec<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
        *cells.entry((x, y)).or_default() += 1;
    }
    Ok(Contingency {
        n: a.len(),
        cells: cells.into_values().collect(),
        rows: ra.into_values().collect(),
        cols: rb.into_values().collect(),
    })
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

fn pairs(n: usize) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index. Evaluated in exact integer arithmetic up to the
/// final division.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = contingency(a, b)?;
    let index: i128 = t.cells.iter().map(|&c| pairs(c)).sum();
    let sa: i128 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = t.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    // (index − sa·sb/total) / ((sa+sb)/2 − sa·sb/total), scaled by 2·total
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        return Ok(if same_partition(a, b) { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information, `I(a;b) / sqrt(H(a) H(b))`.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = contingency(a, b)?;
    if t.n == 0 || same_partition(a, b) {
        return Ok(1.0);
    }
    let n = t.n as f64;
    let ha = entropy(&t.rows, n);
    let hb = entropy(&t.cols, n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi = ha + hb - entropy(&t.cells, n);
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Mean Euclidean silhouette. Members of singleton clusters score 0 and
/// `0/0` is taken as 0.
pub fn silhouette(points: &Matrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::contract("one label per point required"));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::contract("silhouette needs at least two clusters"));
    }
    let slot: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut sizes = vec![0usize; ids.len()];
    for l in labels {
        sizes[slot[l]] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; ids.len()];
    for i in 0..n {
        let own = slot[&labels[i]];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                let d: f64 = points.row(i).iter().zip(points.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                sums[slot[&labels[j]]] += d.sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..ids.len()).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
