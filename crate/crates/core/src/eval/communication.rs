//! Cluster-level communication summaries and edge-weight distributions.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCommMatrix {
    /// `k×k` mean communication from cluster `g` (rows) to cluster `h`.
    pub values: Matrix<f64>,
    pub cluster_sizes: Vec<usize>,
}

/// Entry `(g, h)` is the mean of `C[i, j]` over senders `i ∈ g` and receivers
/// `j ∈ h`. Labels must cover `0..k` with no empty cluster.
pub fn group_communication_matrix(c: &Matrix<f64>, labels: &[usize]) -> Result<GroupCommMatrix> {
    let n = c.rows();
    if !c.is_square() || labels.len() != n {
        return Err(Error::contract("communication matrix must be N×N with N labels"));
    }
    if n == 0 {
        return Err(Error::contract("no cells"));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::contract(format!("cluster {empty} has no members")));
    }
    let mut values = Matrix::zeros(k, k);
    for i in 0..n {
        for j in 0..n {
            values[(labels[i], labels[j])] += c[(i, j)];
        }
    }
    for g in 0..k {
        for h in 0..k {
            values[(g, h)] /= (sizes[g] * sizes[h]) as f64;
        }
    }
    Ok(GroupCommMatrix { values, cluster_sizes: sizes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeightDistribution {
    /// Left edge of each equal-width bin.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `(value, rank/count)` over the sorted off-diagonal weights.
    pub cdf: Vec<(f64, f64)>,
}

impl EdgeWeightDistribution {
    pub fn weights(&self) -> Vec<f64> {
        self.cdf.iter().map(|&(v, _)| v).collect()
    }

    pub fn write_histogram(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "value,bin,count")?;
        for (b, (&edge, &count)) in self.bin_edges.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{edge},{b},{count}")?;
        }
        Ok(())
    }

    pub fn write_cdf(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "value,cdf")?;
        for &(v, p) in &self.cdf {
            writeln!(w, "{v},{p}")?;
        }
        Ok(())
    }

    /// Writes `<prefix>.hist.csv` and `<prefix>.cdf.csv`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let with = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            std::path::PathBuf::from(s)
        };
        self.write_histogram(std::io::BufWriter::new(std::fs::File::create(with(".hist.csv"))?))?;
        self.write_cdf(std::io::BufWriter::new(std::fs::File::create(with(".cdf.csv"))?))?;
        Ok(())
    }
}

/// Histogram and empirical CDF of the off-diagonal group weights.
pub fn edge_weight_distribution(g: &GroupCommMatrix, n_bins: usize) -> Result<EdgeWeightDistribution> {
    let k = g.values.rows();
    if k < 2 {
        return Err(Error::contract("need at least two clusters for off-diagonal weights"));
    }
    if n_bins == 0 {
        return Err(Error::contract("n_bins must be positive"));
    }
    let mut w: Vec<f64> = Vec::with_capacity(k * (k - 1));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                w.push(g.values[(i, j)]);
            }
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("group communication weights".into()));
    }
    w.sort_by(f64::total_cmp);
    let (lo, hi) = (w[0], w[w.len() - 1]);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in &w {
        let b = if width > 0.0 { (((v - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        counts[b] += 1;
    }
    let bin_edges = (0..n_bins).map(|b| lo + b as f64 * width).collect();
    let total = w.len() as f64;
    let cdf = w.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / total)).collect();
    Ok(EdgeWeightDistribution { bin_edges, counts, cdf })
}

/// Two-sample Kolmogorov-Smirnov statistics with direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsDirectional {
    /// `sup (F_reference − F_candidate)`: large when the candidate sits to the right.
    pub d_plus: f64,
    /// `sup (F_candidate − F_reference)`.
    pub d_minus: f64,
}

impl KsDirectional {
    pub fn statistic(&self) -> f64 {
        self.d_plus.max(self.d_minus)
    }

    /// Candidate is right-shifted relative to the reference.
    pub fn candidate_dominates(&self) -> bool {
        self.d_plus > self.d_minus
    }
}

pub fn ks_directional(candidate: &[f64], reference: &[f64]) -> Result<KsDirectional> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::contract("KS needs non-empty samples"));
    }
    let mut a = candidate.to_vec();
    let mut b = reference.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut d_plus, mut d_minus) = (0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        d_plus = d_plus.max(fb - fa);
        d_minus = d_minus.max(fa - fb);
    }
    Ok(KsDirectional { d_plus, d_minus })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_clusters_reproduce_matrix() {
        let c = Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let g = group_communication_matrix(&c, &[0, 1, 2, 3]).unwrap();
        assert_eq!(g.values, c);
        assert_eq!(g.cluster_sizes, vec![1; 4]);
    }

    #[test]
    fn all_ones_and_blocks() {
        let g = group_communication_matrix(&Matrix::filled(5, 5, 1.0), &[0, 1, 1, 0, 2]).unwrap();
        assert_eq!(g.values, Matrix::filled(3, 3, 1.0));
        let labels = [0, 0, 1, 1, 1];
        let c = Matrix::from_fn(5, 5, |i, j| [[1.0, 2.0], [3.0, 4.0]][labels[i]][labels[j]]);
        let g = group_communication_matrix(&c, &labels).unwrap();
        assert_eq!(g.values, Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    }

    #[test]
    fn empty_cluster_rejected() {
        assert!(group_communication_matrix(&Matrix::zeros(2, 2), &[0, 2]).is_err());
    }

    #[test]
    fn off_diagonal_distribution() {
        let g =
            GroupCommMatrix { values: Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]), cluster_sizes: vec![1, 1] };
        let d = edge_weight_distribution(&g, 4).unwrap();
        assert_eq!(d.cdf, vec![(1.0, 0.5), (1.0, 1.0)]);
        assert_eq!(d.counts.iter().filter(|&&c| c > 0).count(), 1);
        let mut buf = Vec::new();
        d.write_cdf(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("value,cdf\n"));
    }

    #[test]
    fn ks_direction() {
        let low = [0.1, 0.2, 0.3];
        let high = [0.5, 0.6, 0.7];
        let r = ks_directional(&high, &low).unwrap();
        assert!(r.candidate_dominates());
        assert_eq!(r.statistic(), 1.0);
        assert!(!ks_directional(&low, &high).unwrap().candidate_dominates());
    }
}
