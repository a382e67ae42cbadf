//! Seeded k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `k×d` cluster centres.
    pub centroids: Matrix<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &Matrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centre; take an unused index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn assign(points: &Matrix<f64>, centroids: &Matrix<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centroids.rows() {
            let d = sq_dist(points.row(i), centroids.row(c));
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        inertia += best.0;
    }
    inertia
}

fn update(points: &Matrix<f64>, labels: &[usize], centroids: &mut Matrix<f64>) {
    let (k, d) = centroids.shape();
    let mut sums = Matrix::<f64>::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            // empty cluster: move it onto the point farthest from its centre
            let far = (0..points.rows())
                .max_by(|&a, &b| {
                    let da = sq_dist(points.row(a), centroids.row(labels[a]));
                    let db = sq_dist(points.row(b), centroids.row(labels[b]));
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            centroids.row_mut(c).copy_from_slice(points.row(far));
        } else {
            let inv = 1.0 / counts[c] as f64;
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
}

fn lloyd(points: &Matrix<f64>, mut centroids: Matrix<f64>) -> KMeansResult {
    let mut labels = vec![0; points.rows()];
    let mut trace = vec![assign(points, &centroids, &mut labels)];
    for _ in 0..MAX_LLOYD_ITERS {
        update(points, &labels, &mut centroids);
        let mut next = labels.clone();
        let inertia = assign(points, &centroids, &mut next);
        trace.push(inertia);
        if next == labels {
            break;
        }
        labels = next;
    }
    KMeansResult { labels, centroids, inertia: *trace.last().unwrap_or(&0.0), inertia_trace: trace }
}

/// Best of `restarts` Lloyd runs by inertia. Deterministic given `seed`.
pub fn kmeans(points: &Matrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::contract(format!("k = {k} must be in 1..={n}")));
    }
    if !points.all_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
