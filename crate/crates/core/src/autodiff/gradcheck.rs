use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// One-sided slopes differing by more than this (relative) mark a kink.
const KINK_TOL: f64 = 0.1;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - central| / max(1, |central|)` over checked entries;
    /// entries at a kink contribute their one-sided slope mismatch instead.
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Entries where the left and right slopes disagree.
    pub nonsmooth: Vec<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.nonsmooth.is_empty()
    }
}

/// Entry selection for [`grad_check_with`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Check at most this many entries per parameter (seeded sample).
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { max_entries_per_param: None, seed: 0 }
    }
}

/// Compares reverse-mode gradients of `f` against central differences at
/// every entry of every parameter.
///
/// `f` builds a scalar on the supplied graph from parameter leaves.
pub fn grad_check<T, F>(f: F, params: &[Matrix<T>], h: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, h, GradCheckOptions::default())
}

pub fn grad_check_with<T, F>(f: F, params: &[Matrix<T>], h: T, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(h > T::zero()) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let eval = |ps: &[Matrix<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar_value(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let f0 = g.scalar_value(root);
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the check point".into()));
    }
    let grads = g.backward(root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, nonsmooth: Vec::new(), checked: 0 };
    let mut work: Vec<Matrix<T>> = params.to_vec();
    let hf = h.to_f64_lossy();

    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let n = params[pi].len();
        let entries: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for e in entries {
            let orig = work[pi].as_slice()[e];
            work[pi].as_mut_slice()[e] = orig + h;
            let fp = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig - h;
            let fm = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("objective at perturbed point of parameter {pi}, entry {e}")));
            }
            let (fp, fm, f0) = (fp.to_f64_lossy(), fm.to_f64_lossy(), f0.to_f64_lossy());
            let central = (fp - fm) / (2.0 * hf);
            let denom = central.abs().max(1.0);
            let a = analytic.as_slice()[e].to_f64_lossy();
            let mut err = (a - central).abs() / denom;
            let kink = ((fp - f0) / hf - (f0 - fm) / hf).abs() / denom;
            if kink > KINK_TOL {
                report.nonsmooth.push((pi, e));
                err = err.max(kink);
            }
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((pi, e));
            }
        }
    }
    Ok(report)
}
