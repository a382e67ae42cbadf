//! Adam training loop, inducing-set selection and embedding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::{draw_noise, elbo_graph, posterior_means, Batch, ElboInputs, ElboValues, GpContext};
use super::params::{init_params, softplus_inv, Params};
use super::TrainConfig;
use crate::autodiff::Graph;
use crate::ccc_kernel::{ccc_cross_kernel, median_heuristic, propagation_matrix};
use crate::data::Preprocessed;
use crate::error::{Error, Result};
use crate::eval::{kmeans, DEFAULT_RESTARTS};
use crate::linalg::assert_positive_definite;
use crate::matrix::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Cells subsampled for the median-distance width heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 0-based.
    pub epoch: usize,
    pub kl_beta: f64,
    pub elbo: f64,
    pub recon: f64,
    pub kl_gp: f64,
    pub kl_std: f64,
    pub kl_inducing: f64,
    pub smoothed_elbo: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,kl_beta,elbo,recon,kl_gp,kl_std,kl_inducing,smoothed_elbo";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.kl_beta,
            self.elbo,
            self.recon,
            self.kl_gp,
            self.kl_std,
            self.kl_inducing,
            self.smoothed_elbo
        )
    }
}

/// Position of the training RNG, enough to resume the exact stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// A trained model together with what is needed to embed new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub params: Params<Matrix<f64>>,
    pub gp: Option<GpContext>,
    pub kept_genes: Vec<String>,
    pub median_total: f64,
    /// Preprocessing mode the features were built with.
    pub normalized: bool,
    pub n_train: usize,
    pub rng: RngState,
}

impl Model {
    /// `N×D` posterior means: GP means for the first `ℓ` dimensions with all
    /// rows as one batch, encoder means after.
    pub fn embed(&self, features: &Matrix<f64>) -> Result<Matrix<f64>> {
        if features.cols() != self.kept_genes.len() {
            return Err(Error::contract(format!(
                "model expects {} genes, got {}",
                self.kept_genes.len(),
                features.cols()
            )));
        }
        posterior_means(&self.params, &self.config.latent, self.gp.as_ref(), features, self.config.kernel.jitter)
    }

    /// Cauchy width currently in use.
    pub fn kernel_scale(&self) -> f64 {
        self.params.scale_raw.item().exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Training aborted; `last_good` holds the best state reached before the
/// failure, when at least one epoch completed.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub last_good: Option<Fitted>,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for FitFailure {}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        Self { error, last_good: None }
    }
}

impl From<FitFailure> for Error {
    fn from(f: FitFailure) -> Self {
        f.error
    }
}

/// Centroids of `m` k-means clusters, each replaced by the nearest cell not
/// already taken. Returns the chosen row indices.
pub fn select_inducing(features: &Matrix<f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.rows();
    if m == 0 || m > n {
        return Err(Error::contract(format!("cannot pick {m} inducing cells from {n}")));
    }
    let km = kmeans(features, m, seed, DEFAULT_RESTARTS)?;
    let mut taken = vec![false; n];
    let mut reps = Vec::with_capacity(m);
    for c in 0..m {
        let centre = km.centroids.row(c);
        let best = (0..n)
            .filter(|&i| !taken[i])
            .map(|i| {
                let d: f64 = features.row(i).iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, i)| i)
            .expect("m <= n leaves a free cell");
        taken[best] = true;
        reps.push(best);
    }
    Ok(reps)
}

fn chol_raw_from(l: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(l.rows(), l.cols(), |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => l[(i, j)],
        std::cmp::Ordering::Equal => softplus_inv(l[(i, i)]),
        std::cmp::Ordering::Less => 0.0,
    })
}

struct Adam {
    m: Vec<Matrix<f64>>,
    v: Vec<Matrix<f64>>,
    t: i32,
}

impl Adam {
    fn new(p: &Params<Matrix<f64>>) -> Self {
        let z: Vec<Matrix<f64>> = p.iter().iter().map(|x| Matrix::zeros(x.rows(), x.cols())).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }

    /// One step on `loss` given its gradients, with L2 decay added to the gradient.
    fn step(&mut self, params: &mut Params<Matrix<f64>>, grads: &[Matrix<f64>], lr: f64, decay: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, p) in params.iter_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let (ps, ms, vs) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..ps.len() {
                let gi = g.as_slice()[i] + decay * ps[i];
                ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * gi;
                vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * gi * gi;
                ps[i] -= lr * (ms[i] / c1) / ((vs[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn diverged(epoch: usize, detail: impl Into<String>) -> Error {
    Error::Diverged { epoch, detail: detail.into() }
}

/// Trains on preprocessed cells with their `N×N` communication matrix.
pub fn fit(data: &Preprocessed, comm: &Matrix<f64>, cfg: &TrainConfig) -> std::result::Result<Fitted, FitFailure> {
    cfg.validate()?;
    let x = &data.features;
    let (n, g) = x.shape();
    if n == 0 || g == 0 {
        return Err(Error::contract("training data is empty").into());
    }
    if data.counts.shape() != (n, g) || data.size_factors.len() != n {
        return Err(Error::contract("features, counts and size factors disagree").into());
    }
    let ell = cfg.latent.l_ccc;
    if ell > 0 && comm.shape() != (n, n) {
        return Err(Error::contract(format!("communication matrix must be {n}x{n}")).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = if ell > 0 { cfg.m_inducing } else { 0 };
    if m > n {
        return Err(Error::Config(format!("m_inducing = {m} exceeds the {n} training cells")).into());
    }
    let mut params = init_params(&mut rng, g, cfg.latent.d_total, (cfg.hidden1, cfg.hidden2), ell, m);
    for j in 0..g {
        let mean = (0..n).map(|i| data.counts[(i, j)]).sum::<f64>() / n as f64;
        params.dec_mean.b[(0, j)] = softplus_inv(mean.max(1e-3));
    }

    let gp = if ell > 0 {
        let reps = select_inducing(x, m, cfg.seed)?;
        let z_u = x.select_rows(&reps);
        let c_mm = comm.select(&reps, &reps);
        let prop = propagation_matrix(&c_mm, cfg.kernel.beta_comm, cfg.kernel.jitter)?;
        let mut s0 =
            if cfg.median_scale_init { median_heuristic(x, MEDIAN_SUBSAMPLE, cfg.seed) } else { cfg.kernel.scale_s };
        if !(s0 > 0.0) || !s0.is_finite() {
            log::warn!("median heuristic gave width {s0}; falling back to kernel.scale_s");
            s0 = cfg.kernel.scale_s;
        }
        params.scale_raw = Matrix::scalar(softplus_inv(s0));
        let kcfg = crate::ccc_kernel::CccKernelConfig { scale_s: s0, ..cfg.kernel };
        let k_mm = ccc_cross_kernel(&z_u, &z_u, &z_u, &prop, &kcfg)?;
        let l = assert_positive_definite(&k_mm, cfg.kernel.jitter)?.into_factor();
        let raw = chol_raw_from(&l);
        for c in params.inducing_chol_raw.iter_mut() {
            *c = raw.clone();
        }
        Some(GpContext::new(z_u, prop)?)
    } else {
        None
    };

    let mut model = Model {
        config: cfg.clone(),
        params,
        gp,
        kept_genes: data.kept_genes.clone(),
        median_total: data.median_total,
        normalized: data.normalized,
        n_train: n,
        rng: RngState::capture(&rng),
    };
    let mut adam = Adam::new(&model.params);
    let mut best = model.clone();
    let mut log: Vec<EpochLog> = Vec::new();
    let mut best_epoch = 0;
    let mut best_smoothed = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut smoothed = f64::NAN;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..n).collect();
    let bsz = cfg.batch_size.min(n);

    let snapshot = |best: &Model, log: &[EpochLog], best_epoch: usize| {
        (!log.is_empty()).then(|| Fitted { model: best.clone(), log: log.to_vec(), best_epoch, stopped_early: false })
    };

    for epoch in 0..cfg.max_epochs {
        let beta = cfg.kl_beta(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for chunk in order.chunks(bsz) {
            let step = (|| -> Result<ElboValues> {
                let sf: Vec<f64> = chunk.iter().map(|&i| data.size_factors[i]).collect();
                let batch = Batch::new(x.select_rows(chunk), data.counts.select_rows(chunk), &sf, model.gp.as_ref())?;
                let eps = draw_noise(&mut rng, chunk.len(), cfg.latent.d_total);
                let mut graph = Graph::with_jitter(cfg.kernel.jitter);
                let pv = model.params.map(|p| graph.param(p.clone()));
                let inputs = ElboInputs {
                    latent: cfg.latent,
                    gp: model.gp.as_ref(),
                    batch: &batch,
                    eps: &eps,
                    kl_beta: beta,
                    n_total: n,
                };
                let terms = elbo_graph(&mut graph, &pv, &inputs)?;
                let vals = terms.values(&graph);
                if ![vals.elbo, vals.recon, vals.kl_gp, vals.kl_std, vals.kl_inducing].iter().all(|v| v.is_finite()) {
                    return Err(diverged(epoch, format!("non-finite ELBO ({vals})")));
                }
                let grads = graph.backward(terms.elbo)?;
                let neg: Vec<Matrix<f64>> = pv.iter().iter().map(|&&v| grads.wrt(v).scale(-1.0)).collect();
                if !neg.iter().all(|g| g.all_finite()) {
                    return Err(diverged(epoch, format!("non-finite gradient ({vals})")));
                }
                let mut next = model.params.clone();
                adam.step(&mut next, &neg, cfg.lr, cfg.weight_decay);
                if !next.all_finite() {
                    return Err(diverged(epoch, "non-finite parameters after update"));
                }
                model.params = next;
                Ok(vals)
            })();
            let vals = match step {
                Ok(v) => v,
                Err(e) => {
                    let error = match e {
                        Error::Diverged { .. } => e,
                        Error::NonFinite(_) | Error::NotPositiveDefinite { .. } | Error::Domain(_) => {
                            diverged(epoch, e.to_string())
                        }
                        other => other,
                    };
                    return Err(FitFailure { error, last_good: snapshot(&best, &log, best_epoch) });
                }
            };
            let w = chunk.len() as f64;
            for (s, v) in sums.iter_mut().zip([vals.elbo, vals.recon, vals.kl_gp, vals.kl_std, vals.kl_inducing]) {
                *s += w * v;
            }
        }
        let [elbo, recon, kl_gp, kl_std, kl_inducing] = sums.map(|s| s / n as f64);
        smoothed = if epoch == 0 { elbo } else { cfg.smoothing * elbo + (1.0 - cfg.smoothing) * smoothed };
        log::info!("epoch {epoch}: beta={beta} elbo={elbo:.4} recon={recon:.4} kl_gp={kl_gp:.4} kl_std={kl_std:.4} kl_u={kl_inducing:.4}");
        log.push(EpochLog { epoch, kl_beta: beta, elbo, recon, kl_gp, kl_std, kl_inducing, smoothed_elbo: smoothed });
        model.rng = RngState::capture(&rng);
        if smoothed > best_smoothed {
            best_smoothed = smoothed;
            best_epoch = epoch;
            since_best = 0;
            best = model.clone();
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let mut best = best;
    best.rng = model.rng;
    Ok(Fitted { model: best, log, best_epoch, stopped_early })
}

/// Embeds cells with a trained model.
pub fn embed(data: &Preprocessed, model: &Model) -> Result<Matrix<f64>> {
    if data.kept_genes != model.kept_genes {
        return Err(Error::contract("dataset genes differ from the model's; project the data first"));
    }
    model.embed(&data.features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inducing_cells_are_distinct() {
        let x = Matrix::from_fn(30, 2, |i, j| ((i / 10) * 5 + j) as f64 + (i % 10) as f64 * 0.01);
        let reps = select_inducing(&x, 6, 0).unwrap();
        let mut s = reps.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 6);
        assert!(select_inducing(&x, 31, 0).is_err());
    }

    #[test]
    fn chol_raw_inverts() {
        let l = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.5, 0.3]]);
        let mut g = Graph::<f64>::new();
        let r = g.constant(chol_raw_from(&l));
        let back = g.lower_softplus_diag(r);
        assert!(g.value(back).sub(&l).max_abs() < 1e-12);
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::Rng;
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let _: u64 = a.random();
        let mut b = RngState::capture(&a).restore();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
