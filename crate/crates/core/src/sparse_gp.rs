//! Sparse variational GP over the communication-aware latent dimensions.
//!
//! Each of the ℓ dimensions has its own inducing distribution
//! `q(u_l) = N(μ_l, A_l)`; all share one kernel and inducing-input set. The
//! minibatch posterior at the batch points uses the encoder means as
//! regression targets and the encoder variances as per-point noise, with the
//! data term scaled by `N/b`:
//!
//! ```text
//! Σ      = K_mm + (N/b) K_mn diag(σ⁻²) K_nm
//! μ(x)   = (N/b) K_xm Σ⁻¹ K_mn diag(σ⁻²) y
//! σ²(x)  = K_xx − K_xm K_mm⁻¹ K_mx + K_xm Σ⁻¹ K_mx
//! ```
//!
//! All inverses are Cholesky solves.

use crate::autodiff::{Graph, Var};
use crate::ccc_kernel::{cauchy_kernel, CccKernel};
use crate::error::{Error, Result};
use crate::linalg::assert_positive_definite;
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Largest training set accepted by [`exact_gp_posterior`].
pub const EXACT_GP_MAX_POINTS: usize = 200;

/// Covariance function evaluated on feature rows.
pub trait CovarianceFn<T: Scalar> {
    fn cross(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>>;

    /// `k(a_i, a_i)` for every row.
    fn diag(&self, a: &Matrix<T>) -> Result<Vec<T>> {
        (0..a.rows())
            .map(|i| {
                let r = a.select_rows(&[i]);
                self.cross(&r, &r).map(|k| k.item())
            })
            .collect()
    }
}

impl<T: Scalar> CovarianceFn<T> for CccKernel<T> {
    fn cross(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
        CccKernel::cross(self, a, b)
    }
}

/// Plain Cauchy kernel with a fixed width.
#[derive(Clone, Copy, Debug)]
pub struct Cauchy<T> {
    pub scale_s: T,
}

impl<T: Scalar> CovarianceFn<T> for Cauchy<T> {
    fn cross(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
        cauchy_kernel(a, b, self.scale_s)
    }

    fn diag(&self, a: &Matrix<T>) -> Result<Vec<T>> {
        Ok(vec![T::one(); a.rows()])
    }
}

/// Inducing inputs plus per-dimension variational parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingState<T> {
    /// `m×d` inducing inputs.
    pub z_u: Matrix<T>,
    /// One `m×1` mean per latent dimension.
    pub mu: Vec<Matrix<T>>,
    /// One lower-triangular `m×m` factor of `A_l` per latent dimension.
    pub chol_a: Vec<Matrix<T>>,
}

impl<T: Scalar> InducingState<T> {
    pub fn m(&self) -> usize {
        self.z_u.rows()
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(Error::contract("at least one inducing input is required"));
        }
        if self.mu.len() != self.chol_a.len() {
            return Err(Error::contract("mean and covariance factor counts differ"));
        }
        if !self.z_u.all_finite() {
            return Err(Error::NonFinite("inducing inputs".into()));
        }
        for (l, (mu, a)) in self.mu.iter().zip(&self.chol_a).enumerate() {
            if mu.shape() != (m, 1) || a.shape() != (m, m) {
                return Err(Error::contract(format!("dimension {l}: variational parameter shapes")));
            }
            if !mu.all_finite() || !a.all_finite() {
                return Err(Error::NonFinite(format!("variational parameters of dimension {l}")));
            }
            for i in 0..m {
                if !(a[(i, i)] > T::zero()) {
                    return Err(Error::contract(format!("dimension {l}: factor diagonal must be positive")));
                }
                for j in (i + 1)..m {
                    if a[(i, j)] != T::zero() {
                        return Err(Error::contract(format!("dimension {l}: factor must be lower triangular")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-point posterior moments, `batch × ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosterior<T> {
    pub mean: Matrix<T>,
    pub variance: Matrix<T>,
}

/// Moments of `p(f | u)` at each point:
/// mean `K_nm K_mm⁻¹ u`, variance `diag(K_nn) − diag(K_nm K_mm⁻¹ K_mn)`
/// floored at `jitter`.
pub fn conditional_prior<T: Scalar>(
    k_nm: &Matrix<T>,
    k_mm: &Matrix<T>,
    k_nn_diag: &[T],
    u: &[T],
    jitter: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let m = k_mm.rows();
    if k_nm.cols() != m || u.len() != m || k_nn_diag.len() != k_nm.rows() {
        return Err(Error::contract("conditional_prior shape mismatch"));
    }
    let chol = assert_positive_definite(k_mm, jitter)?;
    let a = chol.solve(&k_nm.transpose()); // K_mm⁻¹ K_mn
    let w = chol.solve(&Matrix::column(u));
    let mean = (0..k_nm.rows()).map(|i| dot(k_nm.row(i), w.as_slice())).collect();
    let var = (0..k_nm.rows())
        .map(|i| {
            let q: T = (0..m).map(|p| k_nm[(i, p)] * a[(p, i)]).sum();
            (k_nn_diag[i] - q).max(jitter)
        })
        .collect();
    Ok((mean, var))
}

/// Kernel blocks for one minibatch on a graph.
#[derive(Clone, Copy, Debug)]
pub struct KernelBlocks {
    /// `m×m` inducing covariance.
    pub k_mm: Var,
    /// `n×m` batch-inducing cross covariance.
    pub k_nm: Var,
    /// `n×1` prior variances at the batch points.
    pub k_nn_diag: Var,
}

/// Quantities shared by every latent dimension for one batch.
pub struct SharedTerms {
    /// `K_mm⁻¹ K_mn`, `m×n`.
    pub kmm_inv_kmn: Var,
    /// `diag(K_nn) − diag(Q_nn)` floored at jitter, `n×1`.
    pub conditional_var: Var,
}

pub fn shared_terms<T: Scalar>(g: &mut Graph<T>, blocks: &KernelBlocks) -> Result<SharedTerms> {
    let kmn = g.transpose(blocks.k_nm);
    let kmm_inv_kmn = g.spd_solve(blocks.k_mm, kmn)?;
    let a_t = g.transpose(kmm_inv_kmn);
    let q = g.mul(blocks.k_nm, a_t);
    let q = g.sum_cols(q);
    let c = g.sub(blocks.k_nn_diag, q);
    let jitter = g.jitter();
    let conditional_var = g.clamp_min(c, jitter);
    Ok(SharedTerms { kmm_inv_kmn, conditional_var })
}

/// Minibatch posterior of one latent dimension at the batch points.
///
/// `y` and `noise_var` are `n×1`; `ratio` is `N/b`. Returns `(mean, variance)`
/// as `n×1` nodes.
pub fn sparse_posterior_graph<T: Scalar>(
    g: &mut Graph<T>,
    blocks: &KernelBlocks,
    shared: &SharedTerms,
    y: Var,
    noise_var: Var,
    ratio: T,
) -> Result<(Var, Var)> {
    let inv_noise = g.powf(noise_var, -T::one());
    let weighted = g.mul(blocks.k_nm, inv_noise); // diag(σ⁻²) K_nm
    let weighted_t = g.transpose(weighted); // K_mn diag(σ⁻²)
    let gram = g.matmul(weighted_t, blocks.k_nm);
    let gram = g.scale(gram, ratio);
    let inner = g.add(blocks.k_mm, gram);
    let kmn = g.transpose(blocks.k_nm);
    let rhs_y = g.matmul(weighted_t, y);
    let both = g.concat_cols(&[rhs_y, kmn]);
    let solved = g.spd_solve(inner, both)?; // Σ⁻¹ [K_mn σ⁻² y | K_mn]
    let m_cols = g.shape(kmn).1;
    let alpha = g.slice_cols(solved, 0, 1);
    let inner_inv_kmn = g.slice_cols(solved, 1, 1 + m_cols);

    let mean = g.matmul(blocks.k_nm, alpha);
    let mean = g.scale(mean, ratio);

    let inner_inv_t = g.transpose(inner_inv_kmn);
    let r = g.mul(blocks.k_nm, inner_inv_t);
    let r = g.sum_cols(r);
    let var = g.add(shared.conditional_var, r);
    Ok((mean, var))
}

/// Moments at each point of `∫ p(f | u) q(u) du`:
/// mean `a μ`, variance `c + ‖a L‖²` with `a = K_nm K_mm⁻¹` and `c` the
/// conditional variance.
pub fn inducing_marginal_graph<T: Scalar>(g: &mut Graph<T>, shared: &SharedTerms, mu: Var, chol_a: Var) -> (Var, Var) {
    let a = g.transpose(shared.kmm_inv_kmn);
    let mean = g.matmul(a, mu);
    let al = g.matmul(a, chol_a);
    let al2 = g.square(al);
    let spread = g.sum_cols(al2);
    let var = g.add(shared.conditional_var, spread);
    (mean, var)
}

/// Elementwise `KL(N(m_q, v_q) ‖ N(m_p, v_p))`.
pub fn gaussian_kl_graph<T: Scalar>(g: &mut Graph<T>, m_q: Var, v_q: Var, m_p: Var, v_p: Var) -> Var {
    let ratio = g.div(v_q, v_p);
    let log_ratio = g.log(ratio);
    let diff = g.sub(m_q, m_p);
    let diff2 = g.square(diff);
    let maha = g.div(diff2, v_p);
    let t = g.add(ratio, maha);
    let t = g.sub(t, log_ratio);
    let t = g.add_scalar(t, -T::one());
    g.scale(t, T::lit(0.5))
}

/// `KL(N(μ, L Lᵀ) ‖ N(0, K_mm))` on the graph, floored at zero.
pub fn kl_inducing_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, chol_a: Var, k_mm: Var) -> Result<Var> {
    let m = g.shape(k_mm).0;
    let logdet_k = g.logdet_spd(k_mm)?;
    let d = g.diag(chol_a);
    let d = g.log(d);
    let logdet_a = g.sum(d);
    let logdet_a = g.scale(logdet_a, T::lit(2.0));
    let rhs = g.concat_cols(&[chol_a, mu]);
    let solved = g.spd_solve(k_mm, rhs)?;
    let prod = g.mul(solved, rhs);
    // Σ (K⁻¹L)∘L = Tr(K⁻¹A); the last column gives μᵀK⁻¹μ
    let quad = g.sum(prod);
    let t = g.sub(logdet_k, logdet_a);
    let t = g.add(t, quad);
    let t = g.add_scalar(t, -T::from_usize_lossy(m));
    let t = g.scale(t, T::lit(0.5));
    Ok(g.clamp_min(t, T::zero()))
}

/// `KL(q(u_l) ‖ p(u_l))` from Cholesky factors, floored at zero.
pub fn kl_inducing<T: Scalar>(mu: &Matrix<T>, chol_a: &Matrix<T>, k_mm: &Matrix<T>, jitter: T) -> Result<T> {
    let m = k_mm.rows();
    if mu.shape() != (m, 1) || chol_a.shape() != (m, m) {
        return Err(Error::contract("kl_inducing shape mismatch"));
    }
    let chol_k = assert_positive_definite(k_mm, jitter)?;
    let logdet_a = T::lit(2.0) * chol_a.diag().into_iter().map(|x| x.ln()).sum::<T>();
    let b = chol_k.solve_lower(chol_a);
    let trace: T = b.as_slice().iter().map(|&x| x * x).sum();
    let w = chol_k.solve_lower(mu);
    let quad: T = w.as_slice().iter().map(|&x| x * x).sum();
    let kl = T::lit(0.5) * (chol_k.log_det() - logdet_a - T::from_usize_lossy(m) + trace + quad);
    Ok(kl.max(T::zero()))
}

/// Minibatch posterior for every latent dimension at the batch points.
///
/// `y` and `noise_var` are `b×ℓ` (encoder means and variances of the
/// communication-aware dimensions).
pub fn sparse_posterior<T: Scalar, K: CovarianceFn<T>>(
    batch_features: &Matrix<T>,
    y: &Matrix<T>,
    noise_var: &Matrix<T>,
    inducing: &InducingState<T>,
    kernel: &K,
    n_total: usize,
    jitter: T,
) -> Result<GpPosterior<T>> {
    let b = batch_features.rows();
    if b == 0 || b > n_total {
        return Err(Error::contract(format!("batch size {b} must be in 1..={n_total}")));
    }
    if y.shape() != noise_var.shape() || y.rows() != b {
        return Err(Error::contract("targets and noise must be batch×ℓ"));
    }
    if noise_var.as_slice().iter().any(|&v| !(v > T::zero())) {
        return Err(Error::domain("noise variances must be positive"));
    }
    let ell = y.cols();
    let mut g = Graph::with_jitter(jitter);
    let k_mm = g.constant(kernel.cross(&inducing.z_u, &inducing.z_u)?.symmetrize());
    let k_nm = g.constant(kernel.cross(batch_features, &inducing.z_u)?);
    let k_nn_diag = g.constant(Matrix::column(&kernel.diag(batch_features)?));
    let blocks = KernelBlocks { k_mm, k_nm, k_nn_diag };
    let shared = shared_terms(&mut g, &blocks)?;
    let ratio = T::from_usize_lossy(n_total) / T::from_usize_lossy(b);
    let mut mean = Matrix::zeros(b, ell);
    let mut variance = Matrix::zeros(b, ell);
    for l in 0..ell {
        let yl = g.constant(y.slice_cols(l, l + 1));
        let nl = g.constant(noise_var.slice_cols(l, l + 1));
        let (m, v) = sparse_posterior_graph(&mut g, &blocks, &shared, yl, nl, ratio)?;
        for i in 0..b {
            mean[(i, l)] = g.value(m)[(i, 0)];
            variance[(i, l)] = g.value(v)[(i, 0)];
        }
    }
    Ok(GpPosterior { mean, variance })
}

/// Textbook GP regression: Cholesky of `K_nn + diag(noise)`.
pub fn exact_gp_posterior<T: Scalar, K: CovarianceFn<T>>(
    train: &Matrix<T>,
    y: &[T],
    noise_var: &[T],
    test: &Matrix<T>,
    kernel: &K,
    jitter: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = train.rows();
    if n > EXACT_GP_MAX_POINTS {
        return Err(Error::contract(format!("exact GP limited to {EXACT_GP_MAX_POINTS} points")));
    }
    if y.len() != n || noise_var.len() != n {
        return Err(Error::contract("targets and noise must match training rows"));
    }
    let prior = kernel.diag(test)?;
    if n == 0 {
        return Ok((vec![T::zero(); test.rows()], prior));
    }
    let mut k = kernel.cross(train, train)?.symmetrize();
    for i in 0..n {
        k[(i, i)] += noise_var[i];
    }
    let chol = assert_positive_definite(&k, jitter)?;
    let k_sn = kernel.cross(test, train)?;
    let alpha = chol.solve(&Matrix::column(y));
    let v = chol.solve_lower(&k_sn.transpose());
    let mean = (0..test.rows()).map(|i| dot(k_sn.row(i), alpha.as_slice())).collect();
    let var = (0..test.rows()).map(|i| prior[i] - (0..n).map(|p| v[(p, i)] * v[(p, i)]).sum::<T>()).collect();
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl CovarianceFn<f64> for Constant {
        fn cross(&self, a: &Matrix<f64>, b: &Matrix<f64>) -> Result<Matrix<f64>> {
            Ok(Matrix::<f64>::filled(a.rows(), b.rows(), self.0))
        }
    }

    #[test]
    fn conditional_prior_scalar() {
        let (m, v) =
            conditional_prior(&Matrix::scalar(0.5f64), &Matrix::scalar(1.0f64), &[1.0], &[2.0], 1e-12).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-10);
        assert!((v[0] - 0.75).abs() < 1e-10);
    }

    #[test]
    fn conditional_prior_interpolates_inducing_points() {
        let k = Matrix::<f64>::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]);
        let (m, v) = conditional_prior(&k, &k, &[1.0, 1.0], &[0.7, -1.2], 1e-9).unwrap();
        assert!((m[0] - 0.7).abs() < 1e-8 && (m[1] + 1.2).abs() < 1e-8);
        assert!(v.iter().all(|&x| (x - 1e-9).abs() < 1e-11), "{v:?}");
        let (m, _) = conditional_prior(&k, &k, &[1.0, 1.0], &[0.0, 0.0], 1e-9).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
    }

    #[test]
    fn sparse_posterior_scalar_case() {
        let inducing = InducingState {
            z_u: Matrix::scalar(0.0f64),
            mu: vec![Matrix::scalar(0.0f64)],
            chol_a: vec![Matrix::scalar(1.0f64)],
        };
        let post = sparse_posterior(
            &Matrix::scalar(0.0f64),
            &Matrix::scalar(3.0f64),
            &Matrix::scalar(1.0f64),
            &inducing,
            &Constant(1.0),
            1,
            1e-12,
        )
        .unwrap();
        assert!((post.mean.item() - 1.5).abs() < 1e-10);
        assert!((post.variance.item() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn infinite_noise_recovers_prior() {
        let x = Matrix::from_fn(5, 2, |i, j| (i as f64 * 0.37 + j as f64).cos());
        let kernel = Cauchy { scale_s: 1.0 };
        let inducing = InducingState {
            z_u: x.select_rows(&[0, 2, 4]),
            mu: vec![Matrix::zeros(3, 1)],
            chol_a: vec![Matrix::identity(3)],
        };
        let y = Matrix::from_fn(5, 1, |i, _| i as f64 - 2.0);
        let post = sparse_posterior(&x, &y, &Matrix::<f64>::filled(5, 1, 1e12), &inducing, &kernel, 5, 1e-9).unwrap();
        for i in 0..5 {
            assert!(post.mean[(i, 0)].abs() < 1e-3);
            assert!((post.variance[(i, 0)] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn exact_gp_edge_cases() {
        let kernel = Constant(1.0);
        let test = Matrix::zeros(2, 1);
        let (m, v) = exact_gp_posterior(&Matrix::zeros(0, 1), &[], &[], &test, &kernel, 1e-12).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert_eq!(v, vec![1.0, 1.0]);
        let (m, v) =
            exact_gp_posterior(&Matrix::zeros(1, 1), &[4.0], &[1.0], &Matrix::zeros(1, 1), &kernel, 1e-12).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-10);
        assert!((v[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn exact_gp_noiseless_interpolates() {
        let x = Matrix::from_fn(6, 1, |i, _| i as f64 * 0.9);
        let y: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let kernel = Cauchy { scale_s: 0.5 };
        let (m, _) = exact_gp_posterior(&x, &y, &[0.0; 6], &x, &kernel, 1e-12).unwrap();
        for (a, b) in m.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn kl_inducing_hand_values() {
        let k = Matrix::scalar(1.0f64);
        let kl = kl_inducing(&Matrix::scalar(2.0f64), &Matrix::scalar(1.0f64), &k, 1e-300).unwrap();
        assert!((kl - 2.0).abs() < 1e-9);
        let kl = kl_inducing(&Matrix::scalar(0.0f64), &Matrix::scalar(0.5f64.sqrt()), &k, 1e-300).unwrap();
        assert!((kl - 0.5 * (-(0.5f64.ln()) - 0.5)).abs() < 1e-9);
        assert!((kl - 0.096_573_590_279_972_65).abs() < 1e-9);
    }

    #[test]
    fn kl_inducing_zero_at_prior() {
        let k = Matrix::<f64>::from_rows(&[vec![2.0, 0.4, 0.1], vec![0.4, 1.5, 0.3], vec![0.1, 0.3, 1.0]]);
        let l = crate::linalg::cholesky(&k).unwrap();
        let kl = kl_inducing(&Matrix::zeros(3, 1), &l, &k, 1e-300).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn kl_graph_matches_plain() {
        let k = Matrix::<f64>::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.5]]);
        let l = Matrix::<f64>::from_rows(&[vec![0.8, 0.0], vec![-0.3, 1.1]]);
        let mu = Matrix::column(&[0.3, -0.7]);
        let plain = kl_inducing(&mu, &l, &k, 1e-6).unwrap();
        let mut g = Graph::with_jitter(1e-6);
        let (vm, vl, vk) = (g.constant(mu), g.constant(l), g.constant(k));
        let kl = kl_inducing_graph(&mut g, vm, vl, vk).unwrap();
        assert!((g.scalar_value(kl) - plain).abs() < 1e-12);
    }

    #[test]
    fn inducing_state_validation() {
        let mut s = InducingState {
            z_u: Matrix::zeros(2, 1),
            mu: vec![Matrix::zeros(2, 1)],
            chol_a: vec![Matrix::identity(2)],
        };
        assert!(s.validate().is_ok());
        s.chol_a[0][(1, 1)] = 0.0;
        assert!(s.validate().is_err());
        s.chol_a[0] = Matrix::<f64>::from_rows(&[vec![1.0, 0.2], vec![0.0, 1.0]]);
        assert!(s.validate().is_err());
    }
}
