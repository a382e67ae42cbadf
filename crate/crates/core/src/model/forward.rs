//! Encoder, decoder, likelihood and the evidence lower bound on a graph.

use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Linear, Params};
use super::LatentConfig;
use crate::autodiff::{Graph, Var};
use crate::ccc_kernel::{cauchy_kernel_graph, ccc_kernel_diag_graph, ccc_kernel_graph, pairwise_squared_distances};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse_gp::{
    gaussian_kl_graph, inducing_marginal_graph, kl_inducing_graph, shared_terms, sparse_posterior_graph, GpPosterior,
    KernelBlocks,
};
use crate::special::lgamma;

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const MEAN_FLOOR: f64 = 1e-6;
pub const DISPERSION_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mu: Matrix<f64>,
    pub sigma: Matrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbParams {
    /// `batch×G'`.
    pub mean: Matrix<f64>,
    /// One dispersion per gene.
    pub dispersion: Vec<f64>,
}

/// Frozen inducing inputs and propagation matrix of a trained or training model.
#[derive(Clone, Debug, PartialEq)]
pub struct GpContext {
    pub z_u: Matrix<f64>,
    pub propagation: Matrix<f64>,
    d_mm: Matrix<f64>,
}

impl GpContext {
    pub fn new(z_u: Matrix<f64>, propagation: Matrix<f64>) -> Result<Self> {
        if propagation.shape() != (z_u.rows(), z_u.rows()) {
            return Err(Error::contract("propagation matrix does not match the inducing inputs"));
        }
        let d_mm = pairwise_squared_distances(&z_u, &z_u)?;
        Ok(Self { z_u, propagation, d_mm })
    }

    pub fn m(&self) -> usize {
        self.z_u.rows()
    }
}

/// One minibatch with everything the graph needs as constants.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Matrix<f64>,
    pub counts: Matrix<f64>,
    /// `b×1` multiplicative depth factors.
    pub size_factors: Matrix<f64>,
    d_nz: Option<Matrix<f64>>,
    lgamma_counts: f64,
}

impl Batch {
    pub fn new(
        features: Matrix<f64>,
        counts: Matrix<f64>,
        size_factors: &[f64],
        gp: Option<&GpContext>,
    ) -> Result<Self> {
        let b = features.rows();
        if counts.rows() != b || size_factors.len() != b || counts.cols() != features.cols() {
            return Err(Error::contract("batch features, counts and size factors disagree"));
        }
        validate_counts(&counts)?;
        let d_nz = gp.map(|c| pairwise_squared_distances(&features, &c.z_u)).transpose()?;
        let lgamma_counts = counts.as_slice().iter().map(|&x| lgamma(x + 1.0)).sum();
        Ok(Self { features, counts, size_factors: Matrix::column(size_factors), d_nz, lgamma_counts })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn validate_counts(x: &Matrix<f64>) -> Result<()> {
    if let Some(v) = x.as_slice().iter().find(|&&v| !(v >= 0.0) || v.fract() != 0.0 || !v.is_finite()) {
        return Err(Error::domain(format!("counts must be nonnegative integers, found {v}")));
    }
    Ok(())
}

fn linear(g: &mut Graph<f64>, x: Var, l: &Linear<Var>) -> Var {
    let y = g.matmul(x, l.w);
    g.add_row(y, l.b)
}

/// `(mu, sigma)`, both `batch×D`.
pub fn encoder_graph(g: &mut Graph<f64>, p: &Params<Var>, x: Var) -> (Var, Var) {
    let mut h = x;
    for l in &p.encoder {
        let a = linear(g, h, l);
        h = g.softplus(a);
    }
    let mu = linear(g, h, &p.enc_mu);
    let s = linear(g, h, &p.enc_sigma);
    let s = g.softplus(s);
    (mu, g.add_scalar(s, SIGMA_FLOOR))
}

/// `(mean, dispersion)`: `batch×G'` before depth scaling, and `1×G'`.
pub fn decoder_graph(g: &mut Graph<f64>, p: &Params<Var>, z: Var) -> (Var, Var) {
    let mut h = z;
    for l in &p.decoder {
        let a = linear(g, h, l);
        h = g.softplus(a);
    }
    let m = linear(g, h, &p.dec_mean);
    let m = g.softplus(m);
    let mean = g.add_scalar(m, MEAN_FLOOR);
    let t = g.softplus(p.theta_raw);
    (mean, g.add_scalar(t, DISPERSION_FLOOR))
}

/// Per-cell NB log-likelihood without the `−Σ lgamma(x+1)` constant.
fn nb_core_graph(g: &mut Graph<f64>, x: Var, mean: Var, theta: Var) -> Var {
    let x_theta = g.add(x, theta);
    let t1 = g.lgamma(x_theta);
    let lg_theta = g.lgamma(theta);
    let t1 = g.sub(t1, lg_theta);
    let denom = g.add(theta, mean);
    let log_denom = g.log(denom);
    let log_theta = g.log(theta);
    let a = g.sub(log_theta, log_denom);
    let t2 = g.mul(theta, a);
    let log_mean = g.log(mean);
    let b = g.sub(log_mean, log_denom);
    let t3 = g.mul(x, b);
    let s = g.add(t1, t2);
    let s = g.add(s, t3);
    g.sum_cols(s)
}

/// `½ Σ_d (σ² + μ² − 1 − 2 log σ)` per row, floored at zero.
pub fn kl_standard_normal_graph(g: &mut Graph<f64>, mu: Var, sigma: Var) -> Var {
    let s2 = g.square(sigma);
    let m2 = g.square(mu);
    let ls = g.log(sigma);
    let ls = g.scale(ls, 2.0);
    let t = g.add(s2, m2);
    let t = g.sub(t, ls);
    let t = g.add_scalar(t, -1.0);
    let t = g.sum_cols(t);
    let t = g.scale(t, 0.5);
    g.clamp_min(t, 0.0)
}

/// Scalar nodes of one ELBO evaluation. The KL entries are batch means except
/// `kl_inducing`, which is the sum over GP dimensions.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub elbo: Var,
    pub recon: Var,
    pub kl_gp: Var,
    pub kl_std: Var,
    pub kl_inducing: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboValues {
    pub elbo: f64,
    pub recon: f64,
    pub kl_gp: f64,
    pub kl_std: f64,
    pub kl_inducing: f64,
}

impl ElboTerms {
    pub fn values(&self, g: &Graph<f64>) -> ElboValues {
        ElboValues {
            elbo: g.scalar_value(self.elbo),
            recon: g.scalar_value(self.recon),
            kl_gp: g.scalar_value(self.kl_gp),
            kl_std: g.scalar_value(self.kl_std),
            kl_inducing: g.scalar_value(self.kl_inducing),
        }
    }
}

impl std::fmt::Display for ElboValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "elbo={} recon={} kl_gp={} kl_std={} kl_inducing={}",
            self.elbo, self.recon, self.kl_gp, self.kl_std, self.kl_inducing
        )
    }
}

/// Everything the ELBO needs that is not a trainable parameter.
pub struct ElboInputs<'a> {
    pub latent: LatentConfig,
    pub gp: Option<&'a GpContext>,
    pub batch: &'a Batch,
    /// `batch×D` standard-normal noise drawn before the graph is built.
    pub eps: &'a Matrix<f64>,
    pub kl_beta: f64,
    pub n_total: usize,
}

/// Kernel blocks between the batch and the inducing inputs under the current width.
fn kernel_blocks(g: &mut Graph<f64>, p: &Params<Var>, gp: &GpContext, d_nz: &Matrix<f64>) -> KernelBlocks {
    let s = g.softplus(p.scale_raw);
    let dnz = g.constant(d_nz.clone());
    let dmm = g.constant(gp.d_mm.clone());
    let prop = g.constant(gp.propagation.clone());
    let knz = cauchy_kernel_graph(g, dnz, s);
    let kzz = cauchy_kernel_graph(g, dmm, s);
    let k_nm = ccc_kernel_graph(g, knz, prop, kzz);
    let k_mm = ccc_kernel_graph(g, kzz, prop, kzz);
    let k_nn_diag = ccc_kernel_diag_graph(g, knz, prop);
    KernelBlocks { k_mm, k_nm, k_nn_diag }
}

/// Builds the minibatch ELBO:
/// `mean_i [log p(x_i|z_i) − β (KL_gp,i + KL_std,i)] − β Σ_l KL(q(u_l)‖p(u_l)) / N`.
pub fn elbo_graph(g: &mut Graph<f64>, p: &Params<Var>, inp: &ElboInputs) -> Result<ElboTerms> {
    let batch = inp.batch;
    let b = batch.len();
    let (ell, d) = (inp.latent.l_ccc, inp.latent.d_total);
    if b == 0 || inp.eps.shape() != (b, d) {
        return Err(Error::contract("noise must be batch×D for a non-empty batch"));
    }
    if !(inp.kl_beta > 0.0) || inp.n_total < b {
        return Err(Error::contract("kl_beta must be positive and n_total at least the batch size"));
    }
    if p.inducing_mu.len() != ell {
        return Err(Error::contract("one inducing distribution per GP dimension required"));
    }
    let x = g.constant(batch.features.clone());
    let (mu, sigma) = encoder_graph(g, p, x);
    let zero_cells = g.constant(Matrix::zeros(b, 1));
    let zero = g.scalar_constant(0.0);
    let mut z_parts = Vec::new();
    let mut kl_gp = zero_cells;
    let mut kl_u = zero;

    if ell > 0 {
        let gp = inp.gp.ok_or_else(|| Error::contract("GP dimensions need inducing inputs"))?;
        let d_nz = batch.d_nz.as_ref().ok_or_else(|| Error::contract("batch built without inducing distances"))?;
        let blocks = kernel_blocks(g, p, gp, d_nz);
        let shared = shared_terms(g, &blocks)?;
        let ratio = inp.n_total as f64 / b as f64;
        for l in 0..ell {
            let y = g.slice_cols(mu, l, l + 1);
            let sd = g.slice_cols(sigma, l, l + 1);
            let noise = g.square(sd);
            let (gm, gv) = sparse_posterior_graph(g, &blocks, &shared, y, noise, ratio)?;
            let chol = g.lower_softplus_diag(p.inducing_chol_raw[l]);
            let (pm, pv) = inducing_marginal_graph(g, &shared, p.inducing_mu[l], chol);
            let kl = gaussian_kl_graph(g, gm, gv, pm, pv);
            kl_gp = g.add(kl_gp, kl);
            let e = g.constant(inp.eps.slice_cols(l, l + 1));
            let sdv = g.sqrt(gv);
            let noise_term = g.mul(sdv, e);
            z_parts.push(g.add(gm, noise_term));
            let ku = kl_inducing_graph(g, p.inducing_mu[l], chol, blocks.k_mm)?;
            kl_u = g.add(kl_u, ku);
        }
    }

    let mut kl_std = zero_cells;
    if d > ell {
        let mu_r = g.slice_cols(mu, ell, d);
        let sd_r = g.slice_cols(sigma, ell, d);
        let e = g.constant(inp.eps.slice_cols(ell, d));
        let noise_term = g.mul(sd_r, e);
        z_parts.push(g.add(mu_r, noise_term));
        kl_std = kl_standard_normal_graph(g, mu_r, sd_r);
    }
    let z = if z_parts.len() == 1 { z_parts[0] } else { g.concat_cols(&z_parts) };

    let (mean, theta) = decoder_graph(g, p, z);
    let sf = g.constant(batch.size_factors.clone());
    let mean = g.mul(mean, sf);
    let counts = g.constant(batch.counts.clone());
    let ll = nb_core_graph(g, counts, mean, theta);
    let ll = g.add_scalar(ll, -batch.lgamma_counts / b as f64);

    let kl_cells = g.add(kl_gp, kl_std);
    let penalty = g.scale(kl_cells, inp.kl_beta);
    let per_cell = g.sub(ll, penalty);
    let data_term = g.mean(per_cell);
    let u_term = g.scale(kl_u, inp.kl_beta / inp.n_total as f64);
    let elbo = g.sub(data_term, u_term);
    Ok(ElboTerms { elbo, recon: g.mean(ll), kl_gp: g.mean(kl_gp), kl_std: g.mean(kl_std), kl_inducing: kl_u })
}

/// Per-cell NB log-likelihood
/// `Σ_g [lgamma(x+θ) − lgamma(θ) − lgamma(x+1) + θ log(θ/(θ+μ)) + x log(μ/(θ+μ))]`.
pub fn nb_log_likelihood(x: &Matrix<f64>, nb: &NbParams) -> Result<Vec<f64>> {
    if x.shape() != nb.mean.shape() || nb.dispersion.len() != x.cols() {
        return Err(Error::contract("counts, means and dispersions disagree in shape"));
    }
    validate_counts(x)?;
    if nb.mean.as_slice().iter().any(|&m| !(m > 0.0)) || nb.dispersion.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::domain("NB mean and dispersion must be positive"));
    }
    Ok((0..x.rows())
        .map(|i| {
            (0..x.cols())
                .map(|j| {
                    let (xv, m, t) = (x[(i, j)], nb.mean[(i, j)], nb.dispersion[j]);
                    lgamma(xv + t) - lgamma(t) - lgamma(xv + 1.0)
                        + t * (t / (t + m)).ln()
                        + if xv > 0.0 { xv * (m / (t + m)).ln() } else { 0.0 }
                })
                .sum()
        })
        .collect())
}

/// `½ Σ_d (σ² + μ² − 1 − 2 log σ)` per row, floored at zero.
pub fn kl_standard_normal(mu: &Matrix<f64>, sigma: &Matrix<f64>) -> Result<Vec<f64>> {
    if mu.shape() != sigma.shape() {
        return Err(Error::contract("mu and sigma shapes differ"));
    }
    if sigma.as_slice().iter().any(|&s| !(s > 0.0)) {
        return Err(Error::domain("sigma must be positive"));
    }
    Ok((0..mu.rows())
        .map(|i| {
            let s: f64 = mu.row(i).iter().zip(sigma.row(i)).map(|(&m, &s)| s * s + m * m - 1.0 - 2.0 * s.ln()).sum();
            (0.5 * s).max(0.0)
        })
        .collect())
}

fn constant_params(g: &mut Graph<f64>, p: &Params<Matrix<f64>>) -> Params<Var> {
    p.map(|m| g.constant(m.clone()))
}

pub fn encode(p: &Params<Matrix<f64>>, x: &Matrix<f64>) -> Result<EncoderOutput> {
    if p.encoder.first().map(|l| l.w.rows()) != Some(x.cols()) {
        return Err(Error::contract("input width does not match the encoder"));
    }
    let mut g = Graph::new();
    let pv = constant_params(&mut g, p);
    let xv = g.constant(x.clone());
    let (mu, sigma) = encoder_graph(&mut g, &pv, xv);
    let out = EncoderOutput { mu: g.value(mu).clone(), sigma: g.value(sigma).clone() };
    if !out.mu.all_finite() || !out.sigma.all_finite() {
        return Err(Error::NonFinite("encoder activations".into()));
    }
    Ok(out)
}

pub fn decode(p: &Params<Matrix<f64>>, z: &Matrix<f64>) -> Result<NbParams> {
    if p.decoder.first().map(|l| l.w.rows()) != Some(z.cols()) {
        return Err(Error::contract("latent width does not match the decoder"));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite("latent input".into()));
    }
    let mut g = Graph::new();
    let pv = constant_params(&mut g, p);
    let zv = g.constant(z.clone());
    let (mean, theta) = decoder_graph(&mut g, &pv, zv);
    let out = NbParams { mean: g.value(mean).clone(), dispersion: g.value(theta).as_slice().to_vec() };
    if !out.mean.all_finite() {
        return Err(Error::NonFinite("decoder output".into()));
    }
    Ok(out)
}

/// `batch×D` standard-normal draws in row-major order.
pub fn draw_noise(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Reparameterised latent draw from pre-drawn noise: GP moments for the first
/// `ℓ` columns, encoder moments for the rest.
pub fn sample_latent_with(
    enc: &EncoderOutput,
    gp: &GpPosterior<f64>,
    cfg: &LatentConfig,
    eps: &Matrix<f64>,
) -> Result<Matrix<f64>> {
    let (b, d) = enc.mu.shape();
    let ell = cfg.l_ccc;
    if d != cfg.d_total || eps.shape() != (b, d) || gp.mean.shape() != (b, ell) || gp.variance.shape() != (b, ell) {
        return Err(Error::contract("sample_latent shape mismatch"));
    }
    Ok(Matrix::from_fn(b, d, |i, j| {
        if j < ell {
            gp.mean[(i, j)] + gp.variance[(i, j)].sqrt() * eps[(i, j)]
        } else {
            enc.mu[(i, j)] + enc.sigma[(i, j)] * eps[(i, j)]
        }
    }))
}

pub fn sample_latent(
    enc: &EncoderOutput,
    gp: &GpPosterior<f64>,
    cfg: &LatentConfig,
    rng: &mut impl Rng,
) -> Result<Matrix<f64>> {
    let eps = draw_noise(rng, enc.mu.rows(), enc.mu.cols());
    sample_latent_with(enc, gp, cfg, &eps)
}

/// GP posterior means of the first `ℓ` dimensions with every given cell as the
/// batch (`N = b`), next to encoder means for the rest.
pub fn posterior_means(
    p: &Params<Matrix<f64>>,
    latent: &LatentConfig,
    gp: Option<&GpContext>,
    features: &Matrix<f64>,
    jitter: f64,
) -> Result<Matrix<f64>> {
    let enc = encode(p, features)?;
    let ell = latent.l_ccc;
    if ell == 0 {
        return Ok(enc.mu);
    }
    let gp = gp.ok_or_else(|| Error::contract("GP dimensions need inducing inputs"))?;
    let d_nz = pairwise_squared_distances(features, &gp.z_u)?;
    let mut g = Graph::with_jitter(jitter);
    let pv = constant_params(&mut g, p);
    let blocks = kernel_blocks(&mut g, &pv, gp, &d_nz);
    let shared = shared_terms(&mut g, &blocks)?;
    let mut out = enc.mu.clone();
    for l in 0..ell {
        let y = g.constant(enc.mu.slice_cols(l, l + 1));
        let noise = g.constant(enc.sigma.slice_cols(l, l + 1).map(|s| s * s));
        let (m, _) = sparse_posterior_graph(&mut g, &blocks, &shared, y, noise, 1.0)?;
        for i in 0..features.rows() {
            out[(i, l)] = g.value(m)[(i, 0)];
        }
    }
    if !out.all_finite() {
        return Err(Error::NonFinite("embedding".into()));
    }
    Ok(out)
}
