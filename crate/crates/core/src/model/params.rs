//! Trainable tensors, generic over storage so the same layout serves values
//! (`Matrix<f64>`), graph handles (`Var`) and optimiser moments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;

/// `y = x·w + b` with `w: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<M> {
    pub w: M,
    pub b: M,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<M> {
    pub encoder: Vec<Linear<M>>,
    pub enc_mu: Linear<M>,
    pub enc_sigma: Linear<M>,
    pub decoder: Vec<Linear<M>>,
    pub dec_mean: Linear<M>,
    /// `1×G'`; dispersion is `softplus(theta_raw) + 1e-4`.
    pub theta_raw: M,
    /// `1×1`; Cauchy width is `softplus(scale_raw)`.
    pub scale_raw: M,
    /// Per GP dimension, `m×1`.
    pub inducing_mu: Vec<M>,
    /// Per GP dimension, `m×m`; mapped through `lower_softplus_diag`.
    pub inducing_chol_raw: Vec<M>,
}

impl<M> Params<M> {
    /// Stable names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let lin = |out: &mut Vec<String>, p: &str| {
            out.push(format!("{p}.w"));
            out.push(format!("{p}.b"));
        };
        for i in 0..self.encoder.len() {
            lin(&mut out, &format!("encoder.{i}"));
        }
        lin(&mut out, "enc_mu");
        lin(&mut out, "enc_sigma");
        for i in 0..self.decoder.len() {
            lin(&mut out, &format!("decoder.{i}"));
        }
        lin(&mut out, "dec_mean");
        out.push("theta_raw".into());
        out.push("scale_raw".into());
        for l in 0..self.inducing_mu.len() {
            out.push(format!("inducing.{l}.mu"));
            out.push(format!("inducing.{l}.chol_raw"));
        }
        out
    }

    pub fn iter(&self) -> Vec<&M> {
        let mut out: Vec<&M> = Vec::new();
        for l in self.encoder.iter().chain([&self.enc_mu, &self.enc_sigma]) {
            out.push(&l.w);
            out.push(&l.b);
        }
        for l in self.decoder.iter().chain([&self.dec_mean]) {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.theta_raw);
        out.push(&self.scale_raw);
        for (m, c) in self.inducing_mu.iter().zip(&self.inducing_chol_raw) {
            out.push(m);
            out.push(c);
        }
        out
    }

    pub fn iter_mut(&mut self) -> Vec<&mut M> {
        let mut out: Vec<&mut M> = Vec::new();
        for l in self.encoder.iter_mut().chain([&mut self.enc_mu, &mut self.enc_sigma]) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for l in self.decoder.iter_mut().chain([&mut self.dec_mean]) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.theta_raw);
        out.push(&mut self.scale_raw);
        for (m, c) in self.inducing_mu.iter_mut().zip(self.inducing_chol_raw.iter_mut()) {
            out.push(m);
            out.push(c);
        }
        out
    }

    /// Same layout, each slot transformed in canonical order.
    pub fn map<N>(&self, mut f: impl FnMut(&M) -> N) -> Params<N> {
        let lin = |l: &Linear<M>, f: &mut dyn FnMut(&M) -> N| Linear { w: f(&l.w), b: f(&l.b) };
        let encoder = self.encoder.iter().map(|l| lin(l, &mut f)).collect();
        let enc_mu = lin(&self.enc_mu, &mut f);
        let enc_sigma = lin(&self.enc_sigma, &mut f);
        let decoder = self.decoder.iter().map(|l| lin(l, &mut f)).collect();
        let dec_mean = lin(&self.dec_mean, &mut f);
        let theta_raw = f(&self.theta_raw);
        let scale_raw = f(&self.scale_raw);
        let mut inducing_mu = Vec::new();
        let mut inducing_chol_raw = Vec::new();
        for (m, c) in self.inducing_mu.iter().zip(&self.inducing_chol_raw) {
            inducing_mu.push(f(m));
            inducing_chol_raw.push(f(c));
        }
        Params { encoder, enc_mu, enc_sigma, decoder, dec_mean, theta_raw, scale_raw, inducing_mu, inducing_chol_raw }
    }

    /// Refills this layout from a flat list in canonical order.
    pub fn rebuild<N: Clone>(&self, flat: &[N]) -> Params<N> {
        assert_eq!(flat.len(), self.iter().len(), "flat parameter count");
        let mut it = flat.iter();
        self.map(|_| it.next().expect("length checked").clone())
    }
}

impl Params<Matrix<f64>> {
    pub fn shapes_match(&self, other: &Self) -> bool {
        let a = self.iter();
        let b = other.iter();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().iter().all(|m| m.all_finite())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }
}

pub(crate) fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear<Matrix<f64>> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Linear { w: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a)), b: Matrix::zeros(1, fan_out) }
}

/// Random network weights with zero biases; GP slots are left at zero with
/// `m×m` identity-like raw factors.
pub fn init_params(
    rng: &mut ChaCha8Rng,
    n_genes: usize,
    d_total: usize,
    hidden: (usize, usize),
    l_ccc: usize,
    m: usize,
) -> Params<Matrix<f64>> {
    let (h1, h2) = hidden;
    let encoder = vec![glorot(rng, n_genes, h1), glorot(rng, h1, h2)];
    let enc_mu = glorot(rng, h2, d_total);
    let enc_sigma = glorot(rng, h2, d_total);
    let decoder = vec![glorot(rng, d_total, h2), glorot(rng, h2, h1)];
    let dec_mean = glorot(rng, h1, n_genes);
    let eye_raw = Matrix::from_fn(m, m, |i, j| if i == j { softplus_inv(1.0) } else { 0.0 });
    Params {
        encoder,
        enc_mu,
        enc_sigma,
        decoder,
        dec_mean,
        theta_raw: Matrix::filled(1, n_genes, softplus_inv(1.0)),
        scale_raw: Matrix::scalar(softplus_inv(1.0)),
        inducing_mu: vec![Matrix::zeros(m, 1); l_ccc],
        inducing_chol_raw: vec![eye_raw; l_ccc],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params(&mut rng, 6, 4, (5, 3), 2, 3);
        assert_eq!(p.names().len(), p.iter().len());
        assert_eq!(p.iter().len(), 2 * 7 + 2 + 2 * 2);
        let idx: Vec<usize> = (0..p.iter().len()).collect();
        let r = p.rebuild(&idx);
        assert_eq!(*r.iter()[0], 0);
        assert_eq!(**r.iter().last().unwrap(), idx.len() - 1);
        assert_eq!(r.theta_raw, 14);
        assert!((softplus_inv(1.0).exp().ln_1p() - 1.0).abs() < 1e-15);
    }
}
