use cccvae::autodiff::{grad_check, Graph, Var};
use cccvae::ccc_kernel::{
    cauchy_kernel_graph, ccc_kernel_diag_graph, ccc_kernel_graph, pairwise_squared_distances, propagation_matrix,
    CccKernel, CccKernelConfig,
};
use cccvae::sparse_gp::{
    exact_gp_posterior, kl_inducing_graph, shared_terms, sparse_posterior, sparse_posterior_graph, InducingState,
    KernelBlocks,
};
use cccvae::{Matrix, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Instance {
    x: Matrix<f64>,
    y: Matrix<f64>,
    noise: Matrix<f64>,
    kernel: CccKernel<f64>,
}

fn instance(seed: u64, n: usize, inducing_rows: &[usize]) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, 5, |_, _| StandardNormal.sample(&mut rng));
    let y = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
    let noise = Matrix::from_fn(n, 2, |_, _| rng.random_range(0.1..1.0));
    let m = inducing_rows.len();
    let c = Matrix::from_fn(m, m, |_, _| rng.random_range(0.0..2.0));
    let cfg = CccKernelConfig {
        scale_s: rng.random_range(2.0..8.0),
        beta_comm: rng.random_range(0.0..1.0),
        ..Default::default()
    };
    let p = propagation_matrix(&c, cfg.beta_comm, cfg.jitter).unwrap();
    let kernel = CccKernel::new(x.select_rows(inducing_rows), p, cfg).unwrap();
    Instance { x, y, noise, kernel }
}

fn inducing(inst: &Instance) -> InducingState<f64> {
    let m = inst.kernel.z_u.rows();
    InducingState {
        z_u: inst.kernel.z_u.clone(),
        mu: vec![Matrix::zeros(m, 1); 2],
        chol_a: vec![Matrix::identity(m); 2],
    }
}

fn inf_norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale
}

#[test]
fn full_inducing_set_matches_exact_gp() {
    let start = std::time::Instant::now();
    let jitter = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..20 {
        let n = rng.random_range(5..=50);
        let all: Vec<usize> = (0..n).collect();
        let inst = instance(seed, n, &all);
        let post = sparse_posterior(&inst.x, &inst.y, &inst.noise, &inducing(&inst), &inst.kernel, n, jitter).unwrap();
        for l in 0..2 {
            let y = inst.y.col_vec(l);
            let noise = inst.noise.col_vec(l);
            let (mean, var) = exact_gp_posterior(&inst.x, &y, &noise, &inst.x, &inst.kernel, jitter).unwrap();
            let em = inf_norm_rel(&post.mean.col_vec(l), &mean);
            let ev = inf_norm_rel(&post.variance.col_vec(l), &var);
            assert!(em < 1e-6 && ev < 1e-6, "seed {seed} n {n} dim {l}: mean {em:e} var {ev:e}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn posterior_variance_below_prior(seed in 0u64..10_000, n in 4usize..20, m in 1usize..6) {
        let reps: Vec<usize> = (0..m.min(n)).collect();
        let inst = instance(seed, n, &reps);
        let post = sparse_posterior(&inst.x, &inst.y, &inst.noise, &inducing(&inst), &inst.kernel, 3 * n, 1e-8).unwrap();
        let prior = cccvae::sparse_gp::CovarianceFn::diag(&inst.kernel, &inst.x).unwrap();
        for i in 0..n {
            for l in 0..2 {
                prop_assert!(post.variance[(i, l)] > 0.0);
                prop_assert!(post.variance[(i, l)] <= prior[i] + 1e-8, "{} > {}", post.variance[(i, l)], prior[i]);
            }
        }
    }

    #[test]
    fn batch_order_does_not_matter(seed in 0u64..10_000, n in 3usize..15) {
        let reps: Vec<usize> = (0..n.min(4)).collect();
        let inst = instance(seed, n, &reps);
        let state = inducing(&inst);
        let post = sparse_posterior(&inst.x, &inst.y, &inst.noise, &state, &inst.kernel, 2 * n, 1e-8).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let shuffled = sparse_posterior(
            &inst.x.select_rows(&perm),
            &inst.y.select_rows(&perm),
            &inst.noise.select_rows(&perm),
            &state,
            &inst.kernel,
            2 * n,
            1e-8,
        )
        .unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for l in 0..2 {
                prop_assert!((shuffled.mean[(k, l)] - post.mean[(i, l)]).abs() < 1e-9);
                prop_assert!((shuffled.variance[(k, l)] - post.variance[(i, l)]).abs() < 1e-9);
            }
        }
    }
}

/// Differentiable path from (log-scale, targets, log-noise, μ, raw L) through
/// the kernel blocks, the minibatch posterior and the inducing KL.
#[test]
fn posterior_and_kl_gradients() {
    let inst = instance(5, 6, &[0, 2, 4]);
    let z = inst.kernel.z_u.clone();
    let p = inst.kernel.propagation.clone();
    let d_nm = pairwise_squared_distances(&inst.x, &z).unwrap();
    let d_mm = pairwise_squared_distances(&z, &z).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = vec![
        Matrix::scalar(1.2f64),
        inst.y.slice_cols(0, 1),
        Matrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..0.0)),
        Matrix::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0)),
        Matrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5)),
    ];
    let f = move |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let s = g.exp(v[0]);
        let dnm = g.constant(d_nm.clone());
        let dmm = g.constant(d_mm.clone());
        let pv = g.constant(p.clone());
        let knz = cauchy_kernel_graph(g, dnm, s);
        let kzz = cauchy_kernel_graph(g, dmm, s);
        let k_nm = ccc_kernel_graph(g, knz, pv, kzz);
        let k_mm = ccc_kernel_graph(g, kzz, pv, kzz);
        let k_nn_diag = ccc_kernel_diag_graph(g, knz, pv);
        let blocks = KernelBlocks { k_mm, k_nm, k_nn_diag };
        let shared = shared_terms(g, &blocks)?;
        let noise = g.exp(v[2]);
        let (mean, var) = sparse_posterior_graph(g, &blocks, &shared, v[1], noise, 2.0)?;
        let l = g.lower_softplus_diag(v[4]);
        let kl = kl_inducing_graph(g, v[3], l, k_mm)?;
        let a = g.square(mean);
        let a = g.sum(a);
        let b = g.log(var);
        let b = g.sum(b);
        let t = g.add(a, b);
        Ok(g.add(t, kl))
    };
    let report = grad_check(f, &params, 1e-6).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}
