//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cccvae::autodiff::{grad_check, Graph, Var};
use cccvae::ccc_kernel::{
    ccc_cross_kernel, communication_matrix, propagation_matrix, CccKernel, CccKernelConfig, GeneIndex, Interaction,
    LigandReceptorDb,
};
use cccvae::data::{synthesize, ExpressionMatrix};
use cccvae::eval::{ari, edge_weight_distribution, group_communication_matrix, ks_directional, nmi};
use cccvae::linalg::assert_positive_definite;
use cccvae::model::{
    elbo_graph, init_params, nb_log_likelihood, Batch, ElboInputs, GpContext, LatentConfig, NbParams, Params,
};
use cccvae::sparse_gp::{exact_gp_posterior, kl_inducing, sparse_posterior, InducingState};
use cccvae::special::lgamma;
use cccvae::Matrix;
use cccvae_cli::ablation::{run_ablation, write_ablation_csv, AblationKind, ABLATION_HEADER};
use cccvae_cli::config::RunConfig;
use cccvae_cli::pipeline::{run, RunOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- kernel PD

fn random_db(rng: &mut ChaCha8Rng, genes: &[String]) -> LigandReceptorDb {
    let pick = |rng: &mut ChaCha8Rng| genes[rng.random_range(0..genes.len())].clone();
    let mut out = Vec::new();
    for _ in 0..rng.random_range(1..=4) {
        let mut it = Interaction::simple(&pick(rng), &pick(rng));
        if rng.random_bool(0.3) {
            it.receptor_subunits.push(pick(rng));
        }
        for list in [&mut it.agonists, &mut it.antagonists, &mut it.co_stimulatory, &mut it.co_inhibitory] {
            if rng.random_bool(0.5) {
                list.push(pick(rng));
            }
        }
        out.push(it);
    }
    LigandReceptorDb::new(out).unwrap()
}

fn pd_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    let mut forms = 0usize;
    for config in 0..100 {
        let n = rng.random_range(2..=50);
        let genes: Vec<String> = (0..10).map(|g| format!("gene{g}")).collect();
        let expr =
            Matrix::from_fn(
                n,
                genes.len(),
                |_, _| if rng.random_bool(0.25) { 0.0 } else { (0.6 * normal(&mut rng)).exp() },
            );
        let db = random_db(&mut rng, &genes);
        let c = communication_matrix(&expr, &GeneIndex::new(&genes), &db, 0.5).map_err(|e| e.to_string())?;
        let a = Matrix::from_fn(n, 3, |_, _| normal(&mut rng));
        let m = rng.random_range(1..=n);
        let reps = rand::seq::index::sample(&mut rng, n, m).into_vec();
        let cfg = CccKernelConfig {
            scale_s: rng.random_range(0.3..3.0),
            beta_comm: rng.random_range(0.0..2.0),
            ..Default::default()
        };
        let p = propagation_matrix(&c.select(&reps, &reps), cfg.beta_comm, cfg.jitter).map_err(|e| e.to_string())?;
        let k = ccc_cross_kernel(&a, &a, &a.select_rows(&reps), &p, &cfg).map_err(|e| e.to_string())?;
        assert_positive_definite(&k, cfg.jitter).map_err(|e| format!("config {config}: {e}"))?;
        for _ in 0..1000 {
            let v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let kv = k.matmul(&Matrix::column(&v));
            let q: f64 = v.iter().zip(kv.as_slice()).map(|(x, y)| x * y).sum();
            worst = worst.min(q);
            forms += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst >= -1e-10, format!("min quadratic form {worst:e}"))?;
    check(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("100 configurations, {forms} quadratic forms, min {worst:.3e}, {secs:.2}s"))
}

// ------------------------------------------------------------- sparse GP

fn sparse_oracle() -> Outcome {
    let start = Instant::now();
    let jitter = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(3..=50);
        let x = Matrix::from_fn(n, 4, |_, _| normal(&mut rng));
        let y = Matrix::from_fn(n, 1, |_, _| normal(&mut rng));
        let noise = Matrix::from_fn(n, 1, |_, _| rng.random_range(0.05..1.0));
        let c = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        let cfg = CccKernelConfig {
            scale_s: rng.random_range(1.0..6.0),
            beta_comm: rng.random_range(0.0..1.0),
            ..Default::default()
        };
        let p = propagation_matrix(&c, cfg.beta_comm, cfg.jitter).map_err(|e| e.to_string())?;
        let kernel = CccKernel::new(x.clone(), p, cfg).map_err(|e| e.to_string())?;
        let inducing =
            InducingState { z_u: x.clone(), mu: vec![Matrix::zeros(n, 1)], chol_a: vec![Matrix::identity(n)] };
        let post = sparse_posterior(&x, &y, &noise, &inducing, &kernel, n, jitter).map_err(|e| e.to_string())?;
        let (mean, var) =
            exact_gp_posterior(&x, y.as_slice(), noise.as_slice(), &x, &kernel, jitter).map_err(|e| e.to_string())?;
        for (got, want) in [(post.mean.as_slice(), &mean), (post.variance.as_slice(), &var)] {
            let diff = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst = worst.max(diff / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-6, format!("max relative error {worst:e}"))?;
    check(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("20 instances, max relative error {worst:.2e}, {secs:.2}s"))
}

fn kl_closed_form() -> Outcome {
    let one = Matrix::scalar(1.0);
    let a = kl_inducing(&Matrix::scalar(2.0), &one, &one, 1e-300).map_err(|e| e.to_string())?;
    let b =
        kl_inducing(&Matrix::scalar(0.0), &Matrix::scalar(0.5f64.sqrt()), &one, 1e-300).map_err(|e| e.to_string())?;
    let b_exact = 0.5 * (2f64.ln() - 0.5);
    check((a - 2.0).abs() < 1e-9, format!("scalar case 1 gave {a}"))?;
    check((b - b_exact).abs() < 1e-9 && (b - 0.09657).abs() < 1e-5, format!("scalar case 2 gave {b}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for m in 1..=8 {
        let r = Matrix::from_fn(m, m, |_, _| normal(&mut rng));
        let k = r.matmul_tr(&r).add_diag(0.5);
        let l = assert_positive_definite(&k, 1e-300).map_err(|e| e.to_string())?.into_factor();
        worst = worst.max(kl_inducing(&Matrix::zeros(m, 1), &l, &k, 1e-300).map_err(|e| e.to_string())?.abs());
    }
    check(worst < 1e-9, format!("KL at the prior {worst:e}"))?;
    Ok(format!("hand values {a} and {b:.6}; |KL| at prior <= {worst:.1e}"))
}

// ------------------------------------------------------------------ ELBO

fn toy_batch(rng: &mut ChaCha8Rng, n: usize, g: usize) -> (Matrix<f64>, Matrix<f64>, Vec<f64>) {
    let counts = Matrix::from_fn(n, g, |_, _| rng.random_range(0..10) as f64);
    let x = counts.map(|c| c.ln_1p());
    let sf = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
    (x, counts, sf)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, g, d, ell, m) = (4, 6, 4, 2, 3);
    let (x, counts, sf) = toy_batch(&mut rng, n, g);
    let mut params = init_params(&mut rng, g, d, (5, 4), ell, m);
    for p in params.iter_mut() {
        for v in p.as_mut_slice() {
            *v += 0.05 * normal(&mut rng);
        }
    }
    for c in params.inducing_chol_raw.iter_mut() {
        *c = Matrix::from_fn(m, m, |i, j| {
            if i > j {
                0.2 * normal(&mut rng)
            } else if i == j {
                0.3
            } else {
                0.0
            }
        });
    }
    let z_u = Matrix::from_fn(m, g, |_, _| rng.random_range(0.0..2.0));
    let prop = propagation_matrix(&Matrix::from_fn(m, m, |_, _| rng.random_range(0.0..1.0)), 0.4, 1e-6).unwrap();
    let ctx = GpContext::new(z_u, prop).map_err(|e| e.to_string())?;
    let batch = Batch::new(x, counts, &sf, Some(&ctx)).map_err(|e| e.to_string())?;
    let eps = Matrix::from_fn(n, d, |_, _| normal(&mut rng));
    let flat: Vec<Matrix<f64>> = params.iter().into_iter().cloned().collect();
    let f = |gr: &mut Graph<f64>, vars: &[Var]| {
        let pv = params.rebuild(vars);
        let inputs = ElboInputs {
            latent: LatentConfig { d_total: d, l_ccc: ell },
            gp: Some(&ctx),
            batch: &batch,
            eps: &eps,
            kl_beta: 0.2,
            n_total: 32,
        };
        Ok(elbo_graph(gr, &pv, &inputs)?.elbo)
    };
    let report = grad_check(f, &flat, 1e-6).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let names = params.names();
    let groups = ["encoder", "decoder", "theta_raw", "scale_raw", "inducing.0.mu", "inducing.0.chol_raw"];
    for gname in groups {
        check(names.iter().any(|n| n.starts_with(gname)), format!("no parameter group {gname}"))?;
    }
    check(report.passes(1e-4), format!("{report:?}"))?;
    let total: usize = flat.iter().map(|m| m.len()).sum();
    check(report.checked == total, format!("checked {} of {total} entries", report.checked))?;
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} entries over {} tensors, max rel. error {:.2e}, {secs:.2}s",
        report.checked,
        flat.len(),
        report.max_rel_error
    ))
}

fn nb_correctness() -> Outcome {
    let ll = |x: f64, mu: f64, theta: f64| {
        nb_log_likelihood(&Matrix::scalar(x), &NbParams { mean: Matrix::scalar(mu), dispersion: vec![theta] }).unwrap()
            [0]
    };
    let (a, b) = (ll(0.0, 1.0, 1.0), ll(1.0, 1.0, 1.0));
    check((a - 0.5f64.ln()).abs() < 1e-9 && (a + 0.693147).abs() < 1e-6, format!("x=0 gave {a}"))?;
    check((b - 0.25f64.ln()).abs() < 1e-9 && (b + 1.386294).abs() < 1e-6, format!("x=1 gave {b}"))?;
    let mut worst: f64 = 0.0;
    for mu in [1.0, 5.0] {
        for theta in [0.5, 2.0] {
            let total: f64 = (0..=500).map(|x| ll(x as f64, mu, theta).exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    check(worst <= 1e-6, format!("pmf mass off by {worst:e}"))?;
    Ok(format!("hand values {a:.6} / {b:.6}; max |mass - 1| = {worst:.1e}"))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn layer(x: &[f64], w: &Matrix<f64>, b: &Matrix<f64>, act: bool) -> Vec<f64> {
    (0..w.cols())
        .map(|o| {
            let s = b[(0, o)] + x.iter().enumerate().map(|(i, v)| v * w[(i, o)]).sum::<f64>();
            if act {
                softplus(s)
            } else {
                s
            }
        })
        .collect()
}

fn plain_vae_elbo(
    p: &Params<Matrix<f64>>,
    x: &Matrix<f64>,
    counts: &Matrix<f64>,
    sf: &[f64],
    eps: &Matrix<f64>,
    beta: f64,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.rows() {
        let mut h = x.row(i).to_vec();
        for l in &p.encoder {
            h = layer(&h, &l.w, &l.b, true);
        }
        let mu = layer(&h, &p.enc_mu.w, &p.enc_mu.b, false);
        let sd: Vec<f64> = layer(&h, &p.enc_sigma.w, &p.enc_sigma.b, true).into_iter().map(|v| v + 1e-6).collect();
        let kl: f64 = mu.iter().zip(&sd).map(|(m, s)| 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln())).sum();
        let mut h: Vec<f64> = (0..mu.len()).map(|k| mu[k] + sd[k] * eps[(i, k)]).collect();
        for l in &p.decoder {
            h = layer(&h, &l.w, &l.b, true);
        }
        let rate = layer(&h, &p.dec_mean.w, &p.dec_mean.b, true);
        let mut ll = 0.0;
        for (j, r) in rate.iter().enumerate() {
            let (m, t, c) = ((r + 1e-6) * sf[i], softplus(p.theta_raw[(0, j)]) + 1e-4, counts[(i, j)]);
            ll += lgamma(c + t) - lgamma(t) - lgamma(c + 1.0) + t * (t / (t + m)).ln() + c * (m / (t + m)).ln();
        }
        acc += ll - beta * kl.max(0.0);
    }
    acc / x.rows() as f64
}

fn vanilla_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, g, d) = (6, 8, 3);
        let mut p = init_params(&mut rng, g, d, (7, 5), 0, 0);
        for t in p.iter_mut() {
            for v in t.as_mut_slice() {
                *v += 0.1 * normal(&mut rng);
            }
        }
        let (x, counts, sf) = toy_batch(&mut rng, n, g);
        let eps = Matrix::from_fn(n, d, |_, _| normal(&mut rng));
        let batch = Batch::new(x.clone(), counts.clone(), &sf, None).map_err(|e| e.to_string())?;
        let mut gr = Graph::new();
        let pv = p.map(|m| gr.constant(m.clone()));
        let inputs = ElboInputs {
            latent: LatentConfig { d_total: d, l_ccc: 0 },
            gp: None,
            batch: &batch,
            eps: &eps,
            kl_beta: 0.3,
            n_total: n,
        };
        let terms = elbo_graph(&mut gr, &pv, &inputs).map_err(|e| e.to_string())?;
        let got = gr.scalar_value(terms.elbo);
        let want = plain_vae_elbo(&p, &x, &counts, &sf, &eps, 0.3);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    check(worst <= 1e-10, format!("relative difference {worst:e}"))?;
    Ok(format!("10 random parameter sets, max relative difference {worst:.1e}"))
}

// --------------------------------------------------------------- metrics

fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=prefix.iter().max().map_or(0, |m| m + 1) {
            prefix.push(l);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn same(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let [mut ss, mut sd, mut ds, mut dd] = [0.0f64; 4];
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0.0 {
        return if same(a, b) { 1.0 } else { 0.0 };
    }
    2.0 * (ss * dd - sd * ds) / den
}

fn nmi_by_entropy(a: &[usize], b: &[usize]) -> f64 {
    if same(a, b) {
        return 1.0;
    }
    let n = a.len() as f64;
    let k = a.len();
    let mut counts = vec![vec![0usize; k]; k];
    for i in 0..k {
        counts[a[i]][b[i]] += 1;
    }
    let joint: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&c| c as f64 / n).collect()).collect();
    let pa: Vec<f64> = counts.iter().map(|r| r.iter().sum::<usize>() as f64 / n).collect();
    let pb: Vec<f64> = (0..k).map(|j| counts.iter().map(|r| r[j]).sum::<usize>() as f64 / n).collect();
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum() };
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for i in 0..k {
        for j in 0..k {
            if joint[i][j] > 0.0 {
                mi += joint[i][j] * (joint[i][j] / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi / (ha * hb).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut pairs = 0usize;
    for n in 1..=6 {
        let parts = partitions(n);
        for a in &parts {
            for b in &parts {
                let (ga, wa) = (ari(a, b).map_err(|e| e.to_string())?, ari_by_pairs(a, b));
                let (gn, wn) = (nmi(a, b).map_err(|e| e.to_string())?, nmi_by_entropy(a, b));
                check((ga - wa).abs() < 1e-12, format!("ARI {a:?} {b:?}: {ga} vs {wa}"))?;
                check((gn - wn).abs() < 1e-10, format!("NMI {a:?} {b:?}: {gn} vs {wn}"))?;
                pairs += 1;
            }
        }
    }
    let hand = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).map_err(|e| e.to_string())?;
    check(hand == -0.5, format!("hand case gave {hand}"))?;
    Ok(format!("{pairs} label pairs over 1..=6 points; hand case ARI = {hand}"))
}

// ------------------------------------------------------------ synthetic

const DIRECTIONAL_SEEDS: [u64; 3] = [0, 1, 2];
/// Epoch budget for the directional comparison.
const DIRECTIONAL_EPOCHS: usize = 100;

struct Directional {
    model: Vec<RunOutput>,
    baseline: Vec<RunOutput>,
    secs: f64,
}

fn directional_runs() -> Result<Directional, String> {
    guarded_runs().and_then(|r| r)
}

fn guarded_runs() -> Result<Result<Directional, String>, String> {
    catch_unwind(AssertUnwindSafe(training_runs)).map_err(|_| "training panicked".to_string())
}

fn training_runs() -> Result<Directional, String> {
    let start = Instant::now();
    let mut model = Vec::new();
    let mut baseline = Vec::new();
    for seed in DIRECTIONAL_SEEDS {
        let (expr, db) = synthesize(600, 200, 4, &[(0, 1), (2, 3)], seed).map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::default();
        cfg.preprocess.hvg_count = 200;
        cfg.train.latent = LatentConfig { d_total: 32, l_ccc: 8 };
        cfg.train.max_epochs = DIRECTIONAL_EPOCHS;
        cfg.train.seed = seed;
        model.push(run(&expr, Some(&db), &cfg).map_err(|f| f.error.to_string())?);
        cfg.train.latent.l_ccc = 0;
        baseline.push(run(&expr, Some(&db), &cfg).map_err(|f| f.error.to_string())?);
    }
    Ok(Directional { model, baseline, secs: start.elapsed().as_secs_f64() })
}

fn mean_ari(runs: &[RunOutput]) -> f64 {
    runs.iter().map(|r| r.metrics.ari.unwrap()).sum::<f64>() / runs.len() as f64
}

fn directional_ari(d: &Directional) -> Outcome {
    let (a, b) = (mean_ari(&d.model), mean_ari(&d.baseline));
    let per_seed: Vec<String> = d
        .model
        .iter()
        .zip(&d.baseline)
        .map(|(m, v)| format!("{:.4}/{:.4}", m.metrics.ari.unwrap(), v.metrics.ari.unwrap()))
        .collect();
    check(a >= b, format!("mean ARI {a:.4} < baseline {b:.4} (per seed {})", per_seed.join(" ")))?;
    check(d.secs < 600.0, format!("six runs took {:.0}s", d.secs))?;
    Ok(format!("mean ARI {a:.4} vs baseline {b:.4} (per seed {}), {:.0}s", per_seed.join(" "), d.secs))
}

fn edge_weights(d: &Directional) -> Outcome {
    let mut dominated = 0;
    let mut details = Vec::new();
    for (m, v) in d.model.iter().zip(&d.baseline) {
        let c = &m.comm.as_ref().ok_or("model run has no communication matrix")?.values;
        let dist = |labels: &[usize]| -> Result<_, String> {
            let g = group_communication_matrix(c, labels).map_err(|e| e.to_string())?;
            edge_weight_distribution(&g, 20).map_err(|e| e.to_string())
        };
        let (dm, dv) = (dist(&m.clusters)?, dist(&v.clusters)?);
        for cdf in [&dm.cdf, &dv.cdf] {
            let ps: Vec<f64> = cdf.iter().map(|&(_, p)| p).collect();
            check(ps.windows(2).all(|w| w[1] >= w[0]), "CDF decreases")?;
            check((ps.last().copied().unwrap_or(0.0) - 1.0).abs() < 1e-12, "CDF does not end at 1")?;
        }
        let ks = ks_directional(&dm.weights(), &dv.weights()).map_err(|e| e.to_string())?;
        if ks.candidate_dominates() {
            dominated += 1;
        }
        details.push(format!("D+={:.3} D-={:.3}", ks.d_plus, ks.d_minus));
    }
    let verdict = if dominated >= 2 {
        "dominance on >= 2 of 3 seeds"
    } else {
        "dominance NOT observed on >= 2 of 3 seeds (reported only)"
    };
    Ok(format!("CDFs valid; {dominated}/3 seeds right-shifted, {verdict}; {}", details.join(", ")))
}

// -------------------------------------------------------------- ablation

fn ablation_harness() -> Outcome {
    let start = Instant::now();
    let (expr, db): (ExpressionMatrix, _) = synthesize(150, 100, 3, &[(0, 1)], 11).map_err(|e| e.to_string())?;
    let mut base = RunConfig::default();
    base.preprocess.hvg_count = 60;
    base.train.latent = LatentConfig { d_total: 16, l_ccc: 4 };
    base.train.m_inducing = 16;
    base.train.hidden1 = 32;
    base.train.hidden2 = 16;
    base.train.max_epochs = 10;
    base.train.warmup_epochs = 3;
    base.train.batch_size = 64;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for kind in [AblationKind::GpDim, AblationKind::KlBeta] {
        let grid = kind.default_grid();
        let rows = run_ablation(kind, &grid, &[0, 1, 2], &base, &expr, Some(&db)).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{}.csv", kind.name()));
        write_ablation_csv(std::fs::File::create(&path).map_err(|e| e.to_string())?, &rows)
            .map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = text.lines().collect();
        check(lines[0] == ABLATION_HEADER, format!("{} header `{}`", kind.name(), lines[0]))?;
        check(lines.len() == 1 + grid.len() * 3, format!("{}: {} rows", kind.name(), lines.len() - 1))?;
        let mut keys = Vec::new();
        for l in &lines[1..] {
            let f: Vec<&str> = l.split(',').collect();
            check(f.len() == 5, format!("malformed row `{l}`"))?;
            check(!l.contains("failed"), format!("{}: failed cell `{l}`", kind.name()))?;
            let v: f64 = f[0].parse().map_err(|_| format!("bad grid value `{l}`"))?;
            let s: u64 = f[1].parse().map_err(|_| format!("bad seed `{l}`"))?;
            for x in &f[2..] {
                x.parse::<f64>().map_err(|_| format!("bad metric `{l}`"))?;
            }
            keys.push((v, s));
        }
        check(keys.windows(2).all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1)), "rows not sorted")?;
        let grid_vals: Vec<f64> = keys.iter().step_by(3).map(|k| k.0).collect();
        check(grid_vals == grid, format!("{} grid {grid_vals:?}", kind.name()))?;
        summary.push(format!("{} {} rows", kind.name(), rows.len()));
    }
    Ok(format!("{} ({:.0}s)", summary.join(", "), start.elapsed().as_secs_f64()))
}

// ----------------------------------------------------------------- main

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        let (tag, text) = match &o {
            Ok(s) => ("PASS", s.clone()),
            Err(s) => ("FAIL", s.clone()),
        };
        println!("[{tag}] {name}: {text}");
        results.push((name, o));
    };
    record("PD property suite", guarded(pd_suite));
    record("sparse GP oracle equivalence", guarded(sparse_oracle));
    record("inducing KL closed form", guarded(kl_closed_form));
    record("full ELBO gradient suite", guarded(gradient_suite));
    record("NB likelihood correctness", guarded(nb_correctness));
    record("vanilla reduction", guarded(vanilla_reduction));
    record("metric oracles", guarded(metric_oracles));
    match directional_runs() {
        Ok(d) => {
            record("directional synthetic ARI", guarded(|| directional_ari(&d)));
            record("edge-weight CDF analysis", guarded(|| edge_weights(&d)));
        }
        Err(e) => {
            record("directional synthetic ARI", Err(e.clone()));
            record("edge-weight CDF analysis", Err(e));
        }
    }
    record("ablation harness", guarded(ablation_harness));
    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
