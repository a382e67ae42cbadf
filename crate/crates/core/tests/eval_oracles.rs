use cccvae::eval::{ari, edge_weight_distribution, group_communication_matrix, nmi};
use cccvae::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every set partition of `n` points as a restricted-growth label string.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for l in 0..=next {
            prefix.push(l);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Pair-counting form of the adjusted Rand index.
fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
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
        return if same_partition(a, b) { 1.0 } else { 0.0 };
    }
    2.0 * (ss * dd - sd * ds) / den
}

/// Mutual information and entropies from joint and marginal frequencies.
fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let n = a.len() as f64;
    let la: Vec<usize> = {
        let mut v = a.to_vec();
        v.sort();
        v.dedup();
        v
    };
    let lb: Vec<usize> = {
        let mut v = b.to_vec();
        v.sort();
        v.dedup();
        v
    };
    let p = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count() as f64 / n;
    let ha: f64 = la
        .iter()
        .map(|&x| {
            let q = p(&|i| a[i] == x);
            -q * q.ln()
        })
        .sum();
    let hb: f64 = lb
        .iter()
        .map(|&y| {
            let q = p(&|i| b[i] == y);
            -q * q.ln()
        })
        .sum();
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for &x in &la {
        for &y in &lb {
            let pxy = p(&|i| a[i] == x && b[i] == y);
            if pxy > 0.0 {
                mi += pxy * (pxy / (p(&|i| a[i] == x) * p(&|i| b[i] == y))).ln();
            }
        }
    }
    mi / (ha * hb).sqrt()
}

#[test]
fn ari_nmi_match_definition_oracles_exhaustively() {
    for n in 1..=6 {
        let parts = partitions(n);
        for a in &parts {
            for b in &parts {
                let got = ari(a, b).unwrap();
                let want = ari_oracle(a, b);
                assert!((got - want).abs() < 1e-12, "ari {a:?} {b:?}: {got} vs {want}");
                let got = nmi(a, b).unwrap();
                let want = nmi_oracle(a, b);
                assert!((got - want).abs() < 1e-10, "nmi {a:?} {b:?}: {got} vs {want}");
            }
        }
    }
    assert_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
}

#[test]
fn nmi_matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        assert!((nmi(&a, &b).unwrap() - nmi_oracle(&a, &b)).abs() < 1e-10);
    }
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_symmetric_and_rename_invariant(a in labels(12, 4), b in labels(12, 3), shift in 1usize..7) {
        prop_assert_eq!(ari(&a, &b).unwrap(), ari(&b, &a).unwrap());
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
        let renamed: Vec<usize> = a.iter().map(|&x| (x + shift) * 3).collect();
        prop_assert_eq!(ari(&renamed, &b).unwrap(), ari(&a, &b).unwrap());
        prop_assert!((nmi(&renamed, &b).unwrap() - nmi(&a, &b).unwrap()).abs() < 1e-12);
        let r = ari(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        let m = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn group_matrix_permutation_equivariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let c = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..2.0));
        let mut lab: Vec<usize> = (0..n).map(|i| i % 3).collect();
        lab.swap(0, rng.random_range(0..n));
        let perm = [2usize, 0, 1];
        let relabelled: Vec<usize> = lab.iter().map(|&l| perm[l]).collect();
        let g = group_communication_matrix(&c, &lab).unwrap();
        let h = group_communication_matrix(&c, &relabelled).unwrap();
        for a in 0..3 {
            prop_assert_eq!(h.cluster_sizes[perm[a]], g.cluster_sizes[a]);
            for b in 0..3 {
                prop_assert!((h.values[(perm[a], perm[b])] - g.values[(a, b)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn cdf_valid_on_random_matrices() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..8);
        let g = cccvae::eval::GroupCommMatrix {
            values: Matrix::from_fn(k, k, |_, _| rng.random_range(0.0..3.0)),
            cluster_sizes: vec![1; k],
        };
        let d = edge_weight_distribution(&g, 10).unwrap();
        assert_eq!(d.counts.iter().sum::<usize>(), k * (k - 1));
        for w in d.cdf.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert_eq!(d.cdf.last().unwrap().1, 1.0);
    }
}

#[test]
fn constant_matrix_single_bin() {
    let g = cccvae::eval::GroupCommMatrix { values: Matrix::filled(3, 3, 0.4), cluster_sizes: vec![2; 3] };
    let d = edge_weight_distribution(&g, 5).unwrap();
    assert_eq!(d.counts, vec![6, 0, 0, 0, 0]);
}
