//! Synthetic counts with planted clusters and planted ligand-receptor traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};

use super::ExpressionMatrix;
use crate::ccc_kernel::{Interaction, LigandReceptorDb};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SYNTH_DISPERSION: f64 = 2.0;
pub const LR_UPREGULATION: f64 = 10.0;
/// Fraction of ordinary genes whose mean differs between cluster programs.
const PROGRAM_GENE_FRACTION: f64 = 0.25;
const PROGRAM_LOG_SD: f64 = 1.0;
const BASE_LOG_MEAN: f64 = 0.0;
const BASE_LOG_SD: f64 = 1.0;
const LIBRARY_LOG_SD: f64 = 0.25;

fn nb_draw(rng: &mut ChaCha8Rng, mean: f64, theta: f64) -> f64 {
    let lambda = Gamma::new(theta, mean / theta).expect("positive parameters").sample(rng);
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

/// Planted clusters `0..k` in contiguous blocks of cells. For each
/// `(sender, receiver)` pair a dedicated ligand gene is raised tenfold in the
/// sender cluster and its receptor gene in the receiver cluster; the returned
/// database lists exactly those pairs. Without pairs, one unregulated
/// background pair is emitted so the database is never empty.
pub fn synthesize(
    n_cells: usize,
    n_genes: usize,
    k_clusters: usize,
    comm_pairs: &[(usize, usize)],
    seed: u64,
) -> Result<(ExpressionMatrix, LigandReceptorDb)> {
    if k_clusters == 0 || k_clusters > n_cells {
        return Err(Error::contract(format!("k_clusters = {k_clusters} must be in 1..={n_cells}")));
    }
    if let Some(&(s, r)) = comm_pairs.iter().find(|&&(s, r)| s >= k_clusters || r >= k_clusters) {
        return Err(Error::contract(format!("communication pair ({s}, {r}) names a missing cluster")));
    }
    let n_lr = 2 * comm_pairs.len().max(1);
    if n_genes <= n_lr {
        return Err(Error::contract(format!("need more than {n_lr} genes for the ligand-receptor pairs")));
    }
    let n_plain = n_genes - n_lr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base = Normal::new(BASE_LOG_MEAN, BASE_LOG_SD).expect("valid");
    let shift = Normal::new(0.0, PROGRAM_LOG_SD).expect("valid");
    let base_log: Vec<f64> = (0..n_plain).map(|_| base.sample(&mut rng)).collect();
    let mut programs = Matrix::zeros(k_clusters, n_genes);
    for c in 0..k_clusters {
        for j in 0..n_plain {
            let delta = if rng.random_bool(PROGRAM_GENE_FRACTION) { shift.sample(&mut rng) } else { 0.0 };
            programs[(c, j)] = (base_log[j] + delta).exp();
        }
        for j in n_plain..n_genes {
            programs[(c, j)] = 1.0;
        }
    }
    let mut gene_symbols: Vec<String> = (0..n_plain).map(|j| format!("G{j:04}")).collect();
    let mut interactions = Vec::new();
    if comm_pairs.is_empty() {
        gene_symbols.push("LIG_BG".into());
        gene_symbols.push("REC_BG".into());
        interactions.push(Interaction::simple("LIG_BG", "REC_BG"));
    }
    for (p, &(sender, receiver)) in comm_pairs.iter().enumerate() {
        let (lig, rec) = (format!("LIG{p}"), format!("REC{p}"));
        let (lj, rj) = (n_plain + 2 * p, n_plain + 2 * p + 1);
        programs[(sender, lj)] *= LR_UPREGULATION;
        programs[(receiver, rj)] *= LR_UPREGULATION;
        interactions.push(Interaction::simple(&lig, &rec));
        gene_symbols.push(lig);
        gene_symbols.push(rec);
    }

    let library = LogNormal::new(0.0, LIBRARY_LOG_SD).expect("valid");
    let labels: Vec<usize> = (0..n_cells).map(|i| i * k_clusters / n_cells).collect();
    let mut counts = Matrix::zeros(n_cells, n_genes);
    for i in 0..n_cells {
        let depth = library.sample(&mut rng);
        for j in 0..n_genes {
            counts[(i, j)] = nb_draw(&mut rng, programs[(labels[i], j)] * depth, SYNTH_DISPERSION);
        }
    }
    let cell_ids = (0..n_cells).map(|i| format!("cell{i:05}")).collect();
    let expr = ExpressionMatrix::new(counts, cell_ids, gene_symbols, Some(labels))?;
    Ok((expr, LigandReceptorDb::new(interactions)?))
}
