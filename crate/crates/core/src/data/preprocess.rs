//! Depth normalisation, log transform and highly-variable gene selection.

use super::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub hvg_count: usize,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { hvg_count: 1000, normalize: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// `N'×G'` log features of the kept genes.
    pub features: Matrix<f64>,
    /// `N'×G'` raw counts of the kept genes.
    pub counts: Matrix<f64>,
    /// `N'×G` log features of every gene, for ligand-receptor scoring.
    pub all_features: Matrix<f64>,
    pub kept_genes: Vec<String>,
    pub kept_gene_index: Vec<usize>,
    /// Rows of the input that survived (cells with a positive total).
    pub kept_cells: Vec<usize>,
    pub cell_ids: Vec<String>,
    pub labels: Option<Vec<usize>>,
    /// Cell total divided by the median total.
    pub size_factors: Vec<f64>,
    pub median_total: f64,
    /// Whether features were depth-normalised before `log1p`.
    pub normalized: bool,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Scales each cell to the median total, applies `log(1 + x)` and keeps the
/// `hvg_count` genes of largest variance (ties broken by symbol), in their
/// original order.
pub fn preprocess(expr: &ExpressionMatrix, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let (n, g) = expr.counts.shape();
    if cfg.hvg_count == 0 || cfg.hvg_count > g {
        return Err(Error::Config(format!("preprocess.hvg_count must be in 1..={g}, got {}", cfg.hvg_count)));
    }
    let totals: Vec<f64> = (0..n).map(|i| expr.counts.row(i).iter().sum()).collect();
    let kept_cells: Vec<usize> = (0..n).filter(|&i| totals[i] > 0.0).collect();
    if kept_cells.is_empty() {
        return Err(Error::domain("every cell has zero total count"));
    }
    for i in (0..n).filter(|&i| totals[i] <= 0.0) {
        log::warn!("dropping cell `{}` with zero total count", expr.cell_ids[i]);
    }
    let kept_totals: Vec<f64> = kept_cells.iter().map(|&i| totals[i]).collect();
    let median_total = median(&kept_totals);
    let raw = expr.counts.select_rows(&kept_cells);
    let all_features = Matrix::from_fn(kept_cells.len(), g, |r, j| {
        let x = raw[(r, j)];
        let x = if cfg.normalize { x * median_total / kept_totals[r] } else { x };
        x.ln_1p()
    });

    let nk = kept_cells.len() as f64;
    let variance: Vec<f64> = (0..g)
        .map(|j| {
            let mean = (0..kept_cells.len()).map(|r| all_features[(r, j)]).sum::<f64>() / nk;
            (0..kept_cells.len()).map(|r| (all_features[(r, j)] - mean).powi(2)).sum::<f64>() / nk
        })
        .collect();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        variance[b].total_cmp(&variance[a]).then_with(|| expr.gene_symbols[a].cmp(&expr.gene_symbols[b]))
    });
    let mut kept_gene_index: Vec<usize> = order[..cfg.hvg_count].to_vec();
    kept_gene_index.sort_unstable();
    let all_rows: Vec<usize> = (0..kept_cells.len()).collect();

    Ok(Preprocessed {
        features: all_features.select(&all_rows, &kept_gene_index),
        counts: raw.select(&all_rows, &kept_gene_index),
        all_features,
        kept_genes: kept_gene_index.iter().map(|&j| expr.gene_symbols[j].clone()).collect(),
        kept_gene_index,
        cell_ids: kept_cells.iter().map(|&i| expr.cell_ids[i].clone()).collect(),
        labels: expr.labels.as_ref().map(|l| kept_cells.iter().map(|&i| l[i]).collect()),
        kept_cells,
        size_factors: kept_totals.iter().map(|t| t / median_total).collect(),
        median_total,
        normalized: cfg.normalize,
    })
}

/// Projects a new count matrix onto a fitted gene list with a fixed median
/// total, for embedding cells with a trained model.
pub fn project(expr: &ExpressionMatrix, genes: &[String], median_total: f64, normalize: bool) -> Result<Preprocessed> {
    let index: std::collections::HashMap<&str, usize> =
        expr.gene_symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let cols: Vec<usize> = genes
        .iter()
        .map(|s| index.get(s.as_str()).copied().ok_or_else(|| Error::UnknownGene(s.clone())))
        .collect::<Result<_>>()?;
    let n = expr.n_cells();
    let totals: Vec<f64> = (0..n).map(|i| expr.counts.row(i).iter().sum()).collect();
    let kept_cells: Vec<usize> = (0..n).filter(|&i| totals[i] > 0.0).collect();
    if kept_cells.is_empty() {
        return Err(Error::domain("every cell has zero total count"));
    }
    let raw = expr.counts.select_rows(&kept_cells);
    let kept_totals: Vec<f64> = kept_cells.iter().map(|&i| totals[i]).collect();
    let all_features = Matrix::from_fn(kept_cells.len(), expr.n_genes(), |r, j| {
        let x = raw[(r, j)];
        let x = if normalize { x * median_total / kept_totals[r] } else { x };
        x.ln_1p()
    });
    let rows: Vec<usize> = (0..kept_cells.len()).collect();
    Ok(Preprocessed {
        features: all_features.select(&rows, &cols),
        counts: raw.select(&rows, &cols),
        all_features,
        kept_genes: genes.to_vec(),
        kept_gene_index: cols,
        cell_ids: kept_cells.iter().map(|&i| expr.cell_ids[i].clone()).collect(),
        labels: expr.labels.as_ref().map(|l| kept_cells.iter().map(|&i| l[i]).collect()),
        kept_cells,
        size_factors: kept_totals.iter().map(|t| t / median_total).collect(),
        median_total,
        normalized: normalize,
    })
}
