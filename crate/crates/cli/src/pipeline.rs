//! Data → communication matrix → model → embedding → clustering metrics.

use cccvae::ccc_kernel::{build_communication_matrix, CommunicationMatrix, LigandReceptorDb};
use cccvae::data::{preprocess, ExpressionMatrix, PreprocessConfig, Preprocessed};
use cccvae::eval::{ari, kmeans, nmi, silhouette, DEFAULT_RESTARTS};
use cccvae::model::{embed, fit, Fitted};
use cccvae::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub silhouette: Option<f64>,
    pub k: usize,
    pub seed: u64,
    pub n_cells: usize,
}

pub struct Prepared {
    pub pre: Preprocessed,
    /// Present when the model has GP dimensions.
    pub comm: Option<CommunicationMatrix>,
}

pub struct RunOutput {
    pub pre: Preprocessed,
    pub comm: Option<CommunicationMatrix>,
    pub fitted: Fitted,
    pub embedding: Matrix<f64>,
    pub clusters: Vec<usize>,
    pub metrics: Metrics,
}

/// A failed run; `last_good` is set when training got through at least one epoch.
#[derive(Debug)]
pub struct RunFailure {
    pub error: CliError,
    pub last_good: Option<Box<Fitted>>,
}

impl From<CliError> for RunFailure {
    fn from(error: CliError) -> Self {
        Self { error, last_good: None }
    }
}

impl From<cccvae::Error> for RunFailure {
    fn from(e: cccvae::Error) -> Self {
        CliError::from(e).into()
    }
}

/// Preprocessing with `hvg_count` clamped to the number of genes.
pub fn preprocess_clamped(expr: &ExpressionMatrix, cfg: &PreprocessConfig) -> CliResult<Preprocessed> {
    let mut cfg = cfg.clone();
    if cfg.hvg_count > expr.n_genes() {
        log::warn!("preprocess.hvg_count = {} exceeds {} genes; using all genes", cfg.hvg_count, expr.n_genes());
        cfg.hvg_count = expr.n_genes();
    }
    Ok(preprocess(expr, &cfg)?)
}

pub fn prepare(expr: &ExpressionMatrix, db: Option<&LigandReceptorDb>, cfg: &RunConfig) -> CliResult<Prepared> {
    cfg.validate()?;
    let pre = preprocess_clamped(expr, &cfg.preprocess)?;
    let comm = if cfg.train.latent.l_ccc > 0 {
        let db = db.ok_or_else(|| CliError::usage("--lr-db is required when latent.l_ccc > 0"))?;
        Some(build_communication_matrix(
            &pre.all_features,
            &expr.gene_symbols,
            &pre.cell_ids,
            db,
            cfg.train.kernel.k_h,
        )?)
    } else {
        None
    };
    Ok(Prepared { pre, comm })
}

/// k-means on the embedding, then ARI/NMI against labels when present.
pub fn evaluate(
    embedding: &Matrix<f64>,
    labels: Option<&[usize]>,
    k: Option<usize>,
    seed: u64,
) -> CliResult<(Vec<usize>, Metrics)> {
    let k = match (k, labels) {
        (Some(k), _) => k,
        (None, Some(l)) => {
            let mut u = l.to_vec();
            u.sort_unstable();
            u.dedup();
            u.len()
        }
        (None, None) => return Err(CliError::usage("no labels available; set eval.k (or --k)")),
    };
    if let Some(l) = labels {
        if l.len() != embedding.rows() {
            return Err(CliError::usage(format!("{} labels for {} cells", l.len(), embedding.rows())));
        }
    }
    let km = kmeans(embedding, k, seed, DEFAULT_RESTARTS)?;
    let (a, n) = match labels {
        Some(l) => (Some(ari(&km.labels, l)?), Some(nmi(&km.labels, l)?)),
        None => (None, None),
    };
    let s = silhouette(embedding, &km.labels).ok();
    let metrics = Metrics { ari: a, nmi: n, silhouette: s, k, seed, n_cells: embedding.rows() };
    Ok((km.labels, metrics))
}

/// Whole pipeline on one expression matrix.
pub fn run(expr: &ExpressionMatrix, db: Option<&LigandReceptorDb>, cfg: &RunConfig) -> Result<RunOutput, RunFailure> {
    let Prepared { pre, comm } = prepare(expr, db, cfg)?;
    let empty = Matrix::zeros(0, 0);
    let c = comm.as_ref().map_or(&empty, |c| &c.values);
    let fitted = fit(&pre, c, &cfg.train)
        .map_err(|f| RunFailure { error: CliError::Core(f.error), last_good: f.last_good.map(Box::new) })?;
    let embedding = embed(&pre, &fitted.model)?;
    let (clusters, metrics) = evaluate(&embedding, pre.labels.as_deref(), cfg.eval_k, cfg.train.seed)?;
    Ok(RunOutput { pre, comm, fitted, embedding, clusters, metrics })
}
