//! Argument definitions and one handler per subcommand.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cccvae::ccc_kernel::{build_communication_matrix, CommunicationMatrix, LigandReceptorDb};
use cccvae::data::{load_expression, project, save_expression, synthesize, ExpressionFormat, ExpressionMatrix};
use cccvae::eval::{edge_weight_distribution, group_communication_matrix, ks_directional};
use cccvae::model::{load_checkpoint, save_checkpoint};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ablation::{run_ablation, write_ablation_csv, AblationKind};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    read_clusters, read_embeddings, read_labels, write_clusters, write_embeddings, write_json, write_training_log,
};
use crate::manifest::{InputDigest, RunManifest, MANIFEST_FILE};
use crate::pipeline::{evaluate, preprocess_clamped, run};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "training_log.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Parser, Debug)]
#[command(name = "cccvae", version, about = "Communication-aware variational autoencoder for single-cell counts")]
pub struct Cli {
    /// Repeat for more log output (warn, info, debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic count matrix, its labels and a ligand-receptor table.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, log, embeddings, metrics and manifest.
    Train(TrainArgs),
    /// Embed cells with a saved checkpoint.
    Embed(EmbedArgs),
    /// Cluster an embedding and score it.
    Eval(EvalArgs),
    /// Cell-by-cell communication scores.
    CommMatrix(CommArgs),
    /// Distribution of off-diagonal group communication weights.
    EdgeDist(EdgeArgs),
    /// Sweep the GP width or the KL weight over seeds.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub cells: usize,
    #[arg(long, default_value_t = 200)]
    pub genes: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    /// Communicating cluster pair `sender:receiver`; repeatable.
    #[arg(long = "pair", value_parser = parse_pair)]
    pub pairs: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `.mtx` for coordinate format, anything else for dense CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr_db_out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected sender:receiver")?;
    Ok((a.trim().parse().map_err(|_| "bad sender")?, b.trim().parse().map_err(|_| "bad receiver")?))
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.sets)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Replay a previous run: config and inputs come from its manifest.
    #[arg(long, conflicts_with_all = ["config", "expr", "lr_db"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub expr: Option<PathBuf>,
    #[arg(long)]
    pub lr_db: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// One integer label per line, in embedding row order.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clusters_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CommArgs {
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub lr_db: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub k_h: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EdgeArgs {
    #[arg(long)]
    pub comm: PathBuf,
    /// `cell_id,cluster` CSV.
    #[arg(long)]
    pub clusters: PathBuf,
    /// Second clustering to compare against with a directional KS statistic.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Output prefix; writes `<prefix>.hist.csv` and `<prefix>.cdf.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// `gp-dim` or `kl-beta`.
    #[arg(long)]
    pub kind: AblationKind,
    /// Comma-separated grid; defaults to the standard grid of the sweep.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub lr_db: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::CommMatrix(a) => comm_matrix(a),
        Command::EdgeDist(a) => edge_dist(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn load_expr(path: &Path) -> CliResult<ExpressionMatrix> {
    load_expression(path, ExpressionFormat::from_path(path)).map_err(|e| CliError::from(e).at(path))
}

fn show(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| CliError::from(e).at(dir)),
        _ => Ok(()),
    }
}

fn load_db(path: Option<&Path>) -> CliResult<Option<LigandReceptorDb>> {
    path.map(|p| LigandReceptorDb::load(p).map_err(|e| CliError::from(e).at(p))).transpose()
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let (expr, db) = synthesize(a.cells, a.genes, a.clusters, &a.pairs, a.seed)?;
    ensure_parent(&a.out)?;
    save_expression(&expr, &a.out, ExpressionFormat::from_path(&a.out)).map_err(|e| CliError::from(e).at(&a.out))?;
    let db_path = a.lr_db_out.unwrap_or_else(|| cccvae::data::sidecar(&a.out, ".lr.csv"));
    ensure_parent(&db_path)?;
    db.save(&db_path).map_err(|e| CliError::from(e).at(&db_path))?;
    eprintln!("wrote {} ({} cells x {} genes) and {}", a.out.display(), a.cells, expr.n_genes(), db_path.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let (cfg, expr_path, db_path) = match &a.manifest {
        Some(m) => {
            let man = RunManifest::load(m)?;
            man.verify_inputs()?;
            let mut cfg = man.run_config()?;
            cfg.apply_overrides(&a.config.sets)?;
            cfg.validate()?;
            let expr = man.input("expr").ok_or_else(|| CliError::usage("manifest has no expr input"))?.path.clone();
            (cfg, expr, man.input("lr_db").map(|i| i.path.clone()))
        }
        None => (a.config.resolve()?, a.expr.clone().expect("required by clap"), a.lr_db.clone()),
    };
    if cfg.train.latent.l_ccc > 0 && db_path.is_none() {
        return Err(CliError::usage("--lr-db is required when latent.l_ccc > 0"));
    }
    let expr = load_expr(&expr_path)?;
    let db = load_db(db_path.as_deref())?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::from(e).at(&a.out))?;
    let mut man = RunManifest::new("train", &cfg);
    man.inputs.push(InputDigest::of("expr", &expr_path)?);
    if let Some(p) = &db_path {
        man.inputs.push(InputDigest::of("lr_db", p)?);
    }
    let out = |f: &str| a.out.join(f);

    let result = run(&expr, db.as_ref(), &cfg);
    let res = match result {
        Ok(r) => r,
        Err(f) => {
            if let Some(last) = &f.last_good {
                save_checkpoint(&last.model, out(CHECKPOINT_FILE))?;
                write_training_log(&out(LOG_FILE), &last.log)?;
                man.outputs = vec![out(CHECKPOINT_FILE), out(LOG_FILE)];
                eprintln!("training failed; last good state saved to {}", out(CHECKPOINT_FILE).display());
            }
            man.status = format!("failed: {}", f.error);
            man.wall_time_secs = start.elapsed().as_secs_f64();
            write_json(&out(MANIFEST_FILE), &man)?;
            return Err(f.error);
        }
    };
    save_checkpoint(&res.fitted.model, out(CHECKPOINT_FILE))?;
    write_training_log(&out(LOG_FILE), &res.fitted.log)?;
    write_embeddings(&out(EMBEDDINGS_FILE), &res.pre.cell_ids, &res.embedding)?;
    write_clusters(&out(CLUSTERS_FILE), &res.pre.cell_ids, &res.clusters)?;
    write_json(&out(METRICS_FILE), &res.metrics)?;
    man.outputs =
        [CHECKPOINT_FILE, LOG_FILE, EMBEDDINGS_FILE, CLUSTERS_FILE, METRICS_FILE].iter().map(|f| out(f)).collect();
    man.wall_time_secs = start.elapsed().as_secs_f64();
    write_json(&out(MANIFEST_FILE), &man)?;
    let last = res.fitted.log.last().map_or(f64::NAN, |e| e.elbo);
    eprintln!(
        "trained {} epochs (best {}), final ELBO {last:.4}; ARI {} NMI {}",
        res.fitted.log.len(),
        res.fitted.best_epoch,
        show(res.metrics.ari),
        show(res.metrics.nmi)
    );
    Ok(())
}

fn embed_cmd(a: EmbedArgs) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint).map_err(|e| CliError::from(e).at(&a.checkpoint))?;
    let expr = load_expr(&a.expr)?;
    let pre = project(&expr, &model.kept_genes, model.median_total, model.normalized)?;
    let z = model.embed(&pre.features)?;
    ensure_parent(&a.out)?;
    write_embeddings(&a.out, &pre.cell_ids, &z)?;
    eprintln!("wrote {} x {} embedding to {}", z.rows(), z.cols(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let (ids, z) = read_embeddings(&a.embeddings).map_err(|e| e.at(&a.embeddings))?;
    let labels = a.labels.as_deref().map(|p| read_labels(p).map_err(|e| e.at(p))).transpose()?;
    let (clusters, metrics) = evaluate(&z, labels.as_deref(), a.k, a.seed)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &metrics)?;
    if let Some(p) = &a.clusters_out {
        ensure_parent(p)?;
        write_clusters(p, &ids, &clusters)?;
    }
    eprintln!(
        "k = {}: ARI {} NMI {} silhouette {}",
        metrics.k,
        show(metrics.ari),
        show(metrics.nmi),
        show(metrics.silhouette)
    );
    Ok(())
}

fn comm_matrix(a: CommArgs) -> CliResult<()> {
    let expr = load_expr(&a.expr)?;
    let db = LigandReceptorDb::load(&a.lr_db)?;
    let cfg = cccvae::data::PreprocessConfig { hvg_count: expr.n_genes(), normalize: true };
    let pre = preprocess_clamped(&expr, &cfg)?;
    let c = build_communication_matrix(&pre.all_features, &expr.gene_symbols, &pre.cell_ids, &db, a.k_h)?;
    ensure_parent(&a.out)?;
    c.save(&a.out)?;
    eprintln!("wrote {n} x {n} communication matrix to {}", a.out.display(), n = c.values.rows());
    Ok(())
}

fn aligned_labels(comm: &CommunicationMatrix, path: &Path) -> CliResult<Vec<usize>> {
    let map = read_clusters(path).map_err(|e| e.at(path))?;
    comm.cell_ids
        .iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| CliError::usage(format!("{}: no cluster for cell `{id}`", path.display())))
        })
        .collect()
}

#[derive(Serialize)]
struct KsReport {
    d_plus: f64,
    d_minus: f64,
    statistic: f64,
    candidate_dominates: bool,
}

fn edge_dist(a: EdgeArgs) -> CliResult<()> {
    let comm = CommunicationMatrix::load(&a.comm).map_err(|e| CliError::from(e).at(&a.comm))?;
    let dist = |p: &Path| -> CliResult<_> {
        let g = group_communication_matrix(&comm.values, &aligned_labels(&comm, p)?)?;
        Ok(edge_weight_distribution(&g, a.bins)?)
    };
    let cand = dist(&a.clusters)?;
    ensure_parent(&a.out)?;
    cand.save(&a.out)?;
    if let Some(r) = &a.reference {
        let reference = dist(r)?;
        let ks = ks_directional(&cand.weights(), &reference.weights())?;
        let report = KsReport {
            d_plus: ks.d_plus,
            d_minus: ks.d_minus,
            statistic: ks.statistic(),
            candidate_dominates: ks.candidate_dominates(),
        };
        let mut p = a.out.clone().into_os_string();
        p.push(".ks.json");
        write_json(Path::new(&p), &report)?;
    }
    eprintln!("wrote edge-weight histogram and CDF with prefix {}", a.out.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let start = Instant::now();
    let base = a.config.resolve()?;
    let expr = load_expr(&a.expr)?;
    let db = load_db(a.lr_db.as_deref())?;
    let grid = a.grid.clone().unwrap_or_else(|| a.kind.default_grid());
    if grid.is_empty() || a.seeds.is_empty() {
        return Err(CliError::usage("grid and seeds must be non-empty"));
    }
    let needs_db = match a.kind {
        AblationKind::GpDim => grid.iter().any(|&v| v > 0.0),
        AblationKind::KlBeta => base.train.latent.l_ccc > 0,
    };
    if needs_db && db.is_none() {
        return Err(CliError::usage("--lr-db is required when latent.l_ccc > 0"));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::from(e).at(&a.out))?;
    let rows = run_ablation(a.kind, &grid, &a.seeds, &base, &expr, db.as_ref())?;
    let csv_path = a.out.join(format!("ablation_{}.csv", a.kind.name().replace('-', "_")));
    write_ablation_csv(BufWriter::new(File::create(&csv_path)?), &rows)?;
    let mut man = RunManifest::new("ablate", &base);
    man.inputs.push(InputDigest::of("expr", &a.expr)?);
    if let Some(p) = &a.lr_db {
        man.inputs.push(InputDigest::of("lr_db", p)?);
    }
    man.outputs = vec![csv_path.clone()];
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    man.status = if failed == 0 { "ok".into() } else { format!("{failed} of {} cells failed", rows.len()) };
    man.wall_time_secs = start.elapsed().as_secs_f64();
    write_json(&a.out.join(MANIFEST_FILE), &man)?;
    eprintln!("wrote {} rows ({failed} failed) to {}", rows.len(), csv_path.display());
    Ok(())
}
