//! Cell-cell communication scores and the communication-aware kernel.
//!
//! The communication matrix scores every ordered cell pair by a Hill-type
//! ligand-receptor formula, averaged over the interactions in a database.
//! The kernel sandwiches a propagation matrix built from communication
//! among inducing cells between two Cauchy cross-kernels:
//! `K(A, B) = Kc(A, Z) · P · Kc(B, Z)ᵀ`, with `P = I + β·sym(C_ZZ)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_eigenvalues};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Header of the ligand-receptor database CSV.
pub const LR_DB_HEADER: [&str; 6] = ["ligand", "receptor", "agonists", "antagonists", "co_stim", "co_inhib"];

/// One ligand-receptor interaction with its cofactor gene sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub ligand_subunits: Vec<String>,
    pub receptor_subunits: Vec<String>,
    pub agonists: Vec<String>,
    pub antagonists: Vec<String>,
    /// Co-stimulatory receptors on the receiver.
    pub co_stimulatory: Vec<String>,
    /// Co-inhibitory receptors on the receiver.
    pub co_inhibitory: Vec<String>,
}

impl Interaction {
    /// Ligand-receptor pair without cofactors.
    pub fn simple(ligand: &str, receptor: &str) -> Self {
        Self {
            ligand_subunits: vec![ligand.to_string()],
            receptor_subunits: vec![receptor.to_string()],
            agonists: Vec::new(),
            antagonists: Vec::new(),
            co_stimulatory: Vec::new(),
            co_inhibitory: Vec::new(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.ligand_subunits.is_empty() || self.receptor_subunits.is_empty() {
            return Err("ligand and receptor subunit lists must be non-empty".into());
        }
        let all = [
            &self.ligand_subunits,
            &self.receptor_subunits,
            &self.agonists,
            &self.antagonists,
            &self.co_stimulatory,
            &self.co_inhibitory,
        ];
        if all.iter().flat_map(|v| v.iter()).any(|g| g.trim().is_empty()) {
            return Err("empty gene symbol".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LigandReceptorDb {
    pub interactions: Vec<Interaction>,
}

fn split_genes(field: &str) -> Vec<String> {
    field.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl LigandReceptorDb {
    pub fn new(interactions: Vec<Interaction>) -> Result<Self> {
        for (i, it) in interactions.iter().enumerate() {
            it.validate().map_err(|m| Error::contract(format!("interaction {i}: {m}")))?;
        }
        Ok(Self { interactions })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn from_reader(reader: impl Read, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != LR_DB_HEADER {
            return Err(Error::parse(origin, 1, format!("expected header `{}`", LR_DB_HEADER.join(","))));
        }
        let mut interactions = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::parse(origin, line, e.to_string()))?;
            let it = Interaction {
                ligand_subunits: split_genes(&record[0]),
                receptor_subunits: split_genes(&record[1]),
                agonists: split_genes(&record[2]),
                antagonists: split_genes(&record[3]),
                co_stimulatory: split_genes(&record[4]),
                co_inhibitory: split_genes(&record[5]),
            };
            it.validate().map_err(|m| Error::parse(origin, line, m))?;
            interactions.push(it);
        }
        Ok(Self { interactions })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_reader(std::fs::File::open(path)?, path)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LR_DB_HEADER)?;
        for it in &self.interactions {
            w.write_record([
                it.ligand_subunits.join(";"),
                it.receptor_subunits.join(";"),
                it.agonists.join(";"),
                it.antagonists.join(";"),
                it.co_stimulatory.join(";"),
                it.co_inhibitory.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }
}

/// Kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CccKernelConfig<T> {
    /// Cauchy width `s`.
    pub scale_s: T,
    /// Communication strength `β`.
    pub beta_comm: T,
    /// Half-saturation constant `K_h`.
    pub k_h: T,
    pub jitter: T,
}

impl<T: Scalar> Default for CccKernelConfig<T> {
    fn default() -> Self {
        Self { scale_s: T::one(), beta_comm: T::one(), k_h: T::lit(0.5), jitter: T::lit(1e-6) }
    }
}

impl<T: Scalar> CccKernelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s > T::zero()) {
            return Err(Error::Config("kernel.scale_s must be positive".into()));
        }
        if !(self.k_h > T::zero()) {
            return Err(Error::Config("kernel.k_h must be positive".into()));
        }
        if !(self.jitter > T::zero()) {
            return Err(Error::Config("kernel.jitter must be positive".into()));
        }
        if !(self.beta_comm >= T::zero()) {
            return Err(Error::Config("kernel.beta_comm must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-pair inputs of the communication probability: sender-side terms carry
/// the `_sender` suffix (cell i), receiver-side terms `_receiver` (cell j).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SignalLevels<T> {
    pub ligand_sender: T,
    pub receptor_receiver: T,
    pub agonist_sender: T,
    pub agonist_receiver: T,
    pub antagonist_sender: T,
    pub antagonist_receiver: T,
    pub co_stim_receiver: T,
    pub co_inhib_receiver: T,
}

/// Hill-type communication probability of one ligand-receptor pair:
///
/// `LR/(K_h+LR) · (1+AG_i/(K_h+AG_i)) · (1+AG_j/(K_h+AG_j)) ·
///  K_h/(K_h+AN_i) · K_h/(K_h+AN_j) · (1+RA_j)/(1+RI_j)`
pub fn communication_probability<T: Scalar>(s: &SignalLevels<T>, k_h: T) -> Result<T> {
    let all = [
        s.ligand_sender,
        s.receptor_receiver,
        s.agonist_sender,
        s.agonist_receiver,
        s.antagonist_sender,
        s.antagonist_receiver,
        s.co_stim_receiver,
        s.co_inhib_receiver,
    ];
    if all.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::domain("communication inputs must be finite and nonnegative"));
    }
    if !(k_h > T::zero()) {
        return Err(Error::domain("k_h must be positive"));
    }
    Ok(probability_unchecked(s, k_h))
}

#[inline]
fn probability_unchecked<T: Scalar>(s: &SignalLevels<T>, k_h: T) -> T {
    let one = T::one();
    let lr = s.ligand_sender * s.receptor_receiver;
    if lr == T::zero() {
        return T::zero();
    }
    lr / (k_h + lr)
        * (one + s.agonist_sender / (k_h + s.agonist_sender))
        * (one + s.agonist_receiver / (k_h + s.agonist_receiver))
        * (k_h / (k_h + s.antagonist_sender))
        * (k_h / (k_h + s.antagonist_receiver))
        * ((one + s.co_stim_receiver) / (one + s.co_inhib_receiver))
}

/// Maps gene symbols to column indices.
#[derive(Clone, Debug, Default)]
pub struct GeneIndex {
    map: HashMap<String, usize>,
}

impl GeneIndex {
    pub fn new(symbols: &[String]) -> Self {
        Self { map: symbols.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect() }
    }

    pub fn get(&self, gene: &str) -> Option<usize> {
        self.map.get(gene).copied()
    }

    pub fn lookup(&self, gene: &str) -> Result<usize> {
        self.get(gene).ok_or_else(|| Error::UnknownGene(gene.to_string()))
    }
}

/// Geometric mean of the subunit expression levels in one cell.
pub fn subunit_expression<T: Scalar>(expr_row: &[T], genes: &GeneIndex, subunits: &[String]) -> Result<T> {
    if subunits.is_empty() {
        return Err(Error::contract("subunit list is empty"));
    }
    let mut log_sum = T::zero();
    for g in subunits {
        let v = expr_row[genes.lookup(g)?];
        if v <= T::zero() {
            return Ok(T::zero());
        }
        log_sum += v.ln();
    }
    Ok((log_sum / T::from_usize_lossy(subunits.len())).exp())
}

/// Arithmetic mean of the cofactor genes present in the index; 0 when none.
fn cofactor_level<T: Scalar>(expr_row: &[T], idx: &[usize]) -> T {
    if idx.is_empty() {
        return T::zero();
    }
    idx.iter().map(|&i| expr_row[i]).sum::<T>() / T::from_usize_lossy(idx.len())
}

struct ResolvedInteraction {
    ligand: Vec<String>,
    receptor: Vec<String>,
    agonists: Vec<usize>,
    antagonists: Vec<usize>,
    co_stim: Vec<usize>,
    co_inhib: Vec<usize>,
}

fn resolve(db: &LigandReceptorDb, genes: &GeneIndex) -> Vec<ResolvedInteraction> {
    let mut kept = Vec::new();
    for (n, it) in db.interactions.iter().enumerate() {
        let missing: Vec<&String> =
            it.ligand_subunits.iter().chain(&it.receptor_subunits).filter(|g| genes.get(g).is_none()).collect();
        if !missing.is_empty() {
            log::warn!("skipping interaction {n}: genes absent from the matrix: {missing:?}");
            continue;
        }
        let present = |list: &[String]| -> Vec<usize> {
            list.iter()
                .filter_map(|g| {
                    let i = genes.get(g);
                    if i.is_none() {
                        log::warn!("interaction {n}: cofactor `{g}` absent from the matrix, ignored");
                    }
                    i
                })
                .collect()
        };
        kept.push(ResolvedInteraction {
            ligand: it.ligand_subunits.clone(),
            receptor: it.receptor_subunits.clone(),
            agonists: present(&it.agonists),
            antagonists: present(&it.antagonists),
            co_stim: present(&it.co_stimulatory),
            co_inhib: present(&it.co_inhibitory),
        });
    }
    kept
}

/// `C[i, j]` = mean over retained interactions of the communication
/// probability with the ligand side read from cell `i` and the receptor side
/// from cell `j`. Rows of `values` are cells, columns genes.
///
/// Interactions with a ligand or receptor subunit missing from `genes` are
/// skipped with a warning; an error is returned when nothing remains.
pub fn communication_matrix<T: Scalar>(
    values: &Matrix<T>,
    genes: &GeneIndex,
    db: &LigandReceptorDb,
    k_h: T,
) -> Result<Matrix<T>> {
    if db.is_empty() {
        return Err(Error::contract("ligand-receptor database is empty"));
    }
    if !(k_h > T::zero()) {
        return Err(Error::domain("k_h must be positive"));
    }
    if values.as_slice().iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::domain("expression values must be finite and nonnegative"));
    }
    let kept = resolve(db, genes);
    if kept.is_empty() {
        return Err(Error::contract("no ligand-receptor interaction has its genes in the matrix"));
    }
    let n = values.rows();
    let mut c = Matrix::zeros(n, n);
    for it in &kept {
        let mut ligand = Vec::with_capacity(n);
        let mut receptor = Vec::with_capacity(n);
        let mut ag = Vec::with_capacity(n);
        let mut an = Vec::with_capacity(n);
        let mut ra = Vec::with_capacity(n);
        let mut ri = Vec::with_capacity(n);
        for i in 0..n {
            let row = values.row(i);
            ligand.push(subunit_expression(row, genes, &it.ligand)?);
            receptor.push(subunit_expression(row, genes, &it.receptor)?);
            ag.push(cofactor_level(row, &it.agonists));
            an.push(cofactor_level(row, &it.antagonists));
            ra.push(cofactor_level(row, &it.co_stim));
            ri.push(cofactor_level(row, &it.co_inhib));
        }
        for i in 0..n {
            for j in 0..n {
                let s = SignalLevels {
                    ligand_sender: ligand[i],
                    receptor_receiver: receptor[j],
                    agonist_sender: ag[i],
                    agonist_receiver: ag[j],
                    antagonist_sender: an[i],
                    antagonist_receiver: an[j],
                    co_stim_receiver: ra[j],
                    co_inhib_receiver: ri[j],
                };
                c[(i, j)] += probability_unchecked(&s, k_h);
            }
        }
    }
    let inv = T::one() / T::from_usize_lossy(kept.len());
    c.map_inplace(|x| x * inv);
    Ok(c)
}

/// Cell-level communication scores with their cell labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CommunicationMatrix {
    pub values: Matrix<f64>,
    pub cell_ids: Vec<String>,
}

impl CommunicationMatrix {
    /// CSV with a `cell_id` header followed by the receiver ids; one row per sender.
    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("cell_id").chain(self.cell_ids.iter().map(String::as_str)))?;
        for (i, id) in self.cell_ids.iter().enumerate() {
            let row = self.values.row(i).iter().map(|v| v.to_string());
            w.write_record(std::iter::once(id.clone()).chain(row))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let cell_ids: Vec<String> = rdr.headers()?.iter().skip(1).map(String::from).collect();
        let n = cell_ids.len();
        let mut values = Matrix::zeros(n, n);
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if r >= n || record.len() != n + 1 || record[0] != cell_ids[r] {
                return Err(Error::parse(path, line, "row does not match the header cell order"));
            }
            for j in 0..n {
                values[(r, j)] = record[j + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, line, format!("column {}: {e}", j + 2)))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::parse(path, rows + 2, format!("expected {n} rows, found {rows}")));
        }
        Ok(Self { values, cell_ids })
    }
}

/// [`communication_matrix`] over named genes and cells.
pub fn build_communication_matrix(
    values: &Matrix<f64>,
    gene_symbols: &[String],
    cell_ids: &[String],
    db: &LigandReceptorDb,
    k_h: f64,
) -> Result<CommunicationMatrix> {
    if gene_symbols.len() != values.cols() || cell_ids.len() != values.rows() {
        return Err(Error::contract("gene and cell labels must match the expression shape"));
    }
    let genes = GeneIndex::new(gene_symbols);
    let values = communication_matrix(values, &genes, db, k_h)?;
    Ok(CommunicationMatrix { values, cell_ids: cell_ids.to_vec() })
}

/// `‖a‖² + ‖b‖² − 2⟨a, b⟩`, clamped at zero.
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("feature length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(sq_dist_norms(dot(a, a), dot(b, b), dot(a, b)))
}

#[inline]
fn sq_dist_norms<T: Scalar>(na: T, nb: T, ab: T) -> T {
    (na + nb - T::lit(2.0) * ab).max(T::zero())
}

/// All pairwise squared distances between rows of `a` and rows of `b`.
pub fn pairwise_squared_distances<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::contract(format!("feature dimension mismatch: {} vs {}", a.cols(), b.cols())));
    }
    let na: Vec<T> = (0..a.rows()).map(|i| dot(a.row(i), a.row(i))).collect();
    let nb: Vec<T> = (0..b.rows()).map(|j| dot(b.row(j), b.row(j))).collect();
    let mut d = a.matmul_tr(b);
    for i in 0..a.rows() {
        for (j, x) in d.row_mut(i).iter_mut().enumerate() {
            *x = sq_dist_norms(na[i], nb[j], *x);
        }
    }
    Ok(d)
}

/// `1 / (1 + d(a_i, b_j)/s)`.
pub fn cauchy_kernel<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, scale_s: T) -> Result<Matrix<T>> {
    if !(scale_s > T::zero()) {
        return Err(Error::domain("Cauchy scale must be positive"));
    }
    let d = pairwise_squared_distances(a, b)?;
    Ok(d.map(|x| T::one() / (T::one() + x / scale_s)))
}

/// `P = I + β·(C + Cᵀ)/2`, shifted by `(jitter − λ_min)·I` when its smallest
/// eigenvalue does not exceed `jitter`.
pub fn propagation_matrix<T: Scalar>(c_mm: &Matrix<T>, beta_comm: T, jitter: T) -> Result<Matrix<T>> {
    if !c_mm.is_square() {
        return Err(Error::contract(format!(
            "communication sub-matrix must be square, got {}x{}",
            c_mm.rows(),
            c_mm.cols()
        )));
    }
    if !(beta_comm >= T::zero()) {
        return Err(Error::domain("beta_comm must be nonnegative"));
    }
    let m = c_mm.rows();
    let mut p = c_mm.symmetrize().scale(beta_comm).add_diag(T::one());
    if beta_comm > T::zero() && m > 0 {
        let lambda_min = symmetric_eigenvalues(&p)[0];
        if lambda_min <= jitter {
            p = p.add_diag(jitter - lambda_min);
        }
    }
    Ok(p)
}

/// `Kc(A, Z) · P · Kc(B, Z)ᵀ`.
pub fn ccc_cross_kernel<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    z_u: &Matrix<T>,
    p: &Matrix<T>,
    cfg: &CccKernelConfig<T>,
) -> Result<Matrix<T>> {
    if p.shape() != (z_u.rows(), z_u.rows()) {
        return Err(Error::contract(format!(
            "propagation matrix is {}x{} but there are {} inducing inputs",
            p.rows(),
            p.cols(),
            z_u.rows()
        )));
    }
    let ka = cauchy_kernel(a, z_u, cfg.scale_s)?;
    let kb = cauchy_kernel(b, z_u, cfg.scale_s)?;
    Ok(ka.matmul(p).matmul_tr(&kb))
}

/// Median pairwise squared distance over a seeded subsample of at most
/// `max_cells` rows. Used to initialise the Cauchy width.
pub fn median_heuristic<T: Scalar>(features: &Matrix<T>, max_cells: usize, seed: u64) -> T {
    let n = features.rows();
    let idx: Vec<usize> = if n > max_cells {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, max_cells).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let sub = features.select_rows(&idx);
    let d = pairwise_squared_distances(&sub, &sub).expect("same matrix");
    let mut vals: Vec<T> = Vec::new();
    for i in 0..d.rows() {
        for j in (i + 1)..d.cols() {
            vals.push(d[(i, j)]);
        }
    }
    if vals.is_empty() {
        return T::one();
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let med = vals[vals.len() / 2];
    if med > T::zero() {
        med
    } else {
        T::one()
    }
}

/// Cauchy kernel on the graph from precomputed squared distances and a
/// differentiable width `scale` (`1×1`).
pub fn cauchy_kernel_graph<T: Scalar>(g: &mut Graph<T>, sq_dist: Var, scale: Var) -> Var {
    let r = g.div(sq_dist, scale);
    let r = g.add_scalar(r, T::one());
    g.powf(r, -T::one())
}

/// `K_az · P · K_bzᵀ` on the graph.
pub fn ccc_kernel_graph<T: Scalar>(g: &mut Graph<T>, k_az: Var, p: Var, k_bz: Var) -> Var {
    let left = g.matmul(k_az, p);
    let right = g.transpose(k_bz);
    g.matmul(left, right)
}

/// `diag(K_az · P · K_azᵀ)` as an `n×1` column.
pub fn ccc_kernel_diag_graph<T: Scalar>(g: &mut Graph<T>, k_az: Var, p: Var) -> Var {
    let left = g.matmul(k_az, p);
    let prod = g.mul(left, k_az);
    g.sum_cols(prod)
}

/// Kernel used by the sparse GP: the communication-aware kernel with its
/// inducing set and propagation matrix frozen.
#[derive(Clone, Debug)]
pub struct CccKernel<T> {
    pub z_u: Matrix<T>,
    pub propagation: Matrix<T>,
    pub config: CccKernelConfig<T>,
}

impl<T: Scalar> CccKernel<T> {
    pub fn new(z_u: Matrix<T>, propagation: Matrix<T>, config: CccKernelConfig<T>) -> Result<Self> {
        config.validate()?;
        if propagation.shape() != (z_u.rows(), z_u.rows()) {
            return Err(Error::contract("propagation matrix does not match inducing set"));
        }
        Ok(Self { z_u, propagation, config })
    }

    pub fn cross(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
        ccc_cross_kernel(a, b, &self.z_u, &self.propagation, &self.config)
    }

    /// Positive-definiteness check of `K(A, A)`; returns the jittered factor.
    pub fn check_positive_definite(&self, a: &Matrix<T>) -> Result<linalg::Cholesky<T>> {
        let k = self.cross(a, a)?;
        linalg::assert_positive_definite(&k.symmetrize(), self.config.jitter)
    }
}
