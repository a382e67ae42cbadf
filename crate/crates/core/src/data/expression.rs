//! Count matrices and their on-disk formats.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MTX_HEADER: &str = "%%MatrixMarket matrix coordinate integer general";

/// Cells × genes raw counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    pub counts: Matrix<f64>,
    pub cell_ids: Vec<String>,
    pub gene_symbols: Vec<String>,
    pub labels: Option<Vec<usize>>,
}

impl ExpressionMatrix {
    pub fn new(
        counts: Matrix<f64>,
        cell_ids: Vec<String>,
        gene_symbols: Vec<String>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let m = Self { counts, cell_ids, gene_symbols, labels };
        m.validate()?;
        Ok(m)
    }

    pub fn n_cells(&self) -> usize {
        self.counts.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.counts.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_ids.len() != self.counts.rows() || self.gene_symbols.len() != self.counts.cols() {
            return Err(Error::contract("cell and gene labels must match the count matrix shape"));
        }
        if self.counts.as_slice().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::domain("counts must be finite and nonnegative"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.gene_symbols.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::contract(format!("duplicate gene symbol `{dup}`")));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.counts.rows() {
                return Err(Error::contract("one label per cell required"));
            }
        }
        Ok(())
    }

    pub fn select_cells(&self, idx: &[usize]) -> Self {
        Self {
            counts: self.counts.select_rows(idx),
            cell_ids: idx.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            gene_symbols: self.gene_symbols.clone(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpressionFormat {
    /// Header of gene symbols, first column cell id, integer counts.
    DenseCsv,
    /// Coordinate triples with `.cells.txt` / `.genes.txt` sidecars.
    CoordinateSparse,
}

impl ExpressionFormat {
    /// `.mtx` is coordinate-sparse; everything else dense CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("mtx") => Self::CoordinateSparse,
            _ => Self::DenseCsv,
        }
    }
}

/// `<dir>/<stem><suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn parse_count(token: &str, path: &Path, line: usize) -> Result<f64> {
    let v: i64 = token
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("`{}` is not an integer count", token.trim())))?;
    if v < 0 {
        return Err(Error::parse(path, line, format!("negative count {v}")));
    }
    Ok(v as f64)
}

fn read_lines_file(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::parse(path, 0, format!("cannot open: {e}")))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

fn read_labels(path: &Path, n: usize) -> Result<Option<Vec<usize>>> {
    let side = sidecar(path, ".labels.txt");
    if !side.exists() {
        return Ok(None);
    }
    let lines = read_lines_file(&side)?;
    if lines.len() != n {
        return Err(Error::parse(&side, lines.len(), format!("expected {n} labels, found {}", lines.len())));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| l.parse::<usize>().map_err(|_| Error::parse(&side, i + 1, format!("bad label `{l}`"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load_dense(path: &Path) -> Result<(Matrix<f64>, Vec<String>, Vec<String>)> {
    let f = File::open(path)?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(Error::parse(path, 1, "empty file")),
    };
    let genes: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    if genes.is_empty() || genes.iter().any(String::is_empty) {
        return Err(Error::parse(path, 1, "header must be `cell_id,<gene>,...` with non-empty symbols"));
    }
    let g = genes.len();
    let mut cells = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != g + 1 {
            return Err(Error::parse(path, lineno, format!("expected {} fields, found {}", g + 1, fields.len())));
        }
        cells.push(fields[0].trim().to_string());
        for t in &fields[1..] {
            data.push(parse_count(t, path, lineno)?);
        }
    }
    Ok((Matrix::from_vec(cells.len(), g, data), cells, genes))
}

fn load_sparse(path: &Path) -> Result<(Matrix<f64>, Vec<String>, Vec<String>)> {
    let f = File::open(path)?;
    let mut lines = BufReader::new(f).lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.as_ref().map(|s| s.trim() == MTX_HEADER).unwrap_or(false) => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MTX_HEADER}`"))),
    }
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut counts = Matrix::zeros(0, 0);
    let mut seen = HashMap::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let tok: Vec<&str> = t.split_whitespace().collect();
        if tok.len() != 3 {
            return Err(Error::parse(path, lineno, format!("expected 3 fields, found {}", tok.len())));
        }
        match shape {
            None => {
                let p = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, lineno, format!("bad size `{s}`")));
                let dims = (p(tok[0])?, p(tok[1])?, p(tok[2])?);
                counts = Matrix::zeros(dims.0, dims.1);
                shape = Some(dims);
            }
            Some((r, c, _)) => {
                let idx = |s: &str, max: usize| -> Result<usize> {
                    let v = s.parse::<usize>().map_err(|_| Error::parse(path, lineno, format!("bad index `{s}`")))?;
                    if v == 0 || v > max {
                        return Err(Error::parse(path, lineno, format!("index {v} out of range 1..={max}")));
                    }
                    Ok(v - 1)
                };
                let (row, col) = (idx(tok[0], r)?, idx(tok[1], c)?);
                let v = parse_count(tok[2], path, lineno)?;
                if let Some(first) = seen.insert((row, col), lineno) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("duplicate entry ({}, {}) first seen at line {first}", row + 1, col + 1),
                    ));
                }
                counts[(row, col)] = v;
            }
        }
    }
    let (r, c, nnz) = shape.ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    if seen.len() != nnz {
        return Err(Error::parse(path, 0, format!("declared {nnz} entries, found {}", seen.len())));
    }
    let cells = read_lines_file(&sidecar(path, ".cells.txt"))?;
    let genes = read_lines_file(&sidecar(path, ".genes.txt"))?;
    if cells.len() != r || genes.len() != c {
        return Err(Error::parse(
            path,
            2,
            format!("sidecars list {} cells and {} genes for a {r}x{c} matrix", cells.len(), genes.len()),
        ));
    }
    Ok((counts, cells, genes))
}

/// Reads a count matrix; a `<stem>.labels.txt` sidecar, if present, supplies
/// one integer cluster label per cell.
pub fn load_expression(path: impl AsRef<Path>, format: ExpressionFormat) -> Result<ExpressionMatrix> {
    let path = path.as_ref();
    let (counts, cells, genes) = match format {
        ExpressionFormat::DenseCsv => load_dense(path)?,
        ExpressionFormat::CoordinateSparse => load_sparse(path)?,
    };
    let labels = read_labels(path, counts.rows())?;
    ExpressionMatrix::new(counts, cells, genes, labels)
}

fn write_lines(path: &Path, items: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in items {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the matrix and its sidecars. Counts are rounded to integers.
pub fn save_expression(expr: &ExpressionMatrix, path: impl AsRef<Path>, format: ExpressionFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    let (n, g) = expr.counts.shape();
    match format {
        ExpressionFormat::DenseCsv => {
            write!(w, "cell_id")?;
            for s in &expr.gene_symbols {
                write!(w, ",{s}")?;
            }
            writeln!(w)?;
            for i in 0..n {
                write!(w, "{}", expr.cell_ids[i])?;
                for &v in expr.counts.row(i) {
                    write!(w, ",{}", v.round() as i64)?;
                }
                writeln!(w)?;
            }
        }
        ExpressionFormat::CoordinateSparse => {
            let nnz = expr.counts.as_slice().iter().filter(|&&v| v.round() != 0.0).count();
            writeln!(w, "{MTX_HEADER}")?;
            writeln!(w, "{n} {g} {nnz}")?;
            for i in 0..n {
                for (j, &v) in expr.counts.row(i).iter().enumerate() {
                    if v.round() != 0.0 {
                        writeln!(w, "{} {} {}", i + 1, j + 1, v.round() as i64)?;
                    }
                }
            }
            write_lines(&sidecar(path, ".cells.txt"), expr.cell_ids.iter().cloned())?;
            write_lines(&sidecar(path, ".genes.txt"), expr.gene_symbols.iter().cloned())?;
        }
    }
    w.flush()?;
    if let Some(l) = &expr.labels {
        write_lines(&sidecar(path, ".labels.txt"), l.iter().map(|x| x.to_string()))?;
    }
    Ok(())
}
