//! CSV and JSON artefacts written and read by the subcommands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cccvae::model::EpochLog;
use cccvae::Matrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn bad_file(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::usage(format!("{}: {}", path.display(), msg.into()))
}

/// `cell_id,z0,…,z{D-1}`.
pub fn write_embeddings(path: &Path, cell_ids: &[String], z: &Matrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend((0..z.cols()).map(|d| format!("z{d}")));
    w.write_record(&header)?;
    for (i, id) in cell_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(z.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> CliResult<(Vec<String>, Matrix<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(bad_file(path, "expected `cell_id` and at least one coordinate column"));
    }
    let (mut ids, mut vals) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            vals.push(
                f.trim().parse::<f64>().map_err(|_| bad_file(path, format!("row {}: bad value `{f}`", line + 2)))?,
            );
        }
    }
    let n = ids.len();
    Ok((ids, Matrix::from_vec(n, d, vals)))
}

/// `cell_id,cluster`.
pub fn write_clusters(path: &Path, cell_ids: &[String], labels: &[usize]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "cluster"])?;
    for (id, l) in cell_ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clusters(path: &Path) -> CliResult<HashMap<String, usize>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(bad_file(path, format!("row {}: expected cell_id,cluster", line + 2)));
        }
        let l = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad_file(path, format!("row {}: bad cluster `{}`", line + 2, &rec[1])))?;
        out.insert(rec[0].to_string(), l);
    }
    Ok(out)
}

/// One nonnegative integer per line.
pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|_| bad_file(path, format!("line {}: bad label `{l}`", i + 1))))
        .collect()
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", EpochLog::CSV_HEADER)?;
    for e in log {
        writeln!(w, "{}", e.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let z = Matrix::from_rows(&[vec![0.1, -2.5e-7], vec![3.0, 1.0 / 3.0]]);
        let ids = vec!["a".to_string(), "b,c".to_string()];
        write_embeddings(&p, &ids, &z).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), (ids.clone(), z));
        write_clusters(&p, &ids, &[1, 0]).unwrap();
        let c = read_clusters(&p).unwrap();
        assert_eq!(c["b,c"], 0);
    }
}
