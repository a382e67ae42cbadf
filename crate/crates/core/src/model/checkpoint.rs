//! Plain-text checkpoint: magic line, config echo, RNG position, genes and
//! every matrix. Floats use shortest round-trip formatting, so a save/load
//! cycle is exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::forward::GpContext;
use super::params::init_params;
use super::train::{Model, RngState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::SeedableRng;

pub const CHECKPOINT_MAGIC: &str = "CCCVAE1";

fn write_matrix(w: &mut impl Write, name: &str, m: &Matrix<f64>) -> Result<()> {
    writeln!(w, "matrix {name} {} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (k, v) in model.config.to_pairs() {
        writeln!(w, "config {k} {v}")?;
    }
    let seed: String = model.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
    writeln!(w, "rng {seed} {} {}", model.rng.stream, model.rng.word_pos)?;
    writeln!(w, "median_total {}", model.median_total)?;
    writeln!(w, "normalized {}", model.normalized)?;
    writeln!(w, "n_train {}", model.n_train)?;
    writeln!(w, "genes {}", model.kept_genes.len())?;
    for gene in &model.kept_genes {
        writeln!(w, "{gene}")?;
    }
    for (name, m) in model.params.names().iter().zip(model.params.iter()) {
        write_matrix(&mut w, name, m)?;
    }
    if let Some(gp) = &model.gp {
        write_matrix(&mut w, "static.z_u", &gp.z_u)?;
        write_matrix(&mut w, "static.propagation", &gp.propagation)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Lines<'a, R> {
    inner: std::io::Lines<R>,
    path: &'a Path,
    line: usize,
}

impl<R: BufRead> Lines<'_, R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }

    fn num<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad {what} `{s}`")))
    }
}

pub fn read_checkpoint(r: impl BufRead, origin: &Path) -> Result<Model> {
    let mut lines = Lines { inner: r.lines(), path: origin, line: 0 };
    if lines.next()?.trim_end() != CHECKPOINT_MAGIC {
        return Err(lines.err(format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    let mut config = TrainConfig::default();
    let mut rng = None;
    let mut median_total = None;
    let mut n_train = None;
    let mut normalized = None;
    let mut genes = Vec::new();
    let mut mats: HashMap<String, Matrix<f64>> = HashMap::new();
    loop {
        let l = lines.next()?;
        let mut it = l.splitn(2, ' ');
        let tag = it.next().unwrap_or("");
        let rest = it.next().unwrap_or("");
        match tag {
            "end" => break,
            "config" => {
                let (k, v) = rest.split_once(' ').ok_or_else(|| lines.err("config line needs a key and value"))?;
                config.set(k, v).map_err(|e| lines.err(e.to_string()))?;
            }
            "rng" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 3 || f[0].len() != 64 {
                    return Err(lines.err("rng line needs a 64-digit hex seed, stream and word position"));
                }
                let mut seed = [0u8; 32];
                for (k, b) in seed.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&f[0][2 * k..2 * k + 2], 16).map_err(|_| lines.err("bad rng seed"))?;
                }
                rng = Some(RngState {
                    seed,
                    stream: lines.num(f[1], "stream")?,
                    word_pos: lines.num(f[2], "word position")?,
                });
            }
            "median_total" => median_total = Some(lines.num::<f64>(rest, "median total")?),
            "normalized" => normalized = Some(lines.num::<bool>(rest, "flag")?),
            "n_train" => n_train = Some(lines.num::<usize>(rest, "cell count")?),
            "genes" => {
                let k: usize = lines.num(rest, "gene count")?;
                genes = (0..k).map(|_| lines.next()).collect::<Result<_>>()?;
            }
            "matrix" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 3 {
                    return Err(lines.err("matrix line needs a name, rows and columns"));
                }
                let (rows, cols): (usize, usize) = (lines.num(f[1], "row count")?, lines.num(f[2], "column count")?);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let row = lines.next()?;
                    let vals: Vec<f64> =
                        row.split_ascii_whitespace().map(|s| lines.num(s, "value")).collect::<Result<_>>()?;
                    if vals.len() != cols {
                        return Err(lines.err(format!("expected {cols} values, found {}", vals.len())));
                    }
                    data.extend(vals);
                }
                mats.insert(f[0].to_string(), Matrix::from_vec(rows, cols, data));
            }
            other => return Err(lines.err(format!("unknown record `{other}`"))),
        }
    }
    config.validate()?;
    let missing = |what: &str| Error::parse(origin, lines.line, format!("checkpoint lacks {what}"));
    let rng = rng.ok_or_else(|| missing("rng state"))?;
    let median_total = median_total.ok_or_else(|| missing("median_total"))?;
    let n_train = n_train.ok_or_else(|| missing("n_train"))?;
    let normalized = normalized.ok_or_else(|| missing("normalized"))?;
    let ell = config.latent.l_ccc;
    let gp = if ell > 0 {
        let z_u = mats.remove("static.z_u").ok_or_else(|| missing("static.z_u"))?;
        let prop = mats.remove("static.propagation").ok_or_else(|| missing("static.propagation"))?;
        Some(GpContext::new(z_u, prop)?)
    } else {
        None
    };
    let m = gp.as_ref().map_or(0, |g| g.m());
    let mut dummy = rand_chacha::ChaCha8Rng::from_seed([0; 32]);
    let layout = init_params(&mut dummy, genes.len(), config.latent.d_total, (config.hidden1, config.hidden2), ell, m);
    let mut flat = Vec::new();
    for (name, want) in layout.names().iter().zip(layout.iter()) {
        let got = mats.remove(name).ok_or_else(|| missing(name))?;
        if got.shape() != want.shape() {
            return Err(Error::parse(
                origin,
                lines.line,
                format!("`{name}` is {}x{}, expected {}x{}", got.rows(), got.cols(), want.rows(), want.cols()),
            ));
        }
        flat.push(got);
    }
    if let Some(extra) = mats.keys().next() {
        return Err(Error::parse(origin, lines.line, format!("unexpected matrix `{extra}`")));
    }
    let params = layout.rebuild(&flat);
    if !params.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(Model { config, params, gp, kept_genes: genes, median_total, normalized, n_train, rng })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    read_checkpoint(BufReader::new(File::open(path)?), path)
}
