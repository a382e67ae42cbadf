//! Sweeps over the GP latent width and the KL weight.

use std::io::Write;
use std::str::FromStr;

use cccvae::ccc_kernel::LigandReceptorDb;
use cccvae::data::ExpressionMatrix;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::run;

pub const ABLATION_HEADER: &str = "grid_value,seed,ari,nmi,silhouette";
/// Latent width held fixed during the GP-width sweep.
pub const GP_DIM_TOTAL: usize = 80;
pub const GP_DIM_GRID: &[f64] = &[4.0, 8.0, 16.0, 32.0];
pub const KL_BETA_GRID: &[f64] = &[0.01, 0.02, 0.05, 0.1, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    GpDim,
    KlBeta,
}

impl FromStr for AblationKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "gp-dim" => Ok(Self::GpDim),
            "kl-beta" => Ok(Self::KlBeta),
            _ => Err(CliError::usage(format!("unknown ablation `{s}` (expected gp-dim or kl-beta)"))),
        }
    }
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GpDim => "gp-dim",
            Self::KlBeta => "kl-beta",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::GpDim => GP_DIM_GRID.to_vec(),
            Self::KlBeta => KL_BETA_GRID.to_vec(),
        }
    }

    /// The base configuration with one grid value applied. For the KL sweep
    /// the value becomes the final weight and the warmup starts no higher.
    pub fn apply(self, base: &RunConfig, value: f64) -> CliResult<RunConfig> {
        let mut cfg = base.clone();
        match self {
            Self::GpDim => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(CliError::usage(format!("gp-dim grid values must be whole numbers, got {value}")));
                }
                cfg.train.latent.d_total = GP_DIM_TOTAL;
                cfg.train.latent.l_ccc = value as usize;
            }
            Self::KlBeta => {
                cfg.train.kl_beta_max = value;
                cfg.train.kl_beta_start = cfg.train.kl_beta_start.min(value);
            }
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub grid_value: f64,
    pub seed: u64,
    /// `(ari, nmi, silhouette)`, or the failure message.
    pub outcome: Result<(f64, f64, Option<f64>), String>,
}

impl AblationRow {
    pub fn csv_line(&self) -> String {
        match &self.outcome {
            Ok((a, n, s)) => {
                let s = s.map_or("nan".to_string(), |v| v.to_string());
                format!("{},{},{a},{n},{s}", self.grid_value, self.seed)
            }
            Err(_) => format!("{},{},failed,failed,failed", self.grid_value, self.seed),
        }
    }
}

/// One run per (grid value, seed); rows come back sorted by value then seed.
/// A failing cell is recorded and the sweep carries on.
pub fn run_ablation(
    kind: AblationKind,
    grid: &[f64],
    seeds: &[u64],
    base: &RunConfig,
    expr: &ExpressionMatrix,
    db: Option<&LigandReceptorDb>,
) -> CliResult<Vec<AblationRow>> {
    if expr.labels.is_none() {
        return Err(CliError::usage("ablation needs cell labels (a .labels.txt sidecar)"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let mut rows = Vec::new();
    for &v in &grid {
        for &seed in &seeds {
            let outcome = kind.apply(base, v).and_then(|mut cfg| {
                cfg.train.seed = seed;
                run(expr, db, &cfg).map_err(|f| f.error)
            });
            let outcome = match outcome {
                Ok(out) => {
                    let m = out.metrics;
                    Ok((m.ari.unwrap_or(f64::NAN), m.nmi.unwrap_or(f64::NAN), m.silhouette))
                }
                Err(e) => {
                    log::warn!("{} = {v}, seed {seed} failed: {e}", kind.name());
                    Err(e.to_string())
                }
            };
            rows.push(AblationRow { grid_value: v, seed, outcome });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> CliResult<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_application() {
        let base = RunConfig::default();
        let c = AblationKind::GpDim.apply(&base, 16.0).unwrap();
        assert_eq!((c.train.latent.d_total, c.train.latent.l_ccc), (80, 16));
        let c = AblationKind::KlBeta.apply(&base, 0.02).unwrap();
        assert_eq!((c.train.kl_beta_start, c.train.kl_beta_max), (0.02, 0.02));
        assert!(c.validate().is_ok());
        assert!(AblationKind::GpDim.apply(&base, 2.5).is_err());
        assert!("other".parse::<AblationKind>().is_err());
    }

    #[test]
    fn failed_rows_are_marked() {
        let r = AblationRow { grid_value: 96.0, seed: 1, outcome: Err("x".into()) };
        assert_eq!(r.csv_line(), "96,1,failed,failed,failed");
    }
}
