use crate::ccc_kernel::CccKernelConfig;
use crate::error::{Error, Result};

/// Total latent width `D` and the number `ℓ` of leading dimensions under the
/// GP prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentConfig {
    pub d_total: usize,
    pub l_ccc: usize,
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_total == 0 {
            return Err(Error::Config("latent.d_total must be positive".into()));
        }
        if self.l_ccc > self.d_total {
            return Err(Error::Config(format!(
                "latent.l_ccc = {} exceeds latent.d_total = {}",
                self.l_ccc, self.d_total
            )));
        }
        Ok(())
    }

    pub fn standard_dims(&self) -> usize {
        self.d_total - self.l_ccc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub latent: LatentConfig,
    pub m_inducing: usize,
    pub kernel: CccKernelConfig<f64>,
    /// Initialise the Cauchy width by the median heuristic instead of `kernel.scale_s`.
    pub median_scale_init: bool,
    pub hidden1: usize,
    pub hidden2: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub kl_beta_start: f64,
    pub kl_beta_max: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the newest epoch in the exponentially smoothed ELBO.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent: LatentConfig { d_total: 32, l_ccc: 8 },
            m_inducing: 64,
            kernel: CccKernelConfig::default(),
            median_scale_init: true,
            hidden1: 256,
            hidden2: 128,
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 128,
            kl_beta_start: 0.1,
            kl_beta_max: 0.2,
            warmup_epochs: 50,
            max_epochs: 500,
            patience: 50,
            smoothing: 0.5,
            seed: 0,
        }
    }
}

/// Flat dotted keys accepted by [`TrainConfig::set`].
pub const TRAIN_KEYS: &[&str] = &[
    "latent.d_total",
    "latent.l_ccc",
    "m_inducing",
    "kernel.scale_s",
    "kernel.beta_comm",
    "kernel.k_h",
    "kernel.jitter",
    "kernel.median_scale_init",
    "model.hidden1",
    "model.hidden2",
    "lr",
    "weight_decay",
    "batch_size",
    "kl_beta_start",
    "kl_beta_max",
    "warmup_epochs",
    "max_epochs",
    "patience",
    "smoothing",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    /// Assigns one field from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent.d_total" => self.latent.d_total = parse(key, value)?,
            "latent.l_ccc" => self.latent.l_ccc = parse(key, value)?,
            "m_inducing" => self.m_inducing = parse(key, value)?,
            "kernel.scale_s" => self.kernel.scale_s = parse(key, value)?,
            "kernel.beta_comm" => self.kernel.beta_comm = parse(key, value)?,
            "kernel.k_h" => self.kernel.k_h = parse(key, value)?,
            "kernel.jitter" => self.kernel.jitter = parse(key, value)?,
            "kernel.median_scale_init" => self.median_scale_init = parse(key, value)?,
            "model.hidden1" => self.hidden1 = parse(key, value)?,
            "model.hidden2" => self.hidden2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "kl_beta_start" => self.kl_beta_start = parse(key, value)?,
            "kl_beta_max" => self.kl_beta_max = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`TRAIN_KEYS`] order; values round-trip through [`Self::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let v = [
            self.latent.d_total.to_string(),
            self.latent.l_ccc.to_string(),
            self.m_inducing.to_string(),
            self.kernel.scale_s.to_string(),
            self.kernel.beta_comm.to_string(),
            self.kernel.k_h.to_string(),
            self.kernel.jitter.to_string(),
            self.median_scale_init.to_string(),
            self.hidden1.to_string(),
            self.hidden2.to_string(),
            self.lr.to_string(),
            self.weight_decay.to_string(),
            self.batch_size.to_string(),
            self.kl_beta_start.to_string(),
            self.kl_beta_max.to_string(),
            self.warmup_epochs.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            self.smoothing.to_string(),
            self.seed.to_string(),
        ];
        TRAIN_KEYS.iter().copied().zip(v).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.kernel.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.latent.l_ccc > 0 && self.m_inducing == 0 {
            return bad("m_inducing must be positive when latent.l_ccc > 0");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("model.hidden1 and model.hidden2 must be positive");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.kl_beta_start > 0.0 && self.kl_beta_start <= self.kl_beta_max) {
            return bad("need 0 < kl_beta_start <= kl_beta_max");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad("smoothing must be in (0, 1]");
        }
        Ok(())
    }

    /// KL weight for a 0-based epoch: linear from start to max over
    /// `warmup_epochs`, constant afterwards.
    pub fn kl_beta(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 || epoch >= self.warmup_epochs {
            return self.kl_beta_max;
        }
        let t = epoch as f64 / self.warmup_epochs as f64;
        self.kl_beta_start + (self.kl_beta_max - self.kl_beta_start) * t
    }
}
