//! Experiment configuration: `key = value` lines, `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sofdma::channel::Fading;
use sofdma::delay::NoiseMode;
use sofdma::params::HashWidthMode;
use sofdma::sic::OutageAccounting;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// K = 50, dynamic ranges 10/20/40 dB with C2 = 2000/4000/40000.
    Fig1,
    /// K = 20, 40 dB split into two 20 dB groups.
    Fig2,
    Theorem,
    Custom,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "theorem" => Ok(Self::Theorem),
            "custom" => Ok(Self::Custom),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// Time-division inputs for the grouping experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingConfig {
    /// Group boundaries in dB above the lowest amplitude, e.g. `[20]` splits
    /// a 40 dB range into two 20 dB groups.
    pub split_db: Vec<f64>,
    /// Subframe-2 length for each group.
    pub c2_per_group: Vec<usize>,
    pub hash_width: HashWidthMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub trials: usize,
    /// Lowest SNR `10 log10(a_lo^2 / (2 sigma^2))` in dB.
    pub snr_grid: Vec<f64>,
    /// `20 log10(a_hi / a_lo)` in dB.
    pub dynamic_range_db: Vec<f64>,
    /// Subframe-2 length for each dynamic range (undivided arrangement).
    pub c2: Vec<usize>,
    pub grouping: Option<GroupingConfig>,
    pub k: usize,
    pub n: u64,
    pub m: usize,
    pub a_lo: f64,
    pub alpha: f64,
    pub fading: Fading,
    pub noise_mode: NoiseMode,
    pub outage: OutageAccounting,
    /// Overrides `rho = T / 8`.
    pub rho: Option<f64>,
    pub seed: u64,
    /// Seed of the public hash family shared by devices and AP.
    pub public_seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub plot: bool,
}

fn db_steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

impl ExperimentConfig {
    pub fn for_mode(mode: Mode) -> Self {
        let base = Self {
            mode,
            trials: 500,
            snr_grid: db_steps(10.0, 30.0, 2.0),
            dynamic_range_db: vec![10.0],
            c2: vec![2000],
            grouping: None,
            k: 50,
            n: 1 << 38,
            m: 20,
            a_lo: 1.0,
            alpha: 3.0,
            fading: Fading::Rayleigh,
            noise_mode: NoiseMode::PerEvaluation,
            outage: OutageAccounting::Exclude,
            rho: None,
            seed: 1,
            public_seed: 0x5eed,
            threads: None,
            out: PathBuf::from("out"),
            plot: false,
        };
        match mode {
            Mode::Fig1 => Self { dynamic_range_db: vec![10.0, 20.0, 40.0], c2: vec![2000, 4000, 40000], ..base },
            Mode::Fig2 => Self {
                k: 20,
                dynamic_range_db: vec![40.0],
                c2: vec![20000],
                grouping: Some(GroupingConfig {
                    split_db: vec![20.0],
                    c2_per_group: vec![3000, 3000],
                    hash_width: HashWidthMode::Shared,
                }),
                ..base
            },
            Mode::Theorem | Mode::Custom => base,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, got `{line}`") });
            };
            lines.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mode = match lines.iter().find(|(k, _)| k == "mode") {
            Some((_, v)) => v.parse().map_err(|msg| ConfigError::Value { key: "mode".into(), msg })?,
            None => Mode::Custom,
        };
        let mut cfg = Self::for_mode(mode);
        for (k, v) in &lines {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::Value { key: key.to_string(), msg };
        match key {
            "mode" => self.mode = value.parse().map_err(bad)?,
            "trials" => self.trials = parse_int(value).map_err(bad)? as usize,
            "snr_grid" => self.snr_grid = parse_list(value, parse_f64).map_err(bad)?,
            "dynamic_range_db" => self.dynamic_range_db = parse_list(value, parse_f64).map_err(bad)?,
            "c2" => self.c2 = parse_list(value, |s| parse_int(s).map(|x| x as usize)).map_err(bad)?,
            "k" => self.k = parse_int(value).map_err(bad)? as usize,
            "n" => self.n = parse_int(value).map_err(bad)?,
            "m" => self.m = parse_int(value).map_err(bad)? as usize,
            "a_lo" => self.a_lo = parse_f64(value).map_err(bad)?,
            "alpha" => self.alpha = parse_f64(value).map_err(bad)?,
            "fading" => {
                self.fading = match value {
                    "rayleigh" => Fading::Rayleigh,
                    "none" => Fading::None,
                    _ => return Err(bad(format!("unknown fading `{value}`"))),
                }
            }
            "noise_mode" => self.noise_mode = value.parse().map_err(|e: sofdma::Error| bad(e.to_string()))?,
            "outage_accounting" => self.outage = value.parse().map_err(|e: sofdma::Error| bad(e.to_string()))?,
            "rho" => self.rho = Some(parse_f64(value).map_err(bad)?),
            "seed" => self.seed = parse_int(value).map_err(bad)?,
            "public_seed" => self.public_seed = parse_int(value).map_err(bad)?,
            "threads" => self.threads = Some(parse_int(value).map_err(bad)? as usize),
            "out" => self.out = PathBuf::from(value),
            "plot" => self.plot = parse_bool(value).map_err(bad)?,
            "group_split_db" => self.grouping_mut().split_db = parse_list(value, parse_f64).map_err(bad)?,
            "group_c2" => {
                self.grouping_mut().c2_per_group = parse_list(value, |s| parse_int(s).map(|x| x as usize)).map_err(bad)?
            }
            "hash_width_mode" => {
                self.grouping_mut().hash_width = value.parse().map_err(|e: sofdma::Error| bad(e.to_string()))?
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn grouping_mut(&mut self) -> &mut GroupingConfig {
        self.grouping.get_or_insert_with(|| GroupingConfig {
            split_db: vec![20.0],
            c2_per_group: vec![3000, 3000],
            hash_width: HashWidthMode::Shared,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.snr_grid.is_empty() {
            return fail("snr_grid is empty");
        }
        if self.dynamic_range_db.is_empty() {
            return fail("dynamic_range_db is empty");
        }
        if self.c2.len() != self.dynamic_range_db.len() {
            return fail("c2 needs one entry per dynamic range");
        }
        if self.dynamic_range_db.iter().any(|&d| !(d > 0.0)) {
            return fail("dynamic ranges must be positive");
        }
        if self.c2.iter().any(|&c| c <= self.m) {
            return fail("every c2 must exceed m");
        }
        if self.k < 2 {
            return fail("k must be at least 2");
        }
        if !(self.a_lo > 0.0) || !(self.alpha > 0.0) {
            return fail("a_lo and alpha must be positive");
        }
        if self.snr_grid.iter().any(|s| !s.is_finite()) {
            return fail("snr_grid entries must be finite");
        }
        if let Some(g) = &self.grouping {
            if g.c2_per_group.len() != g.split_db.len() + 1 {
                return fail("group_c2 needs one entry per group (splits + 1)");
            }
            if g.split_db.windows(2).any(|w| w[0] >= w[1]) || g.split_db.iter().any(|&s| s <= 0.0) {
                return fail("group_split_db must be positive and increasing");
            }
            if g.c2_per_group.iter().any(|&c| c <= self.m) {
                return fail("every group_c2 must exceed m");
            }
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1");
        }
        Ok(())
    }

    /// `sigma^2` for a lowest SNR of `snr_db`.
    pub fn sigma2(&self, snr_db: f64) -> f64 {
        self.a_lo * self.a_lo / (2.0 * 10f64.powf(snr_db / 10.0))
    }

    /// `a_hi` for a dynamic range of `dyn_db`.
    pub fn a_hi(&self, dyn_db: f64) -> f64 {
        self.a_lo * 10f64.powf(dyn_db / 20.0)
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{s}`")),
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|e| format!("`{s}`: {e}"))
}

/// Decimal or `base^exp` integers, e.g. `2^38`.
pub fn parse_int(s: &str) -> Result<u64, String> {
    let s = s.trim().replace('_', "");
    if let Some((b, e)) = s.split_once('^') {
        let b: u64 = b.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
        let e: u32 = e.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
        return b.checked_pow(e).ok_or_else(|| format!("`{s}` overflows 64 bits"));
    }
    s.parse().map_err(|e| format!("`{s}`: {e}"))
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(item).collect()
}
