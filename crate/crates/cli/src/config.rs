//! Run configuration: method, factorization and detection settings, parsed
//! from `key=value` files and overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use amt_core::nnfac::{Init, NmfConfig, RhoMode, Sparsity, SparsityTarget};
use amt_core::notes::{DetectorConfig, ThresholdMode};
use amt_core::signal::{StftConfig, Window};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BlindNmf,
    SemiNmf,
    SimulNmf,
    Ntf,
    Parafac2,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::BlindNmf,
        Method::SemiNmf,
        Method::SimulNmf,
        Method::Ntf,
        Method::Parafac2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BlindNmf => "blind_nmf",
            Method::SemiNmf => "semi_nmf",
            Method::SimulNmf => "simul_nmf",
            Method::Ntf => "ntf",
            Method::Parafac2 => "parafac2",
        }
    }

    /// Whether the method factorizes channels jointly instead of a mixdown.
    pub fn is_multichannel(self) -> bool {
        matches!(self, Method::SimulNmf | Method::Ntf | Method::Parafac2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| CliError::Config(format!("unknown method {s:?}")))
    }
}

/// `none`, `l0:N`, `l1:ALPHA` or `l2:BETA`.
pub fn parse_sparsity(s: &str) -> CliResult<Sparsity> {
    let s = s.trim().to_ascii_lowercase();
    if s == "none" {
        return Ok(Sparsity::None);
    }
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("sparsity {s:?}: expected none, l0:N, l1:ALPHA or l2:BETA")))?;
    let bad = || CliError::Config(format!("bad sparsity value in {s:?}"));
    match kind {
        "l0" => value.parse().map(Sparsity::L0Hard).map_err(|_| bad()),
        "l1" => value.parse().map(Sparsity::L1Penalty).map_err(|_| bad()),
        "l2" => value.parse().map(Sparsity::L2Power).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

pub fn sparsity_label(s: Sparsity) -> String {
    match s {
        Sparsity::None => "none".into(),
        Sparsity::L0Hard(n) => format!("l0:{n}"),
        Sparsity::L1Penalty(a) => format!("l1:{a}"),
        Sparsity::L2Power(b) => format!("l2:{b}"),
    }
}

pub fn parse_sparsity_target(s: &str) -> CliResult<SparsityTarget> {
    match s.trim().to_ascii_lowercase().as_str() {
        "w" => Ok(SparsityTarget::W),
        "h" => Ok(SparsityTarget::H),
        "both" => Ok(SparsityTarget::Both),
        other => Err(CliError::Config(format!(
            "sparsity target {other:?}: expected w, h or both"
        ))),
    }
}

/// A single δ or an inclusive grid `from..=to` in steps of `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaSpec {
    Single(f64),
    Sweep { from: f64, to: f64, step: f64 },
}

impl Default for DeltaSpec {
    fn default() -> Self {
        DeltaSpec::Single(17.5)
    }
}

impl DeltaSpec {
    pub const DEFAULT_SWEEP: DeltaSpec = DeltaSpec::Sweep {
        from: 10.0,
        to: 25.0,
        step: 0.5,
    };

    pub fn values(&self) -> Vec<f64> {
        match *self {
            DeltaSpec::Single(d) => vec![d],
            DeltaSpec::Sweep { from, to, step } => {
                let n = ((to - from) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| from + i as f64 * step).collect()
            }
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, DeltaSpec::Sweep { .. })
    }

    /// `FROM:TO:STEP`, or empty for the default 10-25 dB grid.
    pub fn parse_sweep(s: &str) -> CliResult<Self> {
        if s.trim().is_empty() || s.trim() == "default" {
            return Ok(Self::DEFAULT_SWEEP);
        }
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("delta sweep {s:?}: expected FROM:TO:STEP")))?;
        match parts[..] {
            [from, to, step] if step > 0.0 && to >= from => Ok(DeltaSpec::Sweep { from, to, step }),
            _ => Err(CliError::Config(format!(
                "delta sweep {s:?}: expected FROM:TO:STEP with STEP > 0"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub rank: Option<usize>,
    pub sparsity: Sparsity,
    pub sparsity_target: SparsityTarget,
    pub delta: DeltaSpec,
    pub threshold_mode: ThresholdMode,
    pub stft: StftConfig,
    /// One shared codebook, or one per channel.
    pub codebooks: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub max_iters: usize,
    pub truncate_seconds: Option<f64>,
    /// Deterministic accelerated-HALS inner loops.
    pub test_mode: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::SemiNmf,
            rank: None,
            sparsity: Sparsity::None,
            sparsity_target: SparsityTarget::H,
            delta: DeltaSpec::default(),
            threshold_mode: ThresholdMode::Fixed,
            stft: StftConfig::default(),
            codebooks: Vec::new(),
            seed: None,
            max_iters: 500,
            truncate_seconds: None,
            test_mode: false,
        }
    }
}

impl RunConfig {
    pub fn needs_codebook(&self) -> bool {
        matches!(self.method, Method::SemiNmf)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.needs_codebook() && self.codebooks.is_empty() {
            return Err(CliError::Config(format!("{} needs --codebook", self.method)));
        }
        if self.codebooks.is_empty() && self.rank.is_none() {
            return Err(CliError::Config(format!("blind {} needs --rank", self.method)));
        }
        if self.rank == Some(0) {
            return Err(CliError::Config("rank must be at least 1".into()));
        }
        if self.truncate_seconds.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return Err(CliError::Config("truncation must be positive".into()));
        }
        self.stft.validate()?;
        Ok(())
    }

    /// Factorization settings for rank `rank`.
    pub fn nmf_config(&self, rank: usize) -> NmfConfig {
        NmfConfig {
            max_outer_iters: self.max_iters,
            sparsity: self.sparsity,
            sparsity_target: self.sparsity_target,
            init: self.seed.map_or(Init::Nndsvd, Init::Random),
            rho: if self.test_mode {
                RhoMode::OpCount
            } else {
                RhoMode::Timed
            },
            ..NmfConfig::new(rank)
        }
    }

    pub fn detector(&self, delta_db: f64) -> DetectorConfig {
        DetectorConfig {
            mode: self.threshold_mode,
            ..DetectorConfig::with_delta_db(delta_db)
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        let num = |what: &str| -> CliResult<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("{what}: bad number {value:?}")))
        };
        match key.trim().replace('-', "_").as_str() {
            "method" => self.method = value.parse()?,
            "rank" => self.rank = Some(num("rank")? as usize),
            "sparsity" => self.sparsity = parse_sparsity(value)?,
            "sparsity_target" => self.sparsity_target = parse_sparsity_target(value)?,
            "delta_db" => self.delta = DeltaSpec::Single(num("delta_db")?),
            "delta_sweep" => self.delta = DeltaSpec::parse_sweep(value)?,
            "threshold" => {
                self.threshold_mode = match value {
                    "fixed" => ThresholdMode::Fixed,
                    "adaptive" => ThresholdMode::Adaptive,
                    _ => {
                        return Err(CliError::Config(format!(
                            "threshold {value:?}: expected fixed or adaptive"
                        )))
                    }
                }
            }
            "frame_ms" => self.stft.frame_len_ms = num("frame_ms")?,
            "hop" => self.stft.hop_fraction = num("hop")?,
            "window" => {
                self.stft.window = match value {
                    "hann" => Window::Hann,
                    "rect" => Window::Rect,
                    _ => return Err(CliError::Config(format!("window {value:?}: expected hann or rect"))),
                }
            }
            "codebook" => self.codebooks = value.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            "seed" => {
                self.seed = Some(
                    value
                        .parse()
                        .map_err(|_| CliError::Config(format!("seed: bad value {value:?}")))?,
                )
            }
            "max_iters" => self.max_iters = num("max_iters")? as usize,
            "truncate_seconds" => self.truncate_seconds = Some(num("truncate_seconds")?),
            "test_mode" => {
                self.test_mode = value
                    .parse()
                    .map_err(|_| CliError::Config(format!("test_mode: expected true or false, got {value:?}")))?
            }
            other => return Err(CliError::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_has_31_points() {
        let v = DeltaSpec::DEFAULT_SWEEP.values();
        assert_eq!(v.len(), 31);
        assert_eq!(v[0], 10.0);
        assert_eq!(v[30], 25.0);
        assert_eq!(v[15], 17.5);
    }

    #[test]
    fn sparsity_forms() {
        assert_eq!(parse_sparsity("none").unwrap(), Sparsity::None);
        assert_eq!(parse_sparsity("l0:20").unwrap(), Sparsity::L0Hard(20));
        assert_eq!(parse_sparsity("L1:0.5").unwrap(), Sparsity::L1Penalty(0.5));
        assert_eq!(parse_sparsity("l2:0.95").unwrap(), Sparsity::L2Power(0.95));
        assert!(parse_sparsity("l3:1").is_err());
        assert!(parse_sparsity("l0").is_err());
    }

    #[test]
    fn config_text_and_validation() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# run\nmethod = blind-nmf\nrank=12\n\ndelta_sweep=10:12:1\ntest_mode=true\n")
            .unwrap();
        assert_eq!(cfg.method, Method::BlindNmf);
        assert_eq!(cfg.rank, Some(12));
        assert_eq!(cfg.delta.values(), vec![10.0, 11.0, 12.0]);
        assert!(cfg.validate().is_ok());
        assert!(cfg.apply_text("rank\n").is_err());
        assert!(cfg.apply_text("colour=blue\n").is_err());

        let semi = RunConfig::default();
        assert!(semi.validate().is_err());
        let blind = RunConfig {
            method: Method::Ntf,
            ..Default::default()
        };
        assert!(blind.validate().is_err());
    }
}
