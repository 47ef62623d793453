//! The experiment config file: TOML, every key optional, unknown keys rejected.

use serde::{Deserialize, Serialize};
use std::path::Path;

/// Bad config or input; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Signal length, even.
    pub p: usize,
    /// Number of distinct signals.
    pub k: usize,
    /// Noise standard deviation per sample entry.
    pub sigma: f64,
    /// Number of observations.
    pub n: usize,
    /// Skip sampling and use the exact third moment.
    pub exact_moments: bool,
    /// Number of list-recovery trials L.
    pub trials: usize,
    /// Target accuracy: a run succeeds if some candidate reaches orbit correlation 1 - epsilon for every signal.
    pub epsilon: f64,
    pub seed: u64,
    /// Byte cap for the cached ring table.
    pub mem_cap: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p: 8,
            k: 1,
            sigma: 0.5,
            n: 10_000,
            exact_moments: false,
            trials: 100,
            epsilon: 0.1,
            seed: 0,
            mem_cap: 1 << 30,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if self.p < 2 || self.p % 2 == 1 {
            return bad(format!("p must be even and at least 2, got {}", self.p));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and nonnegative, got {}", self.sigma));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !self.exact_moments && self.n == 0 {
            return bad("n must be positive unless exact_moments is set".into());
        }
        Ok(())
    }
}

/// Byte counts with an optional K, M or G suffix (powers of 1024).
pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, shift) = match s.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&s[..s.len() - 1], 10),
        Some('M') => (&s[..s.len() - 1], 20),
        Some('G') => (&s[..s.len() - 1], 30),
        _ => (s, 0),
    };
    let n: u64 = num.trim().parse().map_err(|e| format!("bad byte count {s:?}: {e}"))?;
    n.checked_mul(1 << shift).ok_or_else(|| format!("byte count {s:?} overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("p = 8\nsigmma = 0.1\n").is_err());
        let c: ExperimentConfig = toml::from_str("p = 12\nk = 2\n").unwrap();
        assert_eq!((c.p, c.k, c.trials), (12, 2, 100));
    }

    #[test]
    fn validation() {
        let odd = ExperimentConfig { p: 7, ..Default::default() };
        assert!(odd.validate().is_err());
        let none = ExperimentConfig { trials: 0, ..Default::default() };
        assert!(none.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn byte_suffixes() {
        assert_eq!(parse_bytes("512").unwrap(), 512);
        assert_eq!(parse_bytes("2k").unwrap(), 2048);
        assert_eq!(parse_bytes("1G").unwrap(), 1 << 30);
        assert!(parse_bytes("lots").is_err());
    }
}
