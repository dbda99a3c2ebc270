use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::{PoolConfig, PoolingMode};
use crate::error::{Error, Result};
use crate::gcn::Readout;
use crate::tube::{MICRO_TUBE_GAP, TUBE_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Frames outside every activity carry an extra background class.
    Present,
    /// Activities tile the video.
    Absent,
}

/// Model and training configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub snippet_len: usize,
    pub tube_len: usize,
    pub delta: usize,
    pub k: usize,
    pub n_s: usize,
    pub gamma: f64,
    pub pooling: PoolingMode,
    pub shared_offsets: bool,
    /// Width of the hidden layer of the offset predictor.
    pub offset_hidden: usize,
    pub d_node: usize,
    pub d_h: usize,
    pub d_out: usize,
    pub kappa: usize,
    pub readout: Readout,
    pub background: Background,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Feature channels of the rendered volumes.
    pub channels: usize,
    /// Side of the square feature grid.
    pub feature_size: usize,
    /// Half-width of the uniform noise added to rendered features.
    pub feature_noise: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            snippet_len: TUBE_LEN,
            tube_len: TUBE_LEN,
            delta: MICRO_TUBE_GAP,
            k: 7,
            n_s: 2,
            gamma: 0.1,
            pooling: PoolingMode::Deformable,
            shared_offsets: false,
            offset_hidden: 64,
            d_node: 256,
            d_h: 512,
            d_out: 2048,
            kappa: 2,
            readout: Readout::Final,
            background: Background::Present,
            lr: 0.01,
            momentum: 0.9,
            epochs: 50,
            batch_size: 8,
            seed: 0,
            channels: 64,
            feature_size: 38,
            feature_noise: 0.02,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fixed = [
            ("snippet_len", self.snippet_len, TUBE_LEN),
            ("tube_len", self.tube_len, TUBE_LEN),
            ("delta", self.delta, MICRO_TUBE_GAP),
        ];
        for (name, got, want) in fixed {
            if got != want {
                return Err(Error::Config(format!("{name} = {got} is unsupported (only {want})")));
            }
        }
        let positive = [
            ("k", self.k),
            ("n_s", self.n_s),
            ("offset_hidden", self.offset_hidden),
            ("d_node", self.d_node),
            ("d_h", self.d_h),
            ("d_out", self.d_out),
            ("batch_size", self.batch_size),
            ("channels", self.channels),
            ("feature_size", self.feature_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Config(format!(
                "feature_noise must be non-negative, got {}",
                self.feature_noise
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            bins: self.k,
            samples: self.n_s,
            gamma: self.gamma,
            shared_offsets: self.shared_offsets,
        }
    }

    /// Width of the graph representation fed to the classifier.
    pub fn readout_dim(&self) -> usize {
        match self.readout {
            Readout::Final => self.d_out,
            Readout::Concat => 2 * self.d_h + self.d_out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.d_out, 2048);
        assert_eq!(cfg.kappa, 2);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = Config::from_toml_str("pooling = \"modulated\"\nreadout = \"concat\"\nepochs = 3\n").unwrap();
        assert_eq!(cfg.pooling, PoolingMode::Modulated);
        assert_eq!(cfg.readout_dim(), 2 * 512 + 2048);
        assert_eq!(cfg.k, 7);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml_str("snippet_len = 16").is_err());
        assert!(Config::from_toml_str("momentum = 1.0").is_err());
        assert!(Config::from_toml_str("lr = 0").is_err());
        assert!(Config::from_toml_str("bogus = 1").is_err());
        assert!(Config::from_toml_str("pooling = \"max\"").is_err());
    }
}
