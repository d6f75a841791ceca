use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Longest accepted row, `[CLS]` included.
    pub max_positions: usize,
    pub dropout: f64,
    pub projection_dim: usize,
    /// Standard deviation of the normal weight initialisation.
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            ffn_dim: 512,
            vocab_size: 0,
            max_positions: 66,
            dropout: 0.1,
            projection_dim: 128,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    /// Two layers, two heads, hidden size 16; used for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 16,
            ffn_dim: 32,
            vocab_size,
            max_positions: 32,
            projection_dim: 8,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("projection_dim", self.projection_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.init_std > 0.0 && self.layer_norm_eps > 0.0) {
            return Err(Error::Config("init_std and layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
