use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of SMPL query tokens in the multi-query decoder: 24 pose + 1 shape.
pub const NUM_SMPL_QUERIES: usize = 25;
pub const NUM_POSE_QUERIES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeType {
    None,
    Absolute,
    Relative,
}

/// Cross-attention flavour: sampled at learned offsets, or over the fixed grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Deformable,
    Regular,
}

/// One token per SMPL parameter group, or one token emitting everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Multi,
    Single,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::config(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(PeType { "none" => PeType::None, "absolute" => PeType::Absolute, "relative" => PeType::Relative });
keyword_enum!(AttentionKind { "deformable" => AttentionKind::Deformable, "regular" => AttentionKind::Regular });
keyword_enum!(QueryMode { "multi" => QueryMode::Multi, "single" => QueryMode::Single });

/// Decoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_groups: usize,
    /// Offset bound in units of grid spacing.
    pub offset_range: f64,
    pub num_layers: usize,
    pub query_mode: QueryMode,
    pub attention: AttentionKind,
    pub context_channels: usize,
    pub context_height: usize,
    pub context_width: usize,
    pub pe_type: PeType,
    pub ffn_multiplier: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            num_heads: 8,
            num_groups: 4,
            offset_range: 1.0,
            num_layers: 6,
            query_mode: QueryMode::Multi,
            attention: AttentionKind::Deformable,
            context_channels: 32,
            context_height: 8,
            context_width: 8,
            pe_type: PeType::Relative,
            ffn_multiplier: 4,
        }
    }
}

impl DecoderConfig {
    pub fn num_queries(&self) -> usize {
        match self.query_mode {
            QueryMode::Multi => NUM_SMPL_QUERIES,
            QueryMode::Single => 1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn heads_per_group(&self) -> usize {
        self.num_heads / self.num_groups
    }

    pub fn group_channels(&self) -> usize {
        self.context_channels / self.num_groups
    }

    pub fn grid_len(&self) -> usize {
        self.context_height * self.context_width
    }

    /// Context tensor shape for a batch.
    pub fn context_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.context_channels, self.context_height, self.context_width]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("num_groups", self.num_groups),
            ("context_channels", self.context_channels),
            ("context_height", self.context_height),
            ("context_width", self.context_width),
            ("ffn_multiplier", self.ffn_multiplier),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.num_heads % self.num_groups != 0 {
            return Err(Error::config(format!(
                "num_heads {} not divisible by num_groups {}",
                self.num_heads, self.num_groups
            )));
        }
        if self.context_channels % self.num_groups != 0 {
            return Err(Error::config(format!(
                "context_channels {} not divisible by num_groups {}",
                self.context_channels, self.num_groups
            )));
        }
        if !(self.offset_range > 0.0 && self.offset_range.is_finite()) {
            return Err(Error::config(format!("offset_range must be positive, got {}", self.offset_range)));
        }
        Ok(())
    }
}
