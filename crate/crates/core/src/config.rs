//! Run configuration as plain `key = value` lines.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::training::{DataConfig, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.train.validate()?;
        self.data.validate()
    }

    /// Sets one key. Values are validated as a whole by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.decoder;
        let t = &mut self.train;
        let o = &mut t.optimizer;
        let w = &mut t.weights;
        let s = &mut self.data;
        match key {
            "model_dim" => d.model_dim = parse(key, value)?,
            "num_heads" => d.num_heads = parse(key, value)?,
            "num_groups" => d.num_groups = parse(key, value)?,
            "offset_range" => d.offset_range = parse(key, value)?,
            "num_layers" => d.num_layers = parse(key, value)?,
            "query_mode" => d.query_mode = parse(key, value)?,
            "attention" => d.attention = parse(key, value)?,
            "context_channels" => d.context_channels = parse(key, value)?,
            "context_height" => d.context_height = parse(key, value)?,
            "context_width" => d.context_width = parse(key, value)?,
            "pe_type" => d.pe_type = parse(key, value)?,
            "ffn_multiplier" => d.ffn_multiplier = parse(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => o.lr = parse(key, value)?,
            "weight_decay" => o.weight_decay = parse(key, value)?,
            "beta1" => o.beta1 = parse(key, value)?,
            "beta2" => o.beta2 = parse(key, value)?,
            "adam_eps" => o.eps = parse(key, value)?,
            "lambda_smpl" => w.smpl = parse(key, value)?,
            "lambda_joint" => w.joint = parse(key, value)?,
            "lambda_mesh" => w.mesh = parse(key, value)?,
            "num_samples" => s.num_samples = parse(key, value)?,
            "num_vertices" => s.num_vertices = parse(key, value)?,
            "template_seed" => s.template_seed = parse(key, value)?,
            "encoder_seed" => s.encoder_seed = parse(key, value)?,
            "pose_noise" => s.pose_noise = parse(key, value)?,
            "shape_noise" => s.shape_noise = parse(key, value)?,
            "camera_jitter" => s.camera_jitter = parse(key, value)?,
            "context_noise" => s.context_noise = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Overlays `text` on the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key in a fixed order; `parse(to_text())` round-trips exactly.
    pub fn to_text(&self) -> String {
        let d = &self.decoder;
        let t = &self.train;
        let s = &self.data;
        let entries: Vec<(&str, String)> = vec![
            ("model_dim", d.model_dim.to_string()),
            ("num_heads", d.num_heads.to_string()),
            ("num_groups", d.num_groups.to_string()),
            ("offset_range", d.offset_range.to_string()),
            ("num_layers", d.num_layers.to_string()),
            ("query_mode", d.query_mode.to_string()),
            ("attention", d.attention.to_string()),
            ("context_channels", d.context_channels.to_string()),
            ("context_height", d.context_height.to_string()),
            ("context_width", d.context_width.to_string()),
            ("pe_type", d.pe_type.to_string()),
            ("ffn_multiplier", d.ffn_multiplier.to_string()),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.optimizer.lr.to_string()),
            ("weight_decay", t.optimizer.weight_decay.to_string()),
            ("beta1", t.optimizer.beta1.to_string()),
            ("beta2", t.optimizer.beta2.to_string()),
            ("adam_eps", t.optimizer.eps.to_string()),
            ("lambda_smpl", t.weights.smpl.to_string()),
            ("lambda_joint", t.weights.joint.to_string()),
            ("lambda_mesh", t.weights.mesh.to_string()),
            ("num_samples", s.num_samples.to_string()),
            ("num_vertices", s.num_vertices.to_string()),
            ("template_seed", s.template_seed.to_string()),
            ("encoder_seed", s.encoder_seed.to_string()),
            ("pose_noise", s.pose_noise.to_string()),
            ("shape_noise", s.shape_noise.to_string()),
            ("camera_jitter", s.camera_jitter.to_string()),
            ("context_noise", s.context_noise.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{AttentionKind, QueryMode};

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.decoder.attention = AttentionKind::Regular;
        cfg.decoder.query_mode = QueryMode::Single;
        cfg.train.optimizer.lr = 3.3e-4;
        cfg.data.context_noise = 0.0;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse("# small\nnum_layers = 2  # two\n\nlr=0.001\n").unwrap();
        assert_eq!(cfg.decoder.num_layers, 2);
        assert_eq!(cfg.train.optimizer.lr, 1e-3);
        assert_eq!(cfg.decoder.model_dim, DecoderConfig::default().model_dim);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("num_heads"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("num_heads = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("num_heads = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("lambda_mesh = 0"), Err(Error::Config(_))));
    }
}
