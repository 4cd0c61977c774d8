use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{AlignMode, AlignScale, FusionConfig, SyntaxMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    Sgd,
    Adam,
}

/// Every knob of a training run. Loaded from a flat TOML file; each key can
/// be overridden individually with [`TrainConfig::set`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub d_w: usize,
    pub d_v: usize,
    /// Hidden width of the alignment and influence projections.
    pub d: usize,
    /// Width of the answer-head projections.
    pub d_o: usize,
    /// Number of stacked fusion blocks.
    pub blocks: usize,
    pub align_mode: AlignMode,
    pub syntax_mode: SyntaxMode,
    pub ot_iters: usize,
    pub align_scale: AlignScale,
    pub align_temperature: f64,
    pub use_frames: bool,
    pub use_clips: bool,
    pub context_encoder: bool,
    pub tied_projections: bool,
    pub ln_eps: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty `λ‖θ‖²` added to every task loss.
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            d_w: 300,
            d_v: 2048,
            d: 256,
            d_o: 256,
            blocks: 1,
            align_mode: AlignMode::Ot,
            syntax_mode: SyntaxMode::Hypergraph,
            ot_iters: crate::otalign::DEFAULT_ITERS,
            align_scale: AlignScale::None,
            align_temperature: 1.0,
            use_frames: true,
            use_clips: true,
            context_encoder: false,
            tied_projections: false,
            ln_eps: 1e-5,
            optimizer: OptimizerKind::Sgd,
            lr: 0.01,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: 0.0,
            epochs: 10,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    /// Overrides one key from its textual value. Bare words are accepted for
    /// string-valued keys, so `align_mode=dot` works without quotes.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("flat config serialises");
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        table.insert(key.to_string(), value);
        let next: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}={raw}: {}", e.message())))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Applies `SCAN_SEED` when present.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("SCAN_SEED") {
            self.set("seed", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_w", self.d_w),
            ("d_v", self.d_v),
            ("d", self.d),
            ("d_o", self.d_o),
            ("blocks", self.blocks),
            ("ot_iters", self.ot_iters),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let finite_pos = [
            ("lr", self.lr),
            ("align_temperature", self.align_temperature),
            ("ln_eps", self.ln_eps),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in finite_pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("grad_clip", self.grad_clip)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            align_mode: self.align_mode,
            syntax_mode: self.syntax_mode,
            ot_iters: self.ot_iters,
            align_scale: self.align_scale,
            align_temperature: self.align_temperature,
            ln_eps: self.ln_eps,
            use_frames: self.use_frames,
            use_clips: self.use_clips,
        }
    }
}
