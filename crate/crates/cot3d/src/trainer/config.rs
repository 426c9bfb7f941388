//! Training configuration with stage defaults and a flat key=value file
//! representation.

use std::fmt;
use std::str::FromStr;

use crate::encoders::ModelConfig;
use crate::error::{CotError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfreezePolicy {
    None,
    TopBlock,
    All,
}

impl UnfreezePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnfreezePolicy::None => "none",
            UnfreezePolicy::TopBlock => "top_block",
            UnfreezePolicy::All => "all",
        }
    }
}

impl FromStr for UnfreezePolicy {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(UnfreezePolicy::None),
            "top_block" => Ok(UnfreezePolicy::TopBlock),
            "all" => Ok(UnfreezePolicy::All),
            other => Err(CotError::Config(format!("unknown unfreeze_policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationCondition {
    NoCot,
    Unmarked,
    Tagged,
}

impl AnnotationCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotationCondition::NoCot => "no_cot",
            AnnotationCondition::Unmarked => "unmarked",
            AnnotationCondition::Tagged => "tagged",
        }
    }
}

impl FromStr for AnnotationCondition {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_cot" | "none" => Ok(AnnotationCondition::NoCot),
            "unmarked" => Ok(AnnotationCondition::Unmarked),
            "tagged" => Ok(AnnotationCondition::Tagged),
            other => Err(CotError::Config(format!(
                "unknown annotation_condition `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPreset {
    LrmLike,
    LlmLike,
}

impl ModelPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelPreset::LrmLike => "lrm_like",
            ModelPreset::LlmLike => "llm_like",
        }
    }

    /// Stage-2 default unfreezing for the preset: reasoning-specialized
    /// models adapt fully, general models adapt only the top block.
    pub fn default_policy(&self) -> UnfreezePolicy {
        match self {
            ModelPreset::LrmLike => UnfreezePolicy::All,
            ModelPreset::LlmLike => UnfreezePolicy::TopBlock,
        }
    }
}

impl FromStr for ModelPreset {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrm_like" => Ok(ModelPreset::LrmLike),
            "llm_like" => Ok(ModelPreset::LlmLike),
            other => Err(CotError::Config(format!("unknown model_preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub grad_clip: f64,
    pub unfreeze_policy: UnfreezePolicy,
    pub seed: u64,
    pub annotation_condition: AnnotationCondition,
    /// Optional stage-2 mixture over (tagged, unmarked, no_cot); when set
    /// it overrides annotation_condition with a per-sample seeded draw.
    pub condition_mix: Option<(f64, f64, f64)>,
    pub model_preset: ModelPreset,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn stage1_defaults() -> Self {
        Self {
            stage: 1,
            learning_rate: 2e-3,
            batch_size: 256,
            epochs: 1,
            warmup_ratio: 0.03,
            grad_clip: 1.0,
            unfreeze_policy: UnfreezePolicy::None,
            seed: 42,
            annotation_condition: AnnotationCondition::Tagged,
            condition_mix: None,
            model_preset: ModelPreset::LrmLike,
            model: ModelConfig::default(),
        }
    }

    pub fn stage2_defaults(preset: ModelPreset) -> Self {
        Self {
            stage: 2,
            learning_rate: 2e-5,
            batch_size: 128,
            unfreeze_policy: preset.default_policy(),
            model_preset: preset,
            ..Self::stage1_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(CotError::Config(format!("stage {} must be 1 or 2", self.stage)));
        }
        if self.stage == 1 && self.unfreeze_policy != UnfreezePolicy::None {
            return Err(CotError::Config(
                "stage 1 requires unfreeze_policy=none".into(),
            ));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(CotError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CotError::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(CotError::Config(format!(
                "warmup_ratio {} must lie in [0, 1]",
                self.warmup_ratio
            )));
        }
        if self.grad_clip <= 0.0 {
            return Err(CotError::Config(format!(
                "grad_clip {} must be positive",
                self.grad_clip
            )));
        }
        if let Some((t, u, n)) = self.condition_mix {
            let sum = t + u + n;
            if t < 0.0 || u < 0.0 || n < 0.0 || (sum - 1.0).abs() > 1e-9 {
                return Err(CotError::Config(format!(
                    "condition_mix ({t}, {u}, {n}) must be non-negative and sum to 1"
                )));
            }
        }
        Ok(())
    }

    /// Flat, deterministic key=value form (also the config-file format).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: fmt::Arguments| out.push_str(&format!("{k}={v}\n"));
        kv("stage", format_args!("{}", self.stage));
        kv("learning_rate", format_args!("{:e}", self.learning_rate));
        kv("batch_size", format_args!("{}", self.batch_size));
        kv("epochs", format_args!("{}", self.epochs));
        kv("warmup_ratio", format_args!("{}", self.warmup_ratio));
        kv("grad_clip", format_args!("{}", self.grad_clip));
        kv("unfreeze_policy", format_args!("{}", self.unfreeze_policy.as_str()));
        kv("seed", format_args!("{}", self.seed));
        kv(
            "annotation_condition",
            format_args!("{}", self.annotation_condition.as_str()),
        );
        if let Some((t, u, n)) = self.condition_mix {
            kv("condition_mix", format_args!("{t},{u},{n}"));
        }
        kv("model_preset", format_args!("{}", self.model_preset.as_str()));
        kv("model.keypoints", format_args!("{}", self.model.keypoints));
        kv("model.neighbors", format_args!("{}", self.model.neighbors));
        kv("model.local_dim", format_args!("{}", self.model.local_dim));
        kv("model.global_dim", format_args!("{}", self.model.global_dim));
        kv("model.embed_dim", format_args!("{}", self.model.embed_dim));
        kv("model.shared_dim", format_args!("{}", self.model.shared_dim));
        kv("model.n_freq", format_args!("{}", self.model.n_freq));
        kv("model.max_len", format_args!("{}", self.model.max_len));
        kv("model.min_freq", format_args!("{}", self.model.min_freq));
        out
    }

    /// Parse the key=value form; keys may be omitted (stage defaults apply)
    /// but unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        // two passes: stage first so the right defaults seed the rest
        let mut stage = 1u8;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("stage=") {
                stage = v
                    .trim()
                    .parse()
                    .map_err(|_| CotError::Config(format!("invalid stage `{v}`")))?;
            }
        }
        let mut cfg = if stage == 2 {
            Self::stage2_defaults(ModelPreset::LrmLike)
        } else {
            Self::stage1_defaults()
        };
        let mut preset_policy_set = false;
        let mut explicit_policy = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CotError::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| CotError::Parse {
                line: i + 1,
                msg: format!("invalid {what} `{value}`"),
            };
            match key {
                "stage" => {}
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "warmup_ratio" => cfg.warmup_ratio = value.parse().map_err(|_| bad("warmup_ratio"))?,
                "grad_clip" => cfg.grad_clip = value.parse().map_err(|_| bad("grad_clip"))?,
                "unfreeze_policy" => explicit_policy = Some(value.parse()?),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "annotation_condition" => cfg.annotation_condition = value.parse()?,
                "condition_mix" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|p| p.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("condition_mix"))?;
                    if parts.len() != 3 {
                        return Err(bad("condition_mix"));
                    }
                    cfg.condition_mix = Some((parts[0], parts[1], parts[2]));
                }
                "model_preset" => {
                    cfg.model_preset = value.parse()?;
                    preset_policy_set = true;
                }
                "model.keypoints" => cfg.model.keypoints = value.parse().map_err(|_| bad("model.keypoints"))?,
                "model.neighbors" => cfg.model.neighbors = value.parse().map_err(|_| bad("model.neighbors"))?,
                "model.local_dim" => cfg.model.local_dim = value.parse().map_err(|_| bad("model.local_dim"))?,
                "model.global_dim" => cfg.model.global_dim = value.parse().map_err(|_| bad("model.global_dim"))?,
                "model.embed_dim" => cfg.model.embed_dim = value.parse().map_err(|_| bad("model.embed_dim"))?,
                "model.shared_dim" => cfg.model.shared_dim = value.parse().map_err(|_| bad("model.shared_dim"))?,
                "model.n_freq" => cfg.model.n_freq = value.parse().map_err(|_| bad("model.n_freq"))?,
                "model.max_len" => cfg.model.max_len = value.parse().map_err(|_| bad("model.max_len"))?,
                "model.min_freq" => cfg.model.min_freq = value.parse().map_err(|_| bad("model.min_freq"))?,
                other => {
                    return Err(CotError::Parse {
                        line: i + 1,
                        msg: format!("unknown config key `{other}`"),
                    })
                }
            }
        }
        if cfg.stage == 2 {
            cfg.unfreeze_policy = explicit_policy
                .unwrap_or_else(|| cfg.model_preset.default_policy());
            let _ = preset_policy_set;
        } else if let Some(p) = explicit_policy {
            cfg.unfreeze_policy = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
