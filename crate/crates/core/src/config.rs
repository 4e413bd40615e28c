//! Run configuration: architecture, ablation switches and training protocol.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Published protocol values used as defaults.
pub mod defaults {
    pub const FEATURE_DIM: usize = 512;
    pub const REPR_DIM: usize = 128;
    pub const LATENT_DIM: usize = 128;
    pub const ENCODER_HIDDEN: [usize; 2] = [512, 256];
    pub const DECODER_HIDDEN: [usize; 3] = [256, 128, 64];
    pub const ATTENTION_HEADS: usize = 2;
    pub const ATTENTION_HEAD_DIM: usize = 64;
    pub const STD_FLOOR: f64 = 0.01;

    pub const SEQ_LEN_MIN: usize = 35;
    pub const SEQ_LEN_MAX: usize = 70;
    pub const MIN_CONTEXT: usize = 3;
    pub const TEST_SEQ_LEN: usize = 70;
    pub const NUM_CONTEXT_EVAL: usize = 40;
    pub const MIX_PROB: f64 = 0.5;
    pub const EPOCHS: usize = 25;
    pub const ITERS_PER_EPOCH: usize = 1000;
    pub const LAMBDA_KL: f64 = 1.0;
    pub const LAMBDA_REG: f64 = 1.0;
    pub const ADAM_BETA1: f64 = 0.9;
    pub const ADAM_BETA2: f64 = 0.999;
    pub const ADAM_EPS: f64 = 1e-8;

    pub const VA_BATCH_SIZE: usize = 16;
    pub const VA_LR: f64 = 0.00025;
    pub const VA_WEIGHT_DECAY: f64 = 0.0001;
    pub const AU_BATCH_SIZE: usize = 6;
    pub const AU_LR: f64 = 0.0001;
    pub const AU_WEIGHT_DECAY: f64 = 0.0005;

    pub const SEED: u64 = 7;
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::contract(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(Task {
    ValenceArousal => "va",
    ActionUnits => "au",
});

named_enum!(
    /// Model ablations.
    ModelVariant {
        Latent => "latent",
        Deterministic => "deterministic",
        LatentDet => "latent+det",
        LatentDetAtt => "latent+det+att",
        NoLabels => "no_labels",
    }
);

named_enum!(LossVariant {
    Nll => "nll",
    NllKl => "nll+kl",
    NllReg => "nll+reg",
    NllRegKl => "nll+reg+kl",
});

named_enum!(ContextMode {
    Lowest => "lowest",
    Highest => "highest",
    Random => "random",
});

named_enum!(
    /// How per-frame predictive moments are pooled in the output regulariser.
    RegPooling {
        Mean => "mean",
        Sum => "sum",
    }
);

impl ContextMode {
    /// Whether the mode ranks frames by `‖σ_c‖`, which needs a latent distribution.
    pub fn ranks_by_uncertainty(self) -> bool {
        !matches!(self, ContextMode::Random)
    }
}

impl ModelVariant {
    pub fn has_latent_sample(self) -> bool {
        !matches!(self, ModelVariant::Deterministic)
    }

    pub fn has_det_path(self) -> bool {
        matches!(self, ModelVariant::LatentDet | ModelVariant::LatentDetAtt)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelVariant::LatentDetAtt)
    }

    pub fn uses_labels(self) -> bool {
        !matches!(self, ModelVariant::NoLabels)
    }
}

impl LossVariant {
    pub fn uses_kl(self) -> bool {
        matches!(self, LossVariant::NllKl | LossVariant::NllRegKl)
    }

    pub fn uses_reg(self) -> bool {
        matches!(self, LossVariant::NllReg | LossVariant::NllRegKl)
    }
}

impl Task {
    pub fn default_label_dim(self) -> usize {
        match self {
            Task::ValenceArousal => 2,
            Task::ActionUnits => 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub label_dim: usize,
    /// Width the labels are projected to before concatenation with the features.
    pub label_proj_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub attention_heads: usize,
    pub attention_head_dim: usize,
    pub std_floor: f64,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, label_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            label_dim,
            label_proj_dim: feature_dim,
            encoder_hidden: defaults::ENCODER_HIDDEN.to_vec(),
            repr_dim: defaults::REPR_DIM,
            latent_dim: defaults::LATENT_DIM,
            decoder_hidden: defaults::DECODER_HIDDEN.to_vec(),
            attention_heads: defaults::ATTENTION_HEADS,
            attention_head_dim: defaults::ATTENTION_HEAD_DIM,
            std_floor: defaults::STD_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("label_dim", self.label_dim),
            ("label_proj_dim", self.label_proj_dim),
            ("repr_dim", self.repr_dim),
            ("latent_dim", self.latent_dim),
            ("attention_heads", self.attention_heads),
            ("attention_head_dim", self.attention_head_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        if self.encoder_hidden.len() != 2 || self.encoder_hidden.contains(&0) {
            return Err(Error::contract("encoder_hidden needs two positive widths"));
        }
        if self.decoder_hidden.len() != 3 || self.decoder_hidden.contains(&0) {
            return Err(Error::contract("decoder_hidden needs three positive widths"));
        }
        if self.attention_heads == 0 || !self.repr_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::contract(format!(
                "repr_dim {} is not divisible by attention_heads {}",
                self.repr_dim, self.attention_heads
            )));
        }
        if !(self.std_floor >= 0.0) {
            return Err(Error::contract("std_floor must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_reg: f64,
    pub variant: LossVariant,
    pub reg_pooling: RegPooling,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_kl: defaults::LAMBDA_KL,
            lambda_reg: defaults::LAMBDA_REG,
            variant: LossVariant::NllRegKl,
            reg_pooling: RegPooling::Mean,
        }
    }
}

impl LossWeights {
    /// Effective (nll, kl, reg) coefficients under the active variant.
    pub fn coefficients(&self) -> [f64; 3] {
        [
            1.0,
            if self.variant.uses_kl() { self.lambda_kl } else { 0.0 },
            if self.variant.uses_reg() { self.lambda_reg } else { 0.0 },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelConfig,
    pub variant: ModelVariant,
    pub loss: LossWeights,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub min_context: usize,
    pub test_seq_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub mix_prob: f64,
    pub num_context_eval: usize,
    pub eval_context_mode: ContextMode,
    pub seed: u64,
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        let (batch_size, lr, weight_decay) = match task {
            Task::ValenceArousal => (
                defaults::VA_BATCH_SIZE,
                defaults::VA_LR,
                defaults::VA_WEIGHT_DECAY,
            ),
            Task::ActionUnits => (
                defaults::AU_BATCH_SIZE,
                defaults::AU_LR,
                defaults::AU_WEIGHT_DECAY,
            ),
        };
        RunConfig {
            task,
            model: ModelConfig::new(defaults::FEATURE_DIM, task.default_label_dim()),
            variant: ModelVariant::Latent,
            loss: LossWeights::default(),
            seq_len_min: defaults::SEQ_LEN_MIN,
            seq_len_max: defaults::SEQ_LEN_MAX,
            min_context: defaults::MIN_CONTEXT,
            test_seq_len: defaults::TEST_SEQ_LEN,
            batch_size,
            lr,
            weight_decay,
            adam_beta1: defaults::ADAM_BETA1,
            adam_beta2: defaults::ADAM_BETA2,
            adam_eps: defaults::ADAM_EPS,
            epochs: defaults::EPOCHS,
            iters_per_epoch: defaults::ITERS_PER_EPOCH,
            mix_prob: defaults::MIX_PROB,
            num_context_eval: defaults::NUM_CONTEXT_EVAL,
            eval_context_mode: ContextMode::Lowest,
            seed: defaults::SEED,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.seq_len_min == 0 || self.seq_len_min > self.seq_len_max {
            return Err(Error::contract(format!(
                "sequence length range {}..={} is empty",
                self.seq_len_min, self.seq_len_max
            )));
        }
        if self.min_context == 0 || self.min_context > self.seq_len_min {
            return Err(Error::contract(format!(
                "min_context {} must lie in 1..={}",
                self.min_context, self.seq_len_min
            )));
        }
        if self.test_seq_len == 0 || self.num_context_eval == 0 {
            return Err(Error::contract("evaluation window and context count must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.iters_per_epoch == 0 {
            return Err(Error::contract("batch size, epochs and iterations must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::contract("learning rate must be positive and weight decay non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(Error::contract("mix probability must lie in [0, 1]"));
        }
        if !(self.loss.lambda_kl >= 0.0) || !(self.loss.lambda_reg >= 0.0) {
            return Err(Error::contract("loss weights must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::contract("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}
