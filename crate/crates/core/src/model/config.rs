use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub conv: Vec<ConvBlock>,
    pub transformer: TransformerConfig,
}

impl EncoderConfig {
    /// Three conv blocks (R = 64, S = 16) and a two-layer, 64-wide transformer.
    pub fn toy() -> Self {
        Self {
            conv: vec![ConvBlock::new(32, 12, 4), ConvBlock::new(32, 4, 2), ConvBlock::new(32, 6, 2)],
            transformer: TransformerConfig {
                layers: 2,
                d_model: 64,
                d_mlp: 128,
                heads: 2,
            },
        }
    }

    /// Smaller than [`EncoderConfig::toy`]: one 32-wide layer, for fast tests.
    pub fn tiny() -> Self {
        Self {
            conv: vec![ConvBlock::new(16, 12, 4), ConvBlock::new(16, 4, 2), ConvBlock::new(16, 6, 2)],
            transformer: TransformerConfig {
                layers: 1,
                d_model: 32,
                d_mlp: 64,
                heads: 2,
            },
        }
    }

    /// Full-size shape: seven 512-channel blocks (R = 400, S = 320) and twelve
    /// 768-wide layers.
    pub fn base() -> Self {
        let mut conv = vec![ConvBlock::new(512, 10, 5)];
        conv.extend(std::iter::repeat(ConvBlock::new(512, 3, 2)).take(4));
        conv.extend(std::iter::repeat(ConvBlock::new(512, 2, 2)).take(2));
        Self {
            conv,
            transformer: TransformerConfig {
                layers: 12,
                d_model: 768,
                d_mlp: 3072,
                heads: 8,
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            "base" => Ok(Self::base()),
            other => Err(Error::Config(format!("unknown encoder preset {other:?}"))),
        }
    }

    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(|b| b.stride).product()
    }

    pub fn receptive_field(&self) -> usize {
        let mut r = 1;
        let mut jump = 1;
        for b in &self.conv {
            r += (b.kernel - 1) * jump;
            jump *= b.stride;
        }
        r
    }

    /// `floor((len − R)/S) + 1`, or `None` when `len < R`.
    pub fn frames(&self, len: usize) -> Option<usize> {
        let r = self.receptive_field();
        (len >= r).then(|| (len - r) / self.total_stride() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("encoder needs at least one conv block".into()));
        }
        if self.conv.iter().any(|b| b.channels == 0 || b.kernel == 0 || b.stride == 0) {
            return Err(Error::Config("conv channels, kernels and strides must be positive".into()));
        }
        let t = &self.transformer;
        if t.d_model == 0 || t.heads == 0 || t.d_mlp == 0 || t.d_model % t.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                t.d_model, t.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            hidden_size: 64,
            n_classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    /// One encoder per input channel, fused in channel order.
    pub n_inputs: usize,
    #[serde(default)]
    pub freeze_encoders: bool,
    #[serde(default)]
    pub lora: Option<LoraConfig>,
}

impl ModelConfig {
    pub fn toy(n_inputs: usize) -> Self {
        Self {
            encoder: EncoderConfig::toy(),
            head: HeadConfig::default(),
            n_inputs,
            freeze_encoders: false,
            lora: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.n_inputs == 0 {
            return Err(Error::Config("model needs at least one input".into()));
        }
        if self.head.hidden_layers == 0 || self.head.hidden_size == 0 || self.head.n_classes < 2 {
            return Err(Error::Config("head needs a hidden layer and two classes".into()));
        }
        if let Some(l) = self.lora {
            if l.rank == 0 {
                return Err(Error::Argument("LoRA rank must be at least 1".into()));
            }
        }
        Ok(())
    }
}
