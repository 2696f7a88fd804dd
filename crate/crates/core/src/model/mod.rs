//! Per-channel waveform encoders, the fused classification head, LoRA
//! adapters and the SVM alternative head.

mod classifier;
mod config;
mod encoder;
mod layers;
mod svm;

pub use classifier::{Classifier, Forward, Prediction, SchedulePosition, MODEL_CHECKPOINT_VERSION};
pub use config::{ConvBlock, EncoderConfig, HeadConfig, LoraConfig, ModelConfig, TransformerConfig};
pub use encoder::{Encoded, Encoder};
pub use layers::{Linear, LoraIds, Norm};
pub use svm::{scale_gamma, svm_fit, Gamma, SvmConfig, SvmHead};
