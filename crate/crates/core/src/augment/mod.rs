//! Offline and online augmentation of preprocessed recordings.

mod config;
mod noise;
mod ops;
mod pipeline;

pub use config::{AugmentConfig, OnlineConfig, Probabilities, Range};
pub use noise::{NoiseBank, NoiseKind};
pub use ops::{
    add_clinical_noise, add_white_noise, amplitude_modulation, baseline_wander, baseline_wander_clip,
    clinical_kinds, hpss, parametric_eq, spectro_mask, stretch_fixed_len, stretched_len, tile_with_crossfade,
    time_stretch,
};
pub use pipeline::{
    apply_online, apply_plan, augment_multi, augment_single, draw_online, draw_plan, make_augmented_dataset,
    online_augment, AugOp, AugStep, AugmentCounts, Augmented, OnlinePlan,
};
