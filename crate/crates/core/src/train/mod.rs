//! Pre-training, fine-tuning, label-ratio splits and metrics.

pub mod config;
pub mod finetune;
pub mod metrics;
pub mod pretrain;
pub mod split;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, TrainConfig};
pub use finetune::{evaluate, finetune_cls, finetune_seg, FinetuneOutcome, Init, Predictions};
pub use metrics::{classification_metrics, segmentation_metrics, shape_iou, MetricsReport, Task};
pub use pretrain::{pretrain, reconstruct, LogLine, PreparedSample, Pretrainer, Reconstruction, StepLosses};
pub use split::{label_ratio_split, LabelSplit};

/// Independent random stream for `(seed, purpose, index...)`.
///
/// Every random draw in training comes from a stream keyed this way, so a
/// run is reproducible from its seed and can resume at any step.
pub fn derive_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, purpose, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Purpose ids for [`derive_rng`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const FT_INIT: u64 = 4;
    pub const FT_SHUFFLE: u64 = 5;
    pub const FT_SAMPLE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const SPLIT: u64 = 8;
}
