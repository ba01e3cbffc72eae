//! Architecture hyperparameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Encoder/decoder/classifier dimensions and dropout rates.
///
/// `default()` is the full-size architecture; [`ModelConfig::desk`] is a
/// reduced preset that trains in minutes on a laptop CPU and is the default
/// for training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub encoder_heads: usize,
    pub head_size: usize,
    pub conv_hidden: (usize, usize),
    pub conv_kernel: usize,
    pub decoder_blocks: usize,
    pub decoder_heads: usize,
    pub mel_dim: usize,
    pub predictor_layers: usize,
    pub predictor_kernel: usize,
    pub predictor_hidden: usize,
    pub classifier_hidden: (usize, usize),
    pub classifier_kernel: usize,
    pub classifier_classes: usize,
    pub dropout_attn: f64,
    pub dropout_predictor: f64,
    pub dropout_rest: f64,
    pub phoneme_vocab: usize,
    pub pitch_vocab: usize,
    /// Note-duration embedding: 10 ms buckets covering 0..=5.11 s.
    pub duration_buckets: usize,
    pub duration_bucket_seconds: f64,
    /// Upper clamp when converting predicted log-durations to frames.
    pub max_frames_per_phoneme: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            encoder_blocks: 3,
            encoder_heads: 2,
            head_size: 16,
            conv_hidden: (1024, 512),
            conv_kernel: 3,
            decoder_blocks: 4,
            decoder_heads: 4,
            mel_dim: 80,
            predictor_layers: 2,
            predictor_kernel: 3,
            predictor_hidden: 256,
            classifier_hidden: (128, 128),
            classifier_kernel: 3,
            classifier_classes: 84,
            dropout_attn: 0.1,
            dropout_predictor: 0.5,
            dropout_rest: 0.2,
            phoneme_vocab: 60,
            pitch_vocab: 85,
            duration_buckets: 512,
            duration_bucket_seconds: 0.01,
            max_frames_per_phoneme: 512,
        }
    }
}

impl ModelConfig {
    /// Small preset for desk-scale training and ablations.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 64,
            encoder_blocks: 2,
            encoder_heads: 2,
            head_size: 16,
            conv_hidden: (256, 128),
            conv_kernel: 3,
            decoder_blocks: 2,
            decoder_heads: 2,
            predictor_hidden: 128,
            ..ModelConfig::default()
        }
    }

    /// Tiny preset for gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 8,
            encoder_blocks: 1,
            encoder_heads: 2,
            head_size: 4,
            conv_hidden: (12, 10),
            conv_kernel: 3,
            decoder_blocks: 1,
            decoder_heads: 2,
            mel_dim: 6,
            predictor_hidden: 7,
            classifier_hidden: (9, 9),
            phoneme_vocab: 12,
            pitch_vocab: 85,
            duration_buckets: 16,
            duration_bucket_seconds: 0.32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("encoder_blocks", self.encoder_blocks),
            ("encoder_heads", self.encoder_heads),
            ("head_size", self.head_size),
            ("conv_hidden.0", self.conv_hidden.0),
            ("conv_hidden.1", self.conv_hidden.1),
            ("conv_kernel", self.conv_kernel),
            ("decoder_blocks", self.decoder_blocks),
            ("decoder_heads", self.decoder_heads),
            ("mel_dim", self.mel_dim),
            ("predictor_kernel", self.predictor_kernel),
            ("predictor_hidden", self.predictor_hidden),
            ("classifier_kernel", self.classifier_kernel),
            ("classifier_classes", self.classifier_classes),
            ("phoneme_vocab", self.phoneme_vocab),
            ("pitch_vocab", self.pitch_vocab),
            ("duration_buckets", self.duration_buckets),
            ("max_frames_per_phoneme", self.max_frames_per_phoneme),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::domain(format!("model config field {name} must be positive")));
            }
        }
        if self.predictor_layers != 2 {
            return Err(Error::domain("length predictor is a 2-layer conv stack"));
        }
        for (name, v) in [
            ("dropout_attn", self.dropout_attn),
            ("dropout_predictor", self.dropout_predictor),
            ("dropout_rest", self.dropout_rest),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::domain(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(self.duration_bucket_seconds > 0.0) {
            return Err(Error::domain("duration bucket width must be positive"));
        }
        if self.pitch_vocab <= self.classifier_classes {
            return Err(Error::domain("pitch vocab must cover the classifier classes plus padding"));
        }
        Ok(())
    }

    /// Bucket index of a note duration in seconds.
    pub fn duration_bucket(&self, seconds: f64) -> u32 {
        let idx = (seconds / self.duration_bucket_seconds).floor();
        (idx.max(0.0) as usize).min(self.duration_buckets - 1) as u32
    }
}
