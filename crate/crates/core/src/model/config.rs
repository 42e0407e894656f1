use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;

/// Shape of the network. Every width is fixed here, so the parameter set is a
/// pure function of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Phoneme inventory size, stutter phonemes included.
    pub n_symbols: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ff_width: usize,
    pub feature_dim: usize,
    pub prenet_hidden: usize,
    pub prenet_bottleneck: usize,
    pub postnet_layers: usize,
    pub postnet_width: usize,
    pub postnet_kernel: usize,
    /// Frames drawn from the reference for the speaker encoder.
    pub reference_frames: usize,
    pub reference_width: usize,
    pub dropout_prenet: f64,
    /// Frames emitted per decoder step.
    pub frames_per_step: usize,
    /// Rows of the sinusoidal table, in encoder tokens or decoder steps.
    pub max_positions: usize,
    pub max_decode_frames: usize,
    pub logvar_init: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_symbols: 26,
            d_model: 64,
            n_heads: 2,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ff_width: 128,
            feature_dim: 16,
            prenet_hidden: 32,
            prenet_bottleneck: 8,
            postnet_layers: 5,
            postnet_width: 32,
            postnet_kernel: 5,
            reference_frames: 32,
            reference_width: 16,
            dropout_prenet: 0.6,
            frames_per_step: 1,
            max_positions: 1024,
            max_decode_frames: 1000,
            logvar_init: -4.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let widths = [
            ("n_symbols", self.n_symbols),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ff_width", self.ff_width),
            ("feature_dim", self.feature_dim),
            ("prenet_hidden", self.prenet_hidden),
            ("prenet_bottleneck", self.prenet_bottleneck),
            ("postnet_layers", self.postnet_layers),
            ("postnet_width", self.postnet_width),
            ("reference_frames", self.reference_frames),
            ("reference_width", self.reference_width),
            ("frames_per_step", self.frames_per_step),
            ("max_positions", self.max_positions),
            ("max_decode_frames", self.max_decode_frames),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(TensorError::Parameter(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(TensorError::Parameter(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prenet) {
            return Err(TensorError::Parameter(format!(
                "dropout_prenet {} outside [0, 1)",
                self.dropout_prenet
            )));
        }
        if self.prenet_bottleneck >= self.feature_dim {
            return Err(TensorError::Parameter(format!(
                "prenet bottleneck {} must be narrower than feature_dim {}",
                self.prenet_bottleneck, self.feature_dim
            )));
        }
        if self.postnet_kernel.is_multiple_of(2) {
            return Err(TensorError::Parameter(format!(
                "postnet kernel {} must be odd",
                self.postnet_kernel
            )));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(TensorError::Parameter(format!("layer_norm_eps {} must be positive", self.layer_norm_eps)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of one decoder step's output row.
    pub fn step_width(&self) -> usize {
        self.frames_per_step * self.feature_dim
    }

    /// Longest frame sequence the decoder's position table can index.
    pub fn max_frames(&self) -> usize {
        self.max_positions * self.frames_per_step
    }
}
