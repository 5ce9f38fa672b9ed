//! Run configuration: every hyperparameter of the three training phases,
//! conversion and sampling, each with a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{MelConfig, PhoneticConfig, ACOUSTIC_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // acoustic features
    pub mel_window: usize,
    pub mel_hop: usize,
    pub mel_bins: usize,
    pub mel_fmax: f64,
    // phonetic stand-in
    pub phonetic_dim: usize,

    // phase 1
    pub k_phonetic: usize,
    pub k_acoustic: usize,
    pub code_dim: usize,
    pub dvae_hidden: usize,
    pub dvae_resblocks: usize,
    pub commitment_weight: f64,
    pub dvae_lr: f64,
    pub dvae_steps: usize,
    pub dvae_max_clip_secs: f64,

    // phase 2
    pub style_latents: usize,
    pub perceiver_blocks: usize,
    pub perceiver_heads: usize,
    pub perceiver_head_dim: usize,
    pub d_model: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub max_positions: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lm_lr: f64,
    pub lm_lr_decay: f64,
    pub lm_decay_every_epochs: usize,
    /// Optimizer steps per epoch; 0 means one pass over the corpus.
    pub lm_epoch_steps: usize,
    pub lm_steps: usize,
    pub prompt_min_secs: f64,
    pub prompt_max_secs: f64,
    pub clip_min_secs: f64,
    pub clip_max_secs: f64,

    // sampling
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub length_penalty: f64,
    pub max_gen_tokens: usize,

    // phase 3
    pub vocoder_lr: f64,
    /// Learning rate at the last step as a fraction of `vocoder_lr`, reached
    /// linearly; 1.0 keeps it constant.
    pub vocoder_final_lr_scale: f64,
    pub vocoder_weight_decay: f64,
    /// Weight of the mel L1 term against the multi-resolution STFT term.
    pub vocoder_mel_weight: f64,
    pub vocoder_chunk_secs: f64,
    pub vocoder_steps: usize,
    pub vocoder_channels: usize,
    pub vocoder_upsample: Vec<usize>,

    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mel_window: 1024,
            mel_hop: 256,
            mel_bins: 80,
            mel_fmax: 12_000.0,
            phonetic_dim: 64,

            k_phonetic: 256,
            k_acoustic: 1024,
            code_dim: 512,
            dvae_hidden: 1024,
            dvae_resblocks: 3,
            commitment_weight: 0.25,
            dvae_lr: 1e-4,
            dvae_steps: 2000,
            dvae_max_clip_secs: 6.0,

            style_latents: 32,
            perceiver_blocks: 4,
            perceiver_heads: 8,
            perceiver_head_dim: 64,
            d_model: 256,
            lm_layers: 6,
            lm_heads: 8,
            max_positions: 1024,
            alpha: 0.01,
            beta: 1.0,
            lm_lr: 1e-4,
            lm_lr_decay: 0.5,
            lm_decay_every_epochs: 5,
            lm_epoch_steps: 0,
            lm_steps: 5000,
            prompt_min_secs: 3.0,
            prompt_max_secs: 6.0,
            clip_min_secs: 1.2,
            clip_max_secs: 8.0,

            temperature: 0.85,
            top_k: 15,
            top_p: 0.85,
            repetition_penalty: 2.0,
            length_penalty: 1.0,
            max_gen_tokens: 400,

            vocoder_lr: 2e-4,
            vocoder_final_lr_scale: 1.0,
            vocoder_weight_decay: 0.01,
            vocoder_mel_weight: 10.0,
            vocoder_chunk_secs: 0.64,
            vocoder_steps: 5000,
            vocoder_channels: 128,
            vocoder_upsample: vec![8, 8, 4],

            batch_size: 4,
            grad_clip: 1.0,
        }
    }
}

impl RunConfig {
    /// Small model sizes for the synthetic corpus: minutes on one CPU core.
    pub fn toy() -> Self {
        Self {
            code_dim: 32,
            dvae_hidden: 64,
            dvae_lr: 2e-3,
            dvae_steps: 600,
            style_latents: 32,
            perceiver_blocks: 2,
            perceiver_heads: 4,
            perceiver_head_dim: 16,
            d_model: 64,
            lm_layers: 2,
            lm_heads: 4,
            max_positions: 512,
            lm_lr: 1e-3,
            lm_steps: 1500,
            lm_epoch_steps: 200,
            prompt_min_secs: 1.0,
            prompt_max_secs: 2.0,
            clip_min_secs: 8.0,
            clip_max_secs: 8.0,
            max_gen_tokens: 120,
            vocoder_lr: 2e-3,
            vocoder_final_lr_scale: 0.1,
            vocoder_weight_decay: 0.0,
            vocoder_steps: 5000,
            vocoder_channels: 64,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad(format!("loss weights must be >= 0 (alpha {}, beta {})", self.alpha, self.beta));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if self.top_k == 0 || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_k {} / top_p {} out of range", self.top_k, self.top_p));
        }
        if self.repetition_penalty < 1.0 {
            return bad(format!("repetition_penalty {} < 1", self.repetition_penalty));
        }
        let up: usize = self.vocoder_upsample.iter().product();
        if up != self.mel_hop {
            return bad(format!(
                "vocoder upsampling {:?} multiplies to {up}, mel hop is {}",
                self.vocoder_upsample, self.mel_hop
            ));
        }
        if self.vocoder_upsample.iter().any(|r| r % 2 != 0) {
            return bad("vocoder upsampling rates must be even".into());
        }
        if self.d_model % self.lm_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.lm_heads));
        }
        if !(self.vocoder_final_lr_scale > 0.0 && self.vocoder_final_lr_scale <= 1.0) {
            return bad(format!("vocoder_final_lr_scale {} outside (0, 1]", self.vocoder_final_lr_scale));
        }
        if !(self.vocoder_mel_weight >= 0.0) {
            return bad(format!("vocoder_mel_weight {} must be >= 0", self.vocoder_mel_weight));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.style_latents == 0 || self.perceiver_blocks == 0 || self.lm_layers == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.dvae_hidden == 0 || self.code_dim == 0 || self.k_phonetic < 2 || self.k_acoustic < 2 {
            return bad("DVAE sizes must be positive".into());
        }
        if self.prompt_min_secs > self.prompt_max_secs || self.clip_min_secs > self.clip_max_secs {
            return bad("segment ranges must have min <= max".into());
        }
        if self.mel_window > self.mel_hop * 4 || self.mel_window < self.mel_hop {
            return bad(format!("mel window {} incompatible with hop {}", self.mel_window, self.mel_hop));
        }
        Ok(())
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            n_fft: self.mel_window.next_power_of_two(),
            win_length: self.mel_window,
            hop: self.mel_hop,
            n_mels: self.mel_bins,
            fmax: self.mel_fmax,
            ..MelConfig::acoustic()
        }
    }

    pub fn phonetic(&self) -> PhoneticConfig {
        PhoneticConfig {
            dim: self.phonetic_dim,
        }
    }

    /// Acoustic token rate: mel frame rate divided by the DVAE compression.
    pub fn acoustic_token_rate(&self) -> f64 {
        ACOUSTIC_RATE as f64 / self.mel_hop as f64 / 4.0
    }

    pub fn vocoder_chunk_frames(&self) -> usize {
        (self.vocoder_chunk_secs * ACOUSTIC_RATE as f64 / self.mel_hop as f64).round() as usize
    }
}
