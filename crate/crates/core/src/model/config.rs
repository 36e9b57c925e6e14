use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the image and metadata feature vectors are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Elementwise product; metadata gates the visual features.
    #[default]
    Multiply,
    /// Concatenation of both vectors.
    Concat,
    /// Metadata branch replaced by a constant all-ones vector.
    ImageOnly,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiply" => Ok(FusionMode::Multiply),
            "concat" => Ok(FusionMode::Concat),
            "image_only" => Ok(FusionMode::ImageOnly),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input extent.
    pub input_size: usize,
    /// Output channels of each stride-2 encoder stage.
    pub encoder_channels: Vec<usize>,
    pub fusion_dim: usize,
    /// Length of an encoded metadata vector.
    pub meta_input_dim: usize,
    pub meta_dims: Vec<usize>,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    /// Upscaling factor of the SR head.
    pub sr_factor: usize,
    pub fusion_mode: FusionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            encoder_channels: vec![16, 32, 64],
            fusion_dim: 512,
            meta_input_dim: 16,
            meta_dims: vec![64, 128, 256, 512],
            classifier_hidden: 256,
            n_classes: 6,
            sr_factor: 2,
            fusion_mode: FusionMode::Multiply,
            seed: 0,
        }
    }
}

/// Number of convolutions in the SR decoder.
pub const DECODER_LAYERS: usize = 6;

impl ModelConfig {
    /// 224 px input with five encoder stages (7×7 feature map).
    pub fn paper_scale() -> Self {
        ModelConfig {
            input_size: 224,
            encoder_channels: vec![16, 32, 64, 128, 256],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_size", self.input_size),
            ("fusion_dim", self.fusion_dim),
            ("meta_input_dim", self.meta_input_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("sr_factor", self.sr_factor),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config(
                "encoder_channels must be non-empty and positive".into(),
            ));
        }
        if self.meta_dims.is_empty() || self.meta_dims.contains(&0) {
            return Err(Error::Config(
                "meta_dims must be non-empty and positive".into(),
            ));
        }
        let stride = 1usize << self.encoder_channels.len();
        if !self.input_size.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{} encoder stages",
                self.input_size,
                self.encoder_channels.len()
            )));
        }
        if self.fusion_mode == FusionMode::Multiply && self.meta_out_dim() != self.fusion_dim {
            return Err(Error::Config(format!(
                "multiply fusion needs meta_dims last ({}) == fusion_dim ({})",
                self.meta_out_dim(),
                self.fusion_dim
            )));
        }
        self.upsample_stages()?;
        Ok(())
    }

    /// Spatial extent of the encoder's last feature map.
    pub fn feature_extent(&self) -> usize {
        self.input_size >> self.encoder_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated non-empty")
    }

    pub fn meta_out_dim(&self) -> usize {
        *self.meta_dims.last().expect("validated non-empty")
    }

    pub fn sr_extent(&self) -> usize {
        self.sr_factor * self.input_size
    }

    /// Width of the vector entering the classifier.
    pub fn classifier_input_dim(&self) -> usize {
        match self.fusion_mode {
            FusionMode::Concat => self.fusion_dim + self.meta_out_dim(),
            FusionMode::Multiply | FusionMode::ImageOnly => self.fusion_dim,
        }
    }

    /// Number of ×2 upsamplings in the decoder: log2(sr_extent / feature_extent).
    pub fn upsample_stages(&self) -> Result<usize> {
        let (from, to) = (self.feature_extent(), self.sr_extent());
        if from == 0 || to % from != 0 || !(to / from).is_power_of_two() {
            return Err(Error::Config(format!(
                "decoder cannot map extent {from} to {to} by doubling"
            )));
        }
        let stages = (to / from).trailing_zeros() as usize;
        if stages > DECODER_LAYERS {
            return Err(Error::Config(format!(
                "decoder needs {stages} upsamplings but has only {DECODER_LAYERS} layers"
            )));
        }
        Ok(stages)
    }

    /// Output channels of each decoder convolution, ending in RGB.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let c = self.feature_channels();
        (0..DECODER_LAYERS)
            .map(|i| {
                if i + 1 == DECODER_LAYERS {
                    3
                } else {
                    (c >> (i + 1)).max(4)
                }
            })
            .collect()
    }
}
