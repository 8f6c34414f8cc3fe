//! Shared encoder, the two decoding streams, the exchange module and the
//! output heads, assembled into the full network.

mod csem;
mod decoder;
mod encoder;

pub use csem::{Csem, CsemMode, CsemOutputs, DwPw, GroupResidual, Lrgt};
pub use decoder::Fpn;
pub use encoder::{ConvBlock, Encoder};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tsonet_tensor::{Bound, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::febr::{BinOutputs, Febr, FebrConfig};
use crate::nn::{Conv2d, Init};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_bands: usize,
    /// Encoder widths are `base * (1, 2, 4, 8, 16)`.
    pub encoder_base: usize,
    pub stream_channels: usize,
    /// Input size divided by stream resolution; a power of two.
    pub stream_stride: usize,
    pub norm_groups: usize,
    pub csem_reduction: usize,
    pub csem_blocks: usize,
    pub csem_groups: usize,
    pub csem_mode: CsemMode,
    pub num_bins: usize,
    pub febr_levels: usize,
    pub attn_heads: usize,
    pub ffn_expansion: f64,
    pub l2_eps: f64,
    /// Metres per unit of raw head output.
    pub height_unit: f64,
    /// Per-band input standardisation. Empty means raw inputs; training
    /// fills these from the train split when left empty.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_bands: 7,
            encoder_base: 32,
            stream_channels: 128,
            stream_stride: 2,
            norm_groups: 8,
            csem_reduction: 4,
            csem_blocks: 2,
            csem_groups: 4,
            csem_mode: CsemMode::Residual,
            num_bins: 64,
            febr_levels: 3,
            attn_heads: 4,
            ffn_expansion: 2.0,
            l2_eps: 1e-6,
            height_unit: 10.0,
            input_mean: Vec::new(),
            input_std: Vec::new(),
        }
    }
}

pub const ENCODER_LEVELS: usize = 5;

impl ModelConfig {
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..ENCODER_LEVELS).map(|i| self.encoder_base << i).collect()
    }

    /// Index of the encoder level the decoders start from.
    pub fn first_decoder_level(&self) -> usize {
        self.stream_stride.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("model: {msg}")));
        let c = self.stream_channels;
        if self.in_bands == 0 || self.encoder_base == 0 || c == 0 || self.num_bins == 0 {
            return bad("widths, bands and bin count must be positive".into());
        }
        if !self.stream_stride.is_power_of_two() || self.first_decoder_level() >= ENCODER_LEVELS {
            return bad(format!("stream_stride {} must be a power of two below 32", self.stream_stride));
        }
        let decoder_levels = ENCODER_LEVELS - self.first_decoder_level();
        if self.febr_levels == 0 || self.febr_levels > decoder_levels {
            return bad(format!("febr_levels {} exceeds {decoder_levels} decoder levels", self.febr_levels));
        }
        if c % self.csem_groups != 0 || self.csem_reduction == 0 || c % self.csem_reduction != 0 {
            return bad(format!(
                "stream_channels {c} must be divisible by csem_groups {} and csem_reduction {}",
                self.csem_groups, self.csem_reduction
            ));
        }
        if self.attn_heads == 0 || c % self.attn_heads != 0 {
            return bad(format!("stream_channels {c} not divisible by {} heads", self.attn_heads));
        }
        if !(self.l2_eps > 0.0 && self.height_unit > 0.0 && self.ffn_expansion > 0.0) {
            return bad("l2_eps, height_unit and ffn_expansion must be positive".into());
        }
        let (m, s) = (&self.input_mean, &self.input_std);
        if m.len() != s.len() || !(m.is_empty() || m.len() == self.in_bands) {
            return bad(format!("input_mean and input_std need {} entries or none", self.in_bands));
        }
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) || m.iter().any(|v| !v.is_finite()) {
            return bad("input_std must be positive and input_mean finite".into());
        }
        Ok(())
    }
}

/// Module and task switches used by the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub use_csem: bool,
    pub use_febr: bool,
    pub use_footprint_stream: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Self = Self {
        use_csem: true,
        use_febr: true,
        use_footprint_stream: true,
    };
    pub const HEIGHT_ONLY: Self = Self {
        use_csem: false,
        use_febr: false,
        use_footprint_stream: false,
    };

    pub fn validate(&self) -> Result<()> {
        if self.use_csem && !self.use_footprint_stream {
            return Err(Error::config("use_csem requires use_footprint_stream"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum HeightHead {
    Bins(Febr),
    /// 1x1 convolution straight to height.
    Regression(Conv2d),
}

/// The full two-stream network. Holds parameter ids only; values live in a
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Tsonet {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub encoder: Encoder,
    pub height_decoder: Fpn,
    pub footprint_decoder: Option<Fpn>,
    pub csem: Option<Csem>,
    pub footprint_head: Option<Conv2d>,
    pub height_head: HeightHead,
}

/// Stream features around the exchange point.
pub struct StreamTrace<'g, T: Real> {
    pub fp_pre: Option<Var<'g, T>>,
    pub h_pre: Var<'g, T>,
    pub fp_post: Option<Var<'g, T>>,
    pub h_post: Var<'g, T>,
    pub csem: Option<CsemOutputs<'g, T>>,
}

pub struct Outputs<'g, T: Real> {
    /// `[B, 1, H, W]` metres.
    pub height: Var<'g, T>,
    /// `[B, 1, H, W]` logits, when the footprint stream is on.
    pub footprint_logits: Option<Var<'g, T>>,
    pub bins: Option<BinOutputs<'g, T>>,
    pub streams: StreamTrace<'g, T>,
    pub height_pyramid: Vec<Var<'g, T>>,
}

impl Tsonet {
    /// Builds the network and its freshly initialised parameters.
    pub fn new(config: &ModelConfig, ablation: Ablation, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        config.validate()?;
        ablation.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let enc_ch = config.encoder_channels();
        let first = config.first_decoder_level();
        let c = config.stream_channels;
        let g = config.norm_groups;

        let encoder = Encoder::new(&mut init.sub("encoder"), config.in_bands, &enc_ch, g);
        let height_decoder = Fpn::new(&mut init.sub("height_decoder"), &enc_ch, first, c, g);
        let footprint_decoder = ablation
            .use_footprint_stream
            .then(|| Fpn::new(&mut init.sub("footprint_decoder"), &enc_ch, first, c, g));
        let csem = ablation.use_csem.then(|| {
            Csem::new(
                &mut init.sub("csem"),
                c,
                config.csem_reduction,
                config.csem_blocks,
                config.csem_groups,
                config.csem_mode,
            )
        });
        let footprint_head = ablation
            .use_footprint_stream
            .then(|| Conv2d::new(&mut init.sub("footprint_head"), c, 1, 3, 1, true));
        let height_head = if ablation.use_febr {
            HeightHead::Bins(Febr::new(
                &mut init.sub("febr"),
                FebrConfig {
                    channels: c,
                    num_bins: config.num_bins,
                    levels: config.febr_levels,
                    heads: config.attn_heads,
                    ffn_expansion: config.ffn_expansion,
                    l2_eps: config.l2_eps,
                    height_unit: config.height_unit,
                },
            ))
        } else {
            HeightHead::Regression(Conv2d::new(&mut init.sub("height_head"), c, 1, 1, 1, true))
        };
        let model = Self {
            config: config.clone(),
            ablation,
            encoder,
            height_decoder,
            footprint_decoder,
            csem,
            footprint_head,
            height_head,
        };
        Ok((model, store))
    }

    /// Checks an input shape `[B, bands, H, W]` against the configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let div = 1 << (ENCODER_LEVELS - 1);
        if shape.len() != 4 || shape[1] != self.config.in_bands {
            return Err(Error::Shape(format!(
                "expected [B, {}, H, W] input, got {shape:?}",
                self.config.in_bands
            )));
        }
        if shape[2] % div != 0 || shape[3] % div != 0 {
            return Err(Error::Shape(format!("spatial size {shape:?} must be a multiple of {div}")));
        }
        Ok(())
    }

    fn standardise<'g, T: Real>(&self, p: &Bound<'g, T>, image: Var<'g, T>) -> Var<'g, T> {
        if self.config.input_mean.is_empty() {
            return image;
        }
        let b = self.config.in_bands;
        let column = |v: Vec<f64>| p.graph().constant(Tensor::from_vec([1, b, 1, 1], v.into_iter().map(T::of).collect()));
        let mean = column(self.config.input_mean.clone());
        let inv_std = column(self.config.input_std.iter().map(|s| 1.0 / s).collect());
        (image - mean) * inv_std
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, image: Var<'g, T>) -> Result<Outputs<'g, T>> {
        let shape = image.shape();
        self.check_input(&shape)?;
        let out_hw = (shape[2], shape[3]);
        let image = self.standardise(p, image);
        let encoded = self.encoder.forward(p, image);

        let height_pyramid = self.height_decoder.forward(p, &encoded);
        let h_pre = height_pyramid[0];
        let fp_pre = self.footprint_decoder.as_ref().map(|d| d.forward(p, &encoded)[0]);

        let (fp_post, h_post, csem) = match (&self.csem, fp_pre) {
            (Some(csem), Some(fp)) => {
                let o = csem.forward(p, fp, h_pre);
                (Some(o.fp), o.h, Some(o))
            }
            _ => (fp_pre, h_pre, None),
        };

        let footprint_logits = match (&self.footprint_head, fp_post) {
            (Some(head), Some(fp)) => Some(head.forward(p, fp).resize_bilinear(out_hw.0, out_hw.1)),
            _ => None,
        };

        let (height, bins) = match &self.height_head {
            HeightHead::Bins(febr) => {
                let b = febr.forward(p, &height_pyramid, h_post, out_hw);
                (b.height, Some(b))
            }
            HeightHead::Regression(conv) => {
                let h = conv
                    .forward(p, h_post)
                    .scale(self.config.height_unit)
                    .resize_bilinear(out_hw.0, out_hw.1);
                (h, None)
            }
        };

        Ok(Outputs {
            height,
            footprint_logits,
            bins,
            streams: StreamTrace {
                fp_pre,
                h_pre,
                fp_post,
                h_post,
                csem,
            },
            height_pyramid,
        })
    }
}
