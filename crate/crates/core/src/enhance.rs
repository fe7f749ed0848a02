//! Self-enhancement (feature-noise amplification + channel attention) and
//! mutual-enhancement (shared two-channel spatial attention) modules.
//!
//! All depth-wise amplitude parameters start at zero, so every module except
//! channel attention is an exact identity map at initialization.

use rand::Rng;

use crate::autodiff::{FilterKind, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{he_normal, ParamId, ParamStore};
use crate::tensor::{Dims, Tensor};

/// Filter settings for the noise extractor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseConfig {
    pub filter: FilterKind,
    /// One kernel for the plain block; several for the multi-kernel variant.
    pub kernels: Vec<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            filter: FilterKind::Median,
            kernels: vec![3],
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::config("noise filter needs at least one kernel"));
        }
        if let Some(k) = self.kernels.iter().find(|k| !matches!(k, 3 | 5 | 7)) {
            return Err(Error::config(format!("filter kernel must be 3, 5 or 7, got {k}")));
        }
        Ok(())
    }
}

fn channel_param(store: &mut ParamStore, name: String, c: usize, value: f64) -> Result<ParamId> {
    store.add(name, Tensor::full(Dims::new(1, c, 1, 1), value))
}

/// Noise enhancement: `f_ne = f_in + dw(σ(f_in − M(f_in)))`.
#[derive(Clone, Debug)]
pub struct NoiseBlock {
    pub config: NoiseConfig,
    pub channels: usize,
    pub scale: ParamId,
    pub bias: ParamId,
    /// Grouped 1×1 reduction (one per-channel weight per kernel, plus bias)
    /// used when more than one kernel is configured.
    pub combine: Option<(Vec<ParamId>, ParamId)>,
}

impl NoiseBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, config: NoiseConfig) -> Result<Self> {
        config.validate()?;
        let scale = channel_param(store, format!("{prefix}.scale"), channels, 0.0)?;
        let bias = channel_param(store, format!("{prefix}.bias"), channels, 0.0)?;
        let combine = if config.kernels.len() > 1 {
            let share = 1.0 / config.kernels.len() as f64;
            let weights = config
                .kernels
                .iter()
                .map(|k| channel_param(store, format!("{prefix}.combine.k{k}"), channels, share))
                .collect::<Result<Vec<_>>>()?;
            let b = channel_param(store, format!("{prefix}.combine.bias"), channels, 0.0)?;
            Some((weights, b))
        } else {
            None
        };
        Ok(NoiseBlock {
            config,
            channels,
            scale,
            bias,
            combine,
        })
    }

    /// Feature noise `f_in − M(f_in)` (combined across kernels if needed).
    pub fn noise(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut maps = Vec::with_capacity(self.config.kernels.len());
        for &k in &self.config.kernels {
            let smooth = g.filter(x, self.config.filter, k)?;
            maps.push(g.sub(x, smooth)?);
        }
        let Some((weights, bias)) = &self.combine else {
            return Ok(maps[0]);
        };
        // Grouped 1×1 conv: output channel k mixes channel k of every map.
        let b = g.param(store, *bias);
        let mut acc: Option<Var> = None;
        for (map, &w) in maps.into_iter().zip(weights) {
            let wv = g.param(store, w);
            let term = match acc {
                None => g.conv_depthwise_1x1(map, wv, Some(b))?,
                Some(_) => g.conv_depthwise_1x1(map, wv, None)?,
            };
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one kernel"))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_channels(g, x, self.channels, "noise block")?;
        let noise = self.noise(g, store, x)?;
        let amplified = g.sigmoid(noise);
        let scale = g.param(store, self.scale);
        let bias = g.param(store, self.bias);
        let adjusted = g.conv_depthwise_1x1(amplified, scale, Some(bias))?;
        g.add(x, adjusted)
    }
}

/// Two-layer perceptron over the channel vector of a (n, c, 1, 1) tensor:
/// `w2 · relu(w1 · x)` with `w1` (hidden, c, 1, 1) and `w2` (c, hidden, 1, 1).
pub fn mlp2(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let d = g.dims(x);
    if d.h != 1 || d.w != 1 {
        return Err(Error::shape(format!("mlp2 expects pooled (n, c, 1, 1) input, got {d}")));
    }
    let hidden = g.conv_pointwise(x, w1, None)?;
    let hidden = g.relu(hidden);
    g.conv_pointwise(hidden, w2, None)
}

/// Channel attention: `f + f ⊗ σ(MLP(GAP(f) + GMP(f)))`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub channels: usize,
    pub hidden: usize,
    pub w1: ParamId,
    pub w2: ParamId,
}

impl ChannelAttention {
    /// Hidden width is `max(c / reduction, 4)`.
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 {
            return Err(Error::config("reduction ratio must be positive"));
        }
        let hidden = (channels / reduction).max(4);
        let w1 = store.add(format!("{prefix}.w1"), he_normal(Dims::new(hidden, channels, 1, 1), channels, rng))?;
        let w2 = store.add(format!("{prefix}.w2"), he_normal(Dims::new(channels, hidden, 1, 1), hidden, rng))?;
        Ok(ChannelAttention {
            channels,
            hidden,
            w1,
            w2,
        })
    }

    /// Per-channel gate σ(MLP(GAP(f) + GMP(f))), dims (n, c, 1, 1).
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        check_channels(g, f, self.channels, "channel attention")?;
        let avg = g.gap(f);
        let max = g.gmp(f);
        let pooled = g.add(avg, max)?;
        let w1 = g.param(store, self.w1);
        let w2 = g.param(store, self.w2);
        let z = mlp2(g, pooled, w1, w2)?;
        Ok(g.sigmoid(z))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        let gate = self.gate(g, store, f)?;
        let gate = g.expand(gate, g.dims(f))?;
        let weighted = g.mul(f, gate)?;
        g.add(f, weighted)
    }
}

/// Self-enhancement at one site: optional noise block followed by optional
/// channel attention.
pub fn self_enhance(
    g: &mut Graph,
    store: &ParamStore,
    f_in: Var,
    noise: Option<&NoiseBlock>,
    attn: Option<&ChannelAttention>,
) -> Result<Var> {
    let mut f = f_in;
    if let Some(block) = noise {
        f = block.forward(g, store, f)?;
    }
    if let Some(attn) = attn {
        f = attn.forward(g, store, f)?;
    }
    Ok(f)
}

/// Outputs of [`MutualEnhance::forward`].
#[derive(Clone, Copy, Debug)]
pub struct MutualOutput {
    pub rgb: Var,
    pub freq: Var,
    /// The (n, 2, h, w) attention map; channel 0 gates RGB, channel 1 gates
    /// frequency.
    pub attention: Var,
}

/// Mutual enhancement: `A = σ(pw(cat(f_rgb, f_freq)))`,
/// `f_out^s = f_in^s + dw(f_in^s ⊗ a^s)`.
#[derive(Clone, Debug)]
pub struct MutualEnhance {
    pub rgb_channels: usize,
    pub freq_channels: usize,
    pub attn_weight: ParamId,
    pub attn_bias: ParamId,
    pub scale_rgb: ParamId,
    pub bias_rgb: ParamId,
    pub scale_freq: ParamId,
    pub bias_freq: ParamId,
}

impl MutualEnhance {
    pub fn new(store: &mut ParamStore, prefix: &str, rgb_channels: usize, freq_channels: usize) -> Result<Self> {
        let attn_weight = store.add(
            format!("{prefix}.attn.weight"),
            Tensor::zeros(Dims::new(2, rgb_channels + freq_channels, 1, 1)),
        )?;
        let attn_bias = channel_param(store, format!("{prefix}.attn.bias"), 2, 0.0)?;
        Ok(MutualEnhance {
            rgb_channels,
            freq_channels,
            attn_weight,
            attn_bias,
            scale_rgb: channel_param(store, format!("{prefix}.rgb.scale"), rgb_channels, 0.0)?,
            bias_rgb: channel_param(store, format!("{prefix}.rgb.bias"), rgb_channels, 0.0)?,
            scale_freq: channel_param(store, format!("{prefix}.freq.scale"), freq_channels, 0.0)?,
            bias_freq: channel_param(store, format!("{prefix}.freq.bias"), freq_channels, 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f_rgb: Var, f_freq: Var) -> Result<MutualOutput> {
        let (dr, df) = (g.dims(f_rgb), g.dims(f_freq));
        if (dr.n, dr.h, dr.w) != (df.n, df.h, df.w) {
            return Err(Error::shape(format!(
                "mutual enhancement needs aligned streams, got {dr} and {df}"
            )));
        }
        check_channels(g, f_rgb, self.rgb_channels, "mutual enhancement (rgb)")?;
        check_channels(g, f_freq, self.freq_channels, "mutual enhancement (freq)")?;
        let cat = g.concat_channels(f_rgb, f_freq)?;
        let w = g.param(store, self.attn_weight);
        let b = g.param(store, self.attn_bias);
        let logits = g.conv_pointwise(cat, w, Some(b))?;
        let attention = g.sigmoid(logits);
        let rgb = gated_residual(g, store, f_rgb, attention, 0, self.scale_rgb, self.bias_rgb)?;
        let freq = gated_residual(g, store, f_freq, attention, 1, self.scale_freq, self.bias_freq)?;
        Ok(MutualOutput {
            rgb,
            freq,
            attention,
        })
    }
}

/// `f + dw(f ⊗ expand(attention[channel]))`.
fn gated_residual(
    g: &mut Graph,
    store: &ParamStore,
    f: Var,
    attention: Var,
    channel: usize,
    scale: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let a = g.slice_channels(attention, channel, 1)?;
    let a = g.expand(a, g.dims(f))?;
    let gated = g.mul(f, a)?;
    let scale = g.param(store, scale);
    let bias = g.param(store, bias);
    let adjusted = g.conv_depthwise_1x1(gated, scale, Some(bias))?;
    g.add(f, adjusted)
}

/// Single-stream stand-in for mutual enhancement:
/// `f + dw(f ⊗ σ(pw(f)))` with a one-channel attention map.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub channels: usize,
    pub attn_weight: ParamId,
    pub attn_bias: ParamId,
    pub scale: ParamId,
    pub bias: ParamId,
}

impl SpatialAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(SpatialAttention {
            channels,
            attn_weight: store.add(format!("{prefix}.attn.weight"), Tensor::zeros(Dims::new(1, channels, 1, 1)))?,
            attn_bias: channel_param(store, format!("{prefix}.attn.bias"), 1, 0.0)?,
            scale: channel_param(store, format!("{prefix}.scale"), channels, 0.0)?,
            bias: channel_param(store, format!("{prefix}.bias"), channels, 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        check_channels(g, f, self.channels, "spatial attention")?;
        let w = g.param(store, self.attn_weight);
        let b = g.param(store, self.attn_bias);
        let logits = g.conv_pointwise(f, w, Some(b))?;
        let attention = g.sigmoid(logits);
        gated_residual(g, store, f, attention, 0, self.scale, self.bias)
    }
}

fn check_channels(g: &Graph, x: Var, expected: usize, what: &str) -> Result<()> {
    let d = g.dims(x);
    if d.c != expected {
        return Err(Error::shape(format!("{what}: expected {expected} channels, got {d}")));
    }
    Ok(())
}

/// Which modules follow a given backbone block (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SitePlan {
    pub block: usize,
    pub noise: bool,
    pub channel_attn: bool,
    pub mutual: bool,
}

/// Noise blocks follow blocks 1–2; channel attention and mutual enhancement
/// follow blocks 2 through `num_blocks − 1`. At a shared site the order is
/// noise, channel attention, mutual.
pub fn placement_plan(num_blocks: usize) -> Result<Vec<SitePlan>> {
    if num_blocks < 3 {
        return Err(Error::config(format!("need at least 3 blocks, got {num_blocks}")));
    }
    Ok((1..=num_blocks)
        .map(|block| {
            let middle = block >= 2 && block < num_blocks;
            SitePlan {
                block,
                noise: block <= 2,
                channel_attn: middle,
                mutual: middle,
            }
        })
        .collect())
}
