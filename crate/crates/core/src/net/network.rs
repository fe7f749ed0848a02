//! Two-stream backbone with enhancement sites and a linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::autodiff::{Graph, Var};
use crate::enhance::{self, ChannelAttention, MutualEnhance, NoiseBlock, SpatialAttention};
use crate::error::{Error, Result};
use crate::freq::{self, FLAT_CHANNELS, REDUCED_CHANNELS};
use crate::image::RgbImage;
use crate::params::{he_normal, ParamId, ParamStore};
use crate::synth::mix_seed;
use crate::tensor::{Dims, Tensor};

/// Window stride of the frequency decomposition; yields a half-resolution grid.
pub const FREQ_WINDOW_STRIDE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Rgb,
    Freq,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Rgb => "rgb",
            StreamKind::Freq => "freq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(StreamKind::Rgb),
            "freq" => Ok(StreamKind::Freq),
            _ => Err(Error::Usage(format!("unknown stream '{s}' (expected rgb or freq)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub weight_a: ParamId,
    pub bias_a: ParamId,
    pub weight_b: ParamId,
    pub bias_b: ParamId,
    pub stride_a: usize,
    pub stride_b: usize,
}

impl ConvBlock {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        strides: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv = |store: &mut ParamStore, name: &str, c_in: usize, rng: &mut ChaCha8Rng| -> Result<(ParamId, ParamId)> {
            let w = store.add(format!("{prefix}.{name}.weight"), he_normal(Dims::new(c_out, c_in, 3, 3), c_in * 9, rng))?;
            let b = store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(Dims::new(1, c_out, 1, 1)))?;
            Ok((w, b))
        };
        let (weight_a, bias_a) = conv(store, "conv_a", c_in, rng)?;
        let (weight_b, bias_b) = conv(store, "conv_b", c_out, rng)?;
        Ok(ConvBlock {
            weight_a,
            bias_a,
            weight_b,
            bias_b,
            stride_a: strides.0,
            stride_b: strides.1,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.weight_a), g.param(store, self.bias_a));
        let h = g.conv3x3(x, w, Some(b), self.stride_a)?;
        let h = g.relu(h);
        let (w, b) = (g.param(store, self.weight_b), g.param(store, self.bias_b));
        let h = g.conv3x3(h, w, Some(b), self.stride_b)?;
        Ok(g.relu(h))
    }
}

/// One backbone with its per-block enhancement modules (indexed by block - 1).
#[derive(Clone, Debug)]
pub struct Stream {
    pub kind: StreamKind,
    pub blocks: Vec<ConvBlock>,
    pub noise: Vec<Option<NoiseBlock>>,
    pub channel_attn: Vec<Option<ChannelAttention>>,
    /// Single-stream stand-in for mutual enhancement.
    pub spatial: Vec<Option<SpatialAttention>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModuleKind {
    SelfEnhance,
    /// Mutual enhancement, or its spatial-attention stand-in.
    Mutual,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::SelfEnhance => "self",
            ModuleKind::Mutual => "mutual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(ModuleKind::SelfEnhance),
            "mutual" => Ok(ModuleKind::Mutual),
            _ => Err(Error::Usage(format!("unknown module '{s}' (expected self or mutual)"))),
        }
    }
}

/// Feature maps entering and leaving one enhancement module.
#[derive(Clone, Copy, Debug)]
pub struct SiteTrace {
    pub block: usize,
    pub stream: StreamKind,
    pub module: ModuleKind,
    pub input: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// (n, 1, 1, 1) fake logits.
    pub logits: Var,
    /// Per stream, the feature map after each block and its enhancement.
    pub rgb_stages: Vec<Var>,
    pub freq_stages: Vec<Var>,
    pub sites: Vec<SiteTrace>,
}

impl Forward {
    pub fn stages(&self, stream: StreamKind) -> &[Var] {
        match stream {
            StreamKind::Rgb => &self.rgb_stages,
            StreamKind::Freq => &self.freq_stages,
        }
    }

    pub fn site(&self, block: usize, stream: StreamKind, module: ModuleKind) -> Option<&SiteTrace> {
        self.sites
            .iter()
            .find(|s| s.block == block && s.stream == stream && s.module == module)
    }
}

/// Per-channel standardization of the 192 flat frequency bands.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FreqNorm {
    pub fn identity() -> Self {
        FreqNorm {
            mean: vec![0.0; FLAT_CHANNELS],
            std: vec![1.0; FLAT_CHANNELS],
        }
    }

    /// Mean and standard deviation of each band over all images and positions.
    /// Near-constant bands keep a unit scale.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Result<Self> {
        let mut sum = vec![0.0; FLAT_CHANNELS];
        let mut sq = vec![0.0; FLAT_CHANNELS];
        let mut count = 0usize;
        for img in images {
            let flat = freq::decompose(img, FREQ_WINDOW_STRIDE)?.flat;
            for c in 0..FLAT_CHANNELS {
                for &v in flat.plane(0, c) {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += flat.dims().spatial();
        }
        if count == 0 {
            return Err(Error::input("cannot fit frequency statistics on an empty image set"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FreqNorm { mean, std })
    }

    pub fn apply(&self, flat: &mut Tensor) {
        let d = flat.dims();
        let plane = d.spatial();
        for (k, chunk) in flat.data_mut().chunks_mut(plane).enumerate() {
            let c = k % d.c;
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chunk {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Network inputs for a batch of images.
#[derive(Clone, Debug)]
pub struct Batch {
    pub rgb: Option<Tensor>,
    pub freq: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct PelNetwork {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub rgb: Option<Stream>,
    pub freq: Option<Stream>,
    pub reduce: Option<(ParamId, ParamId)>,
    /// Mutual-enhancement modules per block (two-stream networks only).
    pub mutual: Vec<Option<MutualEnhance>>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
    pub freq_norm: FreqNorm,
}

impl PelNetwork {
    /// Builds a network with He-initialized convolutions (seeded by
    /// `config.seed`) and zero-initialized enhancement modules and head.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let plan = enhance::placement_plan(config.num_blocks)?;
        let build_stream = |store: &mut ParamStore, kind: StreamKind| -> Result<Stream> {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, kind as u64 + 100));
            let (c_first, stride_first) = match kind {
                StreamKind::Rgb => (3, 2),
                StreamKind::Freq => (REDUCED_CHANNELS, 1),
            };
            let name = kind.name();
            let mut stream = Stream {
                kind,
                blocks: Vec::new(),
                noise: Vec::new(),
                channel_attn: Vec::new(),
                spatial: Vec::new(),
            };
            let mut c_in = c_first;
            for (i, site) in plan.iter().enumerate() {
                let c = config.widths[i];
                let stride_a = if i == 0 { stride_first } else { 1 };
                let prefix = format!("{name}.block{}", site.block);
                stream.blocks.push(ConvBlock::new(
                    store,
                    &prefix,
                    c_in,
                    c,
                    (stride_a, config.strides[i]),
                    &mut rng,
                )?);
                let site_prefix = format!("{name}.site{}", site.block);
                stream.noise.push(if config.use_self && config.use_noise && site.noise {
                    Some(NoiseBlock::new(store, &format!("{site_prefix}.noise"), c, config.noise_config())?)
                } else {
                    None
                });
                stream.channel_attn.push(if config.use_self && site.channel_attn {
                    Some(ChannelAttention::new(store, &format!("{site_prefix}.ca"), c, config.reduction, &mut rng)?)
                } else {
                    None
                });
                stream.spatial.push(if config.use_mutual && !config.two_stream() && site.mutual {
                    Some(SpatialAttention::new(store, &format!("{site_prefix}.sa"), c)?)
                } else {
                    None
                });
                c_in = c;
            }
            Ok(stream)
        };
        let rgb = if config.use_rgb { Some(build_stream(&mut store, StreamKind::Rgb)?) } else { None };
        let (freq, reduce) = if config.use_freq {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 200));
            let w = store.add(
                "freq.reduce.weight",
                he_normal(Dims::new(REDUCED_CHANNELS, FLAT_CHANNELS, 1, 1), FLAT_CHANNELS, &mut rng),
            )?;
            let b = store.add("freq.reduce.bias", Tensor::zeros(Dims::new(1, REDUCED_CHANNELS, 1, 1)))?;
            (Some(build_stream(&mut store, StreamKind::Freq)?), Some((w, b)))
        } else {
            (None, None)
        };
        let mut mutual = Vec::new();
        for (i, site) in plan.iter().enumerate() {
            mutual.push(if config.use_mutual && config.two_stream() && site.mutual {
                let c = config.widths[i];
                Some(MutualEnhance::new(&mut store, &format!("mutual{}", site.block), c, c)?)
            } else {
                None
            });
        }
        let streams = usize::from(config.use_rgb) + usize::from(config.use_freq);
        let feat = streams * config.widths[config.num_blocks - 1];
        let head_weight = store.add("head.weight", Tensor::zeros(Dims::new(1, feat, 1, 1)))?;
        let head_bias = store.add("head.bias", Tensor::zeros(Dims::new(1, 1, 1, 1)))?;
        Ok(PelNetwork {
            config,
            store,
            rgb,
            freq,
            reduce,
            mutual,
            head_weight,
            head_bias,
            freq_norm: FreqNorm::identity(),
        })
    }

    pub fn stream(&self, kind: StreamKind) -> Option<&Stream> {
        match kind {
            StreamKind::Rgb => self.rgb.as_ref(),
            StreamKind::Freq => self.freq.as_ref(),
        }
    }

    /// Parameter names owned by one stream (including its band reduction).
    pub fn stream_param_names(&self, kind: StreamKind) -> Vec<String> {
        let prefix = format!("{}.", kind.name());
        self.store
            .names()
            .into_iter()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect()
    }

    /// Converts images to network inputs; every image must be
    /// `input_size` square.
    pub fn prepare(&self, images: &[&RgbImage]) -> Result<Batch> {
        if images.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let s = self.config.input_size;
        for img in images {
            if img.width() != s || img.height() != s {
                return Err(Error::input(format!(
                    "image is {}x{}, network expects {s}x{s}",
                    img.width(),
                    img.height()
                )));
            }
        }
        let rgb = if self.config.use_rgb {
            Some(Tensor::stack(&images.iter().map(|i| i.to_tensor()).collect::<Vec<_>>())?)
        } else {
            None
        };
        let freq = if self.config.use_freq {
            let parts = images
                .iter()
                .map(|img| {
                    let mut flat = freq::decompose(img, FREQ_WINDOW_STRIDE)?.flat;
                    self.freq_norm.apply(&mut flat);
                    Ok(flat)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Tensor::stack(&parts)?)
        } else {
            None
        };
        Ok(Batch { rgb, freq })
    }

    /// Builds the forward graph for a prepared batch.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Forward> {
        self.forward_with(g, &self.store, batch)
    }

    /// Forward pass reading parameter values from `store`, which must have
    /// this network's registry layout.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Forward> {
        if store.len() != self.store.len() {
            return Err(Error::Usage("parameter store does not match this network".into()));
        }
        let missing = |s: &str| Error::input(format!("batch lacks the {s} input"));
        let mut rgb = match (&self.rgb, &batch.rgb) {
            (Some(_), Some(t)) => Some(g.constant(t.clone())),
            (Some(_), None) => return Err(missing("rgb")),
            _ => None,
        };
        let mut frq = match (&self.freq, &batch.freq, self.reduce) {
            (Some(_), Some(t), Some((w, b))) => {
                let flat = g.constant(t.clone());
                let (w, b) = (g.param(store, w), g.param(store, b));
                Some(freq::reduce_bands(g, flat, w, Some(b))?)
            }
            (Some(_), None, _) => return Err(missing("freq")),
            _ => None,
        };
        let mut rgb_stages = Vec::new();
        let mut freq_stages = Vec::new();
        let mut sites = Vec::new();
        for i in 0..self.config.num_blocks {
            let block = i + 1;
            for (stream, x) in [(&self.rgb, &mut rgb), (&self.freq, &mut frq)] {
                if let (Some(s), Some(v)) = (stream, x.as_mut()) {
                    let f_in = s.blocks[i].forward(g, store, *v)?;
                    let f_out = enhance::self_enhance(g, store, f_in, s.noise[i].as_ref(), s.channel_attn[i].as_ref())?;
                    if s.noise[i].is_some() || s.channel_attn[i].is_some() {
                        sites.push(SiteTrace {
                            block,
                            stream: s.kind,
                            module: ModuleKind::SelfEnhance,
                            input: f_in,
                            output: f_out,
                        });
                    }
                    *v = f_out;
                    if let Some(sa) = &s.spatial[i] {
                        let f_sa = sa.forward(g, store, f_out)?;
                        sites.push(SiteTrace {
                            block,
                            stream: s.kind,
                            module: ModuleKind::Mutual,
                            input: f_out,
                            output: f_sa,
                        });
                        *v = f_sa;
                    }
                }
            }
            if let (Some(m), Some(r), Some(f)) = (&self.mutual[i], rgb, frq) {
                let o = m.forward(g, store, r, f)?;
                for (stream, input, output) in [(StreamKind::Rgb, r, o.rgb), (StreamKind::Freq, f, o.freq)] {
                    sites.push(SiteTrace {
                        block,
                        stream,
                        module: ModuleKind::Mutual,
                        input,
                        output,
                    });
                }
                rgb = Some(o.rgb);
                frq = Some(o.freq);
            }
            if let Some(v) = rgb {
                rgb_stages.push(v);
            }
            if let Some(v) = frq {
                freq_stages.push(v);
            }
        }
        let pooled = match (rgb, frq) {
            (Some(r), Some(f)) => {
                let (r, f) = (g.gap(r), g.gap(f));
                g.concat_channels(r, f)?
            }
            (Some(v), None) | (None, Some(v)) => g.gap(v),
            (None, None) => unreachable!("config validation requires a stream"),
        };
        let (w, b) = (g.param(store, self.head_weight), g.param(store, self.head_bias));
        Ok(Forward {
            logits: g.conv_pointwise(pooled, w, Some(b))?,
            rgb_stages,
            freq_stages,
            sites,
        })
    }

    /// Fake logits for a batch of images.
    pub fn logits(&self, images: &[&RgbImage]) -> Result<Vec<f64>> {
        let batch = self.prepare(images)?;
        let mut g = Graph::new();
        let f = self.forward(&mut g, &batch)?;
        Ok(g.value(f.logits).data().to_vec())
    }

    /// Fake probabilities, evaluated in chunks of `batch_size`.
    pub fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch_size.max(1)) {
            out.extend(self.logits(chunk)?.into_iter().map(sigmoid));
        }
        Ok(out)
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
