//! Network, training and dataset settings, serialized as flat `key = value` text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::FilterKind;
use crate::enhance::NoiseConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub num_blocks: usize,
    /// Output channels of each backbone block.
    pub widths: Vec<usize>,
    /// Stride of the second convolution in each block.
    pub strides: Vec<usize>,
    pub input_size: usize,
    pub filter: FilterKind,
    /// One kernel, or several combined by a learned grouped reduction.
    pub kernels: Vec<usize>,
    pub reduction: usize,
    pub use_rgb: bool,
    pub use_freq: bool,
    pub use_self: bool,
    /// Cross-stream enhancement; a single-stream network gets a spatial
    /// attention module at the same sites instead.
    pub use_mutual: bool,
    /// Noise amplification inside self-enhancement.
    pub use_noise: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_blocks: 4,
            widths: vec![16, 32, 64, 64],
            strides: vec![2, 2, 2, 2],
            input_size: 64,
            filter: FilterKind::Median,
            kernels: vec![3],
            reduction: 16,
            use_rgb: true,
            use_freq: true,
            use_self: true,
            use_mutual: true,
            use_noise: true,
            lr: 2e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            train_size: 800,
            val_size: 100,
            test_size: 100,
        }
    }
}

const KEYS: [&str; 20] = [
    "num_blocks",
    "widths",
    "strides",
    "input_size",
    "filter",
    "kernels",
    "reduction",
    "use_rgb",
    "use_freq",
    "use_self",
    "use_mutual",
    "use_noise",
    "lr",
    "weight_decay",
    "batch_size",
    "epochs",
    "seed",
    "train_size",
    "val_size",
    "test_size",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl NetworkConfig {
    /// Parses config text on top of the defaults. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            seen.push(key);
            match key {
                "num_blocks" => cfg.num_blocks = parse_num(key, v)?,
                "widths" => cfg.widths = parse_list(key, v)?,
                "strides" => cfg.strides = parse_list(key, v)?,
                "input_size" => cfg.input_size = parse_num(key, v)?,
                "filter" => cfg.filter = FilterKind::parse(v)?,
                "kernels" => cfg.kernels = parse_list(key, v)?,
                "reduction" => cfg.reduction = parse_num(key, v)?,
                "use_rgb" => cfg.use_rgb = parse_bool(key, v)?,
                "use_freq" => cfg.use_freq = parse_bool(key, v)?,
                "use_self" => cfg.use_self = parse_bool(key, v)?,
                "use_mutual" => cfg.use_mutual = parse_bool(key, v)?,
                "use_noise" => cfg.use_noise = parse_bool(key, v)?,
                "lr" => cfg.lr = parse_num(key, v)?,
                "weight_decay" => cfg.weight_decay = parse_num(key, v)?,
                "batch_size" => cfg.batch_size = parse_num(key, v)?,
                "epochs" => cfg.epochs = parse_num(key, v)?,
                "seed" => cfg.seed = parse_num(key, v)?,
                "train_size" => cfg.train_size = parse_num(key, v)?,
                "val_size" => cfg.val_size = parse_num(key, v)?,
                "test_size" => cfg.test_size = parse_num(key, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("num_blocks", self.num_blocks.to_string());
        put("widths", join(&self.widths));
        put("strides", join(&self.strides));
        put("input_size", self.input_size.to_string());
        put("filter", self.filter.name().to_string());
        put("kernels", join(&self.kernels));
        put("reduction", self.reduction.to_string());
        put("use_rgb", self.use_rgb.to_string());
        put("use_freq", self.use_freq.to_string());
        put("use_self", self.use_self.to_string());
        put("use_mutual", self.use_mutual.to_string());
        put("use_noise", self.use_noise.to_string());
        put("lr", self.lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("train_size", self.train_size.to_string());
        put("val_size", self.val_size.to_string());
        put("test_size", self.test_size.to_string());
        s
    }

    pub fn two_stream(&self) -> bool {
        self.use_rgb && self.use_freq
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            filter: self.filter,
            kernels: self.kernels.clone(),
        }
    }

    /// Spatial side of the feature maps after each block.
    pub fn block_sides(&self) -> Vec<usize> {
        let mut side = self.input_size / 2;
        self.strides
            .iter()
            .map(|&s| {
                side = side.div_ceil(s);
                side
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_rgb && !self.use_freq {
            return Err(Error::config("at least one of use_rgb and use_freq must be true"));
        }
        if self.num_blocks < 3 {
            return Err(Error::config(format!("num_blocks must be >= 3, got {}", self.num_blocks)));
        }
        if self.widths.len() != self.num_blocks || self.strides.len() != self.num_blocks {
            return Err(Error::config(format!(
                "widths ({}) and strides ({}) need one entry per block ({})",
                self.widths.len(),
                self.strides.len(),
                self.num_blocks
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("block widths must be positive"));
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::config("block strides must be 1 or 2"));
        }
        if self.input_size < 16 || !self.input_size.is_multiple_of(8) {
            return Err(Error::config(format!(
                "input_size must be a multiple of 8 and >= 16, got {}",
                self.input_size
            )));
        }
        if self.reduction == 0 {
            return Err(Error::config("reduction must be positive"));
        }
        self.noise_config().validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("lr and weight_decay must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        for (name, n) in [("train_size", self.train_size), ("val_size", self.val_size), ("test_size", self.test_size)] {
            if n < 2 || n % 2 != 0 {
                return Err(Error::config(format!("{name} must be even and >= 2, got {n}")));
            }
        }
        Ok(())
    }
}
