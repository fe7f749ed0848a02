//! Binary checkpoint: magic, version, config text, frequency statistics,
//! named parameter records and an optional optimizer state. All numbers are
//! little-endian; counts and lengths are u32, dims and step counters u64.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::{FreqNorm, PelNetwork};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

pub const MAGIC: &[u8; 8] = b"PELCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: u64,
    pub adam_t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub freq_norm: FreqNorm,
    pub params: Vec<(String, Tensor)>,
    pub state: Option<TrainState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn dims(&mut self) -> Result<Dims> {
        let mut d = [0usize; 4];
        for v in &mut d {
            *v = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
        }
        d.iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
        Ok(Dims::new(d[0], d[1], d[2], d[3]))
    }
}

impl Checkpoint {
    pub fn from_network(net: &PelNetwork, opt: Option<(&Adam, u64)>) -> Self {
        Checkpoint {
            config: net.config.clone(),
            freq_norm: net.freq_norm.clone(),
            params: net.store.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect(),
            state: opt.map(|(adam, epoch)| TrainState {
                epoch,
                adam_t: adam.t,
                m: adam.m.clone(),
                v: adam.v.clone(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.str(&self.config.to_text());
        w.u32(self.freq_norm.mean.len());
        w.f64s(&self.freq_norm.mean);
        w.f64s(&self.freq_norm.std);
        w.u32(self.params.len());
        for (name, t) in &self.params {
            w.str(name);
            for d in t.dims().as_array() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        match &self.state {
            None => w.0.push(0),
            Some(s) => {
                w.0.push(1);
                w.u64(s.epoch);
                w.u64(s.adam_t);
                for t in s.m.iter().chain(&s.v) {
                    w.f64s(t.data());
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len()).map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a PEL checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let config = NetworkConfig::parse(&r.str()?)?;
        let bands = r.u32()?;
        let freq_norm = FreqNorm {
            mean: r.f64s(bands)?,
            std: r.f64s(bands)?,
        };
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.str()?;
            let dims = r.dims()?;
            let data = r.f64s(dims.len())?;
            params.push((name, Tensor::from_vec(dims, data)?));
        }
        let state = match r.take(1)?[0] {
            0 => None,
            1 => {
                let epoch = r.u64()?;
                let adam_t = r.u64()?;
                let read_all = |r: &mut Reader| -> Result<Vec<Tensor>> {
                    params
                        .iter()
                        .map(|(_, t)| Tensor::from_vec(t.dims(), r.f64s(t.len())?))
                        .collect()
                };
                let m = read_all(&mut r)?;
                let v = read_all(&mut r)?;
                Some(TrainState { epoch, adam_t, m, v })
            }
            flag => return Err(Error::Checkpoint(format!("bad training-state flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            freq_norm,
            params,
            state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies parameters into `net`. Names must match the registry exactly
    /// and dims must agree.
    pub fn apply_to(&self, net: &mut PelNetwork) -> Result<()> {
        if self.freq_norm.mean.len() != net.freq_norm.mean.len() {
            return Err(Error::Checkpoint("frequency statistics have the wrong band count".into()));
        }
        for (name, t) in &self.params {
            let id = net
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
            let have = net.store.get(id).tensor.dims();
            if have != t.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for parameter '{name}': checkpoint {}, network {have}",
                    t.dims()
                )));
            }
        }
        if let Some(missing) = net.store.names().into_iter().find(|n| !self.params.iter().any(|(p, _)| p == n)) {
            return Err(Error::Checkpoint(format!("checkpoint lacks parameter '{missing}'")));
        }
        for (name, t) in &self.params {
            let id = net.store.id(name).expect("checked above");
            net.store.set(id, t.clone())?;
        }
        net.freq_norm = self.freq_norm.clone();
        Ok(())
    }

    /// Rebuilds the network described by the stored config.
    pub fn to_network(&self) -> Result<PelNetwork> {
        let mut net = PelNetwork::new(self.config.clone())?;
        self.apply_to(&mut net)?;
        Ok(net)
    }
}

pub fn save_checkpoint(net: &PelNetwork, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_network(net, None).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PelNetwork> {
    Checkpoint::load(path)?.to_network()
}
