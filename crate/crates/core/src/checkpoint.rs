//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CHEBCNN1"  u32 version
//! u32 manifest length, manifest (UTF-8 network description)
//! u64 epoch, f64 best validation loss
//! u32 tensor count, tensors (parameters then batch-norm buffers)
//! u8 has_adam [u64 step, m tensors, v tensors]
//! ```
//!
//! A tensor is `u32 rank`, `rank × u64 extents`, then `f32` values in
//! row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"CHEBCNN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Option<AdamState<f32>>,
    pub epoch: u64,
    pub best_val_loss: f64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn manifest(spec: &NetworkSpec) -> String {
    let mut out = format!(
        "in_channels={}\nside={}\nclasses={}\n",
        spec.in_channels, spec.side, spec.classes
    );
    for l in &spec.layers {
        let line = match l {
            LayerSpec::ChebConv { out_channels, order } => format!("chebconv {out_channels} {order}"),
            LayerSpec::Conv { out_channels } => format!("conv {out_channels}"),
            LayerSpec::BatchNorm => "batchnorm".into(),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool => "maxpool".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { out_features } => format!("dense {out_features}"),
            LayerSpec::Dropout { p } => format!("dropout {p}"),
            LayerSpec::Softmax => "softmax".into(),
        };
        out.push_str("layer=");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<NetworkSpec> {
    let mut in_channels = None;
    let mut side = None;
    let mut classes = None;
    let mut layers = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let bad = || corrupt(format!("bad manifest line `{line}`"));
        let (key, value) = line.split_once('=').ok_or_else(bad)?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        match key {
            "in_channels" => in_channels = Some(num(value)?),
            "side" => side = Some(num(value)?),
            "classes" => classes = Some(num(value)?),
            "layer" => {
                let parts: Vec<&str> = value.split(' ').collect();
                let layer = match parts.as_slice() {
                    ["chebconv", c, k] => LayerSpec::ChebConv {
                        out_channels: num(c)?,
                        order: num(k)?,
                    },
                    ["conv", c] => LayerSpec::Conv { out_channels: num(c)? },
                    ["batchnorm"] => LayerSpec::BatchNorm,
                    ["relu"] => LayerSpec::Relu,
                    ["maxpool"] => LayerSpec::MaxPool,
                    ["flatten"] => LayerSpec::Flatten,
                    ["dense", n] => LayerSpec::Dense { out_features: num(n)? },
                    ["dropout", p] => LayerSpec::Dropout {
                        p: p.parse().map_err(|_| bad())?,
                    },
                    ["softmax"] => LayerSpec::Softmax,
                    _ => return Err(bad()),
                };
                layers.push(layer);
            }
            _ => return Err(bad()),
        }
    }
    let missing = |k: &str| corrupt(format!("manifest lacks `{k}`"));
    Ok(NetworkSpec {
        in_channels: in_channels.ok_or_else(|| missing("in_channels"))?,
        side: side.ok_or_else(|| missing("side"))?,
        classes: classes.ok_or_else(|| missing("classes"))?,
        layers,
    })
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("file truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32("tensor rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(corrupt(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64("tensor extent")?).map_err(|_| corrupt("extent overflow"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflow"))?;
        let bytes = self.take(numel.checked_mul(4).ok_or_else(|| corrupt("tensor size overflow"))?, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(&shape, data).map_err(|e| corrupt(e.to_string()))
    }
}

fn assign(dst: Vec<&mut Tensor<f32>>, src: Vec<Tensor<f32>>, what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(corrupt(format!("expected {} {what} tensors, found {}", dst.len(), src.len())));
    }
    for (d, s) in dst.into_iter().zip(src) {
        if d.shape() != s.shape() {
            return Err(corrupt(format!("{what} tensor shape {:?} does not match network {:?}", s.shape(), d.shape())));
        }
        *d = s;
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let m = manifest(&self.model.spec);
        out.extend_from_slice(&(m.len() as u32).to_le_bytes());
        out.extend_from_slice(m.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        let params = self.model.parameters();
        let buffers = self.model.buffers();
        out.extend_from_slice(&((params.len() + buffers.len()) as u32).to_le_bytes());
        for t in params.into_iter().chain(buffers) {
            put_tensor(&mut out, t);
        }
        match &self.adam {
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.t.to_le_bytes());
                for t in a.m.iter().chain(&a.v) {
                    put_tensor(&mut out, t);
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let len = r.u32("manifest length")? as usize;
        let text = std::str::from_utf8(r.take(len, "manifest")?).map_err(|_| corrupt("manifest is not UTF-8"))?;
        let spec = parse_manifest(text)?;
        let epoch = r.u64("epoch")?;
        let best_val_loss = f64::from_bits(r.u64("best validation loss")?);
        let count = r.u32("tensor count")? as usize;
        let mut model = Model::<f32>::build(&spec, 0).map_err(|e| corrupt(format!("invalid network in manifest: {e}")))?;
        let n_params = model.parameters().len();
        let expected = n_params + model.buffers().len();
        if count != expected {
            return Err(corrupt(format!("expected {expected} tensors, header says {count}")));
        }
        let mut tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let buffers = tensors.split_off(n_params);
        assign(model.parameters_mut(), tensors, "parameter")?;
        assign(model.buffers_mut(), buffers, "buffer")?;
        let adam = match r.u8("optimiser flag")? {
            0 => None,
            1 => {
                let t = r.u64("optimiser step")?;
                let mut m = (0..2 * n_params).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let v = m.split_off(n_params);
                for (a, p) in m.iter().chain(&v).zip(model.parameters().into_iter().cycle()) {
                    if a.shape() != p.shape() {
                        return Err(corrupt("optimiser state does not match parameter shapes"));
                    }
                }
                Some(AdamState { m, v, t })
            }
            f => return Err(corrupt(format!("bad optimiser flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(corrupt(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        Ok(Self {
            model,
            adam,
            epoch,
            best_val_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
