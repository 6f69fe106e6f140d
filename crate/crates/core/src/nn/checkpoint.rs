//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "SIGLABCK"
//! version      u32
//! input ndim   u32, then ndim x u64 dims
//! layer count  u32
//! per layer:   kind u8, stride u32, tensor count u32,
//!              per tensor: ndim u32, ndim x u64 dims, raw f64 values
//! checksum     u64 FNV-1a over every preceding byte
//! ```
//!
//! Kind tags: 0 conv, 1 dense, 2 relu, 3 softmax head, 4 linear head. Heads
//! follow the trunk layers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Dense};
use crate::nn::network::{Head, HeadKind, Layer, Network};
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SIGLABCK";
pub const FORMAT_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_DENSE: u8 = 1;
const KIND_RELU: u8 = 2;
const KIND_SOFTMAX_HEAD: u8 = 3;
const KIND_LINEAR_HEAD: u8 = 4;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, net.input_shape().len() as u32);
    for &d in net.input_shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_u32(&mut out, (net.layers().len() + net.heads().len()) as u32);
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                out.push(KIND_CONV);
                put_u32(&mut out, c.stride as u32);
                put_u32(&mut out, 2);
                put_tensor(&mut out, &c.weight);
                put_tensor(&mut out, &c.bias);
            }
            Layer::Dense(d) => {
                out.push(KIND_DENSE);
                put_u32(&mut out, 0);
                put_u32(&mut out, 2);
                put_tensor(&mut out, &d.weight);
                put_tensor(&mut out, &d.bias);
            }
            Layer::Relu => {
                out.push(KIND_RELU);
                put_u32(&mut out, 0);
                put_u32(&mut out, 0);
            }
        }
    }
    for head in net.heads() {
        out.push(match head.kind {
            HeadKind::Softmax => KIND_SOFTMAX_HEAD,
            HeadKind::Linear => KIND_LINEAR_HEAD,
        });
        put_u32(&mut out, 0);
        put_u32(&mut out, 2);
        put_tensor(&mut out, &head.dense.weight);
        put_tensor(&mut out, &head.dense.bias);
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 8 {
            return Err(Error::Format(format!("implausible tensor rank {n}")));
        }
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.dims()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| Error::Format(format!("implausible tensor shape {shape:?}")))?;
        let raw = self.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    fn pair(&mut self) -> Result<(Tensor, Tensor)> {
        let n = self.u32()?;
        if n != 2 {
            return Err(Error::Format(format!("expected 2 tensors, found {n}")));
        }
        Ok((self.tensor()?, self.tensor()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != fnv1a64(body) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let input_shape = r.dims()?;
    let count = r.u32()?;
    let mut layers = Vec::new();
    let mut heads = Vec::new();
    for _ in 0..count {
        let kind = r.u8()?;
        let stride = r.u32()? as usize;
        match kind {
            KIND_CONV => {
                let (weight, bias) = r.pair()?;
                layers.push(Layer::Conv2d(Conv2d {
                    weight,
                    bias,
                    stride,
                }));
            }
            KIND_DENSE => {
                let (weight, bias) = r.pair()?;
                layers.push(Layer::Dense(Dense { weight, bias }));
            }
            KIND_RELU => {
                if r.u32()? != 0 {
                    return Err(Error::Format("relu layer carries tensors".into()));
                }
                layers.push(Layer::Relu);
            }
            KIND_SOFTMAX_HEAD | KIND_LINEAR_HEAD => {
                let (weight, bias) = r.pair()?;
                heads.push(Head {
                    kind: if kind == KIND_SOFTMAX_HEAD {
                        HeadKind::Softmax
                    } else {
                        HeadKind::Linear
                    },
                    dense: Dense { weight, bias },
                });
            }
            other => return Err(Error::Format(format!("unknown layer kind {other}"))),
        }
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    Network::new(input_shape, layers, heads).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and requires it to match `template`'s architecture.
pub fn load_matching(path: &Path, template: &Network) -> Result<Network> {
    let net = load(path)?;
    if !template.same_shape(&net) {
        return Err(Error::shape(
            "checkpoint architecture",
            template.input_shape(),
            net.input_shape(),
        ));
    }
    if net.layers().len() != template.layers().len()
        || net
            .heads()
            .iter()
            .zip(template.heads())
            .any(|(a, b)| a.kind != b.kind)
    {
        return Err(Error::shape(
            "checkpoint layer kinds",
            &[template.layers().len()],
            &[net.layers().len()],
        ));
    }
    Ok(net)
}
