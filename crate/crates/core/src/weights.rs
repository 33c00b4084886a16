//! The `FCW1` weight file: little-endian `u32` integers and `f32` values.
//!
//! ```text
//! "FCW1"
//! layer_count
//! per layer:  out_dim in_dim activation_id  weights[out×in]  bias[out]
//! block_count
//! per block:  offset length activation_id
//! group_count  class_count[group_count]  continuous  v_dim  r_c  r_v
//! ```
//!
//! An all-zero layout section means "no layout". Trailing bytes are an
//! error.

use std::path::Path;

use crate::error::{Error, Result};
use crate::generative::LatentLayout;
use crate::mlp::{Activation, DenseLayer, MlpNetwork, OutputBlock, OutputBlockSpec};
use crate::tensor::{DenseMatrix, DenseVector};

pub const MAGIC: &[u8; 4] = b"FCW1";

pub fn encode(net: &MlpNetwork, layout: Option<&LatentLayout>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: usize| {
        out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes())
    };
    let put_f32 = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());

    put_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        put_u32(&mut out, layer.out_dim());
        put_u32(&mut out, layer.in_dim());
        put_u32(&mut out, layer.activation().id() as usize);
        for &w in layer.weights().data() {
            put_f32(&mut out, w);
        }
        for &b in layer.bias().iter() {
            put_f32(&mut out, b);
        }
    }
    let blocks = net.output_blocks().blocks();
    put_u32(&mut out, blocks.len());
    for b in blocks {
        put_u32(&mut out, b.offset);
        put_u32(&mut out, b.len);
        put_u32(&mut out, b.activation.id() as usize);
    }
    match layout {
        Some(l) => {
            put_u32(&mut out, l.categorical_groups().len());
            for &k in l.categorical_groups() {
                put_u32(&mut out, k);
            }
            put_u32(&mut out, l.continuous_codes());
            put_u32(&mut out, l.v_dim());
            put_f32(&mut out, l.r_c());
            put_f32(&mut out, l.r_v());
        }
        None => {
            for _ in 0..3 {
                put_u32(&mut out, 0);
            }
            put_f32(&mut out, 0.0);
            put_f32(&mut out, 0.0);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, count: usize) -> Result<()> {
        let expected = self.pos.saturating_add(count);
        if expected > self.bytes.len() {
            return Err(Error::Truncated {
                expected,
                actual: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        self.need(4)?;
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        self.pos += 4;
        Ok(v)
    }

    fn f32(&mut self) -> Result<f64> {
        self.need(4)?;
        let v = f32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        self.pos += 4;
        Ok(v as f64)
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        self.need(count.saturating_mul(4))?;
        (0..count).map(|_| self.f32()).collect()
    }

    fn activation(&mut self) -> Result<Activation> {
        let at = self.pos;
        let id = self.u32()?;
        Activation::from_id(id).ok_or_else(|| Error::Format {
            offset: at,
            message: format!("unknown activation id {id}"),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<(MlpNetwork, Option<LatentLayout>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected \"FCW1\"".into(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let layer_count = r.u32()? as usize;
    if layer_count == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "layer count is zero".into(),
        });
    }
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    let mut prev_out: Option<usize> = None;
    for k in 0..layer_count {
        let at = r.pos;
        let out_dim = r.u32()? as usize;
        let in_dim = r.u32()? as usize;
        if let Some(p) = prev_out {
            if p != in_dim {
                return Err(Error::Format {
                    offset: at + 4,
                    message: format!("layer {k} in_dim {in_dim} does not chain from out_dim {p}"),
                });
            }
        }
        let act_at = r.pos;
        let act = r.activation()?;
        if act == Activation::Softmax {
            return Err(Error::Format {
                offset: act_at,
                message: format!("layer {k} uses softmax, which is only allowed on output blocks"),
            });
        }
        let w = r.f32_vec(out_dim.saturating_mul(in_dim))?;
        let b = r.f32_vec(out_dim)?;
        let weights = DenseMatrix::new(out_dim, in_dim, w)?;
        let layer = DenseLayer::new(weights, DenseVector::new(b), act).map_err(|e| Error::Format {
            offset: at,
            message: format!("layer {k}: {e}"),
        })?;
        layers.push(layer);
        prev_out = Some(out_dim);
    }
    let blocks_at = r.pos;
    let block_count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(block_count.min(1024));
    for _ in 0..block_count {
        let offset = r.u32()? as usize;
        let len = r.u32()? as usize;
        let activation = r.activation()?;
        blocks.push(OutputBlock { offset, len, activation });
    }
    let out_dim = prev_out.expect("at least one layer");
    let spec = OutputBlockSpec::new(blocks, out_dim).map_err(|e| Error::Format {
        offset: blocks_at,
        message: format!("output blocks: {e}"),
    })?;
    let net = MlpNetwork::new(layers, spec)?;

    let layout_at = r.pos;
    let group_count = r.u32()? as usize;
    r.need(group_count.saturating_mul(4))?;
    let groups = (0..group_count).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let continuous = r.u32()? as usize;
    let v_dim = r.u32()? as usize;
    let r_c = r.f32()?;
    let r_v = r.f32()?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let layout = if group_count == 0 && continuous == 0 && v_dim == 0 && r_c == 0.0 && r_v == 0.0 {
        None
    } else {
        Some(
            LatentLayout::with_radii(groups, continuous, v_dim, r_c, r_v).map_err(|e| Error::Format {
                offset: layout_at,
                message: format!("latent layout: {e}"),
            })?,
        )
    };
    Ok((net, layout))
}

pub fn save_weights(net: &MlpNetwork, layout: Option<&LatentLayout>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(net, layout))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(MlpNetwork, Option<LatentLayout>)> {
    decode(&std::fs::read(path)?)
}
