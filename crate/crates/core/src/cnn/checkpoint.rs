//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "VIZPCKPT"
//! version      u32      1
//! config       u32 length + UTF-8 JSON of the CnnConfig
//! seed         u64
//! epochs_run   u64
//! input        u32 height, u32 width, u32 channels
//! history      u32 count + f64 per epoch
//! tensors      u32 count, then per tensor:
//!                u32 layer index, u8 role (0 weights, 1 bias),
//!                u8 rank, u32 per dimension, f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{CnnConfig, CnnModel, Layer, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VIZPCKPT";
pub const VERSION: u32 = 1;

fn tensor_shapes(layer: &Layer) -> Option<(Vec<usize>, Vec<usize>)> {
    match layer {
        Layer::Conv(c) => Some((
            vec![c.filters, c.kernel, c.kernel, c.in_channels],
            vec![c.filters],
        )),
        Layer::Dense(d) => Some((vec![d.outputs, d.inputs], vec![d.outputs])),
        Layer::MaxPool { .. } => None,
    }
}

pub fn to_bytes(m: &CnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(m.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&m.config().seed.to_le_bytes());
    out.extend_from_slice(&(m.epochs_run() as u64).to_le_bytes());
    let input = m.input_shape();
    for d in [input.height, input.width, input.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(m.loss_history().len() as u32).to_le_bytes());
    for l in m.loss_history() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    let count: usize = m.layers().iter().filter_map(tensor_shapes).count() * 2;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (i, layer) in m.layers().iter().enumerate() {
        let (Some((wshape, bshape)), Some((w, b))) = (tensor_shapes(layer), layer.params()) else {
            continue;
        };
        for (role, shape, values) in [(0u8, wshape, w), (1u8, bshape, b)] {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.push(role);
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format("checkpoint", "unexpected end of data"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CnnModel> {
    let bad = |m: String| Error::format("checkpoint", m);
    let mut cur = Cursor { bytes };
    if cur.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = cur.u32()? as usize;
    let config: CnnConfig =
        serde_json::from_slice(cur.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
    let seed = cur.u64()?;
    if seed != config.seed {
        return Err(bad("seed does not match the config".into()));
    }
    let epochs_run = cur.u64()? as usize;
    let input = Shape::new(
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    );
    let history = (0..cur.u32()?)
        .map(|_| cur.f64())
        .collect::<Result<Vec<_>>>()?;

    let mut model = CnnModel::zeros(&config, input)?;
    let count = cur.u32()? as usize;
    let expected: Vec<(usize, u8, Vec<usize>)> = model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| tensor_shapes(l).map(|(w, b)| [(i, 0, w), (i, 1, b)]))
        .flatten()
        .collect();
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, expected {}", expected.len())));
    }
    for (layer, role, shape) in expected {
        let (got_layer, got_role) = (cur.u32()? as usize, cur.u8()?);
        let rank = cur.u8()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if (got_layer, got_role, &dims) != (layer, role, &shape) {
            return Err(bad(format!(
                "tensor ({got_layer}, {got_role}, {dims:?}) where ({layer}, {role}, {shape:?}) was expected"
            )));
        }
        let values = (0..shape.iter().product::<usize>())
            .map(|_| cur.f64())
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite parameter in layer {layer}")));
        }
        let (w, b) = model.layers_mut()[layer]
            .params_mut()
            .expect("parametric layer");
        if role == 0 {
            *w = values;
        } else {
            *b = values;
        }
    }
    if !cur.bytes.is_empty() {
        return Err(bad(format!("{} trailing bytes", cur.bytes.len())));
    }
    model.set_training_metadata(epochs_run, history);
    Ok(model)
}

pub fn save(m: &CnnModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CnnModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::SpatialLayer;

    fn model() -> CnnModel {
        let cfg = CnnConfig {
            layers: vec![
                SpatialLayer::Conv {
                    filters: 3,
                    kernel: 2,
                    stride: 1,
                },
                SpatialLayer::MaxPool {
                    window: 2,
                    stride: 1,
                },
            ],
            dense_units: vec![5],
            num_classes: 3,
            seed: 11,
            ..Default::default()
        };
        let mut m = CnnModel::seeded(&cfg, Shape::new(4, 4, 3)).unwrap();
        m.set_training_metadata(2, vec![1.5, 0.75]);
        m
    }

    #[test]
    fn round_trip() {
        let m = model();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..8], MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(from_bytes(&magic).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(from_bytes(&nan).is_err());
    }
}
