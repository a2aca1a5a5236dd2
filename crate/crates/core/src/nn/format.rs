//! `RBNN` weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic     b"RBNN"
//! version   u16                 (currently 1)
//! records   u16                 (one input record + one per layer)
//! record    tag u8              (kind in the low nibble, activation in the high nibble)
//!           ndims u32, dims u32 * ndims
//!           payload f32 * n     (weights then bias; empty for parameter-free layers)
//! crc       u32                 CRC-32 (IEEE) over all payload bytes in file order
//! ```
//!
//! Record dims: input `[H, W, C]`, conv `[kh, kw, C, F]`, pool `[2, 2]`,
//! dropout `[rate in parts per million]`, flatten `[]`, dense `[N, M]`.

use super::network::{Activation, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RBNN";
pub const VERSION: u16 = 1;

const KIND_INPUT: u8 = 0;
const KIND_CONV: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_DROPOUT: u8 = 3;
const KIND_FLATTEN: u8 = 4;
const KIND_DENSE: u8 = 5;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Softmax => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::None),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Softmax),
        c => Err(Error::Corrupt(format!("unknown activation code {c}"))),
    }
}

struct Writer {
    bytes: Vec<u8>,
    crc: crc32fast::Hasher,
}

impl Writer {
    fn header(&mut self, tag: u8, dims: &[usize]) {
        self.bytes.push(tag);
        self.bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            self.bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }

    fn payload(&mut self, values: &[f64]) {
        let start = self.bytes.len();
        for &v in values {
            self.bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.crc.update(&self.bytes[start..]);
    }
}

/// Serializes a network; parameters are stored as 32-bit floats.
pub fn encode(network: &Network) -> Vec<u8> {
    let mut w = Writer { bytes: Vec::new(), crc: crc32fast::Hasher::new() };
    w.bytes.extend_from_slice(MAGIC);
    w.bytes.extend_from_slice(&VERSION.to_le_bytes());
    w.bytes.extend_from_slice(&((network.layers().len() + 1) as u16).to_le_bytes());
    w.header(KIND_INPUT, network.input_shape());
    for (i, layer) in network.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Conv2D { activation, .. } | LayerSpec::Dense { activation, .. } => {
                let kind = if matches!(layer, LayerSpec::Conv2D { .. }) { KIND_CONV } else { KIND_DENSE };
                let p = network.layer_params(i).expect("parametrized layer");
                w.header(kind | activation_code(activation) << 4, p.weights().shape());
                w.payload(p.weights().data());
                w.payload(p.bias().data());
            }
            LayerSpec::MaxPool2D => w.header(KIND_POOL, &[2, 2]),
            LayerSpec::Dropout { rate } => w.header(KIND_DROPOUT, &[(rate * 1e6).round() as usize]),
            LayerSpec::Flatten => w.header(KIND_FLATTEN, &[]),
        }
    }
    let crc = w.crc.finalize();
    w.bytes.extend_from_slice(&crc.to_le_bytes());
    w.bytes
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    crc: crc32fast::Hasher,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 8 {
            return Err(Error::Corrupt(format!("implausible rank {n}")));
        }
        (0..n).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn payload(&mut self, shape: &[usize]) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let raw = self.take(count.checked_mul(4).ok_or_else(|| Error::Corrupt("payload size overflow".into()))?)?;
        self.crc.update(raw);
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::new(shape.to_vec(), values).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// Parses an `RBNN` file. Any truncation, CRC mismatch or inconsistent layer
/// record fails without returning a partial network.
pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0, crc: crc32fast::Hasher::new() };
    if r.take(4)? != MAGIC {
        return Err(Error::Corrupt("missing RBNN magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported RBNN version {version}")));
    }
    let records = r.u16()? as usize;
    if records < 2 {
        return Err(Error::Corrupt(format!("{records} records; need an input record and at least one layer")));
    }
    let tag = r.u8()?;
    let input = r.dims()?;
    let input: [usize; 3] = match (tag, input.as_slice()) {
        (KIND_INPUT, &[h, w, c]) => [h, w, c],
        _ => return Err(Error::Corrupt("first record must be the HxWxC input".into())),
    };

    let mut layers = Vec::with_capacity(records - 1);
    let mut params = Vec::new();
    for _ in 1..records {
        let tag = r.u8()?;
        let (kind, activation) = (tag & 0x0f, activation_from(tag >> 4)?);
        let dims = r.dims()?;
        let layer = match (kind, dims.as_slice()) {
            (KIND_CONV, &[kh, kw, _, f]) => {
                params.push((r.payload(&dims)?, r.payload(&[f])?));
                LayerSpec::Conv2D { filters: f, kernel: (kh, kw), activation }
            }
            (KIND_DENSE, &[_, m]) => {
                params.push((r.payload(&dims)?, r.payload(&[m])?));
                LayerSpec::Dense { units: m, activation }
            }
            (KIND_POOL, &[2, 2]) => LayerSpec::MaxPool2D,
            (KIND_DROPOUT, &[ppm]) => LayerSpec::Dropout { rate: ppm as f64 / 1e6 },
            (KIND_FLATTEN, &[]) => LayerSpec::Flatten,
            _ => return Err(Error::Corrupt(format!("bad layer record: tag {tag:#04x}, dims {dims:?}"))),
        };
        layers.push(layer);
    }
    let computed = r.crc.clone().finalize();
    let stored = r.u32()?;
    if computed != stored {
        return Err(Error::Corrupt(format!("payload CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after CRC", bytes.len() - r.pos)));
    }
    Network::from_parts(input, layers, params).map_err(|e| Error::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelVariant;

    #[test]
    fn reencode_is_bit_exact() {
        for variant in [ModelVariant::Dia, ModelVariant::NoDia] {
            let net = variant.build(3);
            let bytes = encode(&net);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.layers(), net.layers());
            assert_eq!(encode(&back), bytes);
            for (a, b) in back.flat_params().iter().zip(net.flat_params()) {
                assert_eq!(*a, b as f32 as f64);
            }
        }
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = encode(&ModelVariant::NoDia.build(1));
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        // The last parameter byte sits just before the 4-byte CRC.
        let mut flipped = bytes.clone();
        let i = bytes.len() - 5;
        flipped[i] ^= 0x40;
        let err = decode(&flipped).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
