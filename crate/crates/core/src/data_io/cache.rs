//! `RBCC` cache of preprocessed composites.
//!
//! ```text
//! magic    b"RBCC"
//! version  u16 (1)
//! count    u32
//! width    u32      (153 triplet or 102 pair)
//! record   id_len u16, id utf-8, label u8 (0, 1, or 255 for none), 51 * width f32 pixels
//! crc      u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::preprocess::{composite_from_pixels, CompositeImage, Layout, STAMP_SIZE};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RBCC";
pub const VERSION: u16 = 1;
const NO_LABEL: u8 = 255;

pub fn encode_composites(images: &[CompositeImage]) -> Result<Vec<u8>> {
    let width = images.first().map_or(Layout::Triplet.width(), CompositeImage::width);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(images.len() as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for img in images {
        if img.width() != width {
            return Err(Error::dim("encode_composites", format!("mixed widths {width} and {}", img.width())));
        }
        let id = img.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::Parameter(format!("id `{}` too long", img.id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.push(img.label.map_or(NO_LABEL, |l| l.index() as u8));
        for &v in img.pixels().data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_composites(bytes: &[u8]) -> Result<Vec<CompositeImage>> {
    let corrupt = |m: String| Error::Corrupt(format!("composite cache: {m}"));
    if bytes.len() < 18 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing RBCC header".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(corrupt("CRC mismatch".into()));
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(body[6..10].try_into().expect("4")) as usize;
    let width = u32::from_le_bytes(body[10..14].try_into().expect("4")) as usize;
    let layout = Layout::from_width(width).ok_or_else(|| corrupt(format!("width {width}")))?;
    let mut pos = 14;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| corrupt(format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    let mut images = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
        let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| corrupt("id is not UTF-8".into()))?;
        let label = match take(1)?[0] {
            NO_LABEL => None,
            v => Some(Label::try_from(v).map_err(|e| corrupt(e.to_string()))?),
        };
        let pixels = take(STAMP_SIZE * width * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
            .collect();
        let pixels = Tensor::new(vec![STAMP_SIZE, width, 1], pixels)?;
        images.push(composite_from_pixels(layout, pixels)?.with_meta(id, label));
    }
    if pos != body.len() {
        return Err(corrupt(format!("{} unexpected trailing bytes", body.len() - pos)));
    }
    Ok(images)
}
