//! Minimal FITS support: a single primary HDU holding an uncompressed 2-D image.

use crate::error::{Error, Result};
use crate::preprocess::{PostageStamp, Role, STAMP_SIZE};
use crate::tensor::Tensor;

pub const BLOCK: usize = 2880;
pub const CARD: usize = 80;

/// Header cards in file order. Values keep their raw text (quotes stripped for strings).
#[derive(Debug, Clone, PartialEq)]
pub struct FitsHeader {
    cards: Vec<(String, String)>,
    pub bitpix: i32,
    /// Axis lengths, `NAXIS1` (columns) first.
    pub naxis: Vec<usize>,
    pub bscale: f64,
    pub bzero: f64,
}

impl FitsHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.cards.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn cards(&self) -> &[(String, String)] {
        &self.cards
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitsImage {
    pub header: FitsHeader,
    /// Physical values, `[NAXIS2, NAXIS1]`, first stored row first.
    pub pixels: Tensor,
}

fn parse_err(card: usize, msg: impl Into<String>) -> Error {
    Error::FitsParse { card, msg: msg.into() }
}

/// Splits a card into keyword and value text, if it has a value indicator.
fn split_card(card: &[u8], index: usize) -> Result<(String, Option<String>)> {
    if !card.iter().all(|b| (0x20..=0x7e).contains(b)) {
        return Err(parse_err(index, "card contains non-ASCII or control bytes"));
    }
    let text = std::str::from_utf8(card).expect("checked ASCII");
    let key = text[..8].trim_end().to_string();
    if &text[8..10] != "= " {
        return Ok((key, None));
    }
    let rest = text[10..].trim_start();
    let value = if let Some(body) = rest.strip_prefix('\'') {
        let mut out = String::new();
        let mut chars = body.chars().peekable();
        loop {
            match chars.next() {
                Some('\'') if chars.peek() == Some(&'\'') => {
                    chars.next();
                    out.push('\'');
                }
                Some('\'') => break,
                Some(c) => out.push(c),
                None => return Err(parse_err(index, format!("unterminated string in {key}"))),
            }
        }
        out.trim_end().to_string()
    } else {
        rest.split('/').next().unwrap_or("").trim().to_string()
    };
    Ok((key, Some(value)))
}

fn parse_int(value: &str, key: &str, card: usize) -> Result<i64> {
    value.parse().map_err(|_| parse_err(card, format!("{key} = `{value}` is not an integer")))
}

fn parse_real(value: &str, key: &str, card: usize) -> Result<f64> {
    value
        .replace(['D', 'd'], "E")
        .parse()
        .map_err(|_| parse_err(card, format!("{key} = `{value}` is not a number")))
}

/// Parses the header; returns it with the byte offset where the data begins.
pub fn parse_header(bytes: &[u8]) -> Result<(FitsHeader, usize)> {
    let mut cards = Vec::new();
    let mut end = None;
    for (i, card) in bytes.chunks(CARD).enumerate() {
        if card.len() < CARD {
            return Err(parse_err(i, "file ends inside a header card"));
        }
        let (key, value) = split_card(card, i)?;
        if i == 0 && (key != "SIMPLE" || value.as_deref() != Some("T")) {
            return Err(parse_err(0, "header must begin with SIMPLE = T"));
        }
        if key == "END" {
            end = Some(i);
            break;
        }
        if let Some(v) = value {
            cards.push((key, v, i));
        }
    }
    let end = end.ok_or_else(|| parse_err(bytes.len() / CARD, "no END card"))?;
    let data_start = ((end + 1) * CARD).div_ceil(BLOCK) * BLOCK;

    let find = |key: &str| cards.iter().find(|(k, _, _)| k == key);
    let required = |key: &str| find(key).ok_or_else(|| parse_err(end, format!("missing required keyword {key}")));

    let (_, v, at) = required("BITPIX")?;
    let bitpix = parse_int(v, "BITPIX", *at)? as i32;
    let (_, v, at) = required("NAXIS")?;
    let n = parse_int(v, "NAXIS", *at)?;
    if !(0..=999).contains(&n) {
        return Err(parse_err(*at, format!("NAXIS = {n} out of range")));
    }
    let mut naxis = Vec::new();
    for k in 1..=n {
        let key = format!("NAXIS{k}");
        let (_, v, at) = required(&key)?;
        let len = parse_int(v, &key, *at)?;
        naxis.push(usize::try_from(len).map_err(|_| parse_err(*at, format!("{key} = {len} is negative")))?);
    }
    let real_or = |key: &str, default: f64| match find(key) {
        Some((_, v, at)) => parse_real(v, key, *at),
        None => Ok(default),
    };
    let bscale = real_or("BSCALE", 1.0)?;
    let bzero = real_or("BZERO", 0.0)?;
    let cards = cards.into_iter().map(|(k, v, _)| (k, v)).collect();
    Ok((FitsHeader { cards, bitpix, naxis, bscale, bzero }, data_start))
}

/// Reads a 2-D primary image of any size.
pub fn read_fits(bytes: &[u8]) -> Result<FitsImage> {
    let (header, start) = parse_header(bytes)?;
    let width = match header.bitpix {
        16 => 2,
        32 => 4,
        -32 => 4,
        -64 => 8,
        b => return Err(Error::UnsupportedFormat(format!("BITPIX = {b}"))),
    };
    if header.get("XTENSION").is_some() || header.get("ZIMAGE").is_some() {
        return Err(Error::UnsupportedFormat("extensions and compressed images are not supported".into()));
    }
    let &[nx, ny] = header.naxis.as_slice() else {
        return Err(Error::dim("read_fits", format!("expected a 2-D image, got NAXIS = {}", header.naxis.len())));
    };
    let count = nx * ny;
    let data = bytes
        .get(start..start + count * width)
        .ok_or_else(|| Error::Corrupt(format!("FITS data truncated: need {} bytes after the header", count * width)))?;
    let (scale, zero) = (header.bscale, header.bzero);
    let values: Vec<f64> = match header.bitpix {
        16 => data.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]]) as f64).collect(),
        32 => data.chunks_exact(4).map(|c| i32::from_be_bytes(c.try_into().expect("4")) as f64).collect(),
        -32 => data.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().expect("4")) as f64).collect(),
        _ => data.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8"))).collect(),
    };
    let physical = if scale == 1.0 && zero == 0.0 {
        values
    } else {
        values.into_iter().map(|v| zero + scale * v).collect()
    };
    Ok(FitsImage { pixels: Tensor::new(vec![ny, nx], physical)?, header })
}

/// Reads a 51x51 postage stamp.
pub fn read_fits_stamp(bytes: &[u8], id: &str, role: Role) -> Result<PostageStamp> {
    let image = read_fits(bytes)?;
    if image.pixels.shape() != [STAMP_SIZE, STAMP_SIZE] {
        return Err(Error::dim(
            "read_fits_stamp",
            format!("stamp `{id}` ({role}) is {:?}, expected {STAMP_SIZE}x{STAMP_SIZE}", image.pixels.shape()),
        ));
    }
    PostageStamp::from_grid(id, role, image.pixels)
}

fn card(key: &str, value: &str) -> String {
    format!("{key:<8}= {value:>20}")
}

fn real_text(v: f64) -> String {
    let s = format!("{v:E}");
    match s.split_once('E') {
        Some((m, e)) if !m.contains('.') => format!("{m}.0E{e}"),
        _ => s,
    }
}

fn string_text(s: &str) -> String {
    format!("'{:<8}'", s.replace('\'', "''"))
}

/// Serializes a stamp as a standalone FITS file. Integer BITPIX values use a
/// linear BSCALE/BZERO quantization spanning the stamp's range.
pub fn write_fits_stamp(stamp: &PostageStamp, bitpix: i32) -> Result<Vec<u8>> {
    write_fits_image(stamp.pixels(), bitpix, &[("EXTNAME", stamp.role().as_str()), ("OBJECT", stamp.id())])
}

/// Writes a 2-D image; `extra` string cards are appended after the structural keywords.
pub fn write_fits_image(pixels: &Tensor, bitpix: i32, extra: &[(&str, &str)]) -> Result<Vec<u8>> {
    let &[ny, nx] = pixels.shape() else {
        return Err(Error::dim("write_fits", format!("expected a 2-D image, got {:?}", pixels.shape())));
    };
    let values = pixels.data();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let imax = match bitpix {
        16 => i16::MAX as f64,
        32 => i32::MAX as f64,
        -32 | -64 => 0.0,
        b => return Err(Error::UnsupportedFormat(format!("cannot write BITPIX = {b}"))),
    };
    let (bzero, bscale) = if imax == 0.0 {
        (0.0, 1.0)
    } else if hi > lo {
        ((hi + lo) / 2.0, (hi - lo) / (2.0 * (imax - 1.0)))
    } else {
        (lo, 1.0)
    };

    let mut cards = vec![
        card("SIMPLE", "T"),
        card("BITPIX", &bitpix.to_string()),
        card("NAXIS", "2"),
        card("NAXIS1", &nx.to_string()),
        card("NAXIS2", &ny.to_string()),
    ];
    if imax != 0.0 {
        cards.push(card("BSCALE", &real_text(bscale)));
        cards.push(card("BZERO", &real_text(bzero)));
    }
    for (k, v) in extra {
        if k.len() > 8 || v.len() > 60 {
            return Err(Error::Parameter(format!("FITS card {k} = {v} does not fit")));
        }
        cards.push(card(k, &string_text(v)));
    }
    cards.push("END".to_string());

    let mut out = Vec::with_capacity(BLOCK * 4);
    for c in &cards {
        out.extend_from_slice(format!("{c:<80}").as_bytes());
    }
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, b' ');
    let quantize = |v: f64| ((v - bzero) / bscale).round();
    for &v in values {
        match bitpix {
            16 => out.extend_from_slice(&(quantize(v) as i16).to_be_bytes()),
            32 => out.extend_from_slice(&(quantize(v) as i32).to_be_bytes()),
            -32 => out.extend_from_slice(&(v as f32).to_be_bytes()),
            _ => out.extend_from_slice(&v.to_be_bytes()),
        }
    }
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, 0);
    Ok(out)
}
