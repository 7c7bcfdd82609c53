//! Versioned bitstream container and full-image encode/decode.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SLIB" | version u16 | height u32 | width u32 | channels u32
//! | alphabet lo i32 | alphabet hi i32 | tile_size u16 | threshold (micro) u32
//! | dictionary digest u64 | index len u32 | custom len u32 | payload len u32
//! | index section (raw RFC 1951 DEFLATE) | custom section | payload
//! | CRC-32 u32
//! ```
//!
//! The CRC-32 (polynomial 0xEDB88320) covers every preceding byte and is the
//! single corruption gate for the stream. `tile_size` 0 marks a
//! global-baseline stream: no index plane, no custom block, every code coded
//! under one out-of-band model.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::coder::{CdfTable, RangeDecoder, RangeEncoder};
use crate::dictionary::{digest_single_model, Dictionary, Multinomial, CUSTOM_MODEL_INDEX};
use crate::error::{Error, Result};
use crate::select::{
    custom_coding_table, plan_channel, ChannelAccounting, QuantizedDist, TilePlan,
};
use crate::tensor::{grid_len, tile_partition, Alphabet, CodeTensor, Reader};

/// Magic bytes opening a bitstream file.
pub const BITSTREAM_MAGIC: [u8; 4] = *b"SLIB";
/// Bitstream format version written and accepted by this build.
pub const BITSTREAM_VERSION: u16 = 1;
/// Fixed header length in bytes, section lengths included.
pub const HEADER_LEN: usize = 52;

/// Parsed fixed header of a bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub alphabet: Alphabet,
    /// 0 marks a global-baseline stream.
    pub tile_size: u16,
    /// Inclusion threshold in micro-units (5000 = 0.5%). Recorded for
    /// reproducibility; the decoder never consults it.
    pub threshold_micro: u32,
    pub dict_digest: u64,
}

/// A complete, checksummed bitstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub index_section: Vec<u8>,
    pub custom_section: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Bitstream {
    /// Serialize, appending the CRC-32 trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(&BITSTREAM_MAGIC);
        out.extend_from_slice(&BITSTREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.header.height.to_le_bytes());
        out.extend_from_slice(&self.header.width.to_le_bytes());
        out.extend_from_slice(&self.header.channels.to_le_bytes());
        out.extend_from_slice(&self.header.alphabet.lo.to_le_bytes());
        out.extend_from_slice(&self.header.alphabet.hi.to_le_bytes());
        out.extend_from_slice(&self.header.tile_size.to_le_bytes());
        out.extend_from_slice(&self.header.threshold_micro.to_le_bytes());
        out.extend_from_slice(&self.header.dict_digest.to_le_bytes());
        out.extend_from_slice(&(self.index_section.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.custom_section.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        out.extend_from_slice(&self.index_section);
        out.extend_from_slice(&self.custom_section);
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse and checksum-verify a bitstream file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::format(bytes.len(), "truncated bitstream"));
        }
        let body_len = bytes.len() - 4;
        let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let actual_crc = crc32fast::hash(&bytes[..body_len]);
        if stored_crc != actual_crc {
            return Err(Error::Corruption(format!(
                "bitstream checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }
        let mut r = Reader::new(&bytes[..body_len]);
        let magic = r.take(4, "magic")?;
        if magic != BITSTREAM_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"SLIB\""));
        }
        let version = r.u16("version")?;
        if version != BITSTREAM_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported bitstream version {version}"),
            ));
        }
        let height = r.u32("height")?;
        let width = r.u32("width")?;
        let channels = r.u32("channels")?;
        let lo = r.i32("alphabet lo")?;
        let hi = r.i32("alphabet hi")?;
        let alphabet =
            Alphabet::new(lo, hi).map_err(|e| Error::format(18, format!("bad alphabet: {e}")))?;
        let tile_size = r.u16("tile_size")?;
        let threshold_micro = r.u32("threshold")?;
        let dict_digest = r.u64("dictionary digest")?;
        let index_len = r.u32("index section length")? as usize;
        let custom_len = r.u32("custom section length")? as usize;
        let payload_len = r.u32("payload length")? as usize;
        let expected = HEADER_LEN + index_len + custom_len + payload_len;
        if body_len != expected {
            return Err(Error::format(
                body_len.min(expected),
                format!("section lengths claim {expected} bytes, file holds {body_len}"),
            ));
        }
        let index_section = r.take(index_len, "index section")?.to_vec();
        let custom_section = r.take(custom_len, "custom section")?.to_vec();
        let payload = r.take(payload_len, "payload")?.to_vec();
        Ok(Bitstream {
            header: Header {
                height,
                width,
                channels,
                alphabet,
                tile_size,
                threshold_micro,
                dict_digest,
            },
            index_section,
            custom_section,
            payload,
        })
    }

    /// Total serialized size in bytes, CRC trailer included.
    pub fn total_len(&self) -> usize {
        HEADER_LEN + self.index_section.len() + self.custom_section.len() + self.payload.len() + 4
    }
}

/// Raw RFC 1951 DEFLATE of the index plane.
pub fn compress_indices(indices: &[u8]) -> Vec<u8> {
    let mut enc = flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(indices)
        .expect("writing to a Vec cannot fail");
    enc.finish().expect("deflating to a Vec cannot fail")
}

/// Inverse of [`compress_indices`]; the caller states the exact expected size.
pub fn decompress_indices(bytes: &[u8], expected_len: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(expected_len.min(1 << 24));
    let mut dec = flate2::read::DeflateDecoder::new(bytes).take(expected_len as u64 + 1);
    dec.read_to_end(&mut out)
        .map_err(|e| Error::format(0, format!("malformed DEFLATE stream: {e}")))?;
    if out.len() != expected_len {
        return Err(Error::format(
            0,
            format!(
                "index plane decompressed to {} bytes, expected {expected_len}",
                out.len()
            ),
        ));
    }
    Ok(out)
}

fn serialize_customs(customs: &[Option<QuantizedDist>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(customs.len() as u32).to_le_bytes());
    for c in customs {
        match c {
            None => out.push(0),
            Some(qd) => {
                out.push(1);
                out.extend_from_slice(&qd.first_symbol.to_le_bytes());
                out.extend_from_slice(&qd.last_symbol.to_le_bytes());
                out.extend_from_slice(&qd.weights);
            }
        }
    }
    out
}

fn parse_customs(
    bytes: &[u8],
    channels: usize,
    alphabet: Alphabet,
) -> Result<Vec<Option<QuantizedDist>>> {
    let mut r = Reader::new(bytes);
    let count = r.u32("custom channel count")? as usize;
    if count != channels {
        return Err(Error::format(
            0,
            format!("custom block lists {count} channels, header says {channels}"),
        ));
    }
    let mut customs = Vec::with_capacity(channels);
    for z in 0..channels {
        let flag = r.take(1, "custom presence flag")?[0];
        match flag {
            0 => customs.push(None),
            1 => {
                let first = r.i32("custom first symbol")?;
                let last = r.i32("custom last symbol")?;
                if !alphabet.contains(first) || !alphabet.contains(last) || first > last {
                    return Err(Error::format(
                        r.pos,
                        format!("channel {z} custom span [{first}, {last}] is invalid"),
                    ));
                }
                let span = (last as i64 - first as i64 + 1) as usize;
                let weights = r.take(span, "custom weights")?.to_vec();
                if weights.iter().all(|&w| w == 0) {
                    return Err(Error::format(r.pos, "custom weights are all zero"));
                }
                customs.push(Some(QuantizedDist {
                    first_symbol: first,
                    last_symbol: last,
                    weights,
                }));
            }
            other => {
                return Err(Error::format(
                    r.pos,
                    format!("invalid custom presence flag {other}"),
                ))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes in custom block"));
    }
    Ok(customs)
}

fn check_geometry(tensor: &CodeTensor) -> Result<()> {
    if tensor.height() > u32::MAX as usize
        || tensor.width() > u32::MAX as usize
        || tensor.channels() > u32::MAX as usize
    {
        return Err(Error::invalid("tensor dimensions exceed the header fields"));
    }
    Ok(())
}

/// Cell count of a decoded tensor, guarded against crafted headers whose
/// dimensions overflow or demand absurd allocations.
fn decode_cells(height: usize, width: usize, channels: usize) -> Result<Vec<i32>> {
    let cells = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::format(6, "header dimensions overflow"))?;
    let mut values = Vec::new();
    if values.try_reserve_exact(cells).is_err() {
        return Err(Error::format(
            6,
            format!("header claims {cells} cells, allocation refused"),
        ));
    }
    values.resize(cells, 0);
    Ok(values)
}

/// Encode a tensor and return the per-tile plan alongside the bitstream.
pub fn encode_image_with_plan(
    tensor: &CodeTensor,
    dict: &Dictionary,
    tile_size: usize,
    threshold: f64,
) -> Result<(Bitstream, TilePlan)> {
    if tensor.alphabet() != dict.alphabet() {
        return Err(Error::invalid(
            "tensor alphabet differs from the dictionary alphabet",
        ));
    }
    if tile_size == 0 || tile_size > u16::MAX as usize {
        return Err(Error::invalid("tile_size must lie in 1..=65535"));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    check_geometry(tensor)?;

    let tiles = tile_partition(tensor, tile_size)?;
    let grid_h = grid_len(tensor.height(), tile_size);
    let grid_w = grid_len(tensor.width(), tile_size);
    let tpc = grid_h * grid_w;
    let channels = tensor.channels();

    let plans = (0..channels)
        .into_par_iter()
        .map(|z| plan_channel(&tiles[z * tpc..(z + 1) * tpc], dict, threshold))
        .collect::<Result<Vec<_>>>()?;

    let mut indices = Vec::with_capacity(tpc * channels);
    let mut customs = Vec::with_capacity(channels);
    let mut accounting = Vec::with_capacity(channels);
    for plan in plans {
        indices.extend_from_slice(&plan.indices);
        customs.push(plan.custom);
        accounting.push(plan.accounting);
    }
    let plan = TilePlan {
        tile_size,
        grid_h,
        grid_w,
        channels,
        indices,
        custom: customs,
        accounting,
    };
    plan.validate(dict.k())?;

    let alphabet = tensor.alphabet();
    let mut enc = RangeEncoder::new();
    for z in 0..channels {
        let custom_cdf = match &plan.custom[z] {
            Some(qd) => Some(custom_coding_table(qd, alphabet)?),
            None => None,
        };
        for t in 0..tpc {
            let tile = &tiles[z * tpc + t];
            let idx = plan.indices[z * tpc + t];
            let table = if idx == CUSTOM_MODEL_INDEX {
                custom_cdf.as_ref().expect("validated plan")
            } else {
                dict.cdf(idx as usize)
            };
            for &code in &tile.codes {
                enc.encode(table, alphabet.index_of(code));
            }
        }
    }
    let payload = enc.finish();

    let bitstream = Bitstream {
        header: Header {
            height: tensor.height() as u32,
            width: tensor.width() as u32,
            channels: channels as u32,
            alphabet,
            tile_size: tile_size as u16,
            threshold_micro: (threshold * 1e6).round() as u32,
            dict_digest: dict.digest(),
        },
        index_section: compress_indices(&plan.indices),
        custom_section: serialize_customs(&plan.custom),
        payload,
    };
    Ok((bitstream, plan))
}

/// Encode a tensor into a self-contained bitstream.
pub fn encode_image(
    tensor: &CodeTensor,
    dict: &Dictionary,
    tile_size: usize,
    threshold: f64,
) -> Result<Bitstream> {
    encode_image_with_plan(tensor, dict, tile_size, threshold).map(|(bs, _)| bs)
}

/// Decode a bitstream back to the exact original tensor.
pub fn decode_image(bs: &Bitstream, dict: &Dictionary) -> Result<CodeTensor> {
    if bs.header.dict_digest != dict.digest() {
        return Err(Error::DictionaryMismatch {
            expected: bs.header.dict_digest,
            actual: dict.digest(),
        });
    }
    if bs.header.tile_size == 0 {
        return Err(Error::invalid(
            "global-baseline stream: decode it with its global model",
        ));
    }
    let height = bs.header.height as usize;
    let width = bs.header.width as usize;
    let channels = bs.header.channels as usize;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::format(6, "dimensions must all be >= 1"));
    }
    let alphabet = bs.header.alphabet;
    let tile_size = bs.header.tile_size as usize;
    let grid_h = grid_len(height, tile_size);
    let grid_w = grid_len(width, tile_size);
    let mut values = decode_cells(height, width, channels)?;
    let tpc = grid_h * grid_w;
    let plane_len = tpc
        .checked_mul(channels)
        .ok_or_else(|| Error::format(6, "header dimensions overflow"))?;

    let indices = decompress_indices(&bs.index_section, plane_len)?;
    let customs = parse_customs(&bs.custom_section, channels, alphabet)?;
    let plan = TilePlan {
        tile_size,
        grid_h,
        grid_w,
        channels,
        indices,
        custom: customs,
        accounting: Vec::new(),
    };
    plan.validate(dict.k())
        .map_err(|e| Error::format(HEADER_LEN, format!("invalid index plane: {e}")))?;

    let mut dec = RangeDecoder::new(&bs.payload);
    for z in 0..channels {
        let custom_cdf = match &plan.custom[z] {
            Some(qd) => Some(custom_coding_table(qd, alphabet)?),
            None => None,
        };
        for ty in 0..grid_h {
            let y0 = ty * tile_size;
            let y1 = (y0 + tile_size).min(height);
            for tx in 0..grid_w {
                let x0 = tx * tile_size;
                let x1 = (x0 + tile_size).min(width);
                let idx = plan.indices[z * tpc + ty * grid_w + tx];
                let table: &CdfTable = if idx == CUSTOM_MODEL_INDEX {
                    custom_cdf.as_ref().expect("validated plan")
                } else {
                    dict.cdf(idx as usize)
                };
                for y in y0..y1 {
                    for x in x0..x1 {
                        let s = dec.decode(table);
                        values[(y * width + x) * channels + z] = alphabet.value_at(s);
                    }
                }
            }
        }
    }
    CodeTensor::new(height, width, channels, alphabet, values)
}

/// Comparison arm: one global entropy model for the whole tensor, no side
/// information beyond the header.
pub fn encode_global_baseline(tensor: &CodeTensor, global: &Multinomial) -> Result<Bitstream> {
    if global.len() != tensor.alphabet().size() {
        return Err(Error::invalid(
            "global model does not cover the tensor alphabet",
        ));
    }
    check_geometry(tensor)?;
    let alphabet = tensor.alphabet();
    let cdf = global.to_cdf()?;
    let mut enc = RangeEncoder::new();
    for &v in tensor.values() {
        enc.encode(&cdf, alphabet.index_of(v));
    }
    Ok(Bitstream {
        header: Header {
            height: tensor.height() as u32,
            width: tensor.width() as u32,
            channels: tensor.channels() as u32,
            alphabet,
            tile_size: 0,
            threshold_micro: 0,
            dict_digest: digest_single_model(alphabet, &cdf),
        },
        index_section: Vec::new(),
        custom_section: Vec::new(),
        payload: enc.finish(),
    })
}

/// Decode a global-baseline stream produced by [`encode_global_baseline`].
pub fn decode_global_baseline(bs: &Bitstream, global: &Multinomial) -> Result<CodeTensor> {
    if bs.header.tile_size != 0 {
        return Err(Error::invalid("not a global-baseline stream"));
    }
    let alphabet = bs.header.alphabet;
    if global.len() != alphabet.size() {
        return Err(Error::invalid(
            "global model does not cover the stream alphabet",
        ));
    }
    let cdf = global.to_cdf()?;
    let digest = digest_single_model(alphabet, &cdf);
    if bs.header.dict_digest != digest {
        return Err(Error::DictionaryMismatch {
            expected: bs.header.dict_digest,
            actual: digest,
        });
    }
    if !bs.index_section.is_empty() || !bs.custom_section.is_empty() {
        return Err(Error::format(
            HEADER_LEN,
            "baseline stream carries side-information sections",
        ));
    }
    let height = bs.header.height as usize;
    let width = bs.header.width as usize;
    let channels = bs.header.channels as usize;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::format(6, "dimensions must all be >= 1"));
    }
    let mut values = decode_cells(height, width, channels)?;
    let mut dec = RangeDecoder::new(&bs.payload);
    for v in &mut values {
        *v = alphabet.value_at(dec.decode(&cdf));
    }
    CodeTensor::new(height, width, channels, alphabet, values)
}

/// Exact per-section rate accounting for one bitstream.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown {
    pub header_bits: u64,
    pub index_bits: u64,
    pub custom_bits: u64,
    pub payload_bits: u64,
    pub checksum_bits: u64,
    pub total_bits: u64,
    pub pixel_count: u64,
    pub bpp: f64,
    /// Encoder-side per-channel accounting; empty when derived from the
    /// bitstream alone.
    pub per_channel: Vec<ChannelAccounting>,
}

impl RateBreakdown {
    /// Side-information share of the total: index plane plus custom block.
    pub fn side_info_bits(&self) -> u64 {
        self.index_bits + self.custom_bits
    }
}

/// Account a bitstream against a pixel count. Needs no dictionary.
pub fn rate_report(bs: &Bitstream, pixel_count: u64) -> Result<RateBreakdown> {
    if pixel_count == 0 {
        return Err(Error::invalid("pixel count must be >= 1"));
    }
    let header_bits = HEADER_LEN as u64 * 8;
    let index_bits = bs.index_section.len() as u64 * 8;
    let custom_bits = bs.custom_section.len() as u64 * 8;
    let payload_bits = bs.payload.len() as u64 * 8;
    let checksum_bits = 32;
    let total_bits = header_bits + index_bits + custom_bits + payload_bits + checksum_bits;
    Ok(RateBreakdown {
        header_bits,
        index_bits,
        custom_bits,
        payload_bits,
        checksum_bits,
        total_bits,
        pixel_count,
        bpp: total_bits as f64 / pixel_count as f64,
        per_channel: Vec::new(),
    })
}

/// Rate report enriched with the encoder's per-channel accounting.
pub fn rate_report_with_plan(
    bs: &Bitstream,
    pixel_count: u64,
    plan: &TilePlan,
) -> Result<RateBreakdown> {
    let mut report = rate_report(bs, pixel_count)?;
    report.per_channel = plan.accounting.clone();
    Ok(report)
}
