//! Code tensors, spatial tiling, histograms, and the tensor file format.

use crate::error::{Error, Result};

/// Magic bytes opening a tensor file.
pub const TENSOR_MAGIC: [u8; 4] = *b"SLTN";
/// Tensor file format version written and accepted by this build.
pub const TENSOR_VERSION: u16 = 1;
/// Largest accepted alphabet. Keeps CDF tables practical.
pub const MAX_ALPHABET: usize = 1 << 16;

/// Inclusive integer symbol range shared by every cell of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet {
    pub lo: i32,
    pub hi: i32,
}

impl Alphabet {
    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid(format!("alphabet lo {lo} > hi {hi}")));
        }
        let size = (hi as i64) - (lo as i64) + 1;
        if size > MAX_ALPHABET as i64 {
            return Err(Error::invalid(format!(
                "alphabet size {size} exceeds the {MAX_ALPHABET} symbol cap"
            )));
        }
        Ok(Alphabet { lo, hi })
    }

    pub fn size(&self) -> usize {
        ((self.hi as i64) - (self.lo as i64) + 1) as usize
    }

    pub fn contains(&self, v: i32) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Zero-based symbol index of a value known to be in range.
    pub fn index_of(&self, v: i32) -> usize {
        debug_assert!(self.contains(v));
        ((v as i64) - (self.lo as i64)) as usize
    }

    /// Value of the symbol at a zero-based index.
    pub fn value_at(&self, idx: usize) -> i32 {
        debug_assert!(idx < self.size());
        ((self.lo as i64) + idx as i64) as i32
    }
}

/// 3-D grid of integer codes, the object being compressed.
///
/// Values are stored in (y, x, z) row-major, channel-innermost order:
/// `values[(y * width + x) * channels + z]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTensor {
    height: usize,
    width: usize,
    channels: usize,
    alphabet: Alphabet,
    values: Vec<i32>,
}

impl CodeTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        alphabet: Alphabet,
        values: Vec<i32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("tensor dimensions must all be >= 1"));
        }
        let cells = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::invalid("tensor dimensions overflow"))?;
        if values.len() != cells {
            return Err(Error::invalid(format!(
                "expected {cells} values for {height}x{width}x{channels}, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !alphabet.contains(**v)) {
            return Err(Error::invalid(format!(
                "value {bad} outside alphabet [{}, {}]",
                alphabet.lo, alphabet.hi
            )));
        }
        Ok(CodeTensor {
            height,
            width,
            channels,
            alphabet,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, z: usize) -> i32 {
        self.values[(y * self.width + x) * self.channels + z]
    }

    /// Total number of cells (codes).
    pub fn cell_count(&self) -> usize {
        self.values.len()
    }
}

/// One spatial tile of one code channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    /// Tile grid row.
    pub y: usize,
    /// Tile grid column.
    pub x: usize,
    /// Channel index.
    pub z: usize,
    /// Codes in row-major order over the tile region. Never empty.
    pub codes: Vec<i32>,
}

/// Symbol occurrence counts over an alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("histogram total must be >= 1"));
        }
        Ok(Histogram { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Normalized form q with sum exactly 1 up to rounding.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Number of tiles along one axis of length `extent`.
pub fn grid_len(extent: usize, tile_size: usize) -> usize {
    extent.div_ceil(tile_size)
}

/// Partition a tensor into spatial tiles per channel.
///
/// Boundary tiles are truncated, never padded. Iteration order is
/// channel-major, then row-major over the (y, x) tile grid.
pub fn tile_partition(tensor: &CodeTensor, tile_size: usize) -> Result<Vec<Tile>> {
    if tile_size == 0 {
        return Err(Error::invalid("tile_size must be >= 1"));
    }
    let grid_h = grid_len(tensor.height(), tile_size);
    let grid_w = grid_len(tensor.width(), tile_size);
    let mut tiles = Vec::with_capacity(grid_h * grid_w * tensor.channels());
    for z in 0..tensor.channels() {
        for ty in 0..grid_h {
            let y0 = ty * tile_size;
            let y1 = (y0 + tile_size).min(tensor.height());
            for tx in 0..grid_w {
                let x0 = tx * tile_size;
                let x1 = (x0 + tile_size).min(tensor.width());
                let mut codes = Vec::with_capacity((y1 - y0) * (x1 - x0));
                for y in y0..y1 {
                    for x in x0..x1 {
                        codes.push(tensor.get(y, x, z));
                    }
                }
                tiles.push(Tile {
                    y: ty,
                    x: tx,
                    z,
                    codes,
                });
            }
        }
    }
    Ok(tiles)
}

/// Count symbol occurrences inside one tile.
pub fn tile_histogram(tile: &Tile, alphabet: Alphabet) -> Result<Histogram> {
    let mut counts = vec![0u64; alphabet.size()];
    for &code in &tile.codes {
        if !alphabet.contains(code) {
            return Err(Error::OutOfAlphabet {
                y: tile.y,
                x: tile.x,
                z: tile.z,
                value: code,
            });
        }
        counts[alphabet.index_of(code)] += 1;
    }
    Histogram::from_counts(counts)
}

/// Serialize a tensor to its byte-exact file form.
pub fn write_tensor(tensor: &CodeTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(26 + tensor.cell_count() * 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.height() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.width() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.channels() as u32).to_le_bytes());
    out.extend_from_slice(&tensor.alphabet().lo.to_le_bytes());
    out.extend_from_slice(&tensor.alphabet().hi.to_le_bytes());
    for v in tensor.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a tensor file. Errors carry the byte offset of the failure.
pub fn read_tensor(bytes: &[u8]) -> Result<CodeTensor> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"SLTN\""));
    }
    let version = r.u16("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported tensor format version {version}"),
        ));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let channels = r.u32("channels")? as usize;
    let lo = r.i32("alphabet lo")?;
    let hi = r.i32("alphabet hi")?;
    let alphabet =
        Alphabet::new(lo, hi).map_err(|e| Error::format(18, format!("bad alphabet: {e}")))?;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::format(6, "dimensions must all be >= 1"));
    }
    let cells = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::format(6, "dimensions overflow"))?;
    // Pin the payload size before trusting the header's cell count with an
    // allocation.
    let expected = cells
        .checked_mul(4)
        .and_then(|p| p.checked_add(r.pos))
        .ok_or_else(|| Error::format(6, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(bytes.len(), "truncated while reading values"));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected,
            "trailing bytes after tensor payload",
        ));
    }
    let mut values = Vec::with_capacity(cells);
    for _ in 0..cells {
        let offset = r.pos;
        let v = r.i32("value")?;
        if !alphabet.contains(v) {
            return Err(Error::format(
                offset,
                format!("value {v} outside declared alphabet [{lo}, {hi}]"),
            ));
        }
        values.push(v);
    }
    CodeTensor::new(height, width, channels, alphabet, values)
}

/// Little-endian cursor used by the binary readers in this crate.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len(),
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
