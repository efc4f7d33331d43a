//! Dense `f32` containers and the NPY v1.0 interchange subset.
//!
//! Only little-endian `f32` in C order with one to three positive extents is
//! read or written. Files are validated completely on read: magic, version,
//! header dictionary, payload length, and finiteness of every value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest element count accepted in a single tensor.
pub const MAX_ELEMENTS: u64 = i32::MAX as u64;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_ALIGN: usize = 64;

/// Channel-major feature volume (C x H x W).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = checked_len(&[channels, height, width])?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} tensor needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        let len = checked_len(&[channels, height, width])?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f(c, y, x)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        checked_len(&[channels, height, width])?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(c, y, x)]
    }

    /// Spatial plane of channel `c`, row-major.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Returns a new tensor with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Row-major matrix; rows are classes and columns channels when used as
/// classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let expected = checked_len(&[rows, cols])?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        checked_len(&[rows, cols])?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }

    /// Elementwise sum of two equally shaped matrices.
    pub fn add(&self, other: &Matrix2) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Anything decoded from an NPY file, keyed by its dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Vector(Vec<f32>),
    Matrix(Matrix2),
    Volume(Tensor3),
}

impl TensorFile {
    pub fn into_volume(self) -> Result<Tensor3> {
        match self {
            TensorFile::Volume(t) => Ok(t),
            other => Err(Error::Shape(format!(
                "expected a 3-d tensor, found shape {:?}",
                other.shape()
            ))),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix2> {
        match self {
            TensorFile::Matrix(m) => Ok(m),
            other => Err(Error::Shape(format!(
                "expected a 2-d tensor, found shape {:?}",
                other.shape()
            ))),
        }
    }
}

/// Read access shared by every container that can be written as NPY.
pub trait TensorView {
    fn shape(&self) -> Vec<usize>;
    fn values(&self) -> &[f32];
}

impl TensorView for Tensor3 {
    fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
    fn values(&self) -> &[f32] {
        &self.data
    }
}

impl TensorView for Matrix2 {
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
    fn values(&self) -> &[f32] {
        &self.data
    }
}

impl TensorView for TensorFile {
    fn shape(&self) -> Vec<usize> {
        match self {
            TensorFile::Vector(v) => vec![v.len()],
            TensorFile::Matrix(m) => m.shape(),
            TensorFile::Volume(t) => t.shape().to_vec(),
        }
    }
    fn values(&self) -> &[f32] {
        match self {
            TensorFile::Vector(v) => v,
            TensorFile::Matrix(m) => m.values(),
            TensorFile::Volume(t) => t.values(),
        }
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    let mut n: u64 = 1;
    for &d in shape {
        n = n.checked_mul(d as u64).ok_or(Error::UnsupportedSize(u64::MAX))?;
    }
    if n > MAX_ELEMENTS {
        return Err(Error::UnsupportedSize(n));
    }
    Ok(n as usize)
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(offset) => Err(Error::InvalidValue { offset }),
        None => Ok(()),
    }
}

/// Header dictionary text exactly as numpy emits it, before padding.
fn header_dict(shape: &[usize]) -> String {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}")
}

/// Encodes a tensor as NPY v1.0 bytes.
pub fn encode_npy(shape: &[usize], values: &[f32]) -> Result<Vec<u8>> {
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::Shape(format!(
            "NPY shape must have 1-3 positive extents, got {shape:?}"
        )));
    }
    let len = checked_len(shape)?;
    if len != values.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {len} values, got {}",
            values.len()
        )));
    }
    check_finite(values)?;

    let mut header = header_dict(shape);
    // magic + version + u16 length + header + '\n' must be 64-aligned
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (PREAMBLE_ALIGN - unpadded % PREAMBLE_ALIGN) % PREAMBLE_ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    let header_len = u16::try_from(header.len()).map_err(|_| Error::Format("header longer than 65535 bytes".into()))?;

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes NPY v1.0 bytes into the container matching the declared rank.
pub fn decode_npy(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing NPY magic".into()));
    }
    if bytes[6..8] != [1, 0] {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let text = std::str::from_utf8(&bytes[10..payload_start])
        .ok()
        .filter(|t| t.is_ascii())
        .ok_or_else(|| Error::Format("header is not ASCII".into()))?;
    let header = HeaderDict::parse(text)?;

    if header.descr != "<f4" {
        return Err(Error::UnsupportedDtype(header.descr));
    }
    if header.fortran_order {
        return Err(Error::Format("Fortran-ordered arrays are not supported".into()));
    }
    if header.shape.is_empty() || header.shape.len() > 3 {
        return Err(Error::Format(format!(
            "shape must have 1-3 extents, got {:?}",
            header.shape
        )));
    }
    if header.shape.contains(&0) {
        return Err(Error::Format(format!(
            "shape extents must be positive, got {:?}",
            header.shape
        )));
    }
    let len = checked_len(&header.shape)?;

    let payload = &bytes[payload_start..];
    if payload.len() != len * 4 {
        return Err(Error::CorruptFile(format!(
            "shape {:?} declares {len} elements but payload holds {} bytes",
            header.shape,
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    check_finite(&values)?;

    Ok(match header.shape[..] {
        [_] => TensorFile::Vector(values),
        [r, c] => TensorFile::Matrix(Matrix2::new(r, c, values)?),
        [c, h, w] => TensorFile::Volume(Tensor3::new(c, h, w, values)?),
        _ => unreachable!("rank checked above"),
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_npy(&bytes)
}

/// Writes `t` to `path`. Nothing is created when validation fails.
pub fn write_tensor(t: &impl TensorView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_npy(&t.shape(), t.values())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self> {
        let mut p = DictParser {
            s: text.as_bytes(),
            pos: 0,
        };
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;

        p.expect(b'{')?;
        loop {
            p.skip_ws();
            if p.eat(b'}') {
                break;
            }
            let key = p.string()?;
            p.expect(b':')?;
            match key.as_str() {
                "descr" => descr = Some(p.string()?),
                "fortran_order" => fortran_order = Some(p.boolean()?),
                "shape" => shape = Some(p.tuple()?),
                other => return Err(Error::Format(format!("unexpected header key {other:?}"))),
            }
            p.skip_ws();
            if !p.eat(b',') {
                p.expect(b'}')?;
                break;
            }
        }
        if p.s[p.pos..].iter().any(|b| !b.is_ascii_whitespace()) {
            return Err(Error::Format("trailing bytes after header dictionary".into()));
        }

        Ok(Self {
            descr: descr.ok_or_else(|| Error::Format("header lacks 'descr'".into()))?,
            fortran_order: fortran_order.ok_or_else(|| Error::Format("header lacks 'fortran_order'".into()))?,
            shape: shape.ok_or_else(|| Error::Format("header lacks 'shape'".into()))?,
        })
    }
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl DictParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected '{}' at header offset {}",
                b as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(Error::Format(format!("expected string at header offset {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err(Error::Format("unterminated string in header".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        self.skip_ws();
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err(Error::Format("expected True or False for 'fortran_order'".into()))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                break;
            }
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(Error::Format("expected integer in shape tuple".into()));
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or_default();
            let d = digits
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("shape extent {digits} too large")))?;
            dims.push(d);
            if !self.eat(b',') {
                self.expect(b')')?;
                break;
            }
        }
        Ok(dims)
    }
}
