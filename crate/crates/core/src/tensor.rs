//! FPT binary tensor container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FPT1" | u8 dtype (1 = f32, 2 = u8) | u8 ndim | ndim x u32 dims | row-major payload
//! ```
//!
//! Dimensions are listed slowest-varying first. Image series are stored as
//! `[n_frames, height, width]`, masks and U-maps as `[height, width]`, and
//! probability maps as `[height, width, 3]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClassProbabilityMap, ImageSeries, LabelMask, UncertaintyMap};

pub const MAGIC: &[u8; 4] = b"FPT1";
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_U8: u8 = 2;

/// Upper bound on the element count accepted when reading.
pub const MAX_ELEMENTS: usize = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &d in dims {
        n = n
            .checked_mul(d)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?}")))?;
    }
    Ok(n)
}

impl Tensor {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::checked(dims, TensorData::F32(data))
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::checked(dims, TensorData::U8(data))
    }

    fn checked(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("invalid tensor dims {dims:?}")));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::DimensionOverflow(format!("dims {dims:?}")));
        }
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::mismatch(format!("dims {dims:?} hold {n} elements, data has {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let dtype = match self.data {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::U8(_) => DTYPE_U8,
        };
        w.write_all(&[dtype, self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
            TensorData::U8(v) => w.write_all(v)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 6];
        read_header(&mut r, &mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::MalformedHeader(format!("bad magic {:?}", &head[..4])));
        }
        let dtype = head[4];
        let ndim = head[5] as usize;
        if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
            return Err(Error::MalformedHeader(format!("unknown dtype {dtype}")));
        }
        if ndim == 0 {
            return Err(Error::MalformedHeader("ndim is zero".into()));
        }
        let mut dim_bytes = vec![0u8; ndim * 4];
        read_header(&mut r, &mut dim_bytes)?;
        let dims: Vec<usize> =
            dim_bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::MalformedHeader(format!("zero dimension in {dims:?}")));
        }
        let n = element_count(&dims)?;
        let width = if dtype == DTYPE_F32 { 4 } else { 1 };
        let expected = n.checked_mul(width).ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?}")))?;
        let mut payload = Vec::with_capacity(expected);
        let found = (&mut r).take(expected as u64).read_to_end(&mut payload)?;
        if found < expected {
            return Err(Error::TruncatedPayload { expected, found });
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::TrailingBytes);
        }
        let data = if dtype == DTYPE_F32 {
            TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        } else {
            TensorData::U8(payload)
        };
        Ok(Self { dims, data })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::invalid("expected f32 tensor, found u8")),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F32(_) => Err(Error::invalid("expected u8 tensor, found f32")),
        }
    }
}

fn read_header<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::MalformedHeader("header truncated".into()),
        _ => Error::Io(e),
    })
}

impl From<&ImageSeries> for Tensor {
    fn from(s: &ImageSeries) -> Self {
        Tensor { dims: vec![s.n_frames(), s.height(), s.width()], data: TensorData::F32(s.data().to_vec()) }
    }
}

impl From<&LabelMask> for Tensor {
    fn from(m: &LabelMask) -> Self {
        Tensor { dims: vec![m.height(), m.width()], data: TensorData::U8(m.codes()) }
    }
}

impl From<&ClassProbabilityMap> for Tensor {
    fn from(p: &ClassProbabilityMap) -> Self {
        let flat = p.probs().iter().flat_map(|v| v.iter().copied()).collect();
        Tensor { dims: vec![p.height(), p.width(), 3], data: TensorData::F32(flat) }
    }
}

impl From<&UncertaintyMap> for Tensor {
    fn from(u: &UncertaintyMap) -> Self {
        Tensor { dims: vec![u.height, u.width], data: TensorData::F32(u.u.clone()) }
    }
}

impl Tensor {
    /// Interprets a `[T, H, W]` f32 tensor as a series with uniform timing.
    pub fn to_series(&self, dt_s: f64, spacing_mm: (f64, f64)) -> Result<ImageSeries> {
        let data = self.as_f32()?;
        let [t, h, w] = self.dims[..] else {
            return Err(Error::mismatch(format!("series tensor must be 3-D, got {:?}", self.dims)));
        };
        let times = (0..t).map(|i| i as f64 * dt_s).collect();
        ImageSeries::new(w, h, spacing_mm, times, data.to_vec())
    }

    pub fn to_mask(&self) -> Result<LabelMask> {
        let data = self.as_u8()?;
        let [h, w] = self.dims[..] else {
            return Err(Error::mismatch(format!("mask tensor must be 2-D, got {:?}", self.dims)));
        };
        LabelMask::from_codes(w, h, data)
    }

    pub fn to_probability_map(&self) -> Result<ClassProbabilityMap> {
        let data = self.as_f32()?;
        let [h, w, 3] = self.dims[..] else {
            return Err(Error::mismatch(format!("probability tensor must be HxWx3, got {:?}", self.dims)));
        };
        let probs = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        ClassProbabilityMap::new(w, h, probs)
    }
}
