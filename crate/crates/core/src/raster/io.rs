//! Little-endian `CRYO` container.
//!
//! ```text
//! magic "CRYO" | dtype u16 | width u32 | height u32 | band_count u32
//! pixel_size f64 | origin_x f64 | origin_y f64 | nodata f32
//! band_count × (name_len u16 | name utf-8 | role u16)
//! payload, band-sequential: f32 per pixel (dtype 1) or u8 per pixel (dtype 2)
//! ```

use std::fs;
use std::path::Path;

use super::grid::{GridGeometry, RasterGrid};
use super::stack::{Band, BandRole, BandStack};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CRYO";
pub const DTYPE_F32: u16 = 1;
pub const DTYPE_U8: u16 = 2;
pub const HEADER_LEN: usize = 46;

/// Header fields shared by both payload variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dtype: u16,
    pub geometry: GridGeometry,
    pub nodata: f32,
    pub bands: Vec<(String, Option<BandRole>)>,
}

fn encode_header(h: &Header, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.dtype.to_le_bytes());
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidGrid(format!("{what} {v} exceeds u32")))
    };
    out.extend_from_slice(&dim(h.geometry.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(h.geometry.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(h.bands.len(), "band count")?.to_le_bytes());
    out.extend_from_slice(&h.geometry.pixel_size.to_le_bytes());
    out.extend_from_slice(&h.geometry.origin_x.to_le_bytes());
    out.extend_from_slice(&h.geometry.origin_y.to_le_bytes());
    out.extend_from_slice(&h.nodata.to_le_bytes());
    for (name, role) in &h.bands {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidGrid(format!("band name too long: {} bytes", name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&role.map_or(0, BandRole::code).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("header ends before {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn format_err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

fn decode_header<'a>(bytes: &'a [u8]) -> Result<(Header, Reader<'a>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.format_err(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let dtype_at = r.pos;
    let dtype = r.u16("dtype")?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(r.format_err(dtype_at, format!("unknown dtype code {dtype}")));
    }
    let dims_at = r.pos;
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let band_count = r.u32("band count")? as usize;
    let pixel_size = r.f64("pixel size")?;
    let origin_x = r.f64("origin x")?;
    let origin_y = r.f64("origin y")?;
    let nodata = r.f32("nodata")?;
    let geometry = GridGeometry::new(width, height, origin_x, origin_y, pixel_size)
        .map_err(|e| r.format_err(dims_at, e.to_string()))?;
    if band_count == 0 {
        return Err(r.format_err(dims_at + 8, "band count is zero"));
    }
    let mut bands = Vec::with_capacity(band_count.min(1024));
    for i in 0..band_count {
        let len = r.u16("band name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(len, "band name")?)
            .map_err(|_| r.format_err(name_at, format!("band {i} name is not utf-8")))?
            .to_string();
        let role_at = r.pos;
        let code = r.u16("role code")?;
        let role = match code {
            0 => None,
            c => Some(
                BandRole::from_code(c).ok_or_else(|| r.format_err(role_at, format!("unknown role code {c}")))?,
            ),
        };
        bands.push((name, role));
    }
    Ok((
        Header {
            dtype,
            geometry,
            nodata,
            bands,
        },
        r,
    ))
}

fn payload<'a>(r: &Reader<'a>, h: &Header) -> Result<&'a [u8]> {
    let item = if h.dtype == DTYPE_F32 { 4 } else { 1 };
    let need = h.bands.len() as u64 * h.geometry.len() as u64 * item;
    let have = (r.bytes.len() - r.pos) as u64;
    if have < need {
        return Err(Error::Truncated {
            expected: r.pos as u64 + need,
            found: r.bytes.len() as u64,
        });
    }
    if have > need {
        return Err(Error::Format {
            offset: r.pos as u64 + need,
            message: format!("{} trailing bytes after payload", have - need),
        });
    }
    Ok(&r.bytes[r.pos..])
}

/// Serializes a float stack into the `CRYO` byte layout.
pub fn encode_stack(stack: &BandStack) -> Result<Vec<u8>> {
    let header = Header {
        dtype: DTYPE_F32,
        geometry: *stack.geometry(),
        nodata: stack.nodata(),
        bands: stack.bands().iter().map(|b| (b.name.clone(), b.role)).collect(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + stack.len() * (stack.geometry().len() * 4 + 16));
    encode_header(&header, &mut out)?;
    for b in stack.bands() {
        for v in b.grid.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_stack(bytes: &[u8]) -> Result<BandStack> {
    let (h, r) = decode_header(bytes)?;
    if h.dtype != DTYPE_F32 {
        return Err(Error::Format {
            offset: 4,
            message: format!("expected float32 stack (dtype 1), found dtype {}", h.dtype),
        });
    }
    let data = payload(&r, &h)?;
    let n = h.geometry.len();
    let mut stack = BandStack::new(h.geometry, h.nodata)?;
    for (i, (name, role)) in h.bands.into_iter().enumerate() {
        let chunk = &data[i * n * 4..(i + 1) * n * 4];
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let grid = RasterGrid::new(h.geometry, h.nodata, values).map_err(|e| Error::Format {
            offset: (r.pos + i * n * 4) as u64,
            message: e.to_string(),
        })?;
        stack
            .push_band(Band { name, role, grid })
            .map_err(|e| Error::Format {
                offset: HEADER_LEN as u64,
                message: e.to_string(),
            })?;
    }
    Ok(stack)
}

pub fn write_stack(stack: &BandStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_stack(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<BandStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}

/// Single-band u8 payload (dtype 2), used for class masks.
pub fn encode_u8_band(geometry: &GridGeometry, nodata: f32, name: &str, values: &[u8]) -> Result<Vec<u8>> {
    if values.len() != geometry.len() {
        return Err(Error::InvalidGrid(format!(
            "expected {} mask values, got {}",
            geometry.len(),
            values.len()
        )));
    }
    let header = Header {
        dtype: DTYPE_U8,
        geometry: *geometry,
        nodata,
        bands: vec![(name.to_string(), None)],
    };
    let mut out = Vec::with_capacity(HEADER_LEN + name.len() + 4 + values.len());
    encode_header(&header, &mut out)?;
    out.extend_from_slice(values);
    Ok(out)
}

pub fn decode_u8_band(bytes: &[u8]) -> Result<(GridGeometry, String, Vec<u8>)> {
    let (h, r) = decode_header(bytes)?;
    if h.dtype != DTYPE_U8 {
        return Err(Error::Format {
            offset: 4,
            message: format!("expected u8 mask (dtype 2), found dtype {}", h.dtype),
        });
    }
    if h.bands.len() != 1 {
        return Err(Error::Format {
            offset: 14,
            message: format!("u8 mask must have one band, found {}", h.bands.len()),
        });
    }
    let data = payload(&r, &h)?;
    Ok((h.geometry, h.bands[0].0.clone(), data.to_vec()))
}

/// Reads only the header of a `CRYO` file.
pub fn peek_header(bytes: &[u8]) -> Result<Header> {
    decode_header(bytes).map(|(h, _)| h)
}
