//! `GHSR` raster container.
//!
//! All fields little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4  | magic `GHSR` |
//! | 4  | 2  | version (`u16`, 1) |
//! | 6  | 1  | dtype (0 = u8, 1 = i16, 2 = f32) |
//! | 7  | 1  | bands |
//! | 8  | 4  | width (`u32`) |
//! | 12 | 4  | height (`u32`) |
//! | 16 | 8  | nodata (`f64`) |
//! | 24 | 8  | origin_x (`f64`) |
//! | 32 | 8  | origin_y (`f64`) |
//! | 40 | 8  | pixel_size (`f64`) |
//! | 48 | 32 | zone id, NUL padded |
//!
//! followed by band-sequential row-major samples.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{DType, RasterData, RasterGrid, ZONE_ID_LEN};

pub const RASTER_MAGIC: &[u8; 4] = b"GHSR";
pub const RASTER_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 80;

/// Header fields of a `GHSR` file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RasterHeader {
    pub version: u16,
    pub dtype: DType,
    pub bands: usize,
    pub width: usize,
    pub height: usize,
    pub nodata: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub zone_id: String,
}

impl RasterHeader {
    pub fn payload_len(&self) -> usize {
        self.width * self.height * self.bands * self.dtype.size()
    }
}

fn encode_header(grid: &RasterGrid) -> Result<[u8; HEADER_LEN]> {
    grid.validate()?;
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(RASTER_MAGIC);
    h[4..6].copy_from_slice(&RASTER_VERSION.to_le_bytes());
    h[6] = grid.dtype().code();
    h[7] = grid.bands as u8;
    h[8..12].copy_from_slice(&(grid.width as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(grid.height as u32).to_le_bytes());
    h[16..24].copy_from_slice(&grid.nodata.to_le_bytes());
    h[24..32].copy_from_slice(&grid.origin_x.to_le_bytes());
    h[32..40].copy_from_slice(&grid.origin_y.to_le_bytes());
    h[40..48].copy_from_slice(&grid.pixel_size.to_le_bytes());
    h[48..48 + grid.zone_id.len()].copy_from_slice(grid.zone_id.as_bytes());
    Ok(h)
}

fn decode_header(h: &[u8; HEADER_LEN]) -> Result<RasterHeader> {
    if &h[0..4] != RASTER_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"GHSR\"", &h[0..4])));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != RASTER_VERSION {
        return Err(Error::format(4, format!("unsupported raster version {version}")));
    }
    let dtype = DType::from_code(h[6]).ok_or_else(|| Error::format(6, format!("unknown dtype code {}", h[6])))?;
    let bands = h[7] as usize;
    if bands == 0 {
        return Err(Error::format(7, "zero bands"));
    }
    let f64_at = |o: usize| f64::from_le_bytes(h[o..o + 8].try_into().expect("8 bytes"));
    let zone = &h[48..48 + ZONE_ID_LEN];
    let end = zone.iter().position(|&b| b == 0).unwrap_or(ZONE_ID_LEN);
    if zone[end..].iter().any(|&b| b != 0) {
        return Err(Error::format(48 + end as u64, "zone id padding is not NUL"));
    }
    let zone_id = std::str::from_utf8(&zone[..end]).map_err(|_| Error::format(48, "zone id is not UTF-8"))?.to_string();
    let header = RasterHeader {
        version,
        dtype,
        bands,
        width: u32::from_le_bytes(h[8..12].try_into().expect("4 bytes")) as usize,
        height: u32::from_le_bytes(h[12..16].try_into().expect("4 bytes")) as usize,
        nodata: f64_at(16),
        origin_x: f64_at(24),
        origin_y: f64_at(32),
        pixel_size: f64_at(40),
        zone_id,
    };
    if !dtype.represents(header.nodata) {
        return Err(Error::format(16, format!("nodata {} not representable as {dtype:?}", header.nodata)));
    }
    Ok(header)
}

pub fn write_raster<W: Write>(grid: &RasterGrid, mut w: W) -> Result<()> {
    let header = encode_header(grid)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + grid.data.len() * grid.dtype().size());
    buf.extend_from_slice(&header);
    match &grid.data {
        RasterData::U8(v) => buf.extend_from_slice(v),
        RasterData::I16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        RasterData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_header_from<R: Read>(r: &mut R) -> Result<RasterHeader> {
    let mut h = [0u8; HEADER_LEN];
    let got = read_fully(r, &mut h)?;
    if got < HEADER_LEN {
        if got >= 4 && &h[0..4] != RASTER_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"GHSR\""));
        }
        return Err(Error::format(got as u64, format!("truncated header: {got} of {HEADER_LEN} bytes")));
    }
    decode_header(&h)
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_raster<R: Read>(mut r: R) -> Result<RasterGrid> {
    let header = read_header_from(&mut r)?;
    let mut payload = vec![0u8; header.payload_len()];
    let got = read_fully(&mut r, &mut payload)?;
    if got < payload.len() {
        return Err(Error::format(
            (HEADER_LEN + got) as u64,
            format!("truncated payload: {got} of {} bytes", payload.len()),
        ));
    }
    let mut extra = [0u8; 1];
    if read_fully(&mut r, &mut extra)? != 0 {
        return Err(Error::format((HEADER_LEN + payload.len()) as u64, "trailing bytes after payload"));
    }
    let data = match header.dtype {
        DType::U8 => RasterData::U8(payload),
        DType::I16 => RasterData::I16(payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()),
        DType::F32 => {
            RasterData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
    };
    Ok(RasterGrid {
        width: header.width,
        height: header.height,
        bands: header.bands,
        nodata: header.nodata,
        zone_id: header.zone_id,
        origin_x: header.origin_x,
        origin_y: header.origin_y,
        pixel_size: header.pixel_size,
        data,
    })
}

pub fn save_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_raster(grid, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    read_raster(fs::read(path)?.as_slice())
}

/// Header only; the payload is not read.
pub fn read_raster_header(path: impl AsRef<Path>) -> Result<RasterHeader> {
    let mut f = fs::File::open(path)?;
    read_header_from(&mut f)
}
