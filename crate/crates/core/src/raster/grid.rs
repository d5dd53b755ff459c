use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ZONE_ID_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I16,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::I16 => 1,
            DType::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::I16),
            2 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
        }
    }

    /// Whether `v` can be stored exactly.
    pub fn represents(self, v: f64) -> bool {
        match self {
            DType::U8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
            DType::I16 => v.fract() == 0.0 && (i16::MIN as f64..=i16::MAX as f64).contains(&v),
            DType::F32 => v.is_nan() || (v as f32) as f64 == v,
        }
    }
}

/// Band-sequential, row-major samples.
#[derive(Clone, Debug, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn dtype(&self) -> DType {
        match self {
            RasterData::U8(_) => DType::U8,
            RasterData::I16(_) => DType::I16,
            RasterData::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::I16(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            RasterData::U8(v) => v[i] as f64,
            RasterData::I16(v) => v[i] as f64,
            RasterData::F32(v) => v[i] as f64,
        }
    }

    /// `len` copies of `value`, which must be representable.
    pub fn filled(dtype: DType, len: usize, value: f64) -> Self {
        match dtype {
            DType::U8 => RasterData::U8(vec![value as u8; len]),
            DType::I16 => RasterData::I16(vec![value as i16; len]),
            DType::F32 => RasterData::F32(vec![value as f32; len]),
        }
    }
}

/// Georeferenced multi-band grid. `(origin_x, origin_y)` is the top-left
/// corner; rows run southwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub nodata: f64,
    pub zone_id: String,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub data: RasterData,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, bands: usize, nodata: f64, data: RasterData) -> Result<Self> {
        let grid = RasterGrid {
            width,
            height,
            bands,
            nodata,
            zone_id: String::new(),
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
            data,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn filled(width: usize, height: usize, bands: usize, dtype: DType, value: f64, nodata: f64) -> Result<Self> {
        Self::new(width, height, bands, nodata, RasterData::filled(dtype, width * height * bands, value))
    }

    pub fn with_georef(mut self, zone_id: &str, origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        self.zone_id = zone_id.to_string();
        self.origin_x = origin_x;
        self.origin_y = origin_y;
        self.pixel_size = pixel_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height * self.bands {
            return Err(Error::shape(format!(
                "raster data length {} != {}x{}x{}",
                self.data.len(),
                self.bands,
                self.height,
                self.width
            )));
        }
        if self.bands == 0 || self.bands > u8::MAX as usize {
            return Err(Error::config(format!("band count {} outside 1..=255", self.bands)));
        }
        if u32::try_from(self.width).is_err() || u32::try_from(self.height).is_err() {
            return Err(Error::config("raster dimensions exceed u32"));
        }
        if !self.data.dtype().represents(self.nodata) {
            return Err(Error::config(format!("nodata {} not representable as {:?}", self.nodata, self.dtype())));
        }
        if self.zone_id.len() > ZONE_ID_LEN {
            return Err(Error::config(format!("zone id {:?} longer than {ZONE_ID_LEN} bytes", self.zone_id)));
        }
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data.get(self.index(band, row, col))
    }

    #[inline]
    pub fn is_nodata_value(&self, v: f64) -> bool {
        v == self.nodata || (v.is_nan() && self.nodata.is_nan())
    }

    /// A pixel is valid when no band holds the nodata value.
    pub fn validity(&self) -> ValidityMask {
        let mut valid = vec![true; self.width * self.height];
        for b in 0..self.bands {
            for (i, ok) in valid.iter_mut().enumerate() {
                if *ok && self.is_nodata_value(self.data.get(b * self.width * self.height + i)) {
                    *ok = false;
                }
            }
        }
        ValidityMask { width: self.width, height: self.height, valid }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i16(&self) -> Option<&[i16]> {
        match &self.data {
            RasterData::I16(v) => Some(v),
            _ => None,
        }
    }

    /// Sub-window copy, georeference shifted accordingly.
    pub fn window(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<RasterGrid> {
        if row0 + rows > self.height || col0 + cols > self.width {
            return Err(Error::shape(format!(
                "window {rows}x{cols} at ({row0},{col0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        macro_rules! cut {
            ($v:expr, $variant:ident) => {{
                let mut out = Vec::with_capacity(rows * cols * self.bands);
                for b in 0..self.bands {
                    for r in row0..row0 + rows {
                        let start = self.index(b, r, col0);
                        out.extend_from_slice(&$v[start..start + cols]);
                    }
                }
                RasterData::$variant(out)
            }};
        }
        let data = match &self.data {
            RasterData::U8(v) => cut!(v, U8),
            RasterData::I16(v) => cut!(v, I16),
            RasterData::F32(v) => cut!(v, F32),
        };
        Ok(RasterGrid {
            width: cols,
            height: rows,
            bands: self.bands,
            nodata: self.nodata,
            zone_id: self.zone_id.clone(),
            origin_x: self.origin_x + col0 as f64 * self.pixel_size,
            origin_y: self.origin_y - row0 as f64 * self.pixel_size,
            pixel_size: self.pixel_size,
            data,
        })
    }
}

/// Per-pixel validity, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
}

impl ValidityMask {
    pub fn all(width: usize, height: usize, value: bool) -> Self {
        ValidityMask { width, height, valid: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}
