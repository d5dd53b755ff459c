use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor3;
use crate::raster::{RasterData, RasterGrid, ValidityMask};

/// Constant written around a rescaled grid and into masked pixels.
pub const PAD_VALUE: f32 = 0.0;
/// Nodata marker of `f32` probability grids.
pub const PROB_NODATA: f64 = -1.0;
/// Nodata code of quantized probability grids.
pub const QUANT_NODATA: u8 = 255;

/// Divides every sample by `divisor` and clamps into `[0, 1]`.
///
/// Pixels with nodata in any band become [`PAD_VALUE`] in every band and are
/// cleared in the returned mask.
pub fn rescale_reflectance(grid: &RasterGrid, divisor: f64) -> Result<(RasterGrid, ValidityMask)> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::config(format!("rescale divisor must be positive, got {divisor}")));
    }
    let mask = grid.validity();
    let plane = grid.width * grid.height;
    let mut out = Vec::with_capacity(grid.data.len());
    for i in 0..grid.data.len() {
        let v = if mask.valid[i % plane] { (grid.data.get(i) / divisor).clamp(0.0, 1.0) as f32 } else { PAD_VALUE };
        out.push(v);
    }
    let scaled = RasterGrid { nodata: PROB_NODATA, data: RasterData::F32(out), ..grid.clone_header() };
    Ok((scaled, mask))
}

impl RasterGrid {
    /// Same header, empty payload placeholder.
    pub(crate) fn clone_header(&self) -> RasterGrid {
        RasterGrid {
            width: self.width,
            height: self.height,
            bands: self.bands,
            nodata: self.nodata,
            zone_id: self.zone_id.clone(),
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.pixel_size,
            data: RasterData::U8(Vec::new()),
        }
    }
}

/// Surrounds the grid with `margin` pixels of `value` on every side.
pub fn pad_constant(grid: &RasterGrid, margin: usize, value: f64) -> Result<RasterGrid> {
    if !grid.dtype().represents(value) {
        return Err(Error::config(format!("pad value {value} not representable as {:?}", grid.dtype())));
    }
    let (w, h) = (grid.width + 2 * margin, grid.height + 2 * margin);
    let mut out = RasterGrid {
        width: w,
        height: h,
        origin_x: grid.origin_x - margin as f64 * grid.pixel_size,
        origin_y: grid.origin_y + margin as f64 * grid.pixel_size,
        data: RasterData::filled(grid.dtype(), w * h * grid.bands, value),
        ..grid.clone_header()
    };
    macro_rules! blit {
        ($src:expr, $dst:expr) => {
            for b in 0..grid.bands {
                for r in 0..grid.height {
                    let s = grid.index(b, r, 0);
                    let d = (b * h + r + margin) * w + margin;
                    $dst[d..d + grid.width].copy_from_slice(&$src[s..s + grid.width]);
                }
            }
        };
    }
    match (&grid.data, &mut out.data) {
        (RasterData::U8(s), RasterData::U8(d)) => blit!(s, d),
        (RasterData::I16(s), RasterData::I16(d)) => blit!(s, d),
        (RasterData::F32(s), RasterData::F32(d)) => blit!(s, d),
        _ => unreachable!("filled with the source dtype"),
    }
    Ok(out)
}

/// A `size × size × bands` block centred on `(row, col)` of the unpadded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub values: Tensor3<f32>,
}

/// Writes the `size × size × bands` block whose top-left corner is
/// `(row, col)` of a band-sequential `f32` grid, in `[row][col][band]` order.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn gather_block(
    data: &[f32],
    width: usize,
    height: usize,
    bands: usize,
    row: usize,
    col: usize,
    size: usize,
    out: &mut Vec<f32>,
) {
    let plane = width * height;
    for r in row..row + size {
        for c in col..col + size {
            let base = r * width + c;
            for b in 0..bands {
                out.push(data[b * plane + base]);
            }
        }
    }
}

/// Row-major stream of the patches of a grid already padded by `size / 2`.
pub struct PatchIter<'a> {
    data: &'a [f32],
    padded_width: usize,
    padded_height: usize,
    bands: usize,
    size: usize,
    rows: usize,
    cols: usize,
    next: usize,
}

impl Iterator for PatchIter<'_> {
    type Item = Patch;

    fn next(&mut self) -> Option<Patch> {
        if self.next >= self.rows * self.cols {
            return None;
        }
        let (row, col) = (self.next / self.cols, self.next % self.cols);
        self.next += 1;
        let mut values = Vec::with_capacity(self.size * self.size * self.bands);
        gather_block(self.data, self.padded_width, self.padded_height, self.bands, row, col, self.size, &mut values);
        Some(Patch {
            row,
            col,
            values: Tensor3 { height: self.size, width: self.size, channels: self.bands, data: values },
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.rows * self.cols - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for PatchIter<'_> {}

/// One patch per pixel of the original (unpadded) grid. `padded` must be an
/// `f32` grid padded with a margin of `size / 2`.
pub fn iter_patches(padded: &RasterGrid, size: usize) -> Result<PatchIter<'_>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::config(format!("patch size {size} must be odd")));
    }
    let data = padded.as_f32().ok_or_else(|| Error::config("patches are extracted from rescaled f32 grids"))?;
    if padded.width < size || padded.height < size {
        return Err(Error::shape(format!(
            "padded grid {}x{} smaller than a {size}x{size} patch",
            padded.height, padded.width
        )));
    }
    Ok(PatchIter {
        data,
        padded_width: padded.width,
        padded_height: padded.height,
        bands: padded.bands,
        size,
        rows: padded.height - size + 1,
        cols: padded.width - size + 1,
        next: 0,
    })
}

/// A tile's pixel window inside its zone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileIndex {
    pub tile_row: usize,
    pub tile_col: usize,
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub water_dominated: bool,
}

impl TileIndex {
    pub fn id(&self) -> String {
        format!("r{}_c{}", self.tile_row, self.tile_col)
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.rows).contains(&row) && (self.col0..self.col0 + self.cols).contains(&col)
    }
}

/// Partitions a `rows × cols` zone into tiles of `tile_pixels` square; tiles
/// in the last row and column are cut short at the zone edge.
pub fn tile_grid(rows: usize, cols: usize, tile_pixels: usize) -> Result<Vec<TileIndex>> {
    if tile_pixels < crate::model::PATCH_SIZE {
        return Err(Error::config(format!("tile size {tile_pixels} smaller than a patch")));
    }
    let mut tiles = Vec::new();
    for (tile_row, row0) in (0..rows).step_by(tile_pixels).enumerate() {
        for (tile_col, col0) in (0..cols).step_by(tile_pixels).enumerate() {
            tiles.push(TileIndex {
                tile_row,
                tile_col,
                row0,
                col0,
                rows: tile_pixels.min(rows - row0),
                cols: tile_pixels.min(cols - col0),
                water_dominated: false,
            });
        }
    }
    Ok(tiles)
}

/// `round(100·p)` for valid cells, [`QUANT_NODATA`] elsewhere.
pub fn quantize_probability(prob: &RasterGrid, mask: &ValidityMask) -> Result<RasterGrid> {
    let values = prob.as_f32().ok_or_else(|| Error::config("quantization expects an f32 probability grid"))?;
    if prob.bands != 1 || (mask.width, mask.height) != (prob.width, prob.height) {
        return Err(Error::shape("probability grid and mask disagree"));
    }
    let mut out = Vec::with_capacity(values.len());
    for (i, (&p, &ok)) in values.iter().zip(&mask.valid).enumerate() {
        if !ok {
            out.push(QUANT_NODATA);
            continue;
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Numeric(format!("probability {p} at pixel {i} outside [0, 1]")));
        }
        out.push((p as f64 * 100.0).round() as u8);
    }
    Ok(RasterGrid { nodata: QUANT_NODATA as f64, data: RasterData::U8(out), ..prob.clone_header() })
}

/// Inverse of [`quantize_probability`]: probabilities plus validity.
pub fn dequantize_probability(q: &RasterGrid) -> Result<(RasterGrid, ValidityMask)> {
    let codes = q.as_u8().ok_or_else(|| Error::config("dequantization expects a u8 grid"))?;
    let valid: Vec<bool> = codes.iter().map(|&c| c != QUANT_NODATA).collect();
    let probs = codes.iter().map(|&c| if c == QUANT_NODATA { PROB_NODATA as f32 } else { c as f32 / 100.0 }).collect();
    Ok((
        RasterGrid { nodata: PROB_NODATA, data: RasterData::F32(probs), ..q.clone_header() },
        ValidityMask { width: q.width, height: q.height, valid },
    ))
}

/// Single-band `f32` probability grid with nodata cells set to [`PROB_NODATA`].
pub fn probability_grid(template: &RasterGrid, probs: Vec<f32>) -> Result<RasterGrid> {
    RasterGrid { bands: 1, nodata: PROB_NODATA, data: RasterData::F32(probs), ..template.clone_header() }.checked()
}

impl RasterGrid {
    fn checked(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}
