use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Model, INFER_CHUNK};
use crate::nn::Batch;
use crate::par::{self, Exec};
use crate::pipeline::{TileFailure, ZoneImage};
use crate::raster::{probability_grid, quantize_probability, RasterGrid, TileIndex, ValidityMask, PROB_NODATA};
use crate::sampling::PatchSource;

/// Probabilities of one tile, its validity, and the published 0–100 encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePrediction {
    pub tile: TileIndex,
    /// `f32`, nodata [`PROB_NODATA`].
    pub probability: RasterGrid,
    pub mask: ValidityMask,
    pub quantized: RasterGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileOutcome {
    pub tile: TileIndex,
    pub result: std::result::Result<TilePrediction, TileFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TileStatus {
    pub tile: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<TileFailure>,
}

impl TileOutcome {
    pub fn status(&self) -> TileStatus {
        TileStatus { tile: self.tile.id(), ok: self.result.is_ok(), error: self.result.as_ref().err().cloned() }
    }
}

fn check_bands(model: &Model, bands: usize) -> Result<()> {
    if model.arch.bands != bands {
        return Err(Error::config(format!("model expects {} bands, imagery has {bands}", model.arch.bands)));
    }
    Ok(())
}

/// Probabilities for the `rows × cols` window at `(row0, col0)` of `source`.
/// Centres masked out in `mask` get [`PROB_NODATA`].
fn predict_window(
    model: &Model,
    source: &PatchSource,
    mask: &ValidityMask,
    tile: &TileIndex,
) -> Result<(Vec<f32>, ValidityMask)> {
    let mut centres = Vec::new();
    let mut valid = Vec::with_capacity(tile.pixels());
    for r in tile.row0..tile.row0 + tile.rows {
        for c in tile.col0..tile.col0 + tile.cols {
            let ok = mask.get(r, c);
            valid.push(ok);
            if ok {
                centres.push((r, c));
            }
        }
    }
    let mut probs = Vec::with_capacity(centres.len());
    for chunk in centres.chunks(INFER_CHUNK) {
        let batch: Batch<f32> = source.batch(chunk.iter().copied())?;
        probs.extend(model.net.forward_infer(&batch)?);
    }
    let mut it = probs.into_iter();
    let out = valid
        .iter()
        .map(|&ok| if ok { it.next().expect("one probability per valid centre") } else { PROB_NODATA as f32 })
        .collect();
    Ok((out, ValidityMask { width: tile.cols, height: tile.rows, valid }))
}

/// Prediction of a standalone rescaled tile, padded with the constant at its
/// own border.
pub fn predict_tile(model: &Model, tile: &RasterGrid, mask: &ValidityMask) -> Result<(RasterGrid, ValidityMask)> {
    check_bands(model, tile.bands)?;
    if (mask.width, mask.height) != (tile.width, tile.height) {
        return Err(Error::shape("tile and mask differ in size"));
    }
    let source = PatchSource::new(tile)?;
    let window = TileIndex {
        tile_row: 0,
        tile_col: 0,
        row0: 0,
        col0: 0,
        rows: tile.height,
        cols: tile.width,
        water_dominated: false,
    };
    let (probs, valid) = predict_window(model, &source, mask, &window)?;
    Ok((probability_grid(tile, probs)?, valid))
}

/// Prediction of one tile of a zone; patches near the tile edge read the
/// neighbouring tiles.
pub fn predict_zone_tile(model: &Model, image: &ZoneImage, tile: &TileIndex) -> Result<TilePrediction> {
    check_bands(model, image.bands())?;
    let (probs, mask) = predict_window(model, &image.source, &image.mask, tile)?;
    let m = &image.meta;
    let template = RasterGrid::filled(tile.cols, tile.rows, 1, crate::raster::DType::F32, PROB_NODATA, PROB_NODATA)?
        .with_georef(
            &m.zone_id,
            m.origin_x + tile.col0 as f64 * m.pixel_size,
            m.origin_y - tile.row0 as f64 * m.pixel_size,
            m.pixel_size,
        );
    let probability = probability_grid(&template, probs)?;
    let quantized = quantize_probability(&probability, &mask)?;
    Ok(TilePrediction { tile: tile.clone(), probability, mask, quantized })
}

/// Every tile of the zone, in layout order. A failing tile is reported in
/// its outcome and does not stop the others.
pub fn predict_zone(model: &Model, image: &ZoneImage, exec: Exec) -> Vec<TileOutcome> {
    let jobs: Vec<(usize, &TileIndex)> = image.meta.tiles.iter().enumerate().collect();
    par::map(exec, &jobs, |&(i, tile)| TileOutcome {
        tile: tile.clone(),
        result: match &image.failures[i] {
            Some(f) => Err(f.clone()),
            None => predict_zone_tile(model, image, tile).map_err(TileFailure::from),
        },
    })
}

/// Stitches tile outputs back into zone-sized probability values and
/// validity; failed tiles stay invalid.
pub fn mosaic_probabilities(image: &ZoneImage, outcomes: &[TileOutcome]) -> (Vec<f32>, Vec<bool>) {
    let w = image.meta.width;
    let mut probs = vec![PROB_NODATA as f32; w * image.meta.height];
    let mut valid = vec![false; probs.len()];
    for o in outcomes {
        let Ok(p) = &o.result else { continue };
        let t = &o.tile;
        let values = p.probability.as_f32().expect("probability grids are f32");
        for r in 0..t.rows {
            for c in 0..t.cols {
                let z = (t.row0 + r) * w + t.col0 + c;
                probs[z] = values[r * t.cols + c];
                valid[z] = p.mask.valid[r * t.cols + c];
            }
        }
    }
    (probs, valid)
}
