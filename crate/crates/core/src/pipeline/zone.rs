//! Zone imagery in memory and on disk.
//!
//! A zone directory holds
//!
//! ```text
//! zone.json                    layout, georeference, generation parameters
//! footprints.json              reference rectangles
//! tiles/composite_r{R}_c{C}.ghsr
//! tiles/labels_r{R}_c{C}.ghsr
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::FootprintSet;
use crate::raster::{
    load_raster, rescale_reflectance, save_raster, DType, RasterData, RasterGrid, TileIndex, ValidityMask,
};
use crate::sampling::{PatchSource, LABEL_NODATA};
use crate::synth::{Scene, SceneParams};

/// Why a tile produced no output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileFailure {
    pub class: String,
    pub message: String,
}

impl From<&Error> for TileFailure {
    fn from(e: &Error) -> Self {
        TileFailure { class: e.class().to_string(), message: e.to_string() }
    }
}

impl From<Error> for TileFailure {
    fn from(e: Error) -> Self {
        TileFailure::from(&e)
    }
}

/// Layout record stored as `zone.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneMeta {
    pub zone_id: String,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub tile_pixels: usize,
    pub tiles: Vec<TileIndex>,
    #[serde(default)]
    pub scene: Option<SceneParams>,
}

impl ZoneMeta {
    pub fn of_scene(scene: &Scene) -> Self {
        let c = &scene.composite;
        ZoneMeta {
            zone_id: c.zone_id.clone(),
            width: c.width,
            height: c.height,
            bands: c.bands,
            pixel_size: c.pixel_size,
            origin_x: c.origin_x,
            origin_y: c.origin_y,
            tile_pixels: scene.params.tile_pixels,
            tiles: scene.tiles.clone(),
            scene: Some(scene.params.clone()),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("zone.json"))?)?)
    }

    /// An empty zone-sized grid with this georeference.
    pub fn grid(&self, bands: usize, dtype: DType, fill: f64, nodata: f64) -> Result<RasterGrid> {
        Ok(RasterGrid::filled(self.width, self.height, bands, dtype, fill, nodata)?.with_georef(
            &self.zone_id,
            self.origin_x,
            self.origin_y,
            self.pixel_size,
        ))
    }
}

pub fn composite_tile_path(dir: &Path, tile: &TileIndex) -> PathBuf {
    dir.join("tiles").join(format!("composite_{}.ghsr", tile.id()))
}

pub fn label_tile_path(dir: &Path, tile: &TileIndex) -> PathBuf {
    dir.join("tiles").join(format!("labels_{}.ghsr", tile.id()))
}

/// Writes a scene as `root/<zone_id>/…` and returns the zone directory.
pub fn write_scene(scene: &Scene, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&scene.params.zone_id);
    fs::create_dir_all(dir.join("tiles"))?;
    for t in &scene.tiles {
        save_raster(&scene.composite.window(t.row0, t.col0, t.rows, t.cols)?, composite_tile_path(&dir, t))?;
        save_raster(&scene.labels.window(t.row0, t.col0, t.rows, t.cols)?, label_tile_path(&dir, t))?;
    }
    fs::write(dir.join("footprints.json"), scene.footprints.to_json()?)?;
    fs::write(dir.join("zone.json"), serde_json::to_string_pretty(&ZoneMeta::of_scene(scene))?)?;
    Ok(dir)
}

pub fn load_footprints(dir: &Path) -> Result<FootprintSet> {
    FootprintSet::from_json(&fs::read_to_string(dir.join("footprints.json"))?)
}

/// Copies `src` into `dst` with its top-left corner at `(row0, col0)`.
pub fn blit(dst: &mut RasterGrid, src: &RasterGrid, row0: usize, col0: usize) -> Result<()> {
    if src.bands != dst.bands || row0 + src.height > dst.height || col0 + src.width > dst.width {
        return Err(Error::shape(format!(
            "{}x{}x{} tile does not fit at ({row0},{col0}) of {}x{}x{}",
            src.height, src.width, src.bands, dst.height, dst.width, dst.bands
        )));
    }
    let (dh, dw) = (dst.height, dst.width);
    macro_rules! copy {
        ($s:expr, $d:expr) => {
            for b in 0..src.bands {
                for r in 0..src.height {
                    let s = src.index(b, r, 0);
                    let d = (b * dh + row0 + r) * dw + col0;
                    $d[d..d + src.width].copy_from_slice(&$s[s..s + src.width]);
                }
            }
        };
    }
    match (&src.data, &mut dst.data) {
        (RasterData::U8(s), RasterData::U8(d)) => copy!(s, d),
        (RasterData::I16(s), RasterData::I16(d)) => copy!(s, d),
        (RasterData::F32(s), RasterData::F32(d)) => copy!(s, d),
        _ => return Err(Error::config("tile dtype differs from the zone mosaic")),
    }
    Ok(())
}

fn check_tile(meta: &ZoneMeta, tile: &TileIndex, grid: &RasterGrid, bands: usize) -> Result<()> {
    if (grid.width, grid.height) != (tile.cols, tile.rows) {
        return Err(Error::shape(format!(
            "tile {} is {}x{}, layout says {}x{}",
            tile.id(),
            grid.height,
            grid.width,
            tile.rows,
            tile.cols
        )));
    }
    if grid.bands != bands {
        return Err(Error::config(format!("tile {} has {} bands, expected {bands}", tile.id(), grid.bands)));
    }
    if grid.zone_id != meta.zone_id {
        return Err(Error::config(format!("tile {} belongs to zone {:?}", tile.id(), grid.zone_id)));
    }
    Ok(())
}

/// Rescaled zone imagery for sampling and prediction.
#[derive(Clone, Debug)]
pub struct ZoneImage {
    pub meta: ZoneMeta,
    pub source: PatchSource,
    pub mask: ValidityMask,
    /// One entry per `meta.tiles`; `Some` for tiles that could not be read.
    pub failures: Vec<Option<TileFailure>>,
}

impl ZoneImage {
    /// From a whole-zone reflectance composite.
    pub fn from_composite(
        composite: &RasterGrid,
        tiles: Vec<TileIndex>,
        tile_pixels: usize,
        divisor: f64,
    ) -> Result<Self> {
        let meta = ZoneMeta {
            zone_id: composite.zone_id.clone(),
            width: composite.width,
            height: composite.height,
            bands: composite.bands,
            pixel_size: composite.pixel_size,
            origin_x: composite.origin_x,
            origin_y: composite.origin_y,
            tile_pixels,
            tiles,
            scene: None,
        };
        let failures = vec![None; meta.tiles.len()];
        Self::assemble(meta, composite, failures, divisor)
    }

    pub fn from_scene(scene: &Scene, divisor: f64) -> Result<Self> {
        let mut image = Self::from_composite(&scene.composite, scene.tiles.clone(), scene.params.tile_pixels, divisor)?;
        image.meta.scene = Some(scene.params.clone());
        Ok(image)
    }

    /// Reads every composite tile of a zone directory. Unreadable or
    /// inconsistent tiles are recorded in `failures` and left as nodata.
    pub fn load(dir: &Path, divisor: f64) -> Result<Self> {
        let meta = ZoneMeta::load(dir)?;
        let mut mosaic: Option<RasterGrid> = None;
        let mut failures = Vec::with_capacity(meta.tiles.len());
        for t in &meta.tiles {
            let placed = load_raster(composite_tile_path(dir, t)).and_then(|g| {
                check_tile(&meta, t, &g, meta.bands)?;
                if mosaic.is_none() {
                    mosaic = Some(meta.grid(meta.bands, g.dtype(), g.nodata, g.nodata)?);
                }
                let m = mosaic.as_mut().expect("just set");
                if g.nodata != m.nodata {
                    return Err(Error::config(format!(
                        "tile {} nodata {} differs from {}",
                        t.id(),
                        g.nodata,
                        m.nodata
                    )));
                }
                blit(m, &g, t.row0, t.col0)
            });
            failures.push(placed.err().map(TileFailure::from));
        }
        let mosaic = match mosaic {
            Some(m) => m,
            None => return Err(Error::config(format!("zone {}: no readable composite tile", meta.zone_id))),
        };
        Self::assemble(meta, &mosaic, failures, divisor)
    }

    fn assemble(
        meta: ZoneMeta,
        composite: &RasterGrid,
        failures: Vec<Option<TileFailure>>,
        divisor: f64,
    ) -> Result<Self> {
        let (scaled, mut mask) = rescale_reflectance(composite, divisor)?;
        for (t, f) in meta.tiles.iter().zip(&failures) {
            if f.is_some() {
                for r in t.row0..t.row0 + t.rows {
                    mask.valid[r * meta.width + t.col0..r * meta.width + t.col0 + t.cols]
                        .iter_mut()
                        .for_each(|v| *v = false);
                }
            }
        }
        Ok(ZoneImage { source: PatchSource::new(&scaled)?, mask, failures, meta })
    }

    pub fn bands(&self) -> usize {
        self.meta.bands
    }
}

/// Mosaic of the label tiles; any unreadable tile is an error.
pub fn load_labels(dir: &Path, meta: &ZoneMeta) -> Result<RasterGrid> {
    let mut labels = meta.grid(1, DType::U8, LABEL_NODATA as f64, LABEL_NODATA as f64)?;
    for t in &meta.tiles {
        let g = load_raster(label_tile_path(dir, t))?;
        check_tile(meta, t, &g, 1)?;
        if g.dtype() != DType::U8 {
            return Err(Error::config(format!("label tile {} is not u8", t.id())));
        }
        blit(&mut labels, &g, t.row0, t.col0)?;
    }
    Ok(labels)
}
