//! Seeded synthetic zones: clustered rectangular buildings over a smoothly
//! varying background, four noisy `i16` bands, nodata holes, and the
//! matching label raster and footprints.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{Footprint, FootprintSet};
use crate::raster::{tile_grid, RasterData, RasterGrid, TileIndex};
use crate::sampling::{BUILT_UP, LABEL_NODATA, NON_BUILT_UP};

pub const BANDS: usize = 4;
/// Nodata of generated composites.
pub const COMPOSITE_NODATA: i16 = i16::MIN;
const PLACEMENT_RETRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub zone_id: String,
    pub width: usize,
    pub height: usize,
    pub tile_pixels: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub clusters: usize,
    pub buildings_per_cluster: usize,
    /// Standard deviation of building centres around a cluster centre, pixels.
    pub cluster_spread: f64,
    /// Inclusive side-length range of buildings, pixels.
    pub building_size: (usize, usize),
    /// Building edges fall on multiples of this many metres; must divide
    /// the pixel size.
    pub footprint_snap: f64,
    /// Mean background reflectance per band.
    pub background: [f64; BANDS],
    /// Amplitude of the smooth background variation.
    pub background_variation: f64,
    /// Shift added to a fully covered pixel; partly covered pixels get the
    /// covered share of it.
    pub built_offset: [f64; BANDS],
    pub noise_sigma: f64,
    pub nodata_fraction: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            zone_id: "A".into(),
            width: 512,
            height: 512,
            tile_pixels: 256,
            pixel_size: 10.0,
            origin_x: 500_000.0,
            origin_y: 5_300_000.0,
            clusters: 12,
            buildings_per_cluster: 30,
            cluster_spread: 14.0,
            building_size: (2, 7),
            footprint_snap: 5.0,
            background: [700.0, 900.0, 800.0, 2600.0],
            background_variation: 150.0,
            built_offset: [700.0, 750.0, 800.0, -900.0],
            noise_sigma: 180.0,
            nodata_fraction: 0.01,
            seed: 7,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.building_size;
        if lo == 0 || hi < lo {
            return Err(Error::config(format!("building size range ({lo}, {hi}) invalid")));
        }
        if hi > self.width.min(self.height) {
            return Err(Error::Generation(format!(
                "buildings up to {hi} px do not fit a {}x{} zone",
                self.width, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.nodata_fraction) {
            return Err(Error::config(format!("nodata fraction {} outside [0, 1)", self.nodata_fraction)));
        }
        if !(self.noise_sigma >= 0.0 && self.pixel_size > 0.0 && self.cluster_spread >= 0.0) {
            return Err(Error::config("noise, pixel size and cluster spread must be non-negative"));
        }
        let k = self.pixel_size / self.footprint_snap;
        if !(self.footprint_snap > 0.0 && k >= 1.0 && (k - k.round()).abs() < 1e-9) {
            return Err(Error::config(format!(
                "footprint snap {} m does not divide the {} m pixel",
                self.footprint_snap, self.pixel_size
            )));
        }
        tile_grid(self.height, self.width, self.tile_pixels)?;
        Ok(())
    }

    fn units_per_pixel(&self) -> usize {
        (self.pixel_size / self.footprint_snap).round() as usize
    }
}

/// A generated zone.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub params: SceneParams,
    /// `i16`, four bands, nodata [`COMPOSITE_NODATA`].
    pub composite: RasterGrid,
    /// `u8`, 1 where a building covers any part of the pixel, 0 elsewhere.
    pub labels: RasterGrid,
    pub footprints: FootprintSet,
    pub tiles: Vec<TileIndex>,
}

/// Building rectangle in snap units, `[row0, row0+rows) × [col0, col0+cols)`.
#[derive(Clone, Copy, Debug)]
struct Building {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
}

pub fn synth_zone(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (w, h) = (params.width, params.height);
    let k = params.units_per_pixel();

    let buildings = place_buildings(params, &mut rng)?;
    let coverage = pixel_coverage(&buildings, w, h, k);

    // A few random plane waves per band give a smooth, non-stationary background.
    let waves: Vec<[f64; 3]> = (0..BANDS * 3)
        .map(|_| {
            let angle = rng.random::<f64>() * TAU;
            let freq = TAU / rng.random_range(64.0..256.0);
            [freq * angle.cos(), freq * angle.sin(), rng.random::<f64>() * TAU]
        })
        .collect();
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut data = vec![0i16; BANDS * w * h];
    for b in 0..BANDS {
        for r in 0..h {
            for c in 0..w {
                let smooth: f64 = waves[b * 3..b * 3 + 3]
                    .iter()
                    .map(|[kx, ky, phase]| (kx * c as f64 + ky * r as f64 + phase).sin())
                    .sum::<f64>()
                    / 3.0;
                let v = params.background[b]
                    + params.background_variation * smooth
                    + params.built_offset[b] * coverage[r * w + c]
                    + noise.sample(&mut rng);
                data[(b * h + r) * w + c] = v.round().clamp(i16::MIN as f64 + 1.0, i16::MAX as f64) as i16;
            }
        }
    }
    inject_holes(&mut data, w, h, params.nodata_fraction, &mut rng);

    let composite = RasterGrid::new(w, h, BANDS, COMPOSITE_NODATA as f64, RasterData::I16(data))?.with_georef(
        &params.zone_id,
        params.origin_x,
        params.origin_y,
        params.pixel_size,
    );
    let labels = RasterGrid::new(
        w,
        h,
        1,
        LABEL_NODATA as f64,
        RasterData::U8(coverage.iter().map(|&f| if f > 0.0 { BUILT_UP } else { NON_BUILT_UP }).collect()),
    )?
    .with_georef(&params.zone_id, params.origin_x, params.origin_y, params.pixel_size);

    let unit = params.footprint_snap;
    let footprints = buildings
        .iter()
        .map(|b| Footprint {
            x0: params.origin_x + b.col0 as f64 * unit,
            x1: params.origin_x + (b.col0 + b.cols) as f64 * unit,
            y1: params.origin_y - b.row0 as f64 * unit,
            y0: params.origin_y - (b.row0 + b.rows) as f64 * unit,
        })
        .collect();
    Ok(Scene {
        params: params.clone(),
        composite,
        labels,
        footprints: FootprintSet { aoi_id: params.zone_id.clone(), footprints },
        tiles: tile_grid(h, w, params.tile_pixels)?,
    })
}

/// Covered share of every pixel; buildings never overlap.
fn pixel_coverage(buildings: &[Building], w: usize, h: usize, k: usize) -> Vec<f64> {
    let mut units = vec![0u32; w * h];
    for b in buildings {
        for r in b.row0..b.row0 + b.rows {
            for c in b.col0..b.col0 + b.cols {
                units[(r / k) * w + c / k] += 1;
            }
        }
    }
    let per_pixel = (k * k) as f64;
    units.into_iter().map(|u| u as f64 / per_pixel).collect()
}

/// Buildings never touch: each keeps a one-unit gap to the others.
fn place_buildings(params: &SceneParams, rng: &mut ChaCha8Rng) -> Result<Vec<Building>> {
    let k = params.units_per_pixel();
    let (w, h) = (params.width * k, params.height * k);
    let mut occupied = vec![false; w * h];
    let spread =
        Normal::new(0.0, params.cluster_spread.max(1e-9) * k as f64).map_err(|e| Error::config(e.to_string()))?;
    let (lo, hi) = (params.building_size.0 * k, params.building_size.1 * k);
    let mut buildings = Vec::new();
    for cluster in 0..params.clusters {
        let (cr, cc) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let mut placed = 0;
        for _ in 0..params.buildings_per_cluster {
            for _ in 0..PLACEMENT_RETRIES {
                let (rows, cols) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
                let r = (cr + spread.sample(rng)).round() - (rows / 2) as f64;
                let c = (cc + spread.sample(rng)).round() - (cols / 2) as f64;
                if r < 0.0 || c < 0.0 || r as usize + rows > h || c as usize + cols > w {
                    continue;
                }
                let b = Building { row0: r as usize, col0: c as usize, rows, cols };
                let (r0, c0) = (b.row0.saturating_sub(1), b.col0.saturating_sub(1));
                let (r1, c1) = ((b.row0 + rows + 1).min(h), (b.col0 + cols + 1).min(w));
                if (r0..r1).any(|y| occupied[y * w + c0..y * w + c1].iter().any(|&o| o)) {
                    continue;
                }
                for y in b.row0..b.row0 + rows {
                    occupied[y * w + b.col0..y * w + b.col0 + cols].iter_mut().for_each(|o| *o = true);
                }
                buildings.push(b);
                placed += 1;
                break;
            }
        }
        if params.buildings_per_cluster > 0 && placed == 0 {
            return Err(Error::Generation(format!(
                "cluster {cluster} could not place any building after {PLACEMENT_RETRIES} retries per building"
            )));
        }
    }
    Ok(buildings)
}

/// Square holes of 4–16 px until at least `fraction` of the pixels are
/// nodata in every band.
fn inject_holes(data: &mut [i16], w: usize, h: usize, fraction: f64, rng: &mut ChaCha8Rng) {
    let target = (fraction * (w * h) as f64).ceil() as usize;
    let plane = w * h;
    let mut holes = vec![false; plane];
    let mut count = 0;
    while count < target {
        let side = rng.random_range(4..=16).min(w).min(h);
        let (r0, c0) = (rng.random_range(0..=h - side), rng.random_range(0..=w - side));
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                if !holes[r * w + c] {
                    holes[r * w + c] = true;
                    count += 1;
                }
            }
        }
    }
    for (i, _) in holes.iter().enumerate().filter(|(_, &hole)| hole) {
        for b in 0..BANDS {
            data[b * plane + i] = COMPOSITE_NODATA;
        }
    }
}

/// Two independent draws of one generative process, zones `A` and `B`
/// side by side.
pub fn synth_twin_zones(params: &SceneParams, seed_a: u64, seed_b: u64) -> Result<(Scene, Scene)> {
    let a = SceneParams { zone_id: "A".into(), seed: seed_a, ..params.clone() };
    let b = SceneParams {
        zone_id: "B".into(),
        seed: seed_b,
        origin_x: params.origin_x + params.width as f64 * params.pixel_size,
        ..params.clone()
    };
    Ok((synth_zone(&a)?, synth_zone(&b)?))
}
