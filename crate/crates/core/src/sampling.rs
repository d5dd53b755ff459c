//! Training-set construction: label compositing, systematic tile selection,
//! stratified patch sampling and epoch batching.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PATCH_SIZE;
use crate::nn::Batch;
use crate::raster::{gather_block, pad_constant, RasterData, RasterGrid, TileIndex, ValidityMask, PAD_VALUE};

/// Label code for built-up pixels.
pub const BUILT_UP: u8 = 1;
/// Label code for non-built-up pixels.
pub const NON_BUILT_UP: u8 = 0;
/// Nodata code of composited label grids.
pub const LABEL_NODATA: u8 = 255;

/// One reference layer with its rank; priority 1 wins over 2, and so on.
#[derive(Clone, Debug)]
pub struct LabelSource {
    pub raster: RasterGrid,
    pub priority: u32,
    pub name: String,
}

/// Per pixel, the first non-nodata value in priority order. The result is a
/// `u8` grid with codes 0, 1 and [`LABEL_NODATA`].
pub fn composite_labels(sources: &[LabelSource]) -> Result<RasterGrid> {
    let first = sources.first().ok_or_else(|| Error::config("no label sources"))?;
    let (w, h) = (first.raster.width, first.raster.height);
    let mut ordered: Vec<&LabelSource> = sources.iter().collect();
    ordered.sort_by_key(|s| s.priority);
    for s in &ordered {
        if (s.raster.width, s.raster.height, s.raster.bands) != (w, h, 1) {
            return Err(Error::shape(format!(
                "label source {} is {}x{}x{}, expected {w}x{h}x1",
                s.name, s.raster.width, s.raster.height, s.raster.bands
            )));
        }
    }
    let mut out = vec![LABEL_NODATA; w * h];
    for (i, px) in out.iter_mut().enumerate() {
        for s in &ordered {
            let v = s.raster.data.get(i);
            if s.raster.is_nodata_value(v) {
                continue;
            }
            *px = match v {
                0.0 => NON_BUILT_UP,
                1.0 => BUILT_UP,
                _ => return Err(Error::config(format!("label source {} has value {v} at pixel {i}", s.name))),
            };
            break;
        }
    }
    Ok(RasterGrid {
        width: w,
        height: h,
        bands: 1,
        nodata: LABEL_NODATA as f64,
        zone_id: first.raster.zone_id.clone(),
        origin_x: first.raster.origin_x,
        origin_y: first.raster.origin_y,
        pixel_size: first.raster.pixel_size,
        data: RasterData::U8(out),
    })
}

/// Zones whose valid fraction falls below this are treated as water zones.
pub const WATER_ZONE_VALID_FRACTION: f64 = 0.5;

/// Flags tiles whose valid fraction is below [`WATER_ZONE_VALID_FRACTION`]
/// and reports whether the zone as a whole is water dominated.
pub fn mark_water(tiles: &mut [TileIndex], mask: &ValidityMask) -> bool {
    for t in tiles.iter_mut() {
        t.water_dominated = (tile_valid_pixels(t, mask) as f64) < WATER_ZONE_VALID_FRACTION * t.pixels() as f64;
    }
    (mask.count() as f64) < WATER_ZONE_VALID_FRACTION * mask.valid.len() as f64
}

fn tile_valid_pixels(t: &TileIndex, mask: &ValidityMask) -> usize {
    (t.row0..t.row0 + t.rows).map(|r| (t.col0..t.col0 + t.cols).filter(|&c| mask.get(r, c)).count()).sum()
}

/// Systematic tile selection along anti-diagonals: tile `(r, c)` is taken
/// when `ceil((s+1)·f) > ceil(s·f)` with `s = r + c`. At `f = 0.5` this is
/// the even-parity checkerboard; at `f = 1` every tile.
///
/// In a water zone every tile holding at least one valid pixel is taken
/// regardless of `fraction`.
pub fn select_training_tiles(
    tiles: &[TileIndex],
    fraction: f64,
    water_zone: bool,
    mask: &ValidityMask,
) -> Result<Vec<TileIndex>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("tile fraction must be in (0, 1], got {fraction}")));
    }
    if water_zone {
        return Ok(tiles.iter().filter(|t| tile_valid_pixels(t, mask) > 0).cloned().collect());
    }
    Ok(tiles
        .iter()
        .filter(|t| {
            let s = (t.tile_row + t.tile_col) as f64;
            ((s + 1.0) * fraction).ceil() > (s * fraction).ceil()
        })
        .cloned()
        .collect())
}

/// Which label a sampled patch is trained against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Built-up when any pixel of the 5×5 label block is built-up.
    Block,
    /// The centre pixel's own label; the block rule still decides which
    /// patches are always kept.
    #[default]
    Centre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub tile_fraction: f64,
    pub non_bu_rate: f64,
    pub label_rule: LabelRule,
    /// `None` decides from the zone's valid fraction.
    pub water_zone: Option<bool>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { tile_fraction: 0.5, non_bu_rate: 0.6, label_rule: LabelRule::Centre, water_zone: None }
    }
}

/// A sampled patch: its centre in zone coordinates, the selected tile it
/// came from, and its binary target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub tile: u32,
    pub row: u32,
    pub col: u32,
    /// Whether the 5×5 label block holds a built-up pixel.
    pub block_built_up: bool,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub tiles: Vec<TileIndex>,
    pub samples: Vec<SampleRef>,
    /// Candidate non-built-up patches seen before subsampling.
    pub non_bu_candidates: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn built_up(&self) -> usize {
        self.samples.iter().filter(|s| s.label == BUILT_UP).count()
    }

    pub fn non_built_up(&self) -> usize {
        self.len() - self.built_up()
    }

    pub fn labels(&self) -> Vec<f32> {
        self.samples.iter().map(|s| s.label as f32).collect()
    }

    /// Summary for reproducibility audits.
    pub fn manifest(&self, config: &SamplingConfig, seed: u64) -> SampleManifest {
        let stats = class_stats(self).ok();
        SampleManifest {
            seed,
            config: config.clone(),
            tiles: self.tiles.iter().map(TileIndex::id).collect(),
            samples: self.len(),
            built_up: self.built_up(),
            non_built_up: self.non_built_up(),
            non_bu_candidates: self.non_bu_candidates,
            built_up_fraction: stats.map(|s| s.built_up_fraction),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub config: SamplingConfig,
    pub tiles: Vec<String>,
    pub samples: usize,
    pub built_up: usize,
    pub non_built_up: usize,
    pub non_bu_candidates: usize,
    pub built_up_fraction: Option<f64>,
}

/// Inclusive 2-D prefix sums of built-up pixels for O(1) block queries.
struct BuiltUpIntegral {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl BuiltUpIntegral {
    fn new(labels: &[u8], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sums = vec![0u32; stride * (height + 1)];
        for r in 0..height {
            let mut row_sum = 0;
            for c in 0..width {
                row_sum += (labels[r * width + c] == BUILT_UP) as u32;
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row_sum;
            }
        }
        BuiltUpIntegral { width, height, sums }
    }

    /// Built-up count in the `size × size` block centred on `(row, col)`,
    /// clipped to the grid.
    fn block(&self, row: usize, col: usize, size: usize) -> u32 {
        let half = size / 2;
        let (r0, c0) = (row.saturating_sub(half), col.saturating_sub(half));
        let (r1, c1) = ((row + half + 1).min(self.height), (col + half + 1).min(self.width));
        let s = self.width + 1;
        self.sums[r1 * s + c1] + self.sums[r0 * s + c0] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0]
    }
}

/// Two-stage sample: every patch of the selected tiles whose label block
/// holds a built-up pixel, plus each remaining patch independently with
/// probability `non_bu_rate`. Patches centred on nodata in either the image
/// or the labels are skipped.
pub fn build_sample_set<R: Rng + ?Sized>(
    image_mask: &ValidityMask,
    labels: &RasterGrid,
    tiles: &[TileIndex],
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    if !(0.0..=1.0).contains(&config.non_bu_rate) {
        return Err(Error::config(format!("non-built-up rate must be in [0, 1], got {}", config.non_bu_rate)));
    }
    let codes = labels.as_u8().ok_or_else(|| Error::config("label grid must be u8"))?;
    if (image_mask.width, image_mask.height) != (labels.width, labels.height) {
        return Err(Error::shape("label grid and image differ in size"));
    }
    let integral = BuiltUpIntegral::new(codes, labels.width, labels.height);
    let mut samples = Vec::new();
    let mut non_bu_candidates = 0;
    for (ti, t) in tiles.iter().enumerate() {
        for r in t.row0..t.row0 + t.rows {
            for c in t.col0..t.col0 + t.cols {
                let centre = codes[r * labels.width + c];
                if centre == LABEL_NODATA || !image_mask.get(r, c) {
                    continue;
                }
                let block_built_up = integral.block(r, c, PATCH_SIZE) > 0;
                if !block_built_up {
                    non_bu_candidates += 1;
                    if rng.random::<f64>() >= config.non_bu_rate {
                        continue;
                    }
                }
                let label = match config.label_rule {
                    LabelRule::Block => block_built_up as u8,
                    LabelRule::Centre => centre,
                };
                samples.push(SampleRef { tile: ti as u32, row: r as u32, col: c as u32, block_built_up, label });
            }
        }
    }
    if !samples.iter().any(|s| s.block_built_up) {
        warn!("zone {}: no built-up patches in the selected tiles", labels.zone_id);
    }
    Ok(SampleSet { tiles: tiles.to_vec(), samples, non_bu_candidates })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub built_up_fraction: f64,
    pub non_built_up_fraction: f64,
}

pub fn class_stats(set: &SampleSet) -> Result<ClassStats> {
    if set.is_empty() {
        return Err(Error::Statistic("class fractions of an empty sample set".into()));
    }
    let bu = set.built_up() as f64 / set.len() as f64;
    Ok(ClassStats { built_up_fraction: bu, non_built_up_fraction: 1.0 - bu })
}

/// One epoch's optimizer batches as sample indices: a full shuffle, cut into
/// chunks of `chunk_size`, each chunk cut into batches of `batch_size`.
pub fn shuffle_minibatches<R: Rng + ?Sized>(
    len: usize,
    chunk_size: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || chunk_size < batch_size {
        return Err(Error::config(format!(
            "need chunk size ≥ batch size ≥ 1, got chunk {chunk_size}, batch {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(chunk_size).flat_map(|chunk| chunk.chunks(batch_size).map(<[usize]>::to_vec)).collect())
}

/// A rescaled zone image padded once at the zone border, so patches near
/// tile seams read true neighbours.
#[derive(Clone, Debug)]
pub struct PatchSource {
    padded: RasterGrid,
}

impl PatchSource {
    /// `image` must be a rescaled `f32` grid.
    pub fn new(image: &RasterGrid) -> Result<Self> {
        if image.as_f32().is_none() {
            return Err(Error::config("patch source expects a rescaled f32 image"));
        }
        Ok(PatchSource { padded: pad_constant(image, PATCH_SIZE / 2, PAD_VALUE as f64)? })
    }

    pub fn bands(&self) -> usize {
        self.padded.bands
    }

    pub fn width(&self) -> usize {
        self.padded.width - 2 * (PATCH_SIZE / 2)
    }

    pub fn height(&self) -> usize {
        self.padded.height - 2 * (PATCH_SIZE / 2)
    }

    /// Appends the patch centred on zone pixel `(row, col)`.
    pub fn push_patch(&self, row: usize, col: usize, out: &mut Vec<f32>) {
        let p = &self.padded;
        let data = p.as_f32().expect("checked in new");
        gather_block(data, p.width, p.height, p.bands, row, col, PATCH_SIZE, out);
    }

    /// Patches centred on the given zone pixels, in order.
    pub fn batch(&self, centres: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<Batch<f32>> {
        let n = centres.len();
        let mut data = Vec::with_capacity(n * PATCH_SIZE * PATCH_SIZE * self.bands());
        for (r, c) in centres {
            self.push_patch(r, c, &mut data);
        }
        Batch::new(n, PATCH_SIZE, PATCH_SIZE, self.bands(), data)
    }

    /// Patches for `indices` into `set`.
    pub fn gather(&self, set: &SampleSet, indices: &[usize]) -> Result<Batch<f32>> {
        self.batch(indices.iter().map(|&i| {
            let s = set.samples[i];
            (s.row as usize, s.col as usize)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::tile_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn label_grid(w: usize, h: usize, codes: Vec<u8>) -> RasterGrid {
        RasterGrid::new(w, h, 1, LABEL_NODATA as f64, RasterData::U8(codes)).unwrap()
    }

    fn source(codes: Vec<u8>, priority: u32) -> LabelSource {
        LabelSource { raster: label_grid(codes.len(), 1, codes), priority, name: format!("p{priority}") }
    }

    #[test]
    fn compositing_follows_priority() {
        let a = source(vec![255, 0, 1, 255], 1);
        let b = source(vec![1, 1, 0, 255], 2);
        let out = composite_labels(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(out.as_u8().unwrap(), &[1, 0, 1, 255]);
        assert_eq!(composite_labels(std::slice::from_ref(&a)).unwrap().as_u8().unwrap(), a.raster.as_u8().unwrap());
    }

    #[test]
    fn compositing_rejects_mismatched_sizes() {
        let a = source(vec![0, 1], 1);
        let b = source(vec![0, 1, 1], 2);
        assert!(matches!(composite_labels(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn checkerboard_selection() {
        let tiles = tile_grid(40, 40, 10).unwrap();
        let mask = ValidityMask::all(40, 40, true);
        let sel = select_training_tiles(&tiles, 0.5, false, &mask).unwrap();
        assert_eq!(sel.len(), 8);
        assert!(sel.iter().all(|t| (t.tile_row + t.tile_col) % 2 == 0));

        let one = tile_grid(5, 5, 10).unwrap();
        for f in [0.01, 0.5, 1.0] {
            assert_eq!(select_training_tiles(&one, f, false, &ValidityMask::all(5, 5, true)).unwrap().len(), 1);
        }
        assert_eq!(select_training_tiles(&tiles, 1.0, false, &mask).unwrap().len(), 16);
        assert!(select_training_tiles(&tiles, 0.0, false, &mask).is_err());
    }

    #[test]
    fn water_zone_takes_every_tile_with_data() {
        let tiles = tile_grid(20, 20, 10).unwrap();
        let mut mask = ValidityMask::all(20, 20, false);
        mask.valid[0] = true;
        mask.valid[20 * 15 + 15] = true;
        mask.valid[20 * 12 + 3] = true;
        let sel = select_training_tiles(&tiles, 0.5, true, &mask).unwrap();
        let ids: Vec<String> = sel.iter().map(TileIndex::id).collect();
        assert_eq!(ids, ["r0_c0", "r1_c0", "r1_c1"]);

        let mut t = tiles.clone();
        assert!(mark_water(&mut t, &mask));
        assert!(t.iter().all(|t| t.water_dominated));
    }

    #[test]
    fn corner_pixel_marks_block_built_up() {
        let mut codes = vec![0u8; 100];
        codes[0] = 1;
        let labels = label_grid(10, 10, codes);
        let tiles = tile_grid(10, 10, 10).unwrap();
        let mask = ValidityMask::all(10, 10, true);
        let cfg = SamplingConfig { non_bu_rate: 0.0, label_rule: LabelRule::Block, ..SamplingConfig::default() };
        let set = build_sample_set(&mask, &labels, &tiles, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // (2, 2) is the farthest centre whose block still covers (0, 0).
        let centres: Vec<(u32, u32)> = set.samples.iter().map(|s| (s.row, s.col)).collect();
        assert_eq!(centres.len(), 9);
        assert!(centres.contains(&(2, 2)));
        assert!(set.samples.iter().all(|s| s.label == BUILT_UP));

        let centre_cfg = SamplingConfig { label_rule: LabelRule::Centre, ..cfg };
        let set = build_sample_set(&mask, &labels, &tiles, &centre_cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(set.built_up(), 1);
        assert_eq!(set.len(), 9);
    }

    #[test]
    fn nodata_centres_are_skipped() {
        let mut codes = vec![0u8; 25];
        codes[12] = LABEL_NODATA;
        let labels = label_grid(5, 5, codes);
        let mut mask = ValidityMask::all(5, 5, true);
        mask.valid[0] = false;
        let tiles = tile_grid(5, 5, 5).unwrap();
        let cfg = SamplingConfig { non_bu_rate: 1.0, ..SamplingConfig::default() };
        let set = build_sample_set(&mask, &labels, &tiles, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(set.len(), 23);
    }

    #[test]
    fn sampling_is_seeded() {
        let codes: Vec<u8> = (0..400).map(|i| (i % 37 == 0) as u8).collect();
        let labels = label_grid(20, 20, codes);
        let tiles = tile_grid(20, 20, 10).unwrap();
        let mask = ValidityMask::all(20, 20, true);
        let cfg = SamplingConfig::default();
        let a = build_sample_set(&mask, &labels, &tiles, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_sample_set(&mask, &labels, &tiles, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stats_and_empty_set() {
        let mk = |bu: usize, non: usize| SampleSet {
            tiles: vec![],
            samples: (0..bu + non)
                .map(|i| SampleRef { tile: 0, row: 0, col: i as u32, block_built_up: i < bu, label: (i < bu) as u8 })
                .collect(),
            non_bu_candidates: non,
        };
        let s = class_stats(&mk(10, 490)).unwrap();
        assert!((s.built_up_fraction - 0.02).abs() < 1e-12);
        assert_eq!(class_stats(&mk(4, 0)).unwrap().non_built_up_fraction, 0.0);
        assert!(matches!(class_stats(&mk(0, 0)), Err(Error::Statistic(_))));
    }

    #[test]
    fn minibatches_partition_each_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e1 = shuffle_minibatches(500, 200, 100, &mut rng).unwrap();
        assert_eq!(e1.iter().map(Vec::len).collect::<Vec<_>>(), [100; 5]);
        let e2 = shuffle_minibatches(500, 200, 100, &mut rng).unwrap();
        assert_ne!(e1, e2);
        for epoch in [e1, e2] {
            let mut all: Vec<usize> = epoch.concat();
            all.sort_unstable();
            assert_eq!(all, (0..500).collect::<Vec<_>>());
        }
        // A short chunk yields a short batch rather than mixing chunks.
        let e = shuffle_minibatches(250, 200, 150, &mut rng).unwrap();
        assert_eq!(e.iter().map(Vec::len).collect::<Vec<_>>(), [150, 50, 50]);
        assert!(shuffle_minibatches(10, 5, 6, &mut rng).is_err());
    }

    #[test]
    fn patch_source_reads_neighbours_across_tiles() {
        let data: Vec<f32> = (0..36).map(|v| v as f32 / 36.0).collect();
        let img = RasterGrid::new(6, 6, 1, -1.0, RasterData::F32(data.clone())).unwrap();
        let src = PatchSource::new(&img).unwrap();
        let b = src.batch([(0usize, 0usize), (3, 3)].into_iter()).unwrap();
        let corner = b.item(0);
        assert_eq!(corner.data[0], 0.0);
        assert_eq!(corner.data[12], data[0]);
        let inner = b.item(1);
        assert_eq!(inner.data[0], data[6 + 1]);
        assert_eq!(inner.data[24], data[5 * 6 + 5]);
    }
}
