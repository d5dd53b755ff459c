use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Model, Optimizer, TrainingHistory, INFER_CHUNK};
use crate::nn::{bce_loss, AdamConfig};
use crate::pipeline::ZoneImage;
use crate::raster::RasterGrid;
use crate::sampling::{
    build_sample_set, mark_water, select_training_tiles, shuffle_minibatches, SampleManifest, SampleSet,
    SamplingConfig, BUILT_UP,
};

/// Independent random streams derived from the run seed. Initialization
/// uses the plain seed (stream 0).
const STREAM_SAMPLING: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: u32,
    pub min_delta: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping { patience: 3, min_delta: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: ArchitectureConfig,
    pub epochs: u32,
    pub validation_fraction: f64,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
    pub sampling: SamplingConfig,
    pub chunk_size: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchitectureConfig::desk(),
            epochs: 25,
            validation_fraction: 0.1,
            seed: 7,
            early_stopping: None,
            sampling: SamplingConfig::default(),
            chunk_size: 200_000,
            batch_size: 1024,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size < 2 || self.chunk_size < self.batch_size {
            return Err(Error::config(format!(
                "need chunk size ≥ batch size ≥ 2, got chunk {}, batch {}",
                self.chunk_size, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Class-stratified hold-out: indices into a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Holds out `round(fraction · n_c)` samples of each class `c`, at least one
/// when the class has two or more samples and never the whole class.
pub fn stratified_split(labels: &[f32], fraction: f64, rng: &mut ChaCha8Rng) -> ValidationSplit {
    let mut split = ValidationSplit { train: Vec::new(), validation: Vec::new() };
    for class in [0.0f32, 1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n = idx.len();
        let k = if n >= 2 { ((fraction * n as f64).round() as usize).clamp(1, n - 1) } else { 0 };
        split.validation.extend_from_slice(&idx[..k]);
        split.train.extend_from_slice(&idx[k..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split
}

#[derive(Clone, Debug)]
pub struct TrainedZone {
    pub model: Model,
    pub history: TrainingHistory,
    pub samples: SampleManifest,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Epoch (1-based) whose weights were kept when early stopping fired.
    pub best_epoch: Option<u32>,
    pub water_zone: bool,
}

/// Builds the sample set of a zone from its config.
pub fn sample_zone(
    image: &ZoneImage,
    labels: &RasterGrid,
    config: &SamplingConfig,
    seed: u64,
) -> Result<(SampleSet, bool)> {
    let mut tiles = image.meta.tiles.clone();
    let detected = mark_water(&mut tiles, &image.mask);
    let water = config.water_zone.unwrap_or(detected);
    let selected = select_training_tiles(&tiles, config.tile_fraction, water, &image.mask)?;
    let set = build_sample_set(&image.mask, labels, &selected, config, &mut stream(seed, STREAM_SAMPLING))?;
    Ok((set, water))
}

/// Mean inference-mode loss over `indices`.
pub fn evaluation_loss(model: &Model, image: &ZoneImage, set: &SampleSet, indices: &[usize]) -> Result<f64> {
    let labels = set.labels();
    let mut total = 0.0;
    for chunk in indices.chunks(INFER_CHUNK) {
        let probs = model.forward_batch(&image.source.gather(set, chunk)?)?;
        let y: Vec<f32> = chunk.iter().map(|&i| labels[i]).collect();
        total += bce_loss(&y, &probs)?.value * chunk.len() as f64;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Samples, splits and trains one zone's model.
pub fn train_zone(image: &ZoneImage, labels: &RasterGrid, config: &TrainConfig) -> Result<TrainedZone> {
    config.validate()?;
    if image.bands() != config.arch.bands {
        return Err(Error::config(format!(
            "zone has {} bands, architecture expects {}",
            image.bands(),
            config.arch.bands
        )));
    }
    let (set, water_zone) = sample_zone(image, labels, &config.sampling, config.seed)?;
    let all_labels = set.labels();
    let split = stratified_split(&all_labels, config.validation_fraction, &mut stream(config.seed, STREAM_SPLIT));
    let positives = split.train.iter().filter(|&&i| all_labels[i] == BUILT_UP as f32).count();
    if positives == 0 || positives == split.train.len() {
        let class = if positives == 0 { "built-up" } else { "non-built-up" };
        return Err(Error::DegenerateClass(format!(
            "zone {}: no {class} samples among {} training patches",
            image.meta.zone_id,
            split.train.len()
        )));
    }
    info!(
        "zone {}: {} samples ({} built-up), {} for validation",
        image.meta.zone_id,
        set.len(),
        set.built_up(),
        split.validation.len()
    );

    let mut model = Model::new(&config.arch, &image.meta.zone_id, config.seed)?;
    let mut optimizer = Optimizer::new(&model.net, config.adam);
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, u32, Model)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let batches = shuffle_minibatches(split.train.len(), config.chunk_size, config.batch_size, &mut shuffle_rng)?;
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            if batch.len() < 2 {
                debug!("epoch {epoch}: skipping batch {b} of size {}", batch.len());
                continue;
            }
            let idx: Vec<usize> = batch.iter().map(|&k| split.train[k]).collect();
            let x = image.source.gather(&set, &idx)?;
            let y: Vec<f32> = idx.iter().map(|&i| all_labels[i]).collect();
            let loss = model.train_step(&x, &y, &mut optimizer, &mut dropout_rng).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let val_loss = evaluation_loss(&model, image, &set, &split.validation)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Numeric(format!("epoch {epoch}: train loss {train_loss}, validation loss {val_loss}")));
        }
        history.train_loss.push(train_loss);
        history.validation_loss.push(val_loss);
        model.epochs = epoch;
        info!("epoch {epoch}: train {train_loss:.5}, validation {val_loss:.5}");

        if let Some(es) = config.early_stopping {
            match &best {
                Some((b, _, _)) if val_loss >= b - es.min_delta => stale += 1,
                _ => {
                    best = Some((val_loss, epoch, model.clone()));
                    stale = 0;
                }
            }
            if stale >= es.patience {
                info!("early stopping after epoch {epoch}");
                break;
            }
        }
    }

    let best_epoch = best.map(|(_, epoch, kept)| {
        model = kept;
        epoch
    });
    Ok(TrainedZone {
        model,
        history,
        samples: set.manifest(&config.sampling, config.seed),
        train_samples: split.train.len(),
        validation_samples: split.validation.len(),
        best_epoch,
        water_zone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_zone, SceneParams};

    fn tiny_scene() -> crate::synth::Scene {
        synth_zone(&SceneParams {
            width: 48,
            height: 48,
            tile_pixels: 24,
            clusters: 3,
            buildings_per_cluster: 8,
            cluster_spread: 6.0,
            ..SceneParams::default()
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            arch: ArchitectureConfig::with_filters(4, 6, 8),
            epochs: 3,
            batch_size: 64,
            chunk_size: 256,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<f32> = (0..1000).map(|i| (i % 10 == 0) as u8 as f32).collect();
        let s = stratified_split(&labels, 0.1, &mut stream(1, 2));
        assert_eq!(s.validation.len(), 100);
        assert_eq!(s.validation.iter().filter(|&&i| labels[i] == 1.0).count(), 10);
        let mut all = [s.train.clone(), s.validation.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let scene = tiny_scene();
        let image = ZoneImage::from_scene(&scene, 10_000.0).unwrap();
        let a = train_zone(&image, &scene.labels, &tiny_config()).unwrap();
        let b = train_zone(&image, &scene.labels, &tiny_config()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.epochs(), 3);
        assert!(a.history.train_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn single_class_zone_is_rejected() {
        let scene = tiny_scene();
        let image = ZoneImage::from_scene(&scene, 10_000.0).unwrap();
        let none = RasterGrid { data: crate::raster::RasterData::U8(vec![0; 48 * 48]), ..scene.labels.clone() };
        assert!(matches!(train_zone(&image, &none, &tiny_config()), Err(Error::DegenerateClass(_))));
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        let scene = tiny_scene();
        let image = ZoneImage::from_scene(&scene, 10_000.0).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            early_stopping: Some(EarlyStopping { patience: 1, min_delta: 0.5 }),
            ..tiny_config()
        };
        let run = train_zone(&image, &scene.labels, &cfg).unwrap();
        assert!(run.history.epochs() < 12);
        assert_eq!(run.best_epoch, Some(1));
        assert_eq!(run.model.epochs, 1);
    }
}
