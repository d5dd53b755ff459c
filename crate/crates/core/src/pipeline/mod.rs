//! Per-zone training, tiled prediction and model transfer between zones.

mod predict;
mod train;
mod transfer;
mod zone;

pub use predict::{
    mosaic_probabilities, predict_tile, predict_zone, predict_zone_tile, TileOutcome, TilePrediction, TileStatus,
};
pub use train::{
    evaluation_loss, sample_zone, stratified_split, train_zone, EarlyStopping, TrainConfig, TrainedZone,
    ValidationSplit,
};
pub use transfer::{
    compare_transfer, run_transfer, Assignment, ModelRecord, OaBa, TransferComparison, TransferMode, TransferRow,
    TransferRun, ZoneRegistry,
};
pub use zone::{
    blit, composite_tile_path, label_tile_path, load_footprints, load_labels, write_scene, TileFailure, ZoneImage,
    ZoneMeta,
};
