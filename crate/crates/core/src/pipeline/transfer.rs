use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{accuracy_metrics, binarize, confusion, reference_mask};
use crate::model::{load_model, Model};
use crate::par::Exec;
use crate::pipeline::{predict_zone, TileOutcome, ZoneImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// The zone's own model.
    CloseRange,
    /// A model trained on another zone.
    FarRange,
}

impl TransferMode {
    pub fn between(source: &str, target: &str) -> Self {
        if source == target {
            TransferMode::CloseRange
        } else {
            TransferMode::FarRange
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_path: PathBuf,
    pub seed: u64,
    pub epochs: u32,
}

/// Which model predicts a zone and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub model_path: PathBuf,
    pub mode: TransferMode,
    pub source_zone_id: String,
}

/// Trained models per zone and the model assignment of every predicted zone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneRegistry {
    pub models: BTreeMap<String, ModelRecord>,
    pub assignments: BTreeMap<String, Assignment>,
}

impl ZoneRegistry {
    /// A missing file is an empty registry.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => {
                let reg: ZoneRegistry = serde_json::from_str(&text)?;
                reg.validate()?;
                Ok(reg)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ZoneRegistry::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (target, a) in &self.assignments {
            if a.mode != TransferMode::between(&a.source_zone_id, target) {
                return Err(Error::Registry(format!(
                    "zone {target}: mode {:?} inconsistent with source {}",
                    a.mode, a.source_zone_id
                )));
            }
        }
        Ok(())
    }

    /// Records a freshly trained model; the zone is assigned its own model.
    pub fn register_model(&mut self, zone_id: &str, model_path: &Path, model: &Model) {
        self.models.insert(
            zone_id.to_string(),
            ModelRecord { model_path: model_path.to_path_buf(), seed: model.seed, epochs: model.epochs },
        );
        self.assignments.insert(
            zone_id.to_string(),
            Assignment {
                model_path: model_path.to_path_buf(),
                mode: TransferMode::CloseRange,
                source_zone_id: zone_id.to_string(),
            },
        );
    }

    /// Assigns `source`'s model to `target`.
    pub fn assign(&mut self, source: &str, target: &str) -> Result<Assignment> {
        let record = self
            .models
            .get(source)
            .ok_or_else(|| Error::Registry(format!("no trained model registered for zone {source}")))?;
        let a = Assignment {
            model_path: record.model_path.clone(),
            mode: TransferMode::between(source, target),
            source_zone_id: source.to_string(),
        };
        self.assignments.insert(target.to_string(), a.clone());
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct TransferRun {
    pub assignment: Assignment,
    pub outcomes: Vec<TileOutcome>,
}

/// Predicts every tile of `target` with the model registered for
/// `source_zone` and records the assignment.
pub fn run_transfer(
    registry: &mut ZoneRegistry,
    source_zone: &str,
    target: &ZoneImage,
    exec: Exec,
) -> Result<TransferRun> {
    let path = registry
        .models
        .get(source_zone)
        .map(|r| r.model_path.clone())
        .ok_or_else(|| Error::Registry(format!("no trained model registered for zone {source_zone}")))?;
    let model = load_model(&path)?;
    if model.zone_id != source_zone {
        return Err(Error::Registry(format!(
            "model {} was trained on zone {}, registry says {source_zone}",
            path.display(),
            model.zone_id
        )));
    }
    let outcomes = predict_zone(&model, target, exec);
    let assignment = registry.assign(source_zone, &target.meta.zone_id)?;
    Ok(TransferRun { assignment, outcomes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OaBa {
    pub overall_accuracy: f64,
    pub balanced_accuracy: f64,
}

/// One cut-off of the close-vs-far table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub threshold: f64,
    pub close_range: OaBa,
    pub far_range: OaBa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferComparison {
    pub rows: Vec<TransferRow>,
}

impl TransferComparison {
    pub fn at(&self, threshold: f64) -> Option<&TransferRow> {
        self.rows.iter().find(|r| (r.threshold - threshold).abs() < 1e-12)
    }
}

/// OA and BA of both prediction sets against `density > 0` at every
/// threshold. Pixels count only where both predictions and the mask are
/// valid.
pub fn compare_transfer(
    close: &[f32],
    far: &[f32],
    density: &[f32],
    valid: &[bool],
    thresholds: &[f64],
) -> Result<TransferComparison> {
    if close.len() != far.len() || far.len() != density.len() || density.len() != valid.len() {
        return Err(Error::shape(format!(
            "coverage differs: close {}, far {}, reference {}, mask {}",
            close.len(),
            far.len(),
            density.len(),
            valid.len()
        )));
    }
    let reference = reference_mask(density);
    let score = |probs: &[f32], t: f64| -> Result<OaBa> {
        let m = accuracy_metrics(&confusion(&binarize(probs, t)?, &reference, valid)?)?;
        Ok(OaBa { overall_accuracy: m.overall_accuracy, balanced_accuracy: m.balanced_accuracy })
    };
    let rows = thresholds
        .iter()
        .map(|&t| Ok(TransferRow { threshold: t, close_range: score(close, t)?, far_range: score(far, t)? }))
        .collect::<Result<_>>()?;
    Ok(TransferComparison { rows })
}
