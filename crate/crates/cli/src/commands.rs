use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use builtup::evaluation::{evaluate as score, rasterize_density, write_csv, Extent};
use builtup::model::{load_model, read_model_header, save_model, ArchitectureConfig, Model, MODEL_MAGIC};
use builtup::pipeline::{
    composite_tile_path, label_tile_path, load_footprints, load_labels, predict_zone, run_transfer, train_zone,
    write_scene, TileFailure, TileOutcome, TileStatus, TrainConfig, ZoneImage, ZoneMeta, ZoneRegistry,
};
use builtup::raster::{load_raster, read_raster_header, save_raster, TileIndex, PROB_NODATA, RASTER_MAGIC};
use builtup::sampling::LabelRule;
use builtup::synth::{synth_zone, SceneParams};
use builtup::{Error, Exec, Result};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::manifest::{files_below, RunManifest, RunStatus};
use crate::{EvaluateArgs, InspectArgs, LabelRuleArg, PredictArgs, SynthArgs, TrainArgs, TransferArgs};

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn echo(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

/// `A`, `B`, … `Z`, then `Z26`, `Z27`, ….
fn zone_name(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("Z{i}")
    }
}

pub fn synth(args: &SynthArgs, manifest: &mut RunManifest) -> Result<()> {
    let mut base = match &args.config {
        Some(p) => {
            manifest.input(p)?;
            load_config::<SceneParams>(p)?
        }
        None => SceneParams::default(),
    };
    if let Some(v) = args.tile_size {
        base.tile_pixels = v;
    }
    if let Some(v) = args.seed {
        base.seed = v;
    }
    if let Some(v) = args.width {
        base.width = v;
    }
    if let Some(v) = args.height {
        base.height = v;
    }
    if let Some(v) = args.clusters {
        base.clusters = v;
    }
    if let Some(v) = args.nodata_fraction {
        base.nodata_fraction = v;
    }
    if args.zones == 0 {
        return Err(Error::Config("--zones must be at least 1".into()));
    }
    base.validate()?;
    manifest.config = echo(&base);
    manifest.seeds.insert("seed".into(), base.seed);

    fs::create_dir_all(&args.out)?;
    for i in 0..args.zones {
        // Zones sit side by side along x so their footprints never mix.
        let params = SceneParams {
            zone_id: zone_name(i),
            seed: base.seed + i as u64,
            origin_x: base.origin_x + (i * base.width) as f64 * base.pixel_size,
            ..base.clone()
        };
        let scene = manifest.timed(&format!("generate_{}", params.zone_id), || synth_zone(&params))?;
        let dir = write_scene(&scene, &args.out)?;
        let built = scene.labels.as_u8().map_or(0, |l| l.iter().filter(|&&v| v == 1).count());
        manifest.metric(
            &format!("zone_{}", params.zone_id),
            serde_json::json!({
                "dir": dir,
                "buildings": scene.footprints.footprints.len(),
                "built_up_pixel_fraction": built as f64 / (params.width * params.height) as f64,
            }),
        );
        for f in files_below(&dir)? {
            manifest.output(&f)?;
        }
        info!("zone {} written to {}", params.zone_id, dir.display());
    }
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, manifest: &mut RunManifest) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            manifest.input(p)?;
            load_config::<TrainConfig>(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(preset) = args.preset {
        let divisor = cfg.arch.normalization_divisor;
        cfg.arch = ArchitectureConfig::preset(preset);
        cfg.arch.normalization_divisor = divisor;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.non_bu_rate {
        cfg.sampling.non_bu_rate = v;
    }
    if let Some(v) = args.tile_fraction {
        cfg.sampling.tile_fraction = v;
    }
    if let Some(v) = args.chunk_size {
        cfg.chunk_size = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.divisor {
        cfg.arch.normalization_divisor = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.adam.learning_rate = v;
    }
    if let Some(v) = args.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(rule) = args.label_rule {
        cfg.sampling.label_rule = match rule {
            LabelRuleArg::Block => LabelRule::Block,
            LabelRuleArg::Centre => LabelRule::Centre,
        };
    }
    if args.early_stopping && cfg.early_stopping.is_none() {
        cfg.early_stopping = Some(Default::default());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_zone_inputs(dir: &Path, meta: &ZoneMeta, labels: bool, manifest: &mut RunManifest) -> Result<()> {
    manifest.input(&dir.join("zone.json"))?;
    for t in &meta.tiles {
        let paths = [Some(composite_tile_path(dir, t)), labels.then(|| label_tile_path(dir, t))];
        for p in paths.into_iter().flatten() {
            // Unreadable tiles are reported per tile instead.
            if p.is_file() {
                manifest.input(&p)?;
            }
        }
    }
    Ok(())
}

fn load_statuses(image: &ZoneImage) -> Vec<TileStatus> {
    image
        .meta
        .tiles
        .iter()
        .zip(&image.failures)
        .map(|(t, f)| TileStatus { tile: t.id(), ok: f.is_none(), error: f.clone() })
        .collect()
}

pub fn train(args: &TrainArgs, manifest: &mut RunManifest) -> Result<()> {
    let cfg = resolve_train_config(args, manifest)?;
    manifest.config = echo(&cfg);
    manifest.seeds.insert("seed".into(), cfg.seed);

    let dir = args.data.join(&args.zone);
    let meta = ZoneMeta::load(&dir)?;
    record_zone_inputs(&dir, &meta, true, manifest)?;
    let image = manifest.timed("load", || ZoneImage::load(&dir, cfg.arch.normalization_divisor))?;
    manifest.tiles = load_statuses(&image);
    if image.failures.iter().any(Option::is_some) {
        warn!("training zone {} without its unreadable tiles", args.zone);
        manifest.status = RunStatus::Partial;
    }
    let labels = load_labels(&dir, &image.meta)?;

    let trained = manifest.timed("train", || train_zone(&image, &labels, &cfg))?;
    save_model(&trained.model, &args.out)?;
    manifest.output(&args.out)?;

    let history_path = args.out.with_extension("history.json");
    let history = serde_json::json!({
        "zone_id": args.zone,
        "history": trained.history,
        "best_epoch": trained.best_epoch,
        "train_samples": trained.train_samples,
        "validation_samples": trained.validation_samples,
        "water_zone": trained.water_zone,
        "samples": trained.samples,
    });
    fs::write(&history_path, serde_json::to_string_pretty(&history)?)?;
    manifest.output(&history_path)?;

    let registry_path = args.registry.clone().unwrap_or_else(|| args.data.join("registry.json"));
    let mut registry = ZoneRegistry::load(&registry_path)?;
    registry.register_model(&args.zone, &absolute(&args.out)?, &trained.model);
    registry.save(&registry_path)?;

    let h = &trained.history;
    manifest.metric("final_train_loss", h.train_loss.last());
    manifest.metric("final_validation_loss", h.validation_loss.last());
    manifest.metric("best_epoch", trained.best_epoch);
    manifest.metric("samples", &trained.samples);
    manifest.metric("params", trained.model.param_count());
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(fs::canonicalize(path)?)
}

pub fn probability_tile_path(dir: &Path, tile: &TileIndex) -> PathBuf {
    dir.join(format!("prob_{}.ghsr", tile.id()))
}

pub fn quantized_tile_path(dir: &Path, tile: &TileIndex) -> PathBuf {
    dir.join(format!("q_{}.ghsr", tile.id()))
}

/// Writes `prob_*` and `q_*` tiles plus the layout, and records tile
/// statuses; failed tiles mark the run partial.
fn write_predictions(
    outcomes: &[TileOutcome],
    image: &ZoneImage,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let (mut valid, mut sum) = (0usize, 0.0f64);
    for o in outcomes {
        let Ok(p) = &o.result else { continue };
        for (grid, path) in
            [(&p.probability, probability_tile_path(out, &o.tile)), (&p.quantized, quantized_tile_path(out, &o.tile))]
        {
            save_raster(grid, &path)?;
            manifest.output(&path)?;
        }
        let values = p.probability.as_f32().unwrap_or_default();
        for (&v, &ok) in values.iter().zip(&p.mask.valid) {
            if ok {
                valid += 1;
                sum += v as f64;
            }
        }
    }
    let layout = ZoneMeta { scene: None, ..image.meta.clone() };
    fs::write(out.join("zone.json"), serde_json::to_string_pretty(&layout)?)?;

    manifest.tiles = outcomes.iter().map(TileOutcome::status).collect();
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    for o in outcomes {
        if let Err(f) = &o.result {
            warn!("tile {} failed: {}", o.tile.id(), f.message);
        }
    }
    if failed > 0 {
        manifest.status = RunStatus::Partial;
    }
    manifest.metric("tiles_ok", outcomes.len() - failed);
    manifest.metric("tiles_failed", failed);
    manifest.metric("valid_pixels", valid);
    manifest.metric("mean_probability", (valid > 0).then(|| sum / valid as f64));
    Ok(())
}

fn divisor_for(model: &Model, requested: Option<f64>) -> f64 {
    match requested {
        Some(d) if d != model.arch.normalization_divisor => {
            warn!("divisor {d} overrides the model's {}", model.arch.normalization_divisor);
            d
        }
        Some(d) => d,
        None => model.arch.normalization_divisor,
    }
}

pub fn predict(args: &PredictArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.input(&args.model)?;
    let model = load_model(&args.model)?;
    let divisor = divisor_for(&model, args.divisor);
    manifest.config = serde_json::json!({
        "model": args.model,
        "zone": args.zone,
        "workers": args.workers,
        "divisor": divisor,
        "model_zone": model.zone_id,
    });
    manifest.seeds.insert("model_seed".into(), model.seed);

    let dir = args.data.join(&args.zone);
    let meta = ZoneMeta::load(&dir)?;
    record_zone_inputs(&dir, &meta, false, manifest)?;
    let image = manifest.timed("load", || ZoneImage::load(&dir, divisor))?;
    let outcomes = manifest.timed("predict", || predict_zone(&model, &image, Exec::with_workers(args.workers)));
    write_predictions(&outcomes, &image, &args.out, manifest)
}

pub fn transfer(args: &TransferArgs, manifest: &mut RunManifest) -> Result<()> {
    let registry_path = args.registry.clone().unwrap_or_else(|| args.data.join("registry.json"));
    if registry_path.is_file() {
        manifest.input(&registry_path)?;
    }
    let mut registry = ZoneRegistry::load(&registry_path)?;
    let record = registry
        .models
        .get(&args.source_zone)
        .cloned()
        .ok_or_else(|| Error::Registry(format!("no trained model registered for zone {}", args.source_zone)))?;
    manifest.input(&record.model_path)?;
    let header = read_model_header(&record.model_path)?;
    let divisor = args.divisor.unwrap_or(header.normalization_divisor);
    manifest.seeds.insert("model_seed".into(), record.seed);

    let dir = args.data.join(&args.zone);
    let meta = ZoneMeta::load(&dir)?;
    record_zone_inputs(&dir, &meta, false, manifest)?;
    let image = manifest.timed("load", || ZoneImage::load(&dir, divisor))?;
    let exec = Exec::with_workers(args.workers);
    let run = manifest.timed("predict", || run_transfer(&mut registry, &args.source_zone, &image, exec))?;
    manifest.config = serde_json::json!({
        "source_zone": args.source_zone,
        "zone": args.zone,
        "workers": args.workers,
        "divisor": divisor,
        "assignment": run.assignment,
    });

    write_predictions(&run.outcomes, &image, &args.out, manifest)?;
    registry.save(&registry_path)?;
    manifest.metric("mode", run.assignment.mode);
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, manifest: &mut RunManifest) -> Result<()> {
    let meta = ZoneMeta::load(&args.reference)?;
    manifest.input(&args.reference.join("zone.json"))?;
    manifest.input(&args.reference.join("footprints.json"))?;
    let footprints = load_footprints(&args.reference)?;
    let aoi = args.aoi_id.clone().unwrap_or_else(|| meta.zone_id.clone());
    manifest.config = serde_json::json!({
        "probs": args.probs,
        "reference": args.reference,
        "thresholds": args.thresholds,
        "fine_res": args.fine_res,
        "aoi_id": aoi,
    });

    let w = meta.width;
    let mut probs = vec![PROB_NODATA as f32; w * meta.height];
    let mut valid = vec![false; probs.len()];
    let mut statuses = Vec::with_capacity(meta.tiles.len());
    for t in &meta.tiles {
        let path = probability_tile_path(&args.probs, t);
        let loaded = load_raster(&path).and_then(|g| {
            if (g.width, g.height, g.bands) != (t.cols, t.rows, 1) {
                return Err(Error::Shape(format!(
                    "{} is {}x{}x{}, layout expects {}x{}x1",
                    path.display(),
                    g.height,
                    g.width,
                    g.bands,
                    t.rows,
                    t.cols
                )));
            }
            let values = g
                .as_f32()
                .ok_or_else(|| Error::Config(format!("{} is not an f32 probability grid", path.display())))?;
            for r in 0..t.rows {
                for c in 0..t.cols {
                    let v = values[r * t.cols + c];
                    let z = (t.row0 + r) * w + t.col0 + c;
                    probs[z] = v;
                    valid[z] = (0.0..=1.0).contains(&v);
                }
            }
            Ok(())
        });
        match loaded {
            Ok(()) => {
                manifest.input(&path)?;
                statuses.push(TileStatus { tile: t.id(), ok: true, error: None });
            }
            Err(e) => {
                warn!("tile {} not scored: {e}", t.id());
                statuses.push(TileStatus { tile: t.id(), ok: false, error: Some(TileFailure::from(e)) });
            }
        }
    }
    if statuses.iter().all(|s| !s.ok) {
        return Err(Error::Config(format!("no readable probability tile in {}", args.probs.display())));
    }
    if statuses.iter().any(|s| !s.ok) {
        manifest.status = RunStatus::Partial;
    }
    manifest.tiles = statuses;

    let extent = Extent {
        origin_x: meta.origin_x,
        origin_y: meta.origin_y,
        cols: meta.width,
        rows: meta.height,
        cell: meta.pixel_size,
    };
    let report = manifest.timed("evaluate", || -> Result<_> {
        let density = rasterize_density(&footprints.footprints, &extent, args.fine_res, meta.pixel_size)?;
        score(&aoi, &probs, density.as_f32().unwrap_or_default(), &valid, &args.thresholds)
    })?;
    if let Some(dir) = args.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.report, report.to_json()?)?;
    manifest.output(&args.report)?;
    if let Some(csv) = &args.csv {
        write_csv(std::slice::from_ref(&report), File::create(csv)?)?;
        manifest.output(csv)?;
    }
    manifest.metric("regression", report.regression);
    manifest.metric("thresholds", &report.thresholds);
    Ok(())
}

/// Prints header fields as JSON; payloads are never read.
pub fn inspect(args: &InspectArgs) -> Result<()> {
    let mut magic = [0u8; 4];
    File::open(&args.path)?
        .read_exact(&mut magic)
        .map_err(|_| Error::Format { offset: 0, message: "file shorter than a magic number".into() })?;
    let json = if &magic == RASTER_MAGIC {
        let h = read_raster_header(&args.path)?;
        serde_json::json!({ "kind": "raster", "payload_bytes": h.payload_len(), "header": h })
    } else if &magic == MODEL_MAGIC {
        serde_json::json!({ "kind": "model", "header": read_model_header(&args.path)? })
    } else {
        return Err(Error::Format { offset: 0, message: format!("unknown magic {magic:?}; expected GHSR or GHSM") });
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}
