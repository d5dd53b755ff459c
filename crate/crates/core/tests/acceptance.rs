//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails. Tolerances are fixed here.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use builtup::evaluation::{
    confusion, evaluate, rasterize_density, regress_density, ConfusionCounts, EvaluationReport, Extent, Footprint,
    DEFAULT_THRESHOLDS,
};
use builtup::model::{count_params, network_grad_check, read_model, write_model, ArchitectureConfig, Model, Network};
use builtup::nn::gradcheck::{batch_norm_error, conv_layer_error, dense_layer_error};
use builtup::nn::{Activation, Batch, BatchNormParams, ConvLayer, DenseLayer};
use builtup::pipeline::{
    compare_transfer, mosaic_probabilities, predict_tile, predict_zone, run_transfer, train_zone, TrainConfig,
    TrainedZone, ZoneImage, ZoneRegistry,
};
use builtup::raster::{
    quantize_probability, read_raster, rescale_reflectance, tile_grid, write_raster, RasterData, RasterGrid,
    ValidityMask, QUANT_NODATA,
};
use builtup::sampling::{build_sample_set, select_training_tiles, PatchSource, SamplingConfig, BUILT_UP, LABEL_NODATA};
use builtup::synth::{synth_twin_zones, synth_zone, Scene, SceneParams};
use builtup::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIVISOR: f64 = 10_000.0;
const GRAD_SEEDS: u64 = 20;
const GRAD_STEP: f64 = 1e-4;
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const DESK_COUNT: (usize, usize) = (38_017, 192);
const PAPER_COUNT: (usize, usize) = (594_433, 768);
const LOSS_CEILING: f64 = 0.1;
const LOSS_GAP: f64 = 0.05;
const LAST_EPOCHS: usize = 5;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);
const MIN_BA: f64 = 0.90;
const MIN_KAPPA: f64 = 0.6;
const MIN_R: f64 = 0.6;
const EXACT_LINE_TOLERANCE: f64 = 1e-12;
const MIN_CANDIDATES: usize = 10_000;
const NON_BU_RATE: f64 = 0.6;
const ORACLE_TOLERANCE: f32 = 1e-6;
const TRANSFER_BA_GAP: f64 = 0.10;
const SEED_B: u64 = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Shared fixtures: zone A is the default scene, B its twin.
struct Fixture {
    scene_a: Scene,
    scene_b: Scene,
    image_a: ZoneImage,
    image_b: ZoneImage,
    config: TrainConfig,
    trained_a: TrainedZone,
    train_time_a: Duration,
}

impl Fixture {
    fn new() -> Self {
        let params = SceneParams::default();
        let (scene_a, scene_b) = synth_twin_zones(&params, params.seed, SEED_B).expect("twin scenes");
        assert_eq!(scene_a, synth_zone(&params).expect("default scene"), "twin A must be the default scene");
        let image_a = ZoneImage::from_scene(&scene_a, DIVISOR).expect("image A");
        let image_b = ZoneImage::from_scene(&scene_b, DIVISOR).expect("image B");
        let config = TrainConfig::default();
        let start = Instant::now();
        let trained_a = train_zone(&image_a, &scene_a.labels, &config).expect("training zone A");
        Fixture { train_time_a: start.elapsed(), scene_a, scene_b, image_a, image_b, config, trained_a }
    }
}

fn density_of(scene: &Scene) -> Vec<f32> {
    let grid =
        rasterize_density(&scene.footprints.footprints, &Extent::of(&scene.labels), 1.0, scene.params.pixel_size)
            .expect("density");
    grid.as_f32().expect("f32 density").to_vec()
}

fn zone_probabilities(model: &Model, image: &ZoneImage, exec: Exec) -> (Vec<f32>, Vec<bool>) {
    let outcomes = predict_zone(model, image, exec);
    assert!(outcomes.iter().all(|o| o.result.is_ok()), "tile failure");
    mosaic_probabilities(image, &outcomes)
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    let random = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Batch::new(2, 3, 3, 2, random(&mut rng, 36)).unwrap();
        for act in [Activation::Linear, Activation::Tanh] {
            let mut conv = ConvLayer::zeros(2, 3, act);
            conv.kernel = random(&mut rng, conv.kernel.len());
            conv.bias = random(&mut rng, 3);
            worst[0] = worst[0].max(conv_layer_error(&conv, &x, GRAD_STEP).unwrap());
        }
        let v = Batch::new(3, 1, 1, 8, random(&mut rng, 24)).unwrap();
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let mut dense = DenseLayer::zeros(8, 3, act);
            dense.weights = random(&mut rng, 24);
            dense.bias = random(&mut rng, 3);
            worst[1] = worst[1].max(dense_layer_error(&dense, &v, GRAD_STEP).unwrap());
        }
        let mut bn = BatchNormParams::<f64>::new(3);
        bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        bn.beta = random(&mut rng, 3);
        let b = Batch::new(4, 2, 2, 3, random(&mut rng, 48)).unwrap();
        worst[2] = worst[2].max(batch_norm_error(&bn, &b, GRAD_STEP).unwrap());

        let mut arch = ArchitectureConfig::with_filters(3, 4, 5);
        arch.bands = 2;
        let net = Network::<f64>::init(&arch, &mut rng).unwrap();
        let patches = Batch::new(6, 5, 5, 2, (0..300).map(|_| rng.random::<f64>()).collect()).unwrap();
        let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        worst[3] = worst[3].max(network_grad_check(&net, &patches, &labels, seed, GRAD_STEP).unwrap());
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&e| e < GRAD_TOLERANCE) && elapsed < GRAD_BUDGET;
    outcome(
        pass,
        format!(
            "max rel. error conv {:.1e}, dense {:.1e}, batch norm {:.1e}, network {:.1e} over {GRAD_SEEDS} seeds in {:.1}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn parameter_counting() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, arch, expected) in
        [("desk", ArchitectureConfig::desk(), DESK_COUNT), ("paper-scale", ArchitectureConfig::paper(), PAPER_COUNT)]
    {
        let formula = count_params(&arch).unwrap();
        let stored = Network::<f32>::zeros(&arch).unwrap().enumerate_params();
        pass &= (formula.trainable, formula.non_trainable) == expected && formula == stored;
        details.push(format!("{name} {}/{}", formula.trainable, formula.non_trainable));
    }
    outcome(pass, details.join(", "))
}

fn convergence(f: &Fixture) -> Outcome {
    let h = &f.trained_a.history;
    let (train, val) = (&h.train_loss, &h.validation_loss);
    let epochs = train.len();
    if epochs != f.config.epochs as usize {
        return outcome(false, format!("ran {epochs} of {} epochs", f.config.epochs));
    }
    let gap = (epochs - LAST_EPOCHS..epochs).map(|e| (train[e] - val[e]).abs()).fold(0.0, f64::max);
    let (t, v) = (train[epochs - 1], val[epochs - 1]);
    let pass = t < LOSS_CEILING && v < LOSS_CEILING && gap < LOSS_GAP && f.train_time_a < TRAIN_BUDGET;
    outcome(
        pass,
        format!(
            "epoch {epochs}: train {t:.4}, validation {v:.4}; max gap over last {LAST_EPOCHS} epochs {gap:.4}; {:.0}s",
            f.train_time_a.as_secs_f64()
        ),
    )
}

/// Report over the tiles zone A did not sample from.
fn held_out_report(f: &Fixture) -> EvaluationReport {
    let (probs, mut valid) = zone_probabilities(&f.trained_a.model, &f.image_a, Exec::Sequential);
    let used = &f.trained_a.samples.tiles;
    let w = f.image_a.meta.width;
    let mut held = 0;
    for t in &f.image_a.meta.tiles {
        if !used.contains(&t.id()) {
            held += 1;
            continue;
        }
        for r in t.row0..t.row0 + t.rows {
            valid[r * w + t.col0..r * w + t.col0 + t.cols].iter_mut().for_each(|v| *v = false);
        }
    }
    assert!(held > 0, "no held-out tile");
    evaluate("A", &probs, &density_of(&f.scene_a), &valid, &DEFAULT_THRESHOLDS).expect("evaluation")
}

fn end_to_end_quality(report: &EvaluationReport) -> Outcome {
    let (lo, hi) = (report.at(0.2).unwrap(), report.at(0.5).unwrap());
    let (ba_lo, ba_hi) = (lo.metrics.balanced_accuracy, hi.metrics.balanced_accuracy);
    let pass = ba_lo >= MIN_BA && lo.metrics.kappa >= MIN_KAPPA && ba_lo >= ba_hi;
    outcome(
        pass,
        format!(
            "held-out BA@0.2 {ba_lo:.4}, kappa@0.2 {:.4}, BA@0.5 {ba_hi:.4} over {} pixels",
            lo.metrics.kappa, report.valid_pixels
        ),
    )
}

fn regression(report: &EvaluationReport) -> Outcome {
    let Some(reg) = report.regression else {
        return outcome(false, format!("regression undefined: {:?}", report.regression_error));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p: Vec<f32> = (0..10_000).map(|_| rng.random::<f32>()).collect();
    let d: Vec<f32> = p.iter().map(|&x| 0.5 * x).collect();
    let line = regress_density(&p, &d, &vec![true; p.len()]).unwrap();
    let exact = (line.slope - 0.5).abs() <= EXACT_LINE_TOLERANCE && (line.r - 1.0).abs() <= EXACT_LINE_TOLERANCE;
    outcome(
        reg.r >= MIN_R && reg.slope > 0.0 && exact,
        format!(
            "scene r {:.4}, slope {:.4}; exact line slope error {:.1e}, r error {:.1e}",
            reg.r,
            reg.slope,
            (line.slope - 0.5).abs(),
            (line.r - 1.0).abs()
        ),
    )
}

fn sampling_proportions(f: &Fixture) -> Outcome {
    let scene = &f.scene_a;
    let tiles = &f.image_a.meta.tiles;
    let mask = &f.image_a.mask;
    let config = SamplingConfig { non_bu_rate: NON_BU_RATE, ..SamplingConfig::default() };
    let set = build_sample_set(mask, &scene.labels, tiles, &config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();

    // Brute-force candidate census.
    let codes = scene.labels.as_u8().unwrap();
    let (w, h) = (scene.labels.width, scene.labels.height);
    let (mut bu, mut non_bu) = (0usize, 0usize);
    for r in 0..h {
        for c in 0..w {
            if codes[r * w + c] == LABEL_NODATA || !mask.get(r, c) {
                continue;
            }
            let block = (r.saturating_sub(2)..(r + 3).min(h))
                .any(|y| (c.saturating_sub(2)..(c + 3).min(w)).any(|x| codes[y * w + x] == BUILT_UP));
            if block {
                bu += 1;
            } else {
                non_bu += 1;
            }
        }
    }
    let kept_bu = set.samples.iter().filter(|s| s.block_built_up).count();
    let kept_non = set.samples.len() - kept_bu;
    let rate = kept_non as f64 / non_bu as f64;
    let sigma = (NON_BU_RATE * (1.0 - NON_BU_RATE) / non_bu as f64).sqrt();

    let mut selection_ok = true;
    for (rows, cols) in [(1, 1), (1, 4), (2, 2), (3, 3), (3, 5), (4, 7), (6, 6)] {
        let grid = tile_grid(rows * 8, cols * 8, 8).unwrap();
        let n = grid.len();
        let k = select_training_tiles(&grid, 0.5, false, &ValidityMask::all(cols * 8, rows * 8, true)).unwrap().len();
        selection_ok &= k == n / 2 || k == n.div_ceil(2);
    }

    let pass = bu + non_bu >= MIN_CANDIDATES
        && kept_bu == bu
        && set.non_bu_candidates == non_bu
        && (rate - NON_BU_RATE).abs() <= 3.0 * sigma
        && selection_ok;
    outcome(
        pass,
        format!(
            "{} candidates; built-up recall {kept_bu}/{bu}; non-built-up keep rate {rate:.4} (3σ = {:.4}); half selection {}",
            bu + non_bu,
            3.0 * sigma,
            if selection_ok { "exact" } else { "off" }
        ),
    )
}

fn oracle_equivalences(f: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = &f.trained_a.model;

    // Tile prediction against single-patch forward passes.
    let mut max_tile = 0.0f32;
    for _ in 0..5 {
        let (rows, cols) = (rng.random_range(5..24), rng.random_range(5..24));
        let r0 = rng.random_range(0..f.scene_a.composite.height - rows);
        let c0 = rng.random_range(0..f.scene_a.composite.width - cols);
        let window = f.scene_a.composite.window(r0, c0, rows, cols).unwrap();
        let (scaled, mask) = rescale_reflectance(&window, DIVISOR).unwrap();
        let (prob, valid) = predict_tile(model, &scaled, &mask).unwrap();
        let source = PatchSource::new(&scaled).unwrap();
        let values = prob.as_f32().unwrap();
        for (i, &ok) in valid.valid.iter().enumerate() {
            if ok {
                let single = model.forward_batch(&source.batch([(i / cols, i % cols)].into_iter()).unwrap()).unwrap();
                max_tile = max_tile.max((single[0] - values[i]).abs());
            }
        }
    }

    // Confusion counts against a direct tally.
    let mut confusion_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..300);
        let p: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let r: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let v: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let mut tally = ConfusionCounts::default();
        for i in (0..n).filter(|&i| v[i]) {
            match (p[i], r[i]) {
                (true, true) => tally.tp += 1,
                (true, false) => tally.fp += 1,
                (false, true) => tally.fn_ += 1,
                (false, false) => tally.tn += 1,
            }
        }
        confusion_ok &= confusion(&p, &r, &v).unwrap() == tally;
    }

    // Density against 100 sub-cell centres per cell.
    let mut max_density = 0.0f32;
    for _ in 0..20 {
        let extent = Extent {
            origin_x: 1000.0,
            origin_y: 2000.0,
            cols: rng.random_range(1..8),
            rows: rng.random_range(1..8),
            cell: 10.0,
        };
        let footprints: Vec<Footprint> = (0..rng.random_range(0..6))
            .map(|_| {
                let x0 = extent.origin_x - 5.0 + rng.random::<f64>() * extent.cols as f64 * 10.0;
                let y1 = extent.origin_y + 5.0 - rng.random::<f64>() * extent.rows as f64 * 10.0;
                Footprint { x0, x1: x0 + rng.random_range(0.3..25.0), y0: y1 - rng.random_range(0.3..25.0), y1 }
            })
            .collect();
        let fast = rasterize_density(&footprints, &extent, 1.0, 10.0).unwrap();
        for (i, &d) in fast.as_f32().unwrap().iter().enumerate() {
            let (row, col) = (i / extent.cols, i % extent.cols);
            let mut hits = 0;
            for sy in 0..10 {
                for sx in 0..10 {
                    let x = extent.origin_x + col as f64 * 10.0 + sx as f64 + 0.5;
                    let y = extent.origin_y - row as f64 * 10.0 - sy as f64 - 0.5;
                    hits += footprints.iter().any(|f| f.contains(x, y)) as usize;
                }
            }
            max_density = max_density.max((d - hits as f32 / 100.0).abs());
        }
    }

    let pass = max_tile <= ORACLE_TOLERANCE && confusion_ok && max_density <= ORACLE_TOLERANCE;
    outcome(
        pass,
        format!(
            "tile vs per-patch max |Δ| {max_tile:.1e}; confusion tallies {}; density vs sub-cells max |Δ| {max_density:.1e}",
            if confusion_ok { "equal" } else { "differ" }
        ),
    )
}

fn model_bytes(model: &Model) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_model(model, &mut bytes).unwrap();
    bytes
}

fn determinism(f: &Fixture) -> Outcome {
    let small = synth_zone(&SceneParams {
        width: 96,
        height: 96,
        tile_pixels: 48,
        clusters: 4,
        buildings_per_cluster: 10,
        ..SceneParams::default()
    })
    .unwrap();
    let image = ZoneImage::from_scene(&small, DIVISOR).unwrap();
    let config = TrainConfig { epochs: 3, batch_size: 256, ..TrainConfig::default() };
    let a = train_zone(&image, &small.labels, &config).unwrap();
    let b = train_zone(&image, &small.labels, &config).unwrap();
    let models_equal = model_bytes(&a.model) == model_bytes(&b.model) && a.history == b.history;

    let one = predict_zone(&f.trained_a.model, &f.image_a, Exec::with_workers(1));
    let four = predict_zone(&f.trained_a.model, &f.image_a, Exec::with_workers(4));
    let again = predict_zone(&f.trained_a.model, &f.image_a, Exec::with_workers(1));
    let bits = |o: &[builtup::pipeline::TileOutcome]| -> Vec<(Vec<u32>, Vec<u8>)> {
        o.iter()
            .map(|t| {
                let p = t.result.as_ref().unwrap();
                (
                    p.probability.as_f32().unwrap().iter().map(|v| v.to_bits()).collect(),
                    p.quantized.as_u8().unwrap().to_vec(),
                )
            })
            .collect()
    };
    let predictions_equal = bits(&one) == bits(&four) && bits(&one) == bits(&again);
    outcome(
        models_equal && predictions_equal,
        format!(
            "retrained models {}; probabilities and quantized tiles for 1 vs 4 workers {}",
            if models_equal { "bit-identical" } else { "differ" },
            if predictions_equal { "bit-identical" } else { "differ" }
        ),
    )
}

fn transfer(f: &Fixture) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let trained_b = train_zone(&f.image_b, &f.scene_b.labels, &f.config).expect("training zone B");
    let mut registry = ZoneRegistry::default();
    for (zone, model) in [("A", &f.trained_a.model), ("B", &trained_b.model)] {
        let path = tmp.path().join(format!("{zone}.ghsm"));
        builtup::model::save_model(model, &path).unwrap();
        registry.register_model(zone, &path, model);
    }
    let close = run_transfer(&mut registry, "B", &f.image_b, Exec::Sequential).unwrap();
    let far = run_transfer(&mut registry, "A", &f.image_b, Exec::Sequential).unwrap();
    let (p_close, v_close) = mosaic_probabilities(&f.image_b, &close.outcomes);
    let (p_far, v_far) = mosaic_probabilities(&f.image_b, &far.outcomes);
    let valid: Vec<bool> = v_close.iter().zip(&v_far).map(|(a, b)| *a && *b).collect();
    let table = compare_transfer(&p_close, &p_far, &density_of(&f.scene_b), &valid, &DEFAULT_THRESHOLDS).unwrap();

    let json = serde_json::to_value(&table).unwrap();
    let shape_ok = table.rows.len() == 2
        && DEFAULT_THRESHOLDS.iter().all(|&t| table.at(t).is_some())
        && json["rows"].as_array().unwrap().iter().all(|row| {
            ["close_range", "far_range"]
                .iter()
                .all(|mode| row[mode]["overall_accuracy"].is_number() && row[mode]["balanced_accuracy"].is_number())
        });
    let gaps: Vec<f64> =
        table.rows.iter().map(|r| (r.close_range.balanced_accuracy - r.far_range.balanced_accuracy).abs()).collect();
    let cells: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "BA@{} close {:.4} far {:.4}",
                r.threshold, r.close_range.balanced_accuracy, r.far_range.balanced_accuracy
            )
        })
        .collect();
    outcome(
        shape_ok && gaps.iter().all(|&g| g <= TRANSFER_BA_GAP),
        format!("{}; report shape {}", cells.join(", "), if shape_ok { "complete" } else { "incomplete" }),
    )
}

fn formats(f: &Fixture) -> Outcome {
    let mut raster_ok = true;
    for grid in [&f.scene_a.composite, &f.scene_a.labels] {
        let mut bytes = Vec::new();
        write_raster(grid, &mut bytes).unwrap();
        let back = read_raster(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_raster(&back, &mut again).unwrap();
        raster_ok &= &back == grid && again == bytes;
    }
    let bytes = model_bytes(&f.trained_a.model);
    let back = read_model(bytes.as_slice()).unwrap();
    let model_ok = back == f.trained_a.model && model_bytes(&back) == bytes;

    let probs = RasterGrid::new(3, 1, 1, -1.0, RasterData::F32(vec![0.0, 1.0, -1.0])).unwrap();
    let mask = ValidityMask { width: 3, height: 1, valid: vec![true, true, false] };
    let q = quantize_probability(&probs, &mask).unwrap();
    let codes_ok = q.as_u8().unwrap() == [0, 100, QUANT_NODATA] && QUANT_NODATA == 255;
    outcome(
        raster_ok && model_ok && codes_ok,
        format!(
            "raster round trip {}, model round trip {}, quantization codes {:?}",
            if raster_ok { "byte-exact" } else { "differs" },
            if model_ok { "byte-exact" } else { "differs" },
            q.as_u8().unwrap()
        ),
    )
}

fn guarded(name: &str, check: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("{name} panicked: {msg}"))
    })
}

fn main() {
    let started = Instant::now();
    let fixture = Fixture::new();
    let report = held_out_report(&fixture);
    let f = &fixture;
    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient integrity", Box::new(gradient_integrity)),
        ("parameter counting", Box::new(parameter_counting)),
        ("convergence", Box::new(|| convergence(f))),
        ("end-to-end quality", Box::new(|| end_to_end_quality(&report))),
        ("regression", Box::new(|| regression(&report))),
        ("sampling proportions", Box::new(|| sampling_proportions(f))),
        ("oracle equivalences", Box::new(|| oracle_equivalences(f))),
        ("determinism", Box::new(|| determinism(f))),
        ("transfer", Box::new(|| transfer(f))),
        ("formats", Box::new(|| formats(f))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let o = guarded(name, check);
        failed += !o.pass as usize;
        println!("criterion {:>2} {:<22} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 10 passed in {:.0}s", 10 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
