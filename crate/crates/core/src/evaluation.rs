//! Accuracy assessment against reference building footprints: density
//! rasterization, regression of density on probability, and
//! confusion-based binary metrics.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterData, RasterGrid};

/// Cut-offs reported when none are requested.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.2, 0.5];

/// Axis-aligned building rectangle in map metres, `x0 < x1`, `y0 < y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Footprint {
    pub fn is_valid(&self) -> bool {
        self.x1 > self.x0 && self.y1 > self.y0
    }

    /// Half-open containment, so touching rectangles never share a point.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootprintSet {
    pub aoi_id: String,
    pub footprints: Vec<Footprint>,
}

impl FootprintSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: FootprintSet = serde_json::from_str(text)?;
        if let Some(i) = set.footprints.iter().position(|f| !f.is_valid()) {
            return Err(Error::config(format!("footprint {i} has an empty extent")));
        }
        Ok(set)
    }
}

/// Coarse grid placement: top-left corner, size in cells, cell size in
/// metres. Rows run southwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cols: usize,
    pub rows: usize,
    pub cell: f64,
}

impl Extent {
    pub fn of(grid: &RasterGrid) -> Self {
        Extent {
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            cols: grid.width,
            rows: grid.height,
            cell: grid.pixel_size,
        }
    }
}

/// Built-up density per coarse cell: the share of fine cells whose centre
/// lies in any footprint. Footprints reaching outside the extent are
/// clipped.
pub fn rasterize_density(
    footprints: &[Footprint],
    extent: &Extent,
    fine_res: f64,
    coarse_res: f64,
) -> Result<RasterGrid> {
    let ratio = coarse_res / fine_res;
    let k = ratio.round() as usize;
    if fine_res.is_nan() || fine_res <= 0.0 || k == 0 || (ratio - k as f64).abs() > 1e-9 {
        return Err(Error::config(format!(
            "coarse resolution {coarse_res} is not a whole multiple of fine resolution {fine_res}"
        )));
    }
    if (extent.cell - coarse_res).abs() > 1e-9 * coarse_res {
        return Err(Error::config(format!("extent cell {} differs from coarse resolution {coarse_res}", extent.cell)));
    }
    let (fine_cols, fine_rows) = (extent.cols * k, extent.rows * k);
    let x_max = extent.origin_x + extent.cols as f64 * coarse_res;
    let y_min = extent.origin_y - extent.rows as f64 * coarse_res;

    // Bucket footprints by the coarse rows they may touch.
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); extent.rows];
    let mut clipped = 0;
    for (i, f) in footprints.iter().enumerate() {
        if !f.is_valid() {
            return Err(Error::config(format!("footprint {i} has an empty extent")));
        }
        if f.x0 < extent.origin_x || f.x1 > x_max || f.y0 < y_min || f.y1 > extent.origin_y {
            clipped += 1;
        }
        let top = ((extent.origin_y - f.y1) / coarse_res).floor() - 1.0;
        let bottom = ((extent.origin_y - f.y0) / coarse_res).ceil() + 1.0;
        let r0 = top.max(0.0) as usize;
        let r1 = (bottom.max(0.0) as usize).min(extent.rows);
        for bucket in by_row.iter_mut().take(r1).skip(r0) {
            bucket.push(i);
        }
    }
    if clipped > 0 {
        warn!("{clipped} footprint(s) extend beyond the extent and were clipped");
    }

    let cells = (k * k) as f32;
    let mut density = vec![0f32; extent.rows * extent.cols];
    let mut band = vec![false; k * fine_cols];
    for (row, bucket) in by_row.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        band.iter_mut().for_each(|b| *b = false);
        for &i in bucket {
            let f = &footprints[i];
            let j0 = ((f.x0 - extent.origin_x) / fine_res - 1.5).floor().max(0.0) as usize;
            let j1 = (((f.x1 - extent.origin_x) / fine_res + 1.5).ceil().max(0.0) as usize).min(fine_cols);
            for sub in 0..k {
                let i_fine = row * k + sub;
                let y = extent.origin_y - (i_fine as f64 + 0.5) * fine_res;
                if !(f.y0 <= y && y < f.y1) {
                    continue;
                }
                for j in j0..j1 {
                    let x = extent.origin_x + (j as f64 + 0.5) * fine_res;
                    if f.x0 <= x && x < f.x1 {
                        band[sub * fine_cols + j] = true;
                    }
                }
            }
        }
        for col in 0..extent.cols {
            let covered = (0..k)
                .map(|sub| {
                    band[sub * fine_cols + col * k..sub * fine_cols + (col + 1) * k].iter().filter(|&&b| b).count()
                })
                .sum::<usize>();
            density[row * extent.cols + col] = covered as f32 / cells;
        }
    }
    debug_assert_eq!(fine_rows, extent.rows * k);
    Ok(RasterGrid {
        width: extent.cols,
        height: extent.rows,
        bands: 1,
        nodata: -1.0,
        zone_id: String::new(),
        origin_x: extent.origin_x,
        origin_y: extent.origin_y,
        pixel_size: coarse_res,
        data: RasterData::F32(density),
    })
}

/// Presence/absence reference: built-up wherever density is positive.
pub fn reference_mask(density: &[f32]) -> Vec<bool> {
    density.iter().map(|&d| d > 0.0).collect()
}

/// Least-squares fit of density on probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Ordinary least squares of `density` (response) on `probability`
/// (predictor) over valid pixels, plus Pearson's r.
pub fn regress_density(probability: &[f32], density: &[f32], valid: &[bool]) -> Result<RegressionStats> {
    if probability.len() != density.len() || density.len() != valid.len() {
        return Err(Error::shape("probability, density and mask lengths differ"));
    }
    let pairs =
        || probability.iter().zip(density).zip(valid).filter(|(_, &ok)| ok).map(|((&p, &d), _)| (p as f64, d as f64));
    let n = pairs().count();
    if n < 2 {
        return Err(Error::Statistic(format!("regression needs at least 2 valid pixels, got {n}")));
    }
    let (sx, sy) = pairs().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs() {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Statistic("probability has zero variance".into()));
    }
    if syy == 0.0 {
        return Err(Error::Statistic("density has zero variance".into()));
    }
    let slope = sxy / sxx;
    Ok(RegressionStats { r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), slope, intercept: my - slope * mx, n })
}

/// Built-up where `p ≥ threshold`.
pub fn binarize(probability: &[f32], threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("threshold must be in (0, 1), got {threshold}")));
    }
    Ok(probability.iter().map(|&p| p as f64 >= threshold).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tally over valid pixels.
pub fn confusion(predicted: &[bool], reference: &[bool], valid: &[bool]) -> Result<ConfusionCounts> {
    if predicted.len() != reference.len() || reference.len() != valid.len() {
        return Err(Error::shape(format!(
            "confusion over {} predicted, {} reference, {} mask pixels",
            predicted.len(),
            reference.len(),
            valid.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &r), &ok) in predicted.iter().zip(reference).zip(valid) {
        if !ok {
            continue;
        }
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub overall_accuracy: f64,
    pub balanced_accuracy: f64,
    pub kappa: f64,
}

/// Overall accuracy, balanced accuracy and Cohen's kappa.
pub fn accuracy_metrics(c: &ConfusionCounts) -> Result<AccuracyMetrics> {
    let positives = c.tp + c.fn_;
    let negatives = c.tn + c.fp;
    if positives == 0 {
        return Err(Error::Metric { class: "built-up" });
    }
    if negatives == 0 {
        return Err(Error::Metric { class: "non-built-up" });
    }
    let total = c.total() as f64;
    let p_o = (c.tp + c.tn) as f64 / total;
    let predicted_pos = (c.tp + c.fp) as f64;
    let predicted_neg = (c.tn + c.fn_) as f64;
    let p_e = (predicted_pos * positives as f64 + predicted_neg * negatives as f64) / (total * total);
    Ok(AccuracyMetrics {
        overall_accuracy: p_o,
        balanced_accuracy: 0.5 * (c.tp as f64 / positives as f64 + c.tn as f64 / negatives as f64),
        kappa: (p_o - p_e) / (1.0 - p_e),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: AccuracyMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub aoi_id: String,
    pub valid_pixels: usize,
    /// Absent when a statistic is undefined, see `regression_error`.
    pub regression: Option<RegressionStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regression_error: Option<String>,
    pub thresholds: Vec<ThresholdMetrics>,
}

impl EvaluationReport {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdMetrics> {
        self.thresholds.iter().find(|t| (t.threshold - threshold).abs() < 1e-12)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Binary metrics at every threshold against `density > 0`, plus the
/// density regression.
pub fn evaluate(
    aoi_id: &str,
    probability: &[f32],
    density: &[f32],
    valid: &[bool],
    thresholds: &[f64],
) -> Result<EvaluationReport> {
    let reference = reference_mask(density);
    let (regression, regression_error) = match regress_density(probability, density, valid) {
        Ok(r) => (Some(r), None),
        Err(e @ Error::Statistic(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let counts = confusion(&binarize(probability, t)?, &reference, valid)?;
        rows.push(ThresholdMetrics { threshold: t, counts, metrics: accuracy_metrics(&counts)? });
    }
    Ok(EvaluationReport {
        aoi_id: aoi_id.to_string(),
        valid_pixels: valid.iter().filter(|&&v| v).count(),
        regression,
        regression_error,
        thresholds: rows,
    })
}

/// One row per report: AOI id, regression, then OA/BA/kappa per threshold.
/// Thresholds are taken from the first report.
pub fn write_csv<W: Write>(reports: &[EvaluationReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let cuts: Vec<f64> =
        reports.first().map(|r| r.thresholds.iter().map(|t| t.threshold).collect()).unwrap_or_default();
    let mut header = vec!["aoi_id".to_string(), "r".into(), "slope".into(), "intercept".into()];
    for t in &cuts {
        header.extend([format!("oa_{t}"), format!("ba_{t}"), format!("kappa_{t}")]);
    }
    out.write_record(&header).map_err(csv_err)?;
    for rep in reports {
        let reg =
            |f: fn(&RegressionStats) -> f64| rep.regression.as_ref().map(|r| f(r).to_string()).unwrap_or_default();
        let mut row = vec![rep.aoi_id.clone(), reg(|r| r.r), reg(|r| r.slope), reg(|r| r.intercept)];
        for &t in &cuts {
            match rep.at(t) {
                Some(m) => row.extend([
                    m.metrics.overall_accuracy.to_string(),
                    m.metrics.balanced_accuracy.to_string(),
                    m.metrics.kappa.to_string(),
                ]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn extent(cols: usize, rows: usize) -> Extent {
        Extent { origin_x: 1000.0, origin_y: 5000.0, cols, rows, cell: 10.0 }
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Footprint {
        Footprint { x0, y0, x1, y1 }
    }

    #[test]
    fn aligned_rectangles_give_area_ratios() {
        let e = extent(3, 3);
        let full = rasterize_density(&[rect(1010.0, 4980.0, 1020.0, 4990.0)], &e, 1.0, 10.0).unwrap();
        let d = full.as_f32().unwrap();
        assert_eq!(d[4], 1.0);
        assert_eq!(d.iter().sum::<f32>(), 1.0);

        let half = rasterize_density(&[rect(1010.0, 4980.0, 1015.0, 4990.0)], &e, 1.0, 10.0).unwrap();
        assert_eq!(half.as_f32().unwrap()[4], 0.5);
    }

    #[test]
    fn overlapping_and_clipped_rectangles() {
        let e = extent(2, 2);
        let fs = [
            rect(1000.0, 4990.0, 1010.0, 5000.0),
            rect(1005.0, 4990.0, 1010.0, 5000.0),
            rect(990.0, 4980.0, 1003.0, 4985.0),
        ];
        let d = rasterize_density(&fs, &e, 1.0, 10.0).unwrap();
        let d = d.as_f32().unwrap();
        assert_eq!(d[0], 1.0);
        assert!((d[2] - 0.15).abs() < 1e-6);
    }

    #[test]
    fn misaligned_resolutions_rejected() {
        assert!(rasterize_density(&[], &extent(1, 1), 3.0, 10.0).is_err());
    }

    #[test]
    fn regression_on_an_exact_line() {
        let p: Vec<f32> = (0..100).map(|i| i as f32 / 100.0).collect();
        let d: Vec<f32> = p.iter().map(|v| 0.5 * v).collect();
        let s = regress_density(&p, &d, &[true; 100]).unwrap();
        assert!((s.slope - 0.5).abs() < 1e-12);
        assert!((s.r - 1.0).abs() < 1e-12);
        assert!(s.intercept.abs() < 1e-12);
    }

    #[test]
    fn regression_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let p: Vec<f32> = (0..10_000).map(|_| rng.random::<f32>()).collect();
        let d: Vec<f32> = p.iter().map(|&v| 0.5 * v + rng.sample(normal) as f32).collect();
        let s = regress_density(&p, &d, &vec![true; p.len()]).unwrap();
        assert!((s.slope - 0.5).abs() < 0.02);
    }

    #[test]
    fn r_squared_is_explained_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f32> = (0..500).map(|_| rng.random::<f32>()).collect();
        let d: Vec<f32> = p.iter().map(|&v| 0.3 * v + 0.2 * rng.random::<f32>()).collect();
        let s = regress_density(&p, &d, &vec![true; 500]).unwrap();
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / 500.0;
        let sst: f64 = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
        let sse: f64 = p.iter().zip(&d).map(|(&x, &y)| (y as f64 - s.intercept - s.slope * x as f64).powi(2)).sum();
        assert!((s.r * s.r - (1.0 - sse / sst)).abs() < 1e-9);
    }

    #[test]
    fn constant_inputs_are_undefined() {
        assert!(matches!(regress_density(&[0.3; 5], &[0.1, 0.2, 0.3, 0.4, 0.5], &[true; 5]), Err(Error::Statistic(_))));
        assert!(matches!(regress_density(&[0.3], &[0.1], &[true]), Err(Error::Statistic(_))));
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(binarize(&[0.2, 0.19, 0.5], 0.2).unwrap(), [true, false, true]);
        assert!(binarize(&[0.1], 1.0).is_err());
    }

    #[test]
    fn confusion_extremes() {
        let a = [true, false, true, false];
        let inv = a.map(|v| !v);
        let c = confusion(&a, &a, &[true; 4]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&inv, &a, &[true; 4]).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let c = confusion(&a, &a, &[true, true, false, false]).unwrap();
        assert_eq!(c.total(), 2);
        assert!(matches!(confusion(&a, &a[..3], &[true; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn metrics_from_hand_counts() {
        let m = accuracy_metrics(&ConfusionCounts { tp: 40, fn_: 10, fp: 20, tn: 30 }).unwrap();
        assert!((m.overall_accuracy - 0.70).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.70).abs() < 1e-12);
        assert!((m.kappa - 0.40).abs() < 1e-12);

        let perfect = accuracy_metrics(&ConfusionCounts { tp: 5, fn_: 0, fp: 0, tn: 7 }).unwrap();
        assert_eq!((perfect.overall_accuracy, perfect.balanced_accuracy, perfect.kappa), (1.0, 1.0, 1.0));

        let all_one = accuracy_metrics(&ConfusionCounts { tp: 50, fn_: 0, fp: 50, tn: 0 }).unwrap();
        assert_eq!(all_one.kappa, 0.0);
    }

    #[test]
    fn missing_class_is_named() {
        let e = accuracy_metrics(&ConfusionCounts { tp: 0, fn_: 0, fp: 3, tn: 4 }).unwrap_err();
        assert!(matches!(e, Error::Metric { class: "built-up" }));
        let e = accuracy_metrics(&ConfusionCounts { tp: 1, fn_: 2, fp: 0, tn: 0 }).unwrap_err();
        assert!(e.to_string().contains("non-built-up"));
    }

    #[test]
    fn report_has_both_default_thresholds_and_csv_row() {
        let p = [0.1, 0.3, 0.6, 0.9, 0.05, 0.25];
        let d = [0.0, 0.2, 0.5, 1.0, 0.0, 0.0];
        let rep = evaluate("aoi", &p, &d, &[true; 6], &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(rep.thresholds.len(), 2);
        assert!(rep.at(0.2).is_some() && rep.at(0.5).is_some());
        let json = rep.to_json().unwrap();
        let back: EvaluationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);

        let mut buf = Vec::new();
        write_csv(&[rep], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "aoi_id,r,slope,intercept,oa_0.2,ba_0.2,kappa_0.2,oa_0.5,ba_0.5,kappa_0.5");
        assert!(lines[1].starts_with("aoi,"));
    }
}
