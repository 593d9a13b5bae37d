//! Threshold calibration on normal images and the detection metrics: TPR, TNR, their mean,
//! pooled pixel AUROC and image/pixel F1.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetIndex, Record};
use crate::error::{Error, Result};
use crate::image::{load_mask, load_rgb, BinaryMask, ImageTensor};
use crate::inference::{largest_component, predict, score_image, AnomalyHeatmap, Connectivity, PostprocessConfig};
use crate::model::Network;

/// Does every component of `h ≥ t` stay strictly below `min_area` on every map?
pub fn threshold_is_feasible(maps: &[AnomalyHeatmap], t: f32, min_area: usize, conn: Connectivity) -> bool {
    maps.iter().all(|h| largest_component(h, t, conn) < min_area)
}

/// Smallest threshold on the observed-value grid for which no validation heatmap has a
/// component of `min_area` pixels or more.
///
/// The grid is the smallest observed value plus the next representable value above every
/// observed value. Feasibility is monotone in `t`, so bisection finds the first feasible
/// grid point; the top of the grid is always feasible because nothing lies above it.
pub fn calibrate_threshold(val: &[AnomalyHeatmap], min_area: usize, conn: Connectivity) -> Result<f32> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if min_area == 0 {
        return Err(Error::Config("min_area must be at least 1".into()));
    }
    let mut values: Vec<f32> = val.iter().flat_map(|h| h.values.iter().copied()).collect();
    values.sort_by(f32::total_cmp);
    values.dedup();
    let mut grid = Vec::with_capacity(values.len() + 1);
    grid.push(values[0]);
    grid.extend(values.iter().map(|v| v.next_up()));
    // first feasible index in grid[lo..=hi]; grid[hi] is feasible
    let (mut lo, mut hi) = (0usize, grid.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if threshold_is_feasible(val, grid[mid], min_area, conn) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(grid[lo])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (p, a) in pairs {
            c.record(p, a);
        }
        c
    }

    /// Pixel counts of one prediction mask against its ground truth.
    pub fn add_masks(&mut self, predicted: &BinaryMask, truth: &BinaryMask) -> Result<()> {
        if predicted.dims() != truth.dims() {
            return Err(Error::Shape(format!("mask {:?} vs ground truth {:?}", predicted.dims(), truth.dims())));
        }
        for (&p, &a) in predicted.as_slice().iter().zip(truth.as_slice()) {
            self.record(p, a);
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `None` when there are no positives.
    pub fn tpr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there are no negatives.
    pub fn tnr(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }

    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.tpr()? + self.tnr()?) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub value: f64,
    /// True when `2TP + FP + FN = 0` and the value was defined as 0.
    pub degenerate: bool,
}

pub fn f1(c: &ConfusionCounts) -> F1 {
    let d = 2 * c.tp + c.fp + c.fn_;
    if d == 0 {
        return F1 { value: 0.0, degenerate: true };
    }
    F1 { value: (2 * c.tp) as f64 / d as f64, degenerate: false }
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks for ties.
pub fn pixel_auroc(scores: &[f32], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric("AUROC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// One category's row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub category: String,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub mean_tpr_tnr: Option<f64>,
    pub pixel_auroc: Option<f64>,
    pub image_f1: f64,
    pub pixel_f1: f64,
    pub threshold: f32,
    pub min_area: usize,
    pub test_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl MetricsReport {
    /// Column means over the categories where each metric is defined.
    pub fn averages(&self) -> MetricsRow {
        let r = &self.rows;
        MetricsRow {
            category: "mean".into(),
            tpr: mean_of(r.iter().map(|x| x.tpr)),
            tnr: mean_of(r.iter().map(|x| x.tnr)),
            mean_tpr_tnr: mean_of(r.iter().map(|x| x.mean_tpr_tnr)),
            pixel_auroc: mean_of(r.iter().map(|x| x.pixel_auroc)),
            image_f1: mean_of(r.iter().map(|x| Some(x.image_f1))).unwrap_or(0.0),
            pixel_f1: mean_of(r.iter().map(|x| Some(x.pixel_f1))).unwrap_or(0.0),
            threshold: f32::NAN,
            min_area: 0,
            test_images: r.iter().map(|x| x.test_images).sum(),
        }
    }

    /// One row per evaluated category.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "category", "tpr", "tnr", "mean_tpr_tnr", "pixel_auroc", "image_f1", "pixel_f1", "threshold", "min_area",
            "test_images",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            w.write_record([
                row.category.clone(),
                opt(row.tpr),
                opt(row.tnr),
                opt(row.mean_tpr_tnr),
                opt(row.pixel_auroc),
                row.image_f1.to_string(),
                row.pixel_f1.to_string(),
                row.threshold.to_string(),
                row.min_area.to_string(),
                row.test_images.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>7} {:>7} {:>11} {:>7} {:>8} {:>8} {:>10} {:>6}",
            "category", "TPR", "TNR", "(TPR+TNR)/2", "AUROC", "F1 img", "F1 pix", "threshold", "area"
        )?;
        for row in self.rows.iter().cloned().chain(std::iter::once(self.averages())) {
            let mean = row.category == "mean";
            writeln!(
                f,
                "{:<16} {:>7} {:>7} {:>11} {:>7} {:>8.4} {:>8.4} {:>10} {:>6}",
                row.category,
                cell(row.tpr),
                cell(row.tnr),
                cell(row.mean_tpr_tnr),
                cell(row.pixel_auroc),
                row.image_f1,
                row.pixel_f1,
                if mean { "-".to_string() } else { format!("{:.5}", row.threshold) },
                if mean { "-".to_string() } else { row.min_area.to_string() },
            )?;
        }
        Ok(())
    }
}

/// Load an image at the network's input side.
pub fn load_for_network(net: &Network, path: &Path) -> Result<ImageTensor> {
    let img = load_rgb(path)?;
    let side = net.config().input_side;
    Ok(if img.height() == side && img.width() == side { img } else { img.resize(side, side) })
}

fn load_truth(record: &Record, side: usize) -> Result<BinaryMask> {
    match &record.mask {
        Some(path) => {
            let m = load_mask(path)?;
            Ok(if m.dims() == (side, side) { m } else { m.resize_nearest(side, side) })
        }
        None if record.is_anomalous() => Err(Error::Index {
            path: record.image.clone(),
            reason: "anomalous test image without ground truth".into(),
        }),
        None => Ok(BinaryMask::new(side, side)),
    }
}

/// Smoothed heatmaps of the validation images.
pub fn validation_heatmaps(net: &Network, index: &DatasetIndex, sigma: f64) -> Result<Vec<AnomalyHeatmap>> {
    if index.validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    index
        .validation
        .iter()
        .map(|rec| {
            let x = load_for_network(net, &rec.image)?;
            let (_, _, mut h) = score_image(net, &x, sigma)?;
            h.source = Some(rec.image.display().to_string());
            Ok(h)
        })
        .collect()
}

/// Calibrate on the validation split (unless `post.threshold` is already set), then predict
/// every test image and compute the row.
pub fn evaluate_category(
    net: &Network,
    index: &DatasetIndex,
    sigma: f64,
    min_area: usize,
    threshold: Option<f32>,
    connectivity: Connectivity,
) -> Result<MetricsRow> {
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let val = validation_heatmaps(net, index, sigma)?;
            let t = calibrate_threshold(&val, min_area, connectivity)?;
            debug_assert!(threshold_is_feasible(&val, t, min_area, connectivity));
            t
        }
    };
    let post = PostprocessConfig { sigma, threshold, min_area, connectivity };
    let side = net.config().input_side;
    let mut images = ConfusionCounts::default();
    let mut pixels = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for rec in &index.test {
        let truth = load_truth(rec, side)?;
        let x = load_for_network(net, &rec.image)?;
        let p = predict(net, &x, &post)?;
        images.record(p.detection.anomalous, rec.is_anomalous());
        pixels.add_masks(&p.detection.mask, &truth)?;
        scores.extend_from_slice(&p.heatmap.values);
        labels.extend_from_slice(truth.as_slice());
    }
    let auroc = match pixel_auroc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::Metric(reason)) => {
            log::warn!("{}: pixel AUROC undefined ({reason})", index.category);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsRow {
        category: index.category.clone(),
        tpr: images.tpr(),
        tnr: images.tnr(),
        mean_tpr_tnr: images.balanced_accuracy(),
        pixel_auroc: auroc,
        image_f1: f1(&images).value,
        pixel_f1: f1(&pixels).value,
        threshold,
        min_area,
        test_images: index.test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: Vec<f32>) -> AnomalyHeatmap {
        AnomalyHeatmap::from_values(h, w, v).unwrap()
    }

    #[test]
    fn calibrate_degenerate_and_plateau() {
        let zeros = vec![map(4, 4, vec![0.0; 16]); 3];
        assert_eq!(calibrate_threshold(&zeros, 1, Connectivity::Eight).unwrap(), 0f32.next_up());

        let mut v = vec![0.0; 64];
        v[..10].fill(0.8);
        let plateau = [map(8, 8, v)];
        let t = calibrate_threshold(&plateau, 5, Connectivity::Eight).unwrap();
        assert_eq!(t, 0.8f32.next_up());
        assert!(threshold_is_feasible(&plateau, t, 5, Connectivity::Eight));
        assert!(!threshold_is_feasible(&plateau, 0.8, 5, Connectivity::Eight));
        // with min_area above the plateau the threshold drops to the smallest grid value
        let t_big = calibrate_threshold(&plateau, 11, Connectivity::Eight).unwrap();
        assert_eq!(t_big, 0f32.next_up());
        assert!(calibrate_threshold(&[], 5, Connectivity::Eight).is_err());
    }

    #[test]
    fn rates_and_f1() {
        let c = ConfusionCounts::new(3, 4, 1, 1);
        assert_eq!(c.tpr(), Some(0.75));
        assert_eq!(c.tnr(), Some(0.8));
        assert!((c.balanced_accuracy().unwrap() - 0.775).abs() < 1e-12);
        let none = ConfusionCounts::from_pairs((0..10).map(|i| (false, i % 2 == 0)));
        assert_eq!((none.tpr(), none.tnr(), none.balanced_accuracy()), (Some(0.0), Some(1.0), Some(0.5)));
        assert_eq!(ConfusionCounts::new(0, 5, 0, 0).tpr(), None);

        assert_eq!(f1(&ConfusionCounts::new(5, 0, 0, 0)).value, 1.0);
        assert_eq!(f1(&ConfusionCounts::new(1, 0, 1, 1)).value, 0.5);
        assert_eq!(f1(&ConfusionCounts::new(0, 0, 3, 2)).value, 0.0);
        let d = f1(&ConfusionCounts::new(0, 9, 0, 0));
        assert!(d.degenerate && d.value == 0.0);
    }

    #[test]
    fn auroc_examples() {
        let labels = [true, true, true, false, false, false];
        let toy = pixel_auroc(&[0.9, 0.8, 0.4, 0.7, 0.3, 0.1], &labels).unwrap();
        assert!((toy - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(pixel_auroc(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &labels).unwrap(), 1.0);
        assert_eq!(pixel_auroc(&[0.5; 6], &labels).unwrap(), 0.5);
        assert!(pixel_auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn report_averages_and_csv() {
        let row = |name: &str, a: f64| MetricsRow {
            category: name.into(),
            tpr: Some(a),
            tnr: Some(1.0),
            mean_tpr_tnr: Some((a + 1.0) / 2.0),
            pixel_auroc: Some(a),
            image_f1: a,
            pixel_f1: a / 2.0,
            threshold: 0.1,
            min_area: 4,
            test_images: 10,
        };
        let report = MetricsReport { rows: vec![row("a", 0.5), row("b", 1.0)] };
        let m = report.averages();
        assert_eq!(m.tpr, Some(0.75));
        assert_eq!(m.pixel_f1, 0.375);
        assert_eq!(m.test_images, 20);
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        report.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().starts_with("b,1,1,1,1,1,0.5,0.1,4,10"));
        assert!(report.to_string().contains("(TPR+TNR)/2"));
    }
}
