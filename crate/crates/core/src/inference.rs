//! Single-pass detection: reconstruction → heatmap → gaussian smoothing → threshold →
//! connected components with a minimum-area filter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{BinaryMask, ImageTensor};
use crate::model::Network;

/// Nonnegative per-pixel anomaly scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyHeatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    /// Gaussian sigma already applied (0 for a raw map).
    pub sigma: f64,
    pub source: Option<String>,
}

impl AnomalyHeatmap {
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("{} heatmap values for {height}x{width}", values.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Precondition("heatmap values must be nonnegative".into()));
        }
        Ok(Self { height, width, values, sigma: 0.0, source: None })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Mean score over the pixels selected by `mask`.
    pub fn mean_over(&self, mask: &BinaryMask) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (v, &m) in self.values.iter().zip(mask.as_slice()) {
            if m {
                sum += *v as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Grayscale rendering, scores clipped to `[0, 1]`.
    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::from_vec(self.height, self.width, 1, self.values.clone()).expect("consistent shape")
    }

    /// Viridis-mapped RGB rendering.
    pub fn save_viridis(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            let c = colorous::VIRIDIS.eval_continuous(self.values[i].clamp(0.0, 1.0) as f64);
            *px = image::Rgb([c.r, c.g, c.b]);
        }
        buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Raw scores as a `float32` `.npy` array of shape `(height, width)`.
    pub fn save_npy(&self, path: &Path) -> Result<()> {
        use npyz::WriterBuilder;
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut writer = npyz::WriteOptions::new()
            .default_dtype()
            .shape(&[self.height as u64, self.width as u64])
            .writer(file)
            .begin_nd()?;
        writer.extend(self.values.iter().copied())?;
        writer.finish()?;
        Ok(())
    }
}

/// Per-pixel Euclidean norm of the channel difference divided by `√C`, so scores lie in `[0, 1]`.
pub fn heatmap(recon: &ImageTensor, x: &ImageTensor) -> Result<AnomalyHeatmap> {
    recon.ensure_same_shape(x, "heatmap inputs")?;
    let ch = x.channels();
    let norm = (ch as f64).sqrt();
    let values = recon
        .as_slice()
        .chunks_exact(ch)
        .zip(x.as_slice().chunks_exact(ch))
        .map(|(a, b)| {
            let sq: f64 = a.iter().zip(b).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
            (sq.sqrt() / norm) as f32
        })
        .collect();
    Ok(AnomalyHeatmap { height: x.height(), width: x.width(), values, sigma: 0.0, source: None })
}

/// Gaussian smoothing with reflected borders. `sigma == 0` returns the map unchanged.
pub fn smooth(h: &AnomalyHeatmap, sigma: f64) -> Result<AnomalyHeatmap> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("smoothing sigma {sigma} must be nonnegative")));
    }
    let plane: Vec<f64> = h.values.iter().map(|&v| v as f64).collect();
    let values = gaussian_blur(&plane, h.height, h.width, sigma).into_iter().map(|v| v.max(0.0) as f32).collect();
    Ok(AnomalyHeatmap { values, sigma, ..h.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        // neighbours already visited in raster order
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

/// Two-pass union-find labeling. Returns per-pixel labels (0 = background, components
/// numbered `1..=count` in raster order of their first pixel) and the component count.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, usize) {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let mut current = 0u32;
            for &(dr, dc) in conn.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= w as isize {
                    continue;
                }
                let l = labels[nr as usize * w + nc as usize];
                if l == 0 {
                    continue;
                }
                if current == 0 {
                    current = find(&mut parent, l);
                } else {
                    let (a, b) = (find(&mut parent, current), find(&mut parent, l));
                    if a != b {
                        let (lo, hi) = (a.min(b), a.max(b));
                        parent[hi as usize] = lo;
                        current = lo;
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[r * w + c] = current;
        }
    }
    let mut compact = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if compact[root] == 0 {
            count += 1;
            compact[root] = count;
        }
        *l = compact[root];
    }
    (labels, count as usize)
}

/// Bounding box as inclusive `(min_row, min_col, max_row, max_col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub area: usize,
    pub bbox: BoundingBox,
    pub peak: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    #[serde(skip)]
    pub mask: BinaryMask,
    pub components: Vec<Component>,
    pub anomalous: bool,
    /// Maximum of the (smoothed) heatmap.
    pub score: f32,
    pub threshold: f32,
    pub min_area: usize,
}

/// Components of `h ≥ threshold` with their areas, in raster order of first pixel.
pub fn components_above(h: &AnomalyHeatmap, threshold: f32, conn: Connectivity) -> (Vec<u32>, Vec<Component>) {
    let binary = BinaryMask::from_vec(h.height, h.width, h.values.iter().map(|&v| v >= threshold).collect())
        .expect("consistent shape");
    let (labels, count) = label_components(&binary, conn);
    let mut comps: Vec<Component> = (0..count)
        .map(|_| Component {
            area: 0,
            bbox: BoundingBox { min_row: usize::MAX, min_col: usize::MAX, max_row: 0, max_col: 0 },
            peak: 0.0,
        })
        .collect();
    for r in 0..h.height {
        for c in 0..h.width {
            let l = labels[r * h.width + c];
            if l == 0 {
                continue;
            }
            let comp = &mut comps[l as usize - 1];
            comp.area += 1;
            comp.peak = comp.peak.max(h.get(r, c));
            let b = &mut comp.bbox;
            b.min_row = b.min_row.min(r);
            b.min_col = b.min_col.min(c);
            b.max_row = b.max_row.max(r);
            b.max_col = b.max_col.max(c);
        }
    }
    (labels, comps)
}

/// Largest component area of `h ≥ threshold` (0 if none).
pub fn largest_component(h: &AnomalyHeatmap, threshold: f32, conn: Connectivity) -> usize {
    components_above(h, threshold, conn).1.iter().map(|c| c.area).max().unwrap_or(0)
}

pub fn segment(h: &AnomalyHeatmap, threshold: f32, min_area: usize) -> Result<DetectionResult> {
    segment_with(h, threshold, min_area, Connectivity::Eight)
}

pub fn segment_with(
    h: &AnomalyHeatmap,
    threshold: f32,
    min_area: usize,
    conn: Connectivity,
) -> Result<DetectionResult> {
    if !(threshold >= 0.0) || min_area == 0 {
        return Err(Error::Config(format!(
            "threshold {threshold} must be >= 0 and min_area {min_area} >= 1"
        )));
    }
    let (labels, comps) = components_above(h, threshold, conn);
    let keep: Vec<bool> = comps.iter().map(|c| c.area >= min_area).collect();
    let mask = BinaryMask::from_vec(
        h.height,
        h.width,
        labels.iter().map(|&l| l != 0 && keep[l as usize - 1]).collect(),
    )?;
    let components: Vec<Component> = comps.into_iter().filter(|c| c.area >= min_area).collect();
    Ok(DetectionResult {
        mask,
        anomalous: !components.is_empty(),
        components,
        score: h.max(),
        threshold,
        min_area,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub sigma: f64,
    pub threshold: f32,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl PostprocessConfig {
    /// Smoothing sigma of 4 px at side 512, scaled linearly with the side.
    pub fn default_sigma(side: usize) -> f64 {
        4.0 * side as f64 / 512.0
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub reconstruction: ImageTensor,
    pub raw_heatmap: AnomalyHeatmap,
    pub heatmap: AnomalyHeatmap,
    pub detection: DetectionResult,
}

/// Heatmaps of one reconstruction: raw and smoothed.
pub fn score_image(net: &Network, x: &ImageTensor, sigma: f64) -> Result<(ImageTensor, AnomalyHeatmap, AnomalyHeatmap)> {
    let recon = net.reconstruct(x)?;
    let raw = heatmap(&recon, x)?;
    let smoothed = smooth(&raw, sigma)?;
    Ok((recon, raw, smoothed))
}

/// Exactly one forward pass on the unmodified image followed by post-processing.
pub fn predict(net: &Network, x: &ImageTensor, post: &PostprocessConfig) -> Result<Prediction> {
    let (reconstruction, raw_heatmap, heatmap) = score_image(net, x, post.sigma)?;
    let detection = segment_with(&heatmap, post.threshold, post.min_area, post.connectivity)?;
    Ok(Prediction { reconstruction, raw_heatmap, heatmap, detection })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, values: &[f32]) -> AnomalyHeatmap {
        AnomalyHeatmap::from_values(h, w, values.to_vec()).unwrap()
    }

    #[test]
    fn heatmap_values() {
        let x = ImageTensor::filled(2, 2, 3, 0.2);
        assert!(heatmap(&x, &x).unwrap().values.iter().all(|&v| v == 0.0));
        let mut r = x.clone();
        r.set(0, 1, 2, 1.2);
        for k in 0..3 {
            r.set(1, 1, k, 1.2);
        }
        let h = heatmap(&r, &x).unwrap();
        assert!((h.get(0, 1) - 1.0 / 3f32.sqrt()).abs() < 1e-6);
        assert!((h.get(1, 1) - 1.0).abs() < 1e-6);
        assert_eq!(h.get(0, 0), 0.0);
    }

    #[test]
    fn smoothing_identity_and_constant() {
        let h = map(3, 3, &[0.1, 0.5, 0.0, 0.3, 0.9, 0.2, 0.0, 0.0, 0.4]);
        assert_eq!(smooth(&h, 0.0).unwrap().values, h.values);
        let c = map(5, 6, &[0.7; 30]);
        assert!(smooth(&c, 2.0).unwrap().values.iter().all(|v| (v - 0.7).abs() < 1e-6));
        assert!(smooth(&h, -1.0).is_err());
    }

    #[test]
    fn smoothing_preserves_interior_mass() {
        let mut values = vec![0.0; 41 * 41];
        values[20 * 41 + 20] = 1.0;
        let s = smooth(&map(41, 41, &values), 2.0).unwrap();
        let mass: f64 = s.values.iter().map(|&v| v as f64).sum();
        assert!((mass - 1.0).abs() <= 1e-6, "{mass}");
        assert_eq!(s.sigma, 2.0);
    }

    #[test]
    fn labeling_merges_u_shapes() {
        // a U shape needs a merge in the union-find pass
        let rows = ["#.#", "#.#", "###"];
        let data: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        let m = BinaryMask::from_vec(3, 3, data).unwrap();
        let (labels, n) = label_components(&m, Connectivity::Four);
        assert_eq!(n, 1);
        assert!(labels.iter().all(|&l| l <= 1));
        let diag = BinaryMask::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(label_components(&diag, Connectivity::Four).1, 2);
        assert_eq!(label_components(&diag, Connectivity::Eight).1, 1);
    }

    #[test]
    fn segment_filters_small_components() {
        let zeros = map(4, 4, &[0.0; 16]);
        let r = segment(&zeros, 0.1, 1).unwrap();
        assert!(!r.anomalous && r.components.is_empty() && r.mask.area() == 0);

        let mut v = vec![0.0; 36];
        for i in [0, 1, 2] {
            v[i] = 0.9;
        }
        let three = map(6, 6, &v);
        assert!(!segment(&three, 0.5, 4).unwrap().anomalous);

        // areas 5 (top-left) and 2 (bottom-right)
        let mut v = vec![0.0; 36];
        for i in [0, 1, 2, 6, 7, 34, 35] {
            v[i] = 0.8;
        }
        let r = segment(&map(6, 6, &v), 0.5, 4).unwrap();
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].area, 5);
        assert_eq!(r.components[0].bbox, BoundingBox { min_row: 0, min_col: 0, max_row: 1, max_col: 2 });
        assert!(r.anomalous);
        assert_eq!(r.mask.area(), 5);
    }

    #[test]
    fn segment_rejects_bad_parameters() {
        let h = map(2, 2, &[0.0; 4]);
        assert!(segment(&h, -0.1, 1).is_err());
        assert!(segment(&h, 0.1, 0).is_err());
    }

    #[test]
    fn npy_export_has_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.npy");
        map(2, 3, &[0.0, 0.5, 1.0, 0.25, 0.75, 0.125]).save_npy(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        let tail: Vec<f32> =
            bytes[bytes.len() - 24..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(tail, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125]);
    }
}
