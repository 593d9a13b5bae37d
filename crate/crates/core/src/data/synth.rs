//! Procedural textures in the MVTec layout, with planted defects and exact masks.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::index::{scan_category, DatasetIndex, GOOD};
use crate::distortion::elastic_deform;
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{save_png, BinaryMask, ImageTensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Stripes,
    Checker,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injector {
    ContrastBlob,
    Scratch,
    ElasticWarp,
}

impl Injector {
    pub fn defect_name(self) -> &'static str {
        match self {
            Injector::ContrastBlob => "blob",
            Injector::Scratch => "scratch",
            Injector::ElasticWarp => "warp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub category: String,
    pub kind: TextureKind,
    pub side: usize,
    /// Stripe period or checker cell size in pixels; blur scale for noise.
    pub period: f64,
    pub angle_deg: f64,
    /// Standard deviation of per-pixel noise.
    pub grain: f64,
    pub injectors: Vec<Injector>,
    /// Intensity change of planted defects.
    pub defect_contrast: f64,
    pub anomalous_fraction: f64,
}

impl TextureSpec {
    pub fn stripes(side: usize) -> Self {
        Self {
            category: "stripes".into(),
            kind: TextureKind::Stripes,
            side,
            period: side as f64 / 8.0,
            angle_deg: 30.0,
            grain: 0.02,
            injectors: vec![Injector::ContrastBlob, Injector::Scratch],
            defect_contrast: 0.4,
            anomalous_fraction: 0.5,
        }
    }

    pub fn checker(side: usize) -> Self {
        Self { category: "checker".into(), kind: TextureKind::Checker, period: side as f64 / 8.0, ..Self::stripes(side) }
    }

    pub fn noise(side: usize) -> Self {
        Self { category: "noise".into(), kind: TextureKind::Noise, period: 2.0, ..Self::stripes(side) }
    }

    /// Stripes with faint blobs that barely differ from the background.
    pub fn low_contrast(side: usize) -> Self {
        Self {
            category: "low_contrast".into(),
            injectors: vec![Injector::ContrastBlob],
            defect_contrast: 0.12,
            ..Self::stripes(side)
        }
    }

    pub fn preset(name: &str, side: usize) -> Result<Self> {
        Ok(match name {
            "stripes" => Self::stripes(side),
            "checker" => Self::checker(side),
            "noise" => Self::noise(side),
            "low-contrast" | "low_contrast" => Self::low_contrast(side),
            other => {
                return Err(Error::Config(format!(
                    "unknown texture preset '{other}' (stripes, checker, noise, low-contrast)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 16 {
            return Err(Error::Config(format!("texture side {} is below 16", self.side)));
        }
        if !(self.period > 0.0) || !(self.grain >= 0.0) || !(self.defect_contrast > 0.0 && self.defect_contrast <= 1.0) {
            return Err(Error::Config("period > 0, grain >= 0 and contrast in (0, 1] required".into()));
        }
        if !(0.0..=1.0).contains(&self.anomalous_fraction) {
            return Err(Error::Config(format!("anomalous fraction {} outside [0, 1]", self.anomalous_fraction)));
        }
        Ok(())
    }

    pub fn anomalous_count(&self, n_test: usize) -> usize {
        (n_test as f64 * self.anomalous_fraction).round() as usize
    }
}

const TINT: [f64; 3] = [1.0, 0.85, 0.7];

/// One defect-free texture image.
pub fn render_texture(spec: &TextureSpec, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.side;
    let base: Vec<f64> = match spec.kind {
        TextureKind::Stripes => {
            let angle = (spec.angle_deg + rng.random_range(-5.0..=5.0)).to_radians();
            let period = spec.period * rng.random_range(0.95..=1.05);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (s, c) = angle.sin_cos();
            (0..n * n)
                .map(|i| {
                    let (y, x) = ((i / n) as f64, (i % n) as f64);
                    0.5 + 0.3 * (std::f64::consts::TAU * (x * c + y * s) / period + phase).sin()
                })
                .collect()
        }
        TextureKind::Checker => {
            let (oy, ox) = (rng.random_range(0.0..spec.period), rng.random_range(0.0..spec.period));
            (0..n * n)
                .map(|i| {
                    let cy = (((i / n) as f64 + oy) / spec.period).floor() as i64;
                    let cx = (((i % n) as f64 + ox) / spec.period).floor() as i64;
                    if (cy + cx).rem_euclid(2) == 0 { 0.35 } else { 0.65 }
                })
                .collect()
        }
        TextureKind::Noise => {
            let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let smooth = gaussian_blur(&raw, n, n, spec.period);
            let peak = smooth.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
            smooth.iter().map(|v| 0.5 + 0.3 * v / peak).collect()
        }
    };
    let grain = Normal::new(0.0, spec.grain.max(1e-12)).unwrap();
    let mut img = ImageTensor::zeros(n, n, 3);
    for (i, v) in base.iter().enumerate() {
        let g = if spec.grain > 0.0 { grain.sample(&mut rng) } else { 0.0 };
        for (k, t) in TINT.iter().enumerate() {
            img.set(i / n, i % n, k, ((v + g) * t).clamp(0.0, 1.0) as f32);
        }
    }
    img
}

/// Plant one defect. The returned mask is exactly the stamped region.
pub fn inject(img: &ImageTensor, injector: Injector, contrast: f64, seed: u64) -> (ImageTensor, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, ch) = img.dims();
    let side = h.min(w) as f64;
    let mut out = img.clone();
    let mut mask = BinaryMask::new(h, w);
    match injector {
        Injector::ContrastBlob => {
            let ry = rng.random_range(side / 20.0..=side / 10.0);
            let rx = rng.random_range(side / 20.0..=side / 10.0);
            let cy = rng.random_range(ry..=h as f64 - ry);
            let cx = rng.random_range(rx..=w as f64 - rx);
            let up = rng.random_bool(0.5);
            for r in 0..h {
                for c in 0..w {
                    let y = (r as f64 + 0.5 - cy) / ry;
                    let x = (c as f64 + 0.5 - cx) / rx;
                    if y * y + x * x > 1.0 {
                        continue;
                    }
                    mask.set(r, c, true);
                    for k in 0..ch {
                        let v = img.get(r, c, k) as f64;
                        // move towards the far end so the change never clips to nothing
                        let target = if up { (v + contrast).min(1.0) } else { (v - contrast).max(0.0) };
                        let target = if (target - v).abs() < contrast / 2.0 {
                            if up { v - contrast } else { v + contrast }
                        } else {
                            target
                        };
                        out.set(r, c, k, target.clamp(0.0, 1.0) as f32);
                    }
                }
            }
        }
        Injector::Scratch => {
            let len = rng.random_range(side / 4.0..=side / 2.0);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (dy, dx) = (angle.sin() * len / 2.0, angle.cos() * len / 2.0);
            let cy = rng.random_range(dy.abs()..=h as f64 - dy.abs());
            let cx = rng.random_range(dx.abs()..=w as f64 - dx.abs());
            let (ay, ax, by, bx) = (cy - dy, cx - dx, cy + dy, cx + dx);
            let half_width = 1.5;
            for r in 0..h {
                for c in 0..w {
                    let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
                    let (vy, vx) = (by - ay, bx - ax);
                    let t = (((py - ay) * vy + (px - ax) * vx) / (vy * vy + vx * vx)).clamp(0.0, 1.0);
                    let d = ((py - ay - t * vy).powi(2) + (px - ax - t * vx).powi(2)).sqrt();
                    if d > half_width {
                        continue;
                    }
                    mask.set(r, c, true);
                    for k in 0..ch {
                        // towards the opposite end, so the scratch stays visible on every stripe
                        let v = img.get(r, c, k) as f64;
                        let goal = if v < 0.5 { 1.0 } else { 0.0 };
                        out.set(r, c, k, (v + (goal - v) * contrast.max(0.5)) as f32);
                    }
                }
            }
        }
        Injector::ElasticWarp => {
            let size = (side / 4.0) as usize;
            let row = rng.random_range(0..=h - size);
            let col = rng.random_range(0..=w - size);
            let patch = img.crop(row, col, size, size);
            let warped = elastic_deform(&patch, size as f64 / 6.0, size as f64 / 12.0, rng.random());
            let rad = size as f64 / 2.0;
            for r in 0..size {
                for c in 0..size {
                    let (y, x) = ((r as f64 + 0.5 - rad) / rad, (c as f64 + 0.5 - rad) / rad);
                    if y * y + x * x > 1.0 {
                        continue;
                    }
                    mask.set(row + r, col + c, true);
                    for k in 0..ch {
                        out.set(row + r, col + c, k, warped.get(r, c, k));
                    }
                }
            }
        }
    }
    (out, mask)
}

/// Write `n_train` clean training images and `n_test` test images (the anomalous share set by
/// the spec) under `dir`, then index the result. A pure function of its arguments.
pub fn make_synthetic_texture_set(
    spec: &TextureSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
    dir: &Path,
) -> Result<DatasetIndex> {
    spec.validate()?;
    let n_bad = spec.anomalous_count(n_test);
    if n_bad > 0 && spec.injectors.is_empty() {
        return Err(Error::Config("anomalous test images requested but no injector configured".into()));
    }
    let train_dir = dir.join("train").join(GOOD);
    fs::create_dir_all(&train_dir)?;
    for i in 0..n_train {
        let img = render_texture(spec, seed::derive(seed, &[0, i as u64]));
        save_png(&img, &train_dir.join(format!("{i:03}.png")))?;
    }
    let good_dir = dir.join("test").join(GOOD);
    fs::create_dir_all(&good_dir)?;
    for i in 0..n_test - n_bad {
        let img = render_texture(spec, seed::derive(seed, &[1, i as u64]));
        save_png(&img, &good_dir.join(format!("{i:03}.png")))?;
    }
    for i in 0..n_bad {
        let injector = spec.injectors[i % spec.injectors.len()];
        let clean = render_texture(spec, seed::derive(seed, &[2, i as u64]));
        let (img, mask) = inject(&clean, injector, spec.defect_contrast, seed::derive(seed, &[3, i as u64]));
        let name = injector.defect_name();
        let img_dir = dir.join("test").join(name);
        let gt_dir = dir.join("ground_truth").join(name);
        fs::create_dir_all(&img_dir)?;
        fs::create_dir_all(&gt_dir)?;
        save_png(&img, &img_dir.join(format!("{i:03}.png")))?;
        mask.save_png(&gt_dir.join(format!("{i:03}_mask.png")))?;
    }
    scan_category(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn counts_and_determinism() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = TextureSpec::stripes(32);
        let a = tmp.path().join("a/stripes");
        let idx = make_synthetic_texture_set(&spec, 50, 20, 7, &a).unwrap();
        assert_eq!(idx.train.len(), 50);
        assert_eq!(idx.test.iter().filter(|r| r.is_anomalous()).count(), 10);
        assert_eq!(idx.test.iter().filter(|r| !r.is_anomalous()).count(), 10);
        let b = tmp.path().join("b/stripes");
        make_synthetic_texture_set(&spec, 50, 20, 7, &b).unwrap();
        assert_eq!(tree_bytes(&a), tree_bytes(&b));
    }

    #[test]
    fn masks_match_changes() {
        for kind in [TextureKind::Stripes, TextureKind::Checker, TextureKind::Noise] {
            let spec = TextureSpec { kind, ..TextureSpec::stripes(64) };
            let clean = render_texture(&spec, 3);
            let (lo, hi) = clean.min_max();
            assert!(lo >= 0.0 && hi <= 1.0 && hi > lo);
            for inj in [Injector::ContrastBlob, Injector::Scratch, Injector::ElasticWarp] {
                for s in 0..5 {
                    let (img, mask) = inject(&clean, inj, 0.4, s);
                    assert!(mask.area() > 0);
                    for r in 0..64 {
                        for c in 0..64 {
                            if !mask.get(r, c) {
                                assert_eq!(img.pixel(r, c), clean.pixel(r, c));
                            }
                        }
                    }
                    if inj != Injector::ElasticWarp {
                        let changed = (0..64 * 64).filter(|i| img.pixel(i / 64, i % 64) != clean.pixel(i / 64, i % 64)).count();
                        assert_eq!(changed, mask.area(), "{inj:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_injectors_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = TextureSpec { injectors: vec![], ..TextureSpec::stripes(32) };
        assert!(matches!(make_synthetic_texture_set(&spec, 2, 2, 0, tmp.path()), Err(Error::Config(_))));
        let clean_only = TextureSpec { anomalous_fraction: 0.0, ..spec };
        assert!(make_synthetic_texture_set(&clean_only, 2, 2, 0, &tmp.path().join("c")).is_ok());
        assert!(TextureSpec::preset("bricks", 32).is_err());
    }
}
