//! Self-supervised training pairs: sample a patch, deform it, cut it with a random shape and
//! paste it back. The result is a triple `(X, X̂, M)` with `X̂ = X` outside `M`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{save_png, BinaryMask, ImageTensor};

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Axis-aligned patch rectangle, always inside the image it was sampled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Uniformly sample patch size in `size_range` (inclusive) and then a location inside the image.
pub fn sample_patch_geometry(
    image_dims: (usize, usize),
    size_range: (usize, usize),
    seed: u64,
) -> Result<PatchGeometry> {
    let mut rng = rng_for(seed);
    sample_patch_geometry_with(image_dims, size_range, &mut rng)
}

fn sample_patch_geometry_with(
    (h, w): (usize, usize),
    (lo, hi): (usize, usize),
    rng: &mut impl Rng,
) -> Result<PatchGeometry> {
    if lo == 0 || lo > hi || hi > h.min(w) {
        return Err(Error::Config(format!(
            "patch size range ({lo}, {hi}) infeasible for a {h}x{w} image"
        )));
    }
    let height = rng.random_range(lo..=hi);
    let width = rng.random_range(lo..=hi);
    let row = rng.random_range(0..=h - height);
    let col = rng.random_range(0..=w - width);
    Ok(PatchGeometry { row, col, height, width })
}

/// Per-pixel displacement `(dy, dx)` in pixels.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
}

impl DisplacementField {
    pub fn max_magnitude(&self) -> f64 {
        self.dy.iter().zip(&self.dx).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }
}

/// Smooth random displacement field whose largest vector has length exactly `alpha`
/// (or is zero everywhere when `alpha == 0`).
pub fn elastic_field(dims: (usize, usize), alpha: f64, sigma: f64, seed: u64) -> DisplacementField {
    assert!(alpha >= 0.0 && sigma > 0.0, "elastic deformation needs alpha >= 0 and sigma > 0");
    let (h, w) = dims;
    let mut rng = rng_for(seed);
    let mut noise = || -> Vec<f64> { (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let (ny, nx) = (noise(), noise());
    let mut dy = gaussian_blur(&ny, h, w, sigma);
    let mut dx = gaussian_blur(&nx, h, w, sigma);
    let peak = dy.iter().zip(&dx).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let scale = if peak > 0.0 { alpha / peak } else { 0.0 };
    dy.iter_mut().chain(dx.iter_mut()).for_each(|v| *v *= scale);
    DisplacementField { height: h, width: w, dy, dx }
}

/// Bilinear resampling of `img` at `(r + dy, c + dx)` with clamped borders.
pub fn warp(img: &ImageTensor, field: &DisplacementField) -> ImageTensor {
    let (h, w, ch) = img.dims();
    assert_eq!((field.height, field.width), (h, w));
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    ImageTensor::from_fn(h, w, ch, |r, c, k| {
        let i = r * w + c;
        let y = clamp(r as f64 + field.dy[i], h);
        let x = clamp(c as f64 + field.dx[i], w);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let v = (1.0 - fy) * ((1.0 - fx) * img.get(y0, x0, k) as f64 + fx * img.get(y0, x1, k) as f64)
            + fy * ((1.0 - fx) * img.get(y1, x0, k) as f64 + fx * img.get(y1, x1, k) as f64);
        (v as f32).clamp(0.0, 1.0)
    })
}

pub fn elastic_deform(patch: &ImageTensor, alpha: f64, sigma: f64, seed: u64) -> ImageTensor {
    if alpha == 0.0 {
        return patch.clone();
    }
    let field = elastic_field((patch.height(), patch.width()), alpha, sigma, seed);
    warp(patch, &field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeStyle {
    Ellipse,
    Polygon,
    Blob,
}

/// Binary patch-sized mask with at least one set element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMask(BinaryMask);

impl ShapeMask {
    pub fn new(mask: BinaryMask) -> Result<Self> {
        if mask.area() == 0 {
            return Err(Error::Precondition("shape mask must have at least one set element".into()));
        }
        Ok(Self(mask))
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn area(&self) -> usize {
        self.0.area()
    }
}

pub fn make_shape_mask(dims: (usize, usize), style: ShapeStyle, seed: u64) -> ShapeMask {
    let mut rng = rng_for(seed);
    make_shape_mask_with(dims, style, &mut rng)
}

fn make_shape_mask_with((h, w): (usize, usize), style: ShapeStyle, rng: &mut impl Rng) -> ShapeMask {
    assert!(h >= 1 && w >= 1, "shape mask needs positive dims");
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut m = BinaryMask::new(h, w);
    match style {
        ShapeStyle::Ellipse => {
            let ry = cy * rng.random_range(0.5..=1.0);
            let rx = cx * rng.random_range(0.5..=1.0);
            let jy = rng.random_range(-0.5..=0.5) * (cy - ry);
            let jx = rng.random_range(-0.5..=0.5) * (cx - rx);
            for r in 0..h {
                for c in 0..w {
                    let y = (r as f64 + 0.5 - cy - jy) / ry;
                    let x = (c as f64 + 0.5 - cx - jx) / rx;
                    m.set(r, c, y * y + x * x <= 1.0);
                }
            }
        }
        ShapeStyle::Polygon => {
            let n = rng.random_range(5..=9);
            let start = rng.random_range(0.0..std::f64::consts::TAU);
            let verts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let a = start + std::f64::consts::TAU * i as f64 / n as f64;
                    let s = rng.random_range(0.45..=1.0);
                    (cy + s * cy * a.sin(), cx + s * cx * a.cos())
                })
                .collect();
            for r in 0..h {
                for c in 0..w {
                    m.set(r, c, point_in_polygon((r as f64 + 0.5, c as f64 + 0.5), &verts));
                }
            }
        }
        ShapeStyle::Blob => {
            let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sigma = (h.min(w) as f64 / 6.0).max(0.5);
            let smooth = gaussian_blur(&noise, h, w, sigma);
            let spread = smooth.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            for r in 0..h {
                for c in 0..w {
                    let y = (r as f64 + 0.5 - cy) / cy;
                    let x = (c as f64 + 0.5 - cx) / cx;
                    let radial = 1.0 - (y * y + x * x).sqrt();
                    m.set(r, c, radial + 0.5 * smooth[r * w + c] / spread > 0.25);
                }
            }
        }
    }
    if m.area() == 0 {
        m.set(h / 2, w / 2, true);
    }
    ShapeMask(m)
}

fn point_in_polygon((y, x): (f64, f64), verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (yi, xi) = verts[i];
        let (yj, xj) = verts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// How the content of a patch is transformed before pasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionKind {
    Elastic,
    /// Cut-out: content set to zero.
    Black,
    /// Content copied from another random location of the same image.
    PatchSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionConfig {
    pub kind: DistortionKind,
    /// Inclusive patch side range in pixels.
    pub patch_size: (usize, usize),
    pub patches: usize,
    pub alpha_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub shapes: Vec<ShapeStyle>,
    /// Additive brightness offset drawn uniformly from `[-b, b]`.
    pub brightness: f32,
    pub max_attempts: usize,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            kind: DistortionKind::Elastic,
            patch_size: (64, 128),
            patches: 1,
            alpha_range: (2.0, 8.0),
            sigma_range: (4.0, 12.0),
            shapes: vec![ShapeStyle::Ellipse, ShapeStyle::Polygon, ShapeStyle::Blob],
            brightness: 0.2,
            max_attempts: 16,
        }
    }
}

impl DistortionConfig {
    /// Defaults with the patch range scaled to a square image of `side` (64–128 px at 512).
    pub fn for_side(side: usize) -> Self {
        Self { patch_size: ((side / 8).max(1), (side / 4).max(1)), ..Self::default() }
    }

    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        let (lo, hi) = self.patch_size;
        if lo == 0 || lo > hi || hi > dims.0.min(dims.1) {
            return Err(Error::Config(format!(
                "patch size range ({lo}, {hi}) infeasible for {}x{}",
                dims.0, dims.1
            )));
        }
        if self.patches == 0 || self.max_attempts == 0 || self.shapes.is_empty() {
            return Err(Error::Config("patches, attempts and shape styles must be nonempty".into()));
        }
        let ok_range = |(a, b): (f64, f64)| a <= b;
        if !ok_range(self.alpha_range) || self.alpha_range.0 < 0.0 {
            return Err(Error::Config("alpha range must be ordered and nonnegative".into()));
        }
        if !ok_range(self.sigma_range) || self.sigma_range.0 <= 0.0 {
            return Err(Error::Config("sigma range must be ordered and positive".into()));
        }
        if !(0.0..=1.0).contains(&self.brightness) {
            return Err(Error::Config("brightness range must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One pasted patch, kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub geometry: PatchGeometry,
    pub shape: ShapeMask,
    pub brightness_delta: f32,
}

/// `(X, X̂, M)` with `X̂ = X` off `M`, `‖X̂−X‖₁ > 0`, all values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSample {
    pub original: ImageTensor,
    pub distorted: ImageTensor,
    pub mask: BinaryMask,
    pub patches: Vec<PatchRecord>,
}

impl DistortionSample {
    pub fn l1(&self) -> f64 {
        self.distorted.l1_distance(&self.original)
    }

    /// Write `X | X̂ | M` side by side.
    pub fn save_triptych(&self, path: &Path) -> Result<()> {
        let (h, w, ch) = self.original.dims();
        let strip = ImageTensor::from_fn(h, 3 * w, ch, |r, c, k| match c / w {
            0 => self.original.get(r, c, k),
            1 => self.distorted.get(r, c - w, k),
            _ => {
                if self.mask.get(r, c - 2 * w) {
                    1.0
                } else {
                    0.0
                }
            }
        });
        save_png(&strip, path)
    }
}

/// Paste `deformed` masked by `shape` at `geometry` into a copy of `x`, shifting brightness.
pub fn compose_distortion(
    x: &ImageTensor,
    geometry: PatchGeometry,
    deformed: &ImageTensor,
    shape: &ShapeMask,
    brightness_delta: f32,
) -> Result<DistortionSample> {
    let base = DistortionSample {
        original: x.clone(),
        distorted: x.clone(),
        mask: BinaryMask::new(x.height(), x.width()),
        patches: Vec::new(),
    };
    let sample = paste(base, geometry, deformed, shape, brightness_delta)?;
    if sample.distorted == sample.original {
        return Err(Error::Degenerate);
    }
    Ok(sample)
}

fn paste(
    mut sample: DistortionSample,
    g: PatchGeometry,
    deformed: &ImageTensor,
    shape: &ShapeMask,
    delta: f32,
) -> Result<DistortionSample> {
    let (h, w, ch) = sample.original.dims();
    if g.row + g.height > h || g.col + g.width > w {
        return Err(Error::Shape(format!("patch {g:?} exceeds {h}x{w} image")));
    }
    if (deformed.height(), deformed.width()) != (g.height, g.width) || deformed.channels() != ch {
        return Err(Error::Shape(format!(
            "deformed patch {:?} does not match geometry {}x{}x{ch}",
            deformed.dims(),
            g.height,
            g.width
        )));
    }
    if shape.dims() != (g.height, g.width) {
        return Err(Error::Shape(format!("shape mask {:?} does not match geometry", shape.dims())));
    }
    for r in 0..g.height {
        for c in 0..g.width {
            if !shape.mask().get(r, c) {
                continue;
            }
            sample.mask.set(g.row + r, g.col + c, true);
            for k in 0..ch {
                let v = (deformed.get(r, c, k) + delta).clamp(0.0, 1.0);
                sample.distorted.set(g.row + r, g.col + c, k, v);
            }
        }
    }
    sample.patches.push(PatchRecord { geometry: g, shape: shape.clone(), brightness_delta: delta });
    Ok(sample)
}

/// Full pipeline with rejection resampling until the sample is non-degenerate.
pub fn generate_training_pair(x: &ImageTensor, cfg: &DistortionConfig, seed: u64) -> Result<DistortionSample> {
    cfg.validate((x.height(), x.width()))?;
    let mut rng = rng_for(seed);
    for _ in 0..cfg.max_attempts {
        let mut sample = DistortionSample {
            original: x.clone(),
            distorted: x.clone(),
            mask: BinaryMask::new(x.height(), x.width()),
            patches: Vec::with_capacity(cfg.patches),
        };
        for _ in 0..cfg.patches {
            let g = sample_patch_geometry_with((x.height(), x.width()), cfg.patch_size, &mut rng)?;
            let content = match cfg.kind {
                DistortionKind::Elastic => {
                    let alpha = rng.random_range(cfg.alpha_range.0..=cfg.alpha_range.1);
                    let sigma = rng.random_range(cfg.sigma_range.0..=cfg.sigma_range.1);
                    let field_seed = rng.random();
                    elastic_deform(&x.crop(g.row, g.col, g.height, g.width), alpha, sigma, field_seed)
                }
                DistortionKind::Black => ImageTensor::zeros(g.height, g.width, x.channels()),
                DistortionKind::PatchSwap => {
                    let row = rng.random_range(0..=x.height() - g.height);
                    let col = rng.random_range(0..=x.width() - g.width);
                    x.crop(row, col, g.height, g.width)
                }
            };
            let style = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
            let shape = make_shape_mask_with((g.height, g.width), style, &mut rng);
            let delta = match cfg.kind {
                DistortionKind::Black => 0.0,
                _ if cfg.brightness > 0.0 => rng.random_range(-cfg.brightness..=cfg.brightness),
                _ => 0.0,
            };
            sample = paste(sample, g, &content, &shape, delta)?;
        }
        let total = sample.mask.height() * sample.mask.width();
        if sample.distorted != sample.original && sample.mask.area() < total {
            return Ok(sample);
        }
    }
    Err(Error::ResampleExhausted(cfg.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, 3, |r, c, k| {
            0.5 + 0.4 * ((r as f32 * 0.7 + c as f32 * 0.3 + k as f32).sin())
        })
    }

    #[test]
    fn geometry_contract() {
        for seed in 0..200 {
            let g = sample_patch_geometry((512, 512), (64, 128), seed).unwrap();
            assert!((64..=128).contains(&g.height) && (64..=128).contains(&g.width));
            assert!(g.row + g.height <= 512 && g.col + g.width <= 512);
        }
        let full = sample_patch_geometry((100, 100), (100, 100), 3).unwrap();
        assert_eq!(full, PatchGeometry { row: 0, col: 0, height: 100, width: 100 });
        assert!(matches!(sample_patch_geometry((32, 32), (64, 64), 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_alpha_is_identity() {
        let p = textured(20, 17);
        assert_eq!(elastic_deform(&p, 0.0, 4.0, 9), p);
    }

    #[test]
    fn constant_patch_stays_constant() {
        let p = ImageTensor::filled(16, 16, 3, 0.3);
        let out = elastic_deform(&p, 6.0, 3.0, 1);
        assert!(out.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn displacement_bounded_by_alpha() {
        for seed in 0..50 {
            let alpha = 1.0 + seed as f64 * 0.2;
            let f = elastic_field((24, 31), alpha, 4.0, seed);
            assert!(f.max_magnitude() <= alpha + 1e-9);
        }
    }

    #[test]
    fn shapes_nonempty_and_deterministic() {
        for style in [ShapeStyle::Ellipse, ShapeStyle::Polygon, ShapeStyle::Blob] {
            for seed in 0..100 {
                let dims = (1 + (seed as usize % 40), 1 + (seed as usize * 7 % 33));
                let m = make_shape_mask(dims, style, seed);
                assert!(m.area() >= 1);
                assert_eq!(m, make_shape_mask(dims, style, seed));
            }
        }
        // a single-pixel patch is filled by any ellipse
        let tiny = make_shape_mask((1, 1), ShapeStyle::Ellipse, 5);
        assert_eq!(tiny.area(), 1);
    }

    #[test]
    fn compose_hand_example() {
        let x = ImageTensor::zeros(4, 4, 3);
        let g = PatchGeometry { row: 1, col: 1, height: 2, width: 2 };
        let deformed = ImageTensor::filled(2, 2, 3, 0.5);
        let shape = ShapeMask::new(BinaryMask::from_vec(2, 2, vec![true; 4]).unwrap()).unwrap();
        let s = compose_distortion(&x, g, &deformed, &shape, 0.0).unwrap();
        assert_eq!(s.mask.area(), 4);
        assert_eq!(s.distorted.as_slice().iter().filter(|&&v| v == 0.5).count(), 12);
        assert!((s.l1() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn compose_signals_degenerate_sample() {
        let x = ImageTensor::filled(8, 8, 3, 0.4);
        let g = PatchGeometry { row: 2, col: 2, height: 3, width: 3 };
        let content = x.crop(2, 2, 3, 3);
        let shape = make_shape_mask((3, 3), ShapeStyle::Ellipse, 0);
        assert!(matches!(compose_distortion(&x, g, &content, &shape, 0.0), Err(Error::Degenerate)));
    }

    #[test]
    fn compose_rejects_mismatched_dims() {
        let x = ImageTensor::zeros(8, 8, 3);
        let g = PatchGeometry { row: 0, col: 0, height: 3, width: 3 };
        let shape = make_shape_mask((3, 3), ShapeStyle::Ellipse, 0);
        let wrong = ImageTensor::zeros(4, 3, 3);
        assert!(matches!(compose_distortion(&x, g, &wrong, &shape, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn two_patches_union() {
        let x = textured(48, 48);
        let cfg = DistortionConfig { patch_size: (6, 12), patches: 2, ..DistortionConfig::default() };
        let s = generate_training_pair(&x, &cfg, 11).unwrap();
        assert_eq!(s.patches.len(), 2);
        let mut union = BinaryMask::new(48, 48);
        for p in &s.patches {
            for r in 0..p.geometry.height {
                for c in 0..p.geometry.width {
                    if p.shape.mask().get(r, c) {
                        union.set(p.geometry.row + r, p.geometry.col + c, true);
                    }
                }
            }
        }
        assert_eq!(union, s.mask);
    }

    #[test]
    fn constant_image_with_no_brightness_exhausts_budget() {
        let x = ImageTensor::filled(16, 16, 3, 0.5);
        let cfg = DistortionConfig { patch_size: (4, 8), brightness: 0.0, ..DistortionConfig::default() };
        assert!(matches!(generate_training_pair(&x, &cfg, 0), Err(Error::ResampleExhausted(16))));
    }

    #[test]
    fn alternative_kinds_respect_invariants() {
        let x = textured(32, 32);
        for kind in [DistortionKind::Black, DistortionKind::PatchSwap] {
            let cfg = DistortionConfig { kind, patch_size: (4, 10), ..DistortionConfig::default() };
            for seed in 0..30 {
                let s = generate_training_pair(&x, &cfg, seed).unwrap();
                assert!(s.l1() > 0.0);
                for r in 0..32 {
                    for c in 0..32 {
                        if !s.mask.get(r, c) {
                            assert_eq!(s.distorted.pixel(r, c), s.original.pixel(r, c));
                        }
                    }
                }
            }
        }
    }
}
