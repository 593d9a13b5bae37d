//! Training objectives over a reconstruction `F(X̂)`, the clean target `X`, the distorted
//! input `X̂` and the modification mask `M`.
//!
//! With `d = F(X̂) − X`, `‖·‖₂` the Euclidean norm of the whole masked tensor and `‖M‖₁`
//! counting mask elements across channels:
//!
//! * `V1 = λ/‖M̄‖₁ ‖M̄⊙d‖₂ + (1−λ)/‖M‖₁ ‖M⊙d‖₂`
//! * `V2 = λ/‖M̄‖₁ ‖M̄⊙d‖₂ − (1−λ)/‖M‖₁ ‖M⊙d‖₂`
//! * `V3 = λ/‖M̄‖₁ ‖M̄⊙d‖₂ − (1−λ)/‖X̂−X‖₁ ‖|X̂−X|⊙d‖₂`
//!
//! The second V3 term weighs the reward for reconstruction error by how much each element
//! was actually modified, so unmodified elements inside `M` are not pushed away from `X`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageTensor};
use crate::nn::Tensor;

/// Added under the square root when differentiating `‖v‖₂`, so the gradient at `v = 0` is 0.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
    V3,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub variant: Variant,
    pub lambda: f64,
    /// `‖X̂−X‖₁` at or below this is rejected by V3.
    pub eps: f64,
}

impl ObjectiveConfig {
    /// λ = 0.5 for every variant. For V3 this is only a starting point; the balance between
    /// the two terms is harder to tune there.
    pub fn new(variant: Variant) -> Self {
        if variant == Variant::V3 {
            log::warn!("V3 is sensitive to λ; 0.5 is a starting point, validate with early stopping");
        }
        Self { variant, lambda: 0.5, eps: 1e-6 }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { variant: Variant::V1, lambda: 0.5, eps: 1e-6 }
    }
}

/// Loss value and its gradient with respect to the reconstruction.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ImageTensor,
}

struct Terms {
    /// count of elements outside / inside M (across channels)
    n_out: f64,
    n_in: f64,
}

fn check_inputs(recon: &ImageTensor, target: &ImageTensor, mask: &BinaryMask) -> Result<Terms> {
    recon.ensure_same_shape(target, "reconstruction vs target")?;
    if mask.dims() != (target.height(), target.width()) {
        return Err(Error::Shape(format!(
            "mask {:?} vs image {:?}",
            mask.dims(),
            (target.height(), target.width())
        )));
    }
    let c = target.channels() as f64;
    let area = mask.area() as f64;
    let total = (mask.height() * mask.width()) as f64;
    if area == 0.0 || area == total {
        return Err(Error::Precondition(
            "mask must contain both modified and unmodified pixels".into(),
        ));
    }
    Ok(Terms { n_out: (total - area) * c, n_in: area * c })
}

/// Evaluate one objective and its gradient. `distorted` is only read by V3.
pub fn evaluate(
    cfg: &ObjectiveConfig,
    recon: &ImageTensor,
    target: &ImageTensor,
    distorted: &ImageTensor,
    mask: &BinaryMask,
) -> Result<LossGrad> {
    cfg.validate()?;
    let counts = check_inputs(recon, target, mask)?;
    let ch = target.channels();
    let (r, x, xh) = (recon.as_slice(), target.as_slice(), distorted.as_slice());
    let m = mask.as_slice();
    let lambda = cfg.lambda;

    let weight_l1 = if cfg.variant == Variant::V3 {
        distorted.ensure_same_shape(target, "distorted vs target")?;
        let l1 = distorted.l1_distance(target);
        if l1 <= cfg.eps {
            return Err(Error::Precondition(format!("‖X̂−X‖₁ = {l1} is not above eps {}", cfg.eps)));
        }
        l1
    } else {
        0.0
    };

    // squared norms of the two masked difference tensors
    let (mut sq_out, mut sq_in) = (0.0f64, 0.0f64);
    for (i, (&ri, &xi)) in r.iter().zip(x).enumerate() {
        let d = (ri - xi) as f64;
        if !m[i / ch] {
            sq_out += d * d;
        }
        match cfg.variant {
            Variant::V1 | Variant::V2 => {
                if m[i / ch] {
                    sq_in += d * d;
                }
            }
            Variant::V3 => {
                let w = (xh[i] - xi).abs() as f64;
                sq_in += (w * d) * (w * d);
            }
        }
    }
    let (a, b) = match cfg.variant {
        Variant::V1 => (lambda / counts.n_out, (1.0 - lambda) / counts.n_in),
        Variant::V2 => (lambda / counts.n_out, -(1.0 - lambda) / counts.n_in),
        Variant::V3 => (lambda / counts.n_out, -(1.0 - lambda) / weight_l1),
    };
    let loss = a * sq_out.sqrt() + b * sq_in.sqrt();

    let ga = a / (sq_out + NORM_EPS).sqrt();
    let gb = b / (sq_in + NORM_EPS).sqrt();
    let mut grad = ImageTensor::zeros(target.height(), target.width(), ch);
    for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
        let d = (r[i] - x[i]) as f64;
        let inside = m[i / ch];
        let v = match cfg.variant {
            Variant::V1 | Variant::V2 => {
                if inside {
                    gb * d
                } else {
                    ga * d
                }
            }
            Variant::V3 => {
                let w = (xh[i] - x[i]).abs() as f64;
                let outside = if inside { 0.0 } else { ga * d };
                outside + gb * w * w * d
            }
        };
        *g = v as f32;
    }
    Ok(LossGrad { loss, grad })
}

pub fn loss_v1(recon: &ImageTensor, target: &ImageTensor, mask: &BinaryMask, lambda: f64) -> Result<f64> {
    let cfg = ObjectiveConfig { variant: Variant::V1, lambda, ..Default::default() };
    Ok(evaluate(&cfg, recon, target, target, mask)?.loss)
}

pub fn loss_v2(recon: &ImageTensor, target: &ImageTensor, mask: &BinaryMask, lambda: f64) -> Result<f64> {
    let cfg = ObjectiveConfig { variant: Variant::V2, lambda, ..Default::default() };
    Ok(evaluate(&cfg, recon, target, target, mask)?.loss)
}

pub fn loss_v3(
    recon: &ImageTensor,
    target: &ImageTensor,
    distorted: &ImageTensor,
    mask: &BinaryMask,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    let cfg = ObjectiveConfig { variant: Variant::V3, lambda, eps };
    Ok(evaluate(&cfg, recon, target, distorted, mask)?.loss)
}

/// One training example as seen by the objective.
pub struct ObjectiveSample<'a> {
    pub target: &'a ImageTensor,
    pub distorted: &'a ImageTensor,
    pub mask: &'a BinaryMask,
}

/// Mean of per-sample losses over a planar batch, with the gradient of that mean.
pub fn batch_loss(
    cfg: &ObjectiveConfig,
    recon: &Tensor,
    samples: &[ObjectiveSample<'_>],
) -> Result<(f64, Tensor)> {
    if recon.n != samples.len() || samples.is_empty() {
        return Err(Error::Shape(format!("{} reconstructions for {} samples", recon.n, samples.len())));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let r = recon.to_image(i);
        let lg = evaluate(cfg, &r, s.target, s.distorted, s.mask)?;
        total += lg.loss;
        let mut g = lg.grad;
        g.as_mut_slice().iter_mut().for_each(|v| *v *= scale as f32);
        grads.push(g);
    }
    let refs: Vec<&ImageTensor> = grads.iter().collect();
    Ok((total * scale, Tensor::from_images(&refs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2×2×1: X = 0, M marks pixel (0,0), recon = 1 at that pixel.
    fn toy() -> (ImageTensor, ImageTensor, BinaryMask) {
        let x = ImageTensor::zeros(2, 2, 1);
        let mut recon = x.clone();
        recon.set(0, 0, 0, 1.0);
        let mut m = BinaryMask::new(2, 2);
        m.set(0, 0, true);
        (recon, x, m)
    }

    #[test]
    fn v1_toy_value() {
        let (r, x, m) = toy();
        assert!((loss_v1(&r, &x, &m, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn v2_toy_value() {
        let (r, x, m) = toy();
        assert!((loss_v2(&r, &x, &m, 0.5).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn v3_toy_value() {
        let (r, x, m) = toy();
        let mut xh = x.clone();
        xh.set(0, 0, 0, 1.0);
        assert!((loss_v3(&r, &x, &xh, &m, 0.5, 1e-6).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let (_, x, m) = toy();
        let mut xh = x.clone();
        xh.set(0, 0, 0, 0.7);
        assert_eq!(loss_v1(&x, &x, &m, 0.3).unwrap(), 0.0);
        assert_eq!(loss_v2(&x, &x, &m, 0.3).unwrap(), 0.0);
        assert_eq!(loss_v3(&x, &x, &xh, &m, 0.3, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let (r, x, _) = toy();
        let empty = BinaryMask::new(2, 2);
        let full = BinaryMask::from_vec(2, 2, vec![true; 4]).unwrap();
        assert!(matches!(loss_v1(&r, &x, &empty, 0.5), Err(Error::Precondition(_))));
        assert!(matches!(loss_v1(&r, &x, &full, 0.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn v3_requires_modification() {
        let (r, x, m) = toy();
        assert!(matches!(loss_v3(&r, &x, &x, &m, 0.5, 1e-6), Err(Error::Precondition(_))));
    }

    #[test]
    fn lambda_one_ignores_inside() {
        let (r, x, m) = toy();
        let cfg = ObjectiveConfig { variant: Variant::V1, lambda: 1.0, eps: 1e-6 };
        let lg = evaluate(&cfg, &r, &x, &x, &m).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert_eq!(lg.grad.get(0, 0, 0), 0.0);
    }

    #[test]
    fn v2_decreases_with_inside_error() {
        let (_, x, m) = toy();
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let mut r = x.clone();
            r.set(1, 1, 0, 0.2);
            r.set(0, 0, 0, k as f32 / 10.0);
            let l = loss_v2(&r, &x, &m, 0.5).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn v3_ignores_unmodified_pixels_inside_mask() {
        // M covers two pixels but only (0,0) actually changed
        let x = ImageTensor::zeros(2, 2, 1);
        let mut xh = x.clone();
        xh.set(0, 0, 0, 0.5);
        let mut m = BinaryMask::new(2, 2);
        m.set(0, 0, true);
        m.set(0, 1, true);
        let mut r = x.clone();
        r.set(0, 1, 0, 0.9);
        let cfg = ObjectiveConfig { variant: Variant::V3, lambda: 0.5, eps: 1e-6 };
        let lg = evaluate(&cfg, &r, &x, &xh, &m).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert_eq!(lg.grad.get(0, 1, 0), 0.0);
    }

    #[test]
    fn lambda_out_of_range() {
        let (r, x, m) = toy();
        assert!(matches!(loss_v1(&r, &x, &m, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn duplicated_batch_keeps_mean() {
        let (r, x, m) = toy();
        let cfg = ObjectiveConfig::default();
        let s = ObjectiveSample { target: &x, distorted: &x, mask: &m };
        let one = Tensor::from_images(&[&r]).unwrap();
        let two = Tensor::from_images(&[&r, &r]).unwrap();
        let (l1, g1) = batch_loss(&cfg, &one, &[ObjectiveSample { ..s }]).unwrap();
        let s2 = ObjectiveSample { target: &x, distorted: &x, mask: &m };
        let s3 = ObjectiveSample { target: &x, distorted: &x, mask: &m };
        let (l2, g2) = batch_loss(&cfg, &two, &[s2, s3]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        assert!((g1.data[0] - 2.0 * g2.data[0]).abs() < 1e-7);
    }
}
