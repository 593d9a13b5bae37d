use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// A dihedral group element: optional horizontal flip followed by `quarter_turns` clockwise
/// rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transform {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { flip: false, quarter_turns: 0 };

    pub fn all() -> impl Iterator<Item = Transform> {
        (0..8).map(|i| Transform { flip: i >= 4, quarter_turns: (i % 4) as u8 })
    }

    pub fn apply(self, img: &ImageTensor) -> ImageTensor {
        let mut out = if self.flip { flip_horizontal(img) } else { img.clone() };
        for _ in 0..self.quarter_turns % 4 {
            out = rotate_cw(&out);
        }
        out
    }

    /// `self` followed by `other`.
    pub fn then(self, other: Transform) -> Transform {
        let probe = ImageTensor::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let target = other.apply(&self.apply(&probe));
        Transform::all().find(|t| t.apply(&probe) == target).expect("dihedral group is closed")
    }

    fn transposes(self) -> bool {
        self.quarter_turns % 2 == 1
    }
}

pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let (h, w, ch) = img.dims();
    ImageTensor::from_fn(h, w, ch, |r, c, k| img.get(r, w - 1 - c, k))
}

pub fn flip_vertical(img: &ImageTensor) -> ImageTensor {
    let (h, w, ch) = img.dims();
    ImageTensor::from_fn(h, w, ch, |r, c, k| img.get(h - 1 - r, c, k))
}

/// Clockwise quarter turn: `[[a, b], [c, d]]` becomes `[[c, a], [d, b]]`.
pub fn rotate_cw(img: &ImageTensor) -> ImageTensor {
    let (h, w, ch) = img.dims();
    ImageTensor::from_fn(w, h, ch, |r, c, k| img.get(h - 1 - c, r, k))
}

/// Which rotations and flips a category may use during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Allowed rotations in degrees, each a multiple of 90. 0 is implied.
    pub rotations: Vec<u16>,
    pub hflip: bool,
    pub vflip: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self { rotations: vec![0], hflip: false, vflip: false }
    }

    pub fn full() -> Self {
        Self { rotations: vec![0, 90, 180, 270], hflip: true, vflip: true }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.rotations.iter().find(|r| **r % 90 != 0 || **r >= 360) {
            return Err(Error::Config(format!("rotation {bad} is not one of 0, 90, 180, 270")));
        }
        Ok(())
    }

    fn generators(&self) -> Vec<Transform> {
        let mut gens: Vec<Transform> =
            self.rotations.iter().map(|r| Transform { flip: false, quarter_turns: (r / 90) as u8 }).collect();
        if self.hflip {
            gens.push(Transform { flip: true, quarter_turns: 0 });
        }
        if self.vflip {
            gens.push(Transform { flip: true, quarter_turns: 2 });
        }
        gens
    }

    /// The subgroup generated by the policy, identity first.
    pub fn elements(&self) -> Vec<Transform> {
        let gens = self.generators();
        let mut group = vec![Transform::IDENTITY];
        let mut i = 0;
        while i < group.len() {
            for &g in &gens {
                let next = group[i].then(g);
                if !group.contains(&next) {
                    group.push(next);
                }
            }
            i += 1;
        }
        group
    }

    /// Uniformly sampled group element for `seed`.
    pub fn sample(&self, seed: u64) -> Transform {
        let elems = self.elements();
        elems[ChaCha8Rng::seed_from_u64(seed).random_range(0..elems.len())]
    }
}

/// Apply one policy-sampled transform.
pub fn augment(img: &ImageTensor, policy: &AugmentationPolicy, seed: u64) -> Result<ImageTensor> {
    policy.validate()?;
    if img.height() != img.width() && policy.elements().iter().any(|t| t.transposes()) {
        return Err(Error::Config(format!(
            "quarter-turn rotations need a square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(policy.sample(seed).apply(img))
}
