use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GOOD: &str = "good";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub defect: String,
    pub split: Split,
}

impl Record {
    pub fn is_anomalous(&self) -> bool {
        self.defect != GOOD
    }

    /// File stem of the image, used to name per-image outputs.
    pub fn stem(&self) -> String {
        self.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

/// Immutable listing of one category in the MVTec layout, sorted by path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub category: String,
    pub train: Vec<Record>,
    pub validation: Vec<Record>,
    pub test: Vec<Record>,
}

impl DatasetIndex {
    pub fn category_dir(&self) -> PathBuf {
        self.root.join(&self.category)
    }

    pub fn records(&self, split: Split) -> &[Record] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Moves a seeded `fraction` of the training images into the validation split. At least one
    /// image stays in each split when there are two or more.
    pub fn with_holdout(mut self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("validation fraction {fraction} must lie in [0, 1)")));
        }
        self.train.append(&mut self.validation);
        self.train.sort_by(|a, b| a.image.cmp(&b.image));
        let n = self.train.len();
        let mut k = (fraction * n as f64).round() as usize;
        if fraction > 0.0 && n >= 2 {
            k = k.clamp(1, n - 1);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut held = vec![false; n];
        for &i in &order[..k] {
            held[i] = true;
        }
        let (mut val, mut train) = (Vec::new(), Vec::new());
        for (rec, h) in self.train.drain(..).zip(held) {
            if h {
                val.push(Record { split: Split::Validation, ..rec });
            } else {
                train.push(Record { split: Split::Train, ..rec });
            }
        }
        self.train = train;
        self.validation = val;
        Ok(self)
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Index { path: dir.to_path_buf(), reason: e.to_string() })? {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// Index `root/category`.
pub fn scan_dataset(root: &Path, category: &str) -> Result<DatasetIndex> {
    let dir = root.join(category);
    if !dir.is_dir() {
        return Err(Error::Index { path: dir, reason: "category directory not found".into() });
    }
    let train_dir = dir.join("train").join(GOOD);
    let mut train = Vec::new();
    if train_dir.is_dir() {
        for path in sorted_entries(&train_dir)?.into_iter().filter(|p| is_image(p)) {
            dimensions(&path)?;
            train.push(Record { image: path, mask: None, defect: GOOD.into(), split: Split::Train });
        }
    }
    let mut test = Vec::new();
    let test_dir = dir.join("test");
    if test_dir.is_dir() {
        for defect_dir in sorted_entries(&test_dir)?.into_iter().filter(|p| p.is_dir()) {
            let defect = defect_dir.file_name().unwrap().to_string_lossy().into_owned();
            for path in sorted_entries(&defect_dir)?.into_iter().filter(|p| is_image(p)) {
                let dims = dimensions(&path)?;
                let mask = if defect == GOOD {
                    None
                } else {
                    let stem = path.file_stem().unwrap().to_string_lossy();
                    let mask = dir.join("ground_truth").join(&defect).join(format!("{stem}_mask.png"));
                    if !mask.is_file() {
                        return Err(Error::Index { path, reason: format!("missing ground-truth mask {}", mask.display()) });
                    }
                    if dimensions(&mask)? != dims {
                        return Err(Error::Index { path: mask, reason: "mask size differs from image".into() });
                    }
                    Some(mask)
                };
                test.push(Record { image: path, mask, defect: defect.clone(), split: Split::Test });
            }
        }
    }
    Ok(DatasetIndex { root: root.to_path_buf(), category: category.to_string(), train, validation: Vec::new(), test })
}

/// Index a category given its own directory.
pub fn scan_category(dir: &Path) -> Result<DatasetIndex> {
    let category = dir
        .file_name()
        .ok_or_else(|| Error::Index { path: dir.to_path_buf(), reason: "not a category directory".into() })?
        .to_string_lossy()
        .into_owned();
    let root = dir.parent().map(Path::to_path_buf).unwrap_or_default();
    scan_dataset(&root, &category)
}
