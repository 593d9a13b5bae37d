//! Slow, obviously-correct reference implementations. They share no code with the library
//! beyond plain data types, and work in f64 on flat `h*w*c` row-major arrays.

#![allow(dead_code)]

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    V1,
    V2,
    V3,
}

/// A loss case: reconstruction, target, distorted input and a per-pixel mask.
#[derive(Debug, Clone)]
pub struct LossCase {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub recon: Vec<f64>,
    pub target: Vec<f64>,
    pub distorted: Vec<f64>,
    pub mask: Vec<bool>,
    pub lambda: f64,
}

/// The objective written out term by term with explicit loops over rows, columns and channels.
pub fn loss(kind: Objective, case: &LossCase, recon: &[f64]) -> f64 {
    let mut outside_sq = 0.0;
    let mut inside_sq = 0.0;
    let mut weighted_sq = 0.0;
    let mut outside_count = 0.0;
    let mut inside_count = 0.0;
    let mut modification = 0.0;
    for row in 0..case.h {
        for col in 0..case.w {
            let in_mask = case.mask[row * case.w + col];
            for ch in 0..case.c {
                let k = (row * case.w + col) * case.c + ch;
                let diff = recon[k] - case.target[k];
                let change = (case.distorted[k] - case.target[k]).abs();
                modification += change;
                weighted_sq += (change * diff).powi(2);
                if in_mask {
                    inside_sq += diff * diff;
                    inside_count += 1.0;
                } else {
                    outside_sq += diff * diff;
                    outside_count += 1.0;
                }
            }
        }
    }
    let normal = case.lambda / outside_count * outside_sq.sqrt();
    match kind {
        Objective::V1 => normal + (1.0 - case.lambda) / inside_count * inside_sq.sqrt(),
        Objective::V2 => normal - (1.0 - case.lambda) / inside_count * inside_sq.sqrt(),
        Objective::V3 => normal - (1.0 - case.lambda) / modification * weighted_sq.sqrt(),
    }
}

/// Central finite differences of [`loss`] with respect to the reconstruction.
pub fn numeric_gradient(kind: Objective, case: &LossCase, step: f64) -> Vec<f64> {
    let mut probe = case.recon.clone();
    (0..probe.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let up = loss(kind, case, &probe);
            probe[k] = orig - step;
            let down = loss(kind, case, &probe);
            probe[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Euclidean norms of the two masked differences, for keeping cases away from the kink at 0.
pub fn masked_norms(kind: Objective, case: &LossCase) -> (f64, f64) {
    let (mut out, mut inn) = (0.0, 0.0);
    for (k, (&r, &x)) in case.recon.iter().zip(&case.target).enumerate() {
        let d = r - x;
        let m = case.mask[k / case.c];
        if !m {
            out += d * d;
        }
        inn += match kind {
            Objective::V3 => ((case.distorted[k] - x).abs() * d).powi(2),
            _ if m => d * d,
            _ => 0.0,
        };
    }
    (out.sqrt(), inn.sqrt())
}

/// Components of a binary grid as sorted lists of flat indices, ordered by first pixel.
pub fn flood_fill(grid: &[bool], h: usize, w: usize, eight: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    for start in 0..grid.len() {
        if !grid[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (r, c) = ((p / w) as i64, (p % w) as i64);
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if grid[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Same partition from a label image (0 = background), in the same canonical order.
pub fn partition_from_labels(labels: &[u32]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (p, &l) in labels.iter().enumerate() {
        if l != 0 {
            groups.entry(l).or_default().push(p);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// Largest component of `{v >= t}` by flood fill.
pub fn largest_area(values: &[f32], h: usize, w: usize, t: f32, eight: bool) -> usize {
    let grid: Vec<bool> = values.iter().map(|&v| v >= t).collect();
    flood_fill(&grid, h, w, eight).iter().map(Vec::len).max().unwrap_or(0)
}

/// Expected `(kind, height, width, channels)` after every layer of the full-size network on a
/// 512 px input, as listed in the full-size architecture table.
pub fn reference_layers() -> Vec<(&'static str, usize, usize, usize)> {
    let mut v = vec![
        ("conv", 512, 512, 32),
        ("conv", 512, 512, 32),
        ("maxpool", 256, 256, 32),
        ("conv", 256, 256, 64),
        ("conv", 256, 256, 64),
        ("maxpool", 128, 128, 64),
        ("conv", 128, 128, 128),
        ("conv", 128, 128, 128),
        ("maxpool", 64, 64, 128),
    ];
    v.extend([("dilated_stack", 64, 64, 320); 4]);
    v.extend([
        ("conv", 64, 64, 256),
        ("transposed_conv", 128, 128, 256),
        ("conv", 128, 128, 256),
        ("conv", 128, 128, 128),
        ("transposed_conv", 256, 256, 128),
        ("conv", 256, 256, 128),
        ("conv", 256, 256, 64),
        ("transposed_conv", 512, 512, 64),
        ("conv", 512, 512, 64),
        ("conv", 512, 512, 32),
        ("conv", 512, 512, 3),
    ]);
    v
}

/// Outcome of checking one property over many cases.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub cases: usize,
    pub failed: usize,
    /// First few failing cases.
    pub examples: Vec<String>,
    /// Largest error seen.
    pub worst: f64,
}

impl OracleReport {
    pub fn check(&mut self, ok: bool, err: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_finite() {
            self.worst = self.worst.max(err);
        }
        if !ok {
            self.failed += 1;
            if self.examples.len() < 3 {
                self.examples.push(describe());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failed == 0
    }

    pub fn summary(&self) -> String {
        format!("{}/{} cases ok, worst error {:.3e}", self.cases - self.failed, self.cases, self.worst)
    }
}
