//! Separable gaussian filtering on single-channel `f64` planes.

/// Normalized 1-D gaussian taps truncated at 4σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0);
    let radius = (4.0 * sigma + 0.5) as usize;
    let mut taps: Vec<f64> =
        (0..=2 * radius).map(|i| (-((i as f64 - radius as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Gaussian blur of a row-major `h×w` plane with reflected borders. `sigma == 0` copies.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(plane.len(), h * w);
    if sigma == 0.0 || plane.is_empty() {
        return plane.to_vec();
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect(c as isize + k as isize - radius, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[reflect(r as isize + k as isize - radius, h) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 2.5, 7.0] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let n = k.len();
            for i in 0..n / 2 {
                assert_eq!(k[i], k[n - 1 - i]);
            }
        }
    }

    #[test]
    fn reflect_folds_repeatedly() {
        let idx: Vec<usize> = (-5..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn constant_plane_is_fixed_point() {
        let plane = vec![0.25; 7 * 5];
        let out = gaussian_blur(&plane, 7, 5, 3.0);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
