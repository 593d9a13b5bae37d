//! Low-level kernels: sgemm wrapper and the im2col / col2im pair.

/// `C = A·B + beta·C` with optional transposition of the stored operands.
///
/// `A` is logically `m×k` and `B` is `k×n`; when `a_t` is set `A` is stored as `k×m`,
/// when `b_t` is set `B` is stored as `n×k`. `C` is `m×n` row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry of a 2-D convolution over one `c×h×w` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Window {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Output columns `[lo, hi)` whose tap at offset `off` lands inside `[0, size)`.
    #[inline]
    fn valid_range(&self, out: usize, size: usize, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        // need 0 <= o*s + off < size
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = if (size as isize) <= off { 0 } else { ((size as isize) - off + s - 1) / s };
        (lo as usize, (hi_excl as usize).min(out).max(lo as usize))
    }
}

/// Unfold `x` (`c×h×w`) into `col` (`rows × cols`).
pub fn im2col(x: &[f32], g: &Window, col: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.h * g.w;
    let cols = oh * ow;
    debug_assert!(col.len() >= g.rows() * cols);
    for ch in 0..g.channels {
        let xc = &x[ch * plane..(ch + 1) * plane];
        for ki in 0..g.kernel {
            let off_y = (ki * g.dilation) as isize - g.pad as isize;
            let (y0, y1) = g.valid_range(oh, g.h, off_y);
            for kj in 0..g.kernel {
                let row = (ch * g.kernel + ki) * g.kernel + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (x0, x1) = g.valid_range(ow, g.w, off_x);
                if y0 >= y1 || x0 >= x1 {
                    dst.fill(0.0);
                    continue;
                }
                dst[..y0 * ow].fill(0.0);
                dst[y1 * ow..].fill(0.0);
                for oy in y0..y1 {
                    let iy = (oy * g.stride) as isize + off_y;
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    drow[..x0].fill(0.0);
                    drow[x1..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = (x0 as isize + off_x) as usize;
                        drow[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            drow[ox] = src[((ox * g.stride) as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `col` back onto `x` (`c×h×w`), accumulating overlapping taps. `x` is overwritten.
pub fn col2im(col: &[f32], g: &Window, x: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = g.h * g.w;
    let cols = oh * ow;
    x[..g.channels * plane].fill(0.0);
    for ch in 0..g.channels {
        let xc = &mut x[ch * plane..(ch + 1) * plane];
        for ki in 0..g.kernel {
            let off_y = (ki * g.dilation) as isize - g.pad as isize;
            let (y0, y1) = g.valid_range(oh, g.h, off_y);
            for kj in 0..g.kernel {
                let row = (ch * g.kernel + ki) * g.kernel + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (x0, x1) = g.valid_range(ow, g.w, off_x);
                if x0 >= x1 {
                    continue;
                }
                for oy in y0..y1 {
                    let iy = ((oy * g.stride) as isize + off_y) as usize;
                    let dst = &mut xc[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let ix0 = (x0 as isize + off_x) as usize;
                        for (d, s) in dst[ix0..ix0 + (x1 - x0)].iter_mut().zip(&srow[x0..x1]) {
                            *d += s;
                        }
                    } else {
                        for ox in x0..x1 {
                            dst[((ox * g.stride) as isize + off_x) as usize] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(x: &[f32], g: &Window) -> Vec<f32> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut col = vec![0.0; g.rows() * oh * ow];
        for ch in 0..g.channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (ch * g.kernel + ki) * g.kernel + kj;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                col[row * oh * ow + oy * ow + ox] =
                                    x[ch * g.h * g.w + iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn windows() -> Vec<Window> {
        let mut v = Vec::new();
        for &(k, s, p, d) in &[(3, 1, 1, 1), (5, 1, 4, 2), (5, 1, 32, 16), (3, 2, 1, 1), (1, 1, 0, 1), (5, 1, 8, 4)] {
            for &(h, w) in &[(7, 5), (8, 8), (4, 9)] {
                v.push(Window { channels: 2, h, w, kernel: k, stride: s, pad: p, dilation: d });
            }
        }
        v
    }

    #[test]
    fn im2col_matches_naive() {
        for g in windows() {
            let x: Vec<f32> = (0..g.channels * g.h * g.w).map(|i| i as f32 * 0.37 - 3.0).collect();
            let mut col = vec![f32::NAN; g.rows() * g.cols()];
            im2col(&x, &g, &mut col);
            assert_eq!(col, naive_im2col(&x, &g), "{g:?}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        for g in windows() {
            let x: Vec<f32> = (0..g.channels * g.h * g.w).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
            let y: Vec<f32> = (0..g.rows() * g.cols()).map(|i| ((i * 5) % 13) as f32 - 6.0).collect();
            let mut col = vec![0.0; y.len()];
            im2col(&x, &g, &mut col);
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back);
            let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            assert!((lhs - rhs).abs() < 1e-6, "{g:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]], B = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let want = [4.0, 5.0, 10.0, 11.0];
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = [0.0; 4];
                gemm(2, 3, 2, aa, a_t, bb, b_t, 0.0, &mut c);
                assert_eq!(c, want);
            }
        }
    }
}
