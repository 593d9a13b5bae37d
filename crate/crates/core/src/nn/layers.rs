//! Layers with explicit forward and backward passes.
//!
//! Every block offers a read-only `infer` (running batch-norm statistics, no caches) and a
//! `forward_train` / `backward` pair that caches what the gradient needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{col2im, gemm, im2col, Window};
use super::tensor::{Param, Tensor};

fn he_normal(rng: &mut impl Rng, len: usize, fan_in: usize, gain: f32) -> Vec<f32> {
    let std = gain * (2.0 / fan_in as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Stride-1 convolution with same padding and optional dilation.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(he_normal(rng, out_ch * fan_in, fan_in, 1.0));
        let bias = bias.then(|| Param::new(vec![0.0; out_ch]));
        Self { in_ch, out_ch, kernel, dilation, weight, bias }
    }

    fn window(&self, h: usize, w: usize) -> Window {
        Window {
            channels: self.in_ch,
            h,
            w,
            kernel: self.kernel,
            stride: 1,
            pad: self.dilation * (self.kernel - 1) / 2,
            dilation: self.dilation,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let g = self.window(x.h, x.w);
        let (k, p) = (g.rows(), x.plane());
        let mut y = Tensor::zeros(x.n, self.out_ch, x.h, x.w);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for i in 0..x.n {
            let xi = x.image(i);
            let src: &[f32] = if self.is_pointwise() {
                xi
            } else {
                im2col(xi, &g, &mut col);
                &col
            };
            let yi = y.image_mut(i);
            gemm(self.out_ch, k, p, &self.weight.value, false, src, false, 0.0, yi);
            if let Some(b) = &self.bias {
                for (o, &bv) in b.value.iter().enumerate() {
                    yi[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = self.window(x.h, x.w);
        let (k, p) = (g.rows(), x.plane());
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        let mut dcol = vec![0.0; k * p];
        for i in 0..x.n {
            let xi = x.image(i);
            let dyi = dy.image(i);
            let src: &[f32] = if self.is_pointwise() {
                xi
            } else {
                im2col(xi, &g, &mut col);
                &col
            };
            gemm(self.out_ch, p, k, dyi, false, src, true, 1.0, &mut self.weight.grad);
            if let Some(b) = &mut self.bias {
                for (o, gb) in b.grad.iter_mut().enumerate() {
                    *gb += dyi[o * p..(o + 1) * p].iter().sum::<f32>();
                }
            }
            if self.is_pointwise() {
                gemm(k, self.out_ch, p, &self.weight.value, true, dyi, false, 0.0, dx.image_mut(i));
            } else {
                gemm(k, self.out_ch, p, &self.weight.value, true, dyi, false, 0.0, &mut dcol);
                col2im(&dcol, &g, dx.image_mut(i));
            }
        }
        dx
    }
}

/// 3×3 transposed convolution with stride 2 that exactly doubles the spatial size
/// (padding 1, output padding 1).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Stored as `in_ch × (out_ch·3·3)`.
    pub weight: Param,
}

impl ConvTranspose2d {
    const KERNEL: usize = 3;

    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let kk = Self::KERNEL * Self::KERNEL;
        // each output pixel receives on average in_ch·kk/4 taps
        let fan_in = (in_ch * kk / 4).max(1);
        Self { in_ch, out_ch, weight: Param::new(he_normal(rng, in_ch * out_ch * kk, fan_in, 1.0)) }
    }

    fn window(&self, h: usize, w: usize) -> Window {
        Window { channels: self.out_ch, h: 2 * h, w: 2 * w, kernel: Self::KERNEL, stride: 2, pad: 1, dilation: 1 }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "transposed conv input channels");
        let g = self.window(x.h, x.w);
        let (k, p) = (g.rows(), x.plane());
        let mut y = Tensor::zeros(x.n, self.out_ch, 2 * x.h, 2 * x.w);
        let mut col = vec![0.0; k * p];
        for i in 0..x.n {
            gemm(k, self.in_ch, p, &self.weight.value, true, x.image(i), false, 0.0, &mut col);
            col2im(&col, &g, y.image_mut(i));
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = self.window(x.h, x.w);
        let (k, p) = (g.rows(), x.plane());
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut dcol = vec![0.0; k * p];
        for i in 0..x.n {
            im2col(dy.image(i), &g, &mut dcol);
            gemm(self.in_ch, k, p, &self.weight.value, false, &dcol, false, 0.0, dx.image_mut(i));
            gemm(self.in_ch, p, k, x.image(i), false, &dcol, true, 1.0, &mut self.weight.grad);
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn apply_eval(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        let p = x.plane();
        for i in 0..x.n {
            let yi = y.image_mut(i);
            for c in 0..self.channels {
                let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let scale = self.gamma.value[c] * inv;
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                yi[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    pub fn apply_train(&mut self, x: &Tensor) -> (Tensor, BnCache) {
        let p = x.plane();
        let count = (x.n * p) as f64;
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = vec![0.0f32; self.channels];
        for c in 0..self.channels {
            let mut sum = 0.0f64;
            for i in 0..x.n {
                sum += x.image(i)[c * p..(c + 1) * p].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for i in 0..x.n {
                sq += x.image(i)[c * p..(c + 1) * p]
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[c] = inv as f32;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let xs = &mut xhat.image_mut(i)[c * p..(c + 1) * p];
                xs.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
                let ys = &mut y.image_mut(i)[c * p..(c + 1) * p];
                ys.iter_mut().zip(xs.iter()).for_each(|(o, &h)| *o = g * h + b);
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let m = self.momentum;
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean as f32;
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased as f32;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor) -> Tensor {
        let p = dy.plane();
        let count = (dy.n * p) as f32;
        let mut dx = dy.clone();
        for c in 0..self.channels {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in 0..dy.n {
                let d = &dy.image(i)[c * p..(c + 1) * p];
                let h = &cache.xhat.image(i)[c * p..(c + 1) * p];
                for (&dv, &hv) in d.iter().zip(h) {
                    sum_dy += dv as f64;
                    sum_dy_xhat += (dv * hv) as f64;
                }
            }
            self.beta.grad[c] += sum_dy as f32;
            self.gamma.grad[c] += sum_dy_xhat as f32;
            let g = self.gamma.value[c];
            let k = g * cache.inv_std[c] / count;
            let (mean_dy, mean_dyh) = (sum_dy as f32, sum_dy_xhat as f32);
            for i in 0..dy.n {
                let h = &cache.xhat.image(i)[c * p..(c + 1) * p];
                let o = &mut dx.image_mut(i)[c * p..(c + 1) * p];
                for (ov, &hv) in o.iter_mut().zip(h) {
                    *ov = k * (count * *ov - mean_dy - hv * mean_dyh);
                }
            }
        }
        dx
    }
}

fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_backward(out: &Tensor, dy: &mut Tensor) {
    dy.data.iter_mut().zip(&out.data).for_each(|(d, &o)| {
        if o <= 0.0 {
            *d = 0.0
        }
    });
}

/// Convolution → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    cache: Option<(Tensor, BnCache, Tensor)>,
}

impl ConvBnRelu {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        Self { conv: Conv2d::new(in_ch, out_ch, kernel, dilation, false, rng), bn: BatchNorm2d::new(out_ch), cache: None }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.bn.apply_eval(&self.conv.apply(x));
        relu_inplace(&mut y);
        y
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let z = self.conv.apply(x);
        let (mut y, bn) = self.bn.apply_train(&z);
        relu_inplace(&mut y);
        self.cache = Some((x.clone(), bn, y.clone()));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x, bn, out) = self.cache.take().expect("backward without forward_train");
        let mut d = dy.clone();
        relu_backward(&out, &mut d);
        let dz = self.bn.backward(&bn, &d);
        self.conv.backward(&x, &dz)
    }
}

/// Transposed convolution (2× upsampling) → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct UpBnRelu {
    pub tconv: ConvTranspose2d,
    pub bn: BatchNorm2d,
    cache: Option<(Tensor, BnCache, Tensor)>,
}

impl UpBnRelu {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self { tconv: ConvTranspose2d::new(in_ch, out_ch, rng), bn: BatchNorm2d::new(out_ch), cache: None }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.bn.apply_eval(&self.tconv.apply(x));
        relu_inplace(&mut y);
        y
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let z = self.tconv.apply(x);
        let (mut y, bn) = self.bn.apply_train(&z);
        relu_inplace(&mut y);
        self.cache = Some((x.clone(), bn, y.clone()));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x, bn, out) = self.cache.take().expect("backward without forward_train");
        let mut d = dy.clone();
        relu_backward(&out, &mut d);
        let dz = self.bn.backward(&bn, &d);
        self.tconv.backward(&x, &dz)
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool2 {
    fn pool(x: &Tensor, mut argmax: Option<&mut Vec<u32>>) -> Tensor {
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(x.n, x.c, oh, ow);
        let mut k = 0;
        for i in 0..x.n {
            let xi = x.image(i);
            let yi = y.image_mut(i);
            for c in 0..x.c {
                let base = c * x.h * x.w;
                for r in 0..oh {
                    for q in 0..ow {
                        let mut best = base + 2 * r * x.w + 2 * q;
                        for (dr, dq) in [(0, 1), (1, 0), (1, 1)] {
                            let j = base + (2 * r + dr) * x.w + 2 * q + dq;
                            if xi[j] > xi[best] {
                                best = j;
                            }
                        }
                        yi[(c * oh + r) * ow + q] = xi[best];
                        if let Some(a) = argmax.as_deref_mut() {
                            a[k] = best as u32;
                        }
                        k += 1;
                    }
                }
            }
        }
        y
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        Self::pool(x, None)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut argmax = vec![0u32; x.n * x.c * (x.h / 2) * (x.w / 2)];
        let y = Self::pool(x, Some(&mut argmax));
        self.cache = Some((argmax, x.shape()));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (argmax, [n, c, h, w]) = self.cache.take().expect("backward without forward_train");
        let mut dx = Tensor::zeros(n, c, h, w);
        let per = dy.image_len();
        for i in 0..n {
            let src = dy.image(i);
            let dst = dx.image_mut(i);
            for (j, &g) in src.iter().enumerate() {
                dst[argmax[i * per + j] as usize] += g;
            }
        }
        dx
    }
}

/// Parallel dilated convolutions over one input, concatenated along channels.
#[derive(Debug, Clone)]
pub struct DilatedStack {
    pub branches: Vec<ConvBnRelu>,
}

impl DilatedStack {
    pub fn new(in_ch: usize, filters: usize, kernel: usize, dilations: &[usize], rng: &mut impl Rng) -> Self {
        Self { branches: dilations.iter().map(|&d| ConvBnRelu::new(in_ch, filters, kernel, d, rng)).collect() }
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.conv.out_ch).sum()
    }

    fn concat(parts: Vec<Tensor>) -> Tensor {
        let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
        let c = parts.iter().map(|t| t.c).sum();
        let mut y = Tensor::zeros(n, c, h, w);
        for i in 0..n {
            let dst = y.image_mut(i);
            let mut off = 0;
            for t in &parts {
                let src = t.image(i);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        y
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        Self::concat(self.branches.iter().map(|b| b.infer(x)).collect())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        Self::concat(self.branches.iter_mut().map(|b| b.forward_train(x)).collect())
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx: Option<Tensor> = None;
        let mut ch_off = 0;
        for b in &mut self.branches {
            let bc = b.conv.out_ch;
            let mut part = Tensor::zeros(dy.n, bc, dy.h, dy.w);
            let len = part.image_len();
            for i in 0..dy.n {
                let src = &dy.image(i)[ch_off * dy.plane()..ch_off * dy.plane() + len];
                part.image_mut(i).copy_from_slice(src);
            }
            ch_off += bc;
            let g = b.backward(&part);
            match &mut dx {
                None => dx = Some(g),
                Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, v)| *a += v),
            }
        }
        dx.expect("at least one branch")
    }
}

/// Pointwise convolution with bias followed by a sigmoid; no normalization.
#[derive(Debug, Clone)]
pub struct SigmoidHead {
    pub conv: Conv2d,
    cache: Option<(Tensor, Tensor)>,
}

impl SigmoidHead {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Conv2d::new(in_ch, out_ch, 1, 1, true, rng);
        // unit-gain init keeps the initial sigmoid away from saturation
        let std = (1.0 / in_ch as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        conv.weight.value.iter_mut().for_each(|w| *w = normal.sample(rng));
        Self { conv, cache: None }
    }

    fn sigmoid(t: &mut Tensor) {
        t.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.conv.apply(x);
        Self::sigmoid(&mut y);
        y
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.cache = Some((x.clone(), y.clone()));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x, y) = self.cache.take().expect("backward without forward_train");
        let mut dz = dy.clone();
        dz.data.iter_mut().zip(&y.data).for_each(|(d, &s)| *d *= s * (1.0 - s));
        self.conv.backward(&x, &dz)
    }
}
