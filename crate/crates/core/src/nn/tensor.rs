use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Dense `N×C×H×W` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.image_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Pack interleaved images into a planar batch. All images must share one shape.
    pub fn from_images(images: &[&ImageTensor]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w, c) = first.dims();
        let mut t = Tensor::zeros(images.len(), c, h, w);
        for (i, img) in images.iter().enumerate() {
            if img.dims() != (h, w, c) {
                return Err(Error::Shape(format!(
                    "batch image {i} is {:?}, expected {:?}",
                    img.dims(),
                    (h, w, c)
                )));
            }
            let dst = t.image_mut(i);
            let src = img.as_slice();
            for p in 0..h * w {
                for ch in 0..c {
                    dst[ch * h * w + p] = src[p * c + ch];
                }
            }
        }
        Ok(t)
    }

    pub fn to_image(&self, i: usize) -> ImageTensor {
        let src = self.image(i);
        let plane = self.plane();
        let mut data = vec![0.0; src.len()];
        for p in 0..plane {
            for ch in 0..self.c {
                data[p * self.c + ch] = src[ch * plane + p];
            }
        }
        ImageTensor::from_vec(self.h, self.w, self.c, data).expect("consistent shape")
    }

    pub fn to_images(&self) -> Vec<ImageTensor> {
        (0..self.n).map(|i| self.to_image(i)).collect()
    }
}

/// A trainable parameter with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
