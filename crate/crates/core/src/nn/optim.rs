use serde::{Deserialize, Serialize};

use super::tensor::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with per-parameter first and second moment buffers, indexed in visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn update(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let step_size = learning_rate * c2.sqrt() / c1;
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *w -= step_size * *mi / (vi.sqrt() + eps * c2.sqrt());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(vec![3.0, -2.0]);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() });
        for _ in 0..500 {
            p.grad = p.value.iter().map(|w| 2.0 * w).collect();
            adam.update(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|w| w.abs() < 1e-2), "{:?}", p.value);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(vec![1.0]);
        p.grad = vec![0.25];
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() });
        adam.update(&mut [&mut p]);
        assert!((p.value[0] - 0.99).abs() < 1e-6);
    }
}
