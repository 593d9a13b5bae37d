//! Times forward and training steps for a model configuration.
//!
//! `cargo run --release --example step_timing -- <side> <base_width> <sdc_stacks> <batch>`

use std::time::Instant;

use rand::{Rng, SeedableRng};
use ssae::model::{ModelConfig, Network};
use ssae::nn::{Adam, AdamConfig, Tensor};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let side = *args.first().unwrap_or(&128);
    let width = *args.get(1).unwrap_or(&8);
    let stacks = *args.get(2).unwrap_or(&2);
    let batch = *args.get(3).unwrap_or(&4);
    let cfg = ModelConfig { input_side: side, base_width: width, sdc_stacks: stacks, ..ModelConfig::default() };
    let mut net = Network::build(&cfg).unwrap();
    println!("parameters: {}", net.param_count());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut x = Tensor::zeros(batch, 3, side, side);
    x.data.iter_mut().for_each(|v| *v = rng.random());

    let t = Instant::now();
    let _ = net.forward(&x).unwrap();
    println!("eval forward: {:.3}s", t.elapsed().as_secs_f64());

    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..3 {
        let t = Instant::now();
        net.zero_grad();
        let y = net.forward_train(&x).unwrap();
        let t_fwd = t.elapsed().as_secs_f64();
        net.backward(&y);
        adam.update(&mut net.params_mut());
        println!("train step: {:.3}s (forward {:.3}s)", t.elapsed().as_secs_f64(), t_fwd);
    }
}
