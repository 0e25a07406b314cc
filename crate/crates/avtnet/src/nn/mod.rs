//! Minimal f64 neural-network layers with hand-written backprop.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` both returns the input gradient and accumulates parameter
//! gradients. Layers expose their parameters through [`Module::visit_params`]
//! so the optimizer and the checkpoint writer can walk a model uniformly.

pub mod attention;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One trainable tensor with its gradient and Adam state.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: ArrayD<f64>,
    pub g: ArrayD<f64>,
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

impl Param {
    pub fn new(w: ArrayD<f64>) -> Self {
        let g = ArrayD::zeros(w.raw_dim());
        let m = g.clone();
        let v = g.clone();
        Self { w, g, m, v }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }
}

/// Uniform He-style init over fan-in.
pub fn he_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Param {
    let bound = (6.0 / fan_in as f64).sqrt();
    let w = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound));
    Param::new(w)
}

/// Small random bias init; keeps the all-zero input (the shared missing
/// modality latent point) from collapsing to an exactly-zero embedding.
pub fn bias_init(rng: &mut ChaCha8Rng, n: usize) -> Param {
    let w = ArrayD::from_shape_fn(IxDyn(&[n]), |_| rng.gen_range(-0.01..0.01));
    Param::new(w)
}

/// Anything that owns parameters. `visit_params` must enumerate them in a
/// stable order under stable names.
pub trait Module {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }
}

/// Adam optimizer; state lives inside each [`Param`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// One update over every parameter of `module`. Call once per step.
    pub fn step(&mut self, module: &mut dyn Module) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        module.visit_params("", &mut |_, p| {
            ndarray::Zip::from(&mut p.w)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}

/// Activation applied inside a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Linear,
    Relu,
}
