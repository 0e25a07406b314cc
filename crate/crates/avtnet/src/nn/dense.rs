//! Fully connected layer and the softmax cross-entropy head.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{bias_init, he_init, Act, Module, Param};

/// `y = act(x W + b)` on a (batch, features) matrix.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    act: Act,
    cache_x: Option<Array2<f64>>,
    cache_pre: Option<Array2<f64>>,
}

impl Dense {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, act: Act) -> Self {
        Self {
            w: he_init(rng, &[d_in, d_out], d_in),
            b: bias_init(rng, d_out),
            act,
            cache_x: None,
            cache_pre: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.w.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.w.shape()[1]
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.b.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut pre = x.dot(&w);
        pre += &b;
        self.cache_x = Some(x.clone());
        let out = match self.act {
            Act::Linear => pre.clone(),
            Act::Relu => pre.mapv(|v| v.max(0.0)),
        };
        self.cache_pre = Some(pre);
        out
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let pre = self.cache_pre.as_ref().unwrap();
        let dpre = match self.act {
            Act::Linear => dy.clone(),
            Act::Relu => {
                let mut d = dy.clone();
                ndarray::Zip::from(&mut d).and(pre).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
                d
            }
        };
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let dx = dpre.dot(&w.t());
        let dw = x.t().dot(&dpre);
        let db: Array1<f64> = dpre.sum_axis(Axis(0));
        self.w.g += &dw.into_dyn();
        self.b.g += &db.into_dyn();
        dx
    }
}

impl Module for Dense {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}w"), &mut self.w);
        f(format!("{prefix}b"), &mut self.b);
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean sparse categorical cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[u32]) -> (f64, Array2<f64>) {
    let k = logits.nrows();
    assert_eq!(labels.len(), k);
    let probs = softmax(logits);
    let inv_k = 1.0 / k as f64;
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= (probs[[i, y as usize]].max(1e-300)).ln();
        dlogits[[i, y as usize]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v * inv_k);
    (loss * inv_k, dlogits)
}
