//! Pooling layers: 2×2 max pooling and global average pooling.

use ndarray::{Array2, Array3, Array4};

/// 2×2 max pooling with stride 2; trailing odd rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    argmax: Option<Vec<[usize; 4]>>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Array4::<f64>::zeros((n, c, ho, wo));
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for s in 0..n {
            for ch in 0..c {
                for hi in 0..ho {
                    for wi in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = [s, ch, 2 * hi, 2 * wi];
                        for dh in 0..2 {
                            for dw in 0..2 {
                                let v = x[[s, ch, 2 * hi + dh, 2 * wi + dw]];
                                if v > best {
                                    best = v;
                                    best_idx = [s, ch, 2 * hi + dh, 2 * wi + dw];
                                }
                            }
                        }
                        out[[s, ch, hi, wi]] = best;
                        argmax.push(best_idx);
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_dim = (n, c, h, w);
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let argmax = self.argmax.as_ref().expect("forward before backward");
        let mut dx = Array4::<f64>::zeros(self.in_dim);
        for (flat, &idx) in dy.iter().zip(argmax.iter()) {
            dx[idx] += flat;
        }
        dx
    }
}

/// Mean over the time axis: (batch, channels, time) → (batch, channels).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool1d {
    t: usize,
}

impl GlobalAvgPool1d {
    pub fn forward(&mut self, x: &Array3<f64>) -> Array2<f64> {
        let (n, c, t) = x.dim();
        self.t = t;
        let mut out = Array2::<f64>::zeros((n, c));
        for s in 0..n {
            for ch in 0..c {
                let mut acc = 0.0;
                for ti in 0..t {
                    acc += x[[s, ch, ti]];
                }
                out[[s, ch]] = acc / t as f64;
            }
        }
        out
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array3<f64> {
        let (n, c) = dy.dim();
        let scale = 1.0 / self.t as f64;
        Array3::from_shape_fn((n, c, self.t), |(s, ch, _)| dy[[s, ch]] * scale)
    }
}

/// Mean over the spatial axes: (batch, channels, h, w) → (batch, channels).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool2d {
    hw: (usize, usize),
}

impl GlobalAvgPool2d {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        self.hw = (h, w);
        let scale = 1.0 / (h * w) as f64;
        let mut out = Array2::<f64>::zeros((n, c));
        for s in 0..n {
            for ch in 0..c {
                let mut acc = 0.0;
                for hi in 0..h {
                    for wi in 0..w {
                        acc += x[[s, ch, hi, wi]];
                    }
                }
                out[[s, ch]] = acc * scale;
            }
        }
        out
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array4<f64> {
        let (n, c) = dy.dim();
        let (h, w) = self.hw;
        let scale = 1.0 / (h * w) as f64;
        Array4::from_shape_fn((n, c, h, w), |(s, ch, _, _)| dy[[s, ch]] * scale)
    }
}
