//! Normalization layers: row-wise L2 normalization, layer norm, batch norm.

use ndarray::{Array1, Array2, Axis};

use super::{Module, Param};

const L2_EPS: f64 = 1e-12;

/// Row-wise `x / sqrt(|x|^2 + eps)`. The epsilon keeps the all-zero feature
/// vector (a missing modality pushed through zeroed weights) finite.
#[derive(Debug, Clone, Default)]
pub struct L2Normalize {
    cache_x: Option<Array2<f64>>,
    cache_norm: Option<Array1<f64>>,
}

impl L2Normalize {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let norms: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r) + L2_EPS).sqrt())
            .collect();
        let mut out = x.clone();
        for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
            row.mapv_inplace(|v| v / n);
        }
        self.cache_x = Some(x.clone());
        self.cache_norm = Some(norms);
        out
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let norms = self.cache_norm.as_ref().unwrap();
        let mut dx = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let n = norms[i];
            let xi = x.row(i);
            let dyi = dy.row(i);
            let dot = xi.dot(&dyi);
            for j in 0..x.ncols() {
                dx[[i, j]] = dyi[j] / n - xi[j] * dot / (n * n * n);
            }
        }
        dx
    }

    /// Stateless forward for inference-only paths.
    pub fn apply(x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let n = (row.dot(&row) + L2_EPS).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        out
    }
}

/// Layer normalization over the feature axis of a (rows, features) matrix
/// with learnt gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>, // (xhat, inv_std)
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(d).into_dyn()),
            beta: Param::zeros(&[d]),
            eps: 1e-6,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let gamma = self.gamma.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Array1::zeros(x.nrows());
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let row = x.row(i);
            let mu = row.sum() / d;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            for j in 0..x.ncols() {
                let h = (x[[i, j]] - mu) * istd;
                xhat[[i, j]] = h;
                out[[i, j]] = gamma[j] * h + beta[j];
            }
        }
        self.cache = Some((xhat, inv_std));
        out
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.as_ref().expect("forward before backward");
        let d = dy.ncols() as f64;
        let gamma = self.gamma.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut dx = Array2::zeros(dy.raw_dim());
        let mut dgamma = Array1::<f64>::zeros(dy.ncols());
        let mut dbeta = Array1::<f64>::zeros(dy.ncols());
        for i in 0..dy.nrows() {
            let mut sum_dh = 0.0;
            let mut sum_dh_xhat = 0.0;
            for j in 0..dy.ncols() {
                let dh = dy[[i, j]] * gamma[j];
                sum_dh += dh;
                sum_dh_xhat += dh * xhat[[i, j]];
                dgamma[j] += dy[[i, j]] * xhat[[i, j]];
                dbeta[j] += dy[[i, j]];
            }
            for j in 0..dy.ncols() {
                let dh = dy[[i, j]] * gamma[j];
                dx[[i, j]] = inv_std[i] * (dh - sum_dh / d - xhat[[i, j]] * sum_dh_xhat / d);
            }
        }
        self.gamma.g += &dgamma.into_dyn();
        self.beta.g += &dbeta.into_dyn();
        dx
    }
}

impl Module for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}gamma"), &mut self.gamma);
        f(format!("{prefix}beta"), &mut self.beta);
    }
}

/// Batch normalization over the batch axis with running statistics for
/// evaluation mode.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    // running stats are visited as (gradient-free) params so checkpoints
    // carry them
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    eps: f64,
    pub training: bool,
    cache: Option<(Array2<f64>, Array1<f64>)>, // (xhat, inv_std)
}

impl BatchNorm1d {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(d).into_dyn()),
            beta: Param::zeros(&[d]),
            running_mean: Param::zeros(&[d]),
            running_var: Param::new(Array1::ones(d).into_dyn()),
            momentum: 0.9,
            eps: 1e-5,
            training: true,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows() as f64;
        let gamma = self.gamma.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        if self.training {
            let mean = x.mean_axis(Axis(0)).unwrap();
            let mut var = Array1::<f64>::zeros(x.ncols());
            for j in 0..x.ncols() {
                var[j] = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            }
            let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let mut xhat = Array2::zeros(x.raw_dim());
            let mut out = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    let h = (x[[i, j]] - mean[j]) * inv_std[j];
                    xhat[[i, j]] = h;
                    out[[i, j]] = gamma[j] * h + beta[j];
                }
            }
            for j in 0..x.ncols() {
                self.running_mean.w[[j]] =
                    self.running_mean.w[[j]] * self.momentum + mean[j] * (1.0 - self.momentum);
                self.running_var.w[[j]] =
                    self.running_var.w[[j]] * self.momentum + var[j] * (1.0 - self.momentum);
            }
            self.cache = Some((xhat, inv_std));
            out
        } else {
            let mut out = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    let h = (x[[i, j]] - self.running_mean.w[[j]])
                        / (self.running_var.w[[j]] + self.eps).sqrt();
                    out[[i, j]] = gamma[j] * h + beta[j];
                }
            }
            out
        }
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.as_ref().expect("training forward before backward");
        let n = dy.nrows() as f64;
        let gamma = self.gamma.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut dx = Array2::zeros(dy.raw_dim());
        let mut dgamma = Array1::<f64>::zeros(dy.ncols());
        let mut dbeta = Array1::<f64>::zeros(dy.ncols());
        for j in 0..dy.ncols() {
            let mut sum_dh = 0.0;
            let mut sum_dh_xhat = 0.0;
            for i in 0..dy.nrows() {
                let dh = dy[[i, j]] * gamma[j];
                sum_dh += dh;
                sum_dh_xhat += dh * xhat[[i, j]];
                dgamma[j] += dy[[i, j]] * xhat[[i, j]];
                dbeta[j] += dy[[i, j]];
            }
            for i in 0..dy.nrows() {
                let dh = dy[[i, j]] * gamma[j];
                dx[[i, j]] = inv_std[j] * (dh - sum_dh / n - xhat[[i, j]] * sum_dh_xhat / n);
            }
        }
        self.gamma.g += &dgamma.into_dyn();
        self.beta.g += &dbeta.into_dyn();
        dx
    }
}

impl Module for BatchNorm1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}gamma"), &mut self.gamma);
        f(format!("{prefix}beta"), &mut self.beta);
        f(format!("{prefix}running_mean"), &mut self.running_mean);
        f(format!("{prefix}running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn l2_rows_have_unit_norm() {
        let x = array![[3.0, 4.0], [0.0, 2.0]];
        let y = L2Normalize::apply(&x);
        for row in y.rows() {
            assert_abs_diff_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn l2_of_zero_row_is_finite() {
        let x = array![[0.0, 0.0, 0.0]];
        let y = L2Normalize::apply(&x);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn l2_backward_matches_finite_difference() {
        let x = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.5]];
        let mut l2 = L2Normalize::new();
        let y = l2.forward(&x);
        let dy = y.mapv(|v| 2.0 * v + 1.0);
        let dx = l2.backward(&dy);
        let f = |x: &Array2<f64>| {
            let y = L2Normalize::apply(x);
            y.mapv(|v| v * v + v).sum()
        };
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                assert_abs_diff_eq!(dx[[i, j]], (f(&xp) - f(&xm)) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn layernorm_rows_are_standardized_at_identity_params() {
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let mut ln = LayerNorm::new(4);
        let y = ln.forward(&x);
        assert_abs_diff_eq!(y.sum(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm1d::new(2);
        let x = array![[1.0, 10.0], [3.0, 30.0]];
        for _ in 0..200 {
            bn.forward(&x);
        }
        bn.training = false;
        let y = bn.forward(&array![[2.0, 20.0]]);
        // the midpoint of the training batch normalizes to ~0
        assert_abs_diff_eq!(y[[0, 0]], 0.0, epsilon = 1e-2);
        assert_abs_diff_eq!(y[[0, 1]], 0.0, epsilon = 1e-2);
    }
}
