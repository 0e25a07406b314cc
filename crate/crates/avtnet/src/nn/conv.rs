//! 1-D and 2-D convolutions, stride 1, valid padding, via im2col + matmul.
//! The per-sample column matrices are built and consumed in parallel; the
//! parameter-gradient reduction stays sequential so results are reproducible.
//!
//! Column matrices are rebuilt from the cached input during backward instead
//! of being cached themselves, and the ReLU state is kept as a byte mask;
//! both choices trade a little recompute for far less memory traffic, which
//! dominates at desk scale.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{bias_init, he_init, Act, Module, Param};

/// Conv1D over (batch, channels, time) with ReLU or linear activation.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param, // (c_out, c_in * k)
    pub b: Param, // (c_out)
    c_in: usize,
    c_out: usize,
    k: usize,
    act: Act,
    cache: Option<(Array3<f64>, Option<Array3<bool>>)>, // input, relu mask
}

impl Conv1d {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize, act: Act) -> Self {
        Self {
            w: he_init(rng, &[c_out, c_in * k], c_in * k),
            b: bias_init(rng, c_out),
            c_in,
            c_out,
            k,
            act,
            cache: None,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        t + 1 - self.k
    }

    fn im2col(&self, xs: &[f64], t: usize, t_out: usize) -> Array2<f64> {
        let k = self.k;
        let patch = self.c_in * k;
        let mut cols = Array2::<f64>::zeros((t_out, patch));
        let cs = cols.as_slice_mut().unwrap();
        for ti in 0..t_out {
            let row = ti * patch;
            for c in 0..self.c_in {
                cs[row + c * k..row + c * k + k].copy_from_slice(&xs[c * t + ti..c * t + ti + k]);
            }
        }
        cols
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (n, c_in, t) = x.dim();
        assert_eq!(c_in, self.c_in, "conv1d channel mismatch");
        assert!(t >= self.k, "conv1d input shorter than kernel");
        let t_out = self.out_len(t);
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.b.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let per_sample: Vec<Array2<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let xs = x.index_axis(Axis(0), s);
                let cols = self.im2col(xs.as_slice().unwrap(), t, t_out);
                let mut y = w.dot(&cols.t()); // (c_out, t_out)
                for (mut row, &bv) in y.rows_mut().into_iter().zip(b.iter()) {
                    row += bv;
                }
                y
            })
            .collect();

        let mut out = Array3::<f64>::zeros((n, self.c_out, t_out));
        for (s, y) in per_sample.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), s).assign(&y);
        }
        let mask = match self.act {
            Act::Linear => None,
            Act::Relu => {
                let m = out.mapv(|v| v > 0.0);
                out.mapv_inplace(|v| v.max(0.0));
                Some(m)
            }
        };
        self.cache = Some((x.clone(), mask));
        out
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let (x, mask) = self.cache.as_ref().expect("forward before backward");
        let (n, c_out, t_out) = dy.dim();
        assert_eq!(c_out, self.c_out);
        let t_in = t_out + self.k - 1;
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let k = self.k;
        let patch = self.c_in * k;

        let parts: Vec<(Array2<f64>, Array1<f64>, Array2<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                // (c_out, t_out) with the activation gradient applied
                let mut dys = dy.index_axis(Axis(0), s).to_owned();
                if let Some(m) = mask {
                    let ms = m.index_axis(Axis(0), s);
                    ndarray::Zip::from(&mut dys).and(&ms).for_each(|d, &on| {
                        if !on {
                            *d = 0.0;
                        }
                    });
                }
                let xs = x.index_axis(Axis(0), s);
                let cols = self.im2col(xs.as_slice().unwrap(), t_in, t_out);
                let dw = dys.dot(&cols); // (c_out, patch)
                let db = dys.sum_axis(Axis(1));
                let dcols = dys.t().dot(&w); // (t_out, patch)
                let dc = dcols.as_slice().unwrap();
                let mut dx = Array2::<f64>::zeros((self.c_in, t_in));
                let dxs = dx.as_slice_mut().unwrap();
                for ti in 0..t_out {
                    let row = ti * patch;
                    for c in 0..self.c_in {
                        let base = c * t_in + ti;
                        for dk in 0..k {
                            dxs[base + dk] += dc[row + c * k + dk];
                        }
                    }
                }
                (dw, db, dx)
            })
            .collect();

        let mut dx_all = Array3::<f64>::zeros((n, self.c_in, t_in));
        for (s, (dw, db, dx)) in parts.into_iter().enumerate() {
            self.w.g += &dw.into_dyn();
            self.b.g += &db.into_dyn();
            dx_all.index_axis_mut(Axis(0), s).assign(&dx);
        }
        dx_all
    }
}

impl Module for Conv1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}w"), &mut self.w);
        f(format!("{prefix}b"), &mut self.b);
    }
}

/// Conv2D over (batch, channels, height, width).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param, // (c_out, c_in * kh * kw)
    pub b: Param,
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    act: Act,
    cache: Option<(Array4<f64>, Option<Array4<bool>>)>,
}

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        act: Act,
    ) -> Self {
        let fan = c_in * kh * kw;
        Self {
            w: he_init(rng, &[c_out, fan], fan),
            b: bias_init(rng, c_out),
            c_in,
            c_out,
            kh,
            kw,
            act,
            cache: None,
        }
    }

    fn im2col(&self, xs: &[f64], h: usize, w_in: usize, h_out: usize, w_out: usize) -> Array2<f64> {
        let (kh, kw) = (self.kh, self.kw);
        let patch = self.c_in * kh * kw;
        let mut cols = Array2::<f64>::zeros((h_out * w_out, patch));
        let cs = cols.as_slice_mut().unwrap();
        for hi in 0..h_out {
            for wi in 0..w_out {
                let row = (hi * w_out + wi) * patch;
                let mut idx = row;
                for c in 0..self.c_in {
                    let plane = c * h * w_in;
                    for dh in 0..kh {
                        let src = plane + (hi + dh) * w_in + wi;
                        cs[idx..idx + kw].copy_from_slice(&xs[src..src + kw]);
                        idx += kw;
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c_in, h, w_in) = x.dim();
        assert_eq!(c_in, self.c_in, "conv2d channel mismatch");
        let h_out = h + 1 - self.kh;
        let w_out = w_in + 1 - self.kw;
        let wmat = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.b.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let per_sample: Vec<Array2<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let xs = x.index_axis(Axis(0), s);
                let cols = self.im2col(xs.as_slice().unwrap(), h, w_in, h_out, w_out);
                let mut y = wmat.dot(&cols.t()); // (c_out, h_out * w_out)
                for (mut row, &bv) in y.rows_mut().into_iter().zip(b.iter()) {
                    row += bv;
                }
                y
            })
            .collect();

        let mut out = Array4::<f64>::zeros((n, self.c_out, h_out, w_out));
        for (s, y) in per_sample.into_iter().enumerate() {
            let y3 = y.into_shape_with_order((self.c_out, h_out, w_out)).unwrap();
            out.index_axis_mut(Axis(0), s).assign(&y3);
        }
        let mask = match self.act {
            Act::Linear => None,
            Act::Relu => {
                let m = out.mapv(|v| v > 0.0);
                out.mapv_inplace(|v| v.max(0.0));
                Some(m)
            }
        };
        self.cache = Some((x.clone(), mask));
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let (x, mask) = self.cache.as_ref().expect("forward before backward");
        let (n, c_out, h_out, w_out) = dy.dim();
        assert_eq!(c_out, self.c_out);
        let h_in = h_out + self.kh - 1;
        let w_in = w_out + self.kw - 1;
        let wmat = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let (kh, kw) = (self.kh, self.kw);
        let patch = self.c_in * kh * kw;
        let spatial = h_out * w_out;

        let parts: Vec<(Array2<f64>, Array1<f64>, Array3<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut dys = dy
                    .index_axis(Axis(0), s)
                    .to_owned()
                    .into_shape_with_order((c_out, spatial))
                    .unwrap();
                if let Some(m) = mask {
                    let ms = m.index_axis(Axis(0), s);
                    let ms = ms.to_shape((c_out, spatial)).unwrap();
                    ndarray::Zip::from(&mut dys).and(&ms).for_each(|d, &on| {
                        if !on {
                            *d = 0.0;
                        }
                    });
                }
                let xs = x.index_axis(Axis(0), s);
                let cols = self.im2col(xs.as_slice().unwrap(), h_in, w_in, h_out, w_out);
                let dw = dys.dot(&cols); // (c_out, patch)
                let db = dys.sum_axis(Axis(1));
                let dcols = dys.t().dot(&wmat); // (spatial, patch)
                let dc = dcols.as_slice().unwrap();
                let mut dx = Array3::<f64>::zeros((self.c_in, h_in, w_in));
                let dxs = dx.as_slice_mut().unwrap();
                for hi in 0..h_out {
                    for wi in 0..w_out {
                        let row = (hi * w_out + wi) * patch;
                        let mut idx = row;
                        for c in 0..self.c_in {
                            let plane = c * h_in * w_in;
                            for dh in 0..kh {
                                let dst = plane + (hi + dh) * w_in + wi;
                                for dk in 0..kw {
                                    dxs[dst + dk] += dc[idx + dk];
                                }
                                idx += kw;
                            }
                        }
                    }
                }
                (dw, db, dx)
            })
            .collect();

        let mut dx_all = Array4::<f64>::zeros((n, self.c_in, h_in, w_in));
        for (s, (dw, db, dx)) in parts.into_iter().enumerate() {
            self.w.g += &dw.into_dyn();
            self.b.g += &db.into_dyn();
            dx_all.index_axis_mut(Axis(0), s).assign(&dx);
        }
        dx_all
    }
}

impl Module for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}w"), &mut self.w);
        f(format!("{prefix}b"), &mut self.b);
    }
}
