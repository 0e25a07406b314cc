//! Multi-head self-attention and a single pre-norm transformer encoder block
//! over short token sequences (one token per modality).

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::dense::Dense;
use super::norm::LayerNorm;
use super::{he_init, Act, Module, Param};

/// Multi-head self-attention on (batch, tokens, width), no projection biases.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
    d: usize,
    heads: usize,
    cache: Option<MhaCache>,
    last_attn: Option<Array4<f64>>, // (batch, heads, tokens, tokens)
}

#[derive(Debug, Clone)]
struct MhaCache {
    x: Array3<f64>,
    q: Array3<f64>,
    k: Array3<f64>,
    v: Array3<f64>,
    concat: Array3<f64>, // pre-Wo head outputs
}

impl MultiHeadSelfAttention {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        assert_eq!(d % heads, 0, "width must divide evenly across heads");
        Self {
            wq: he_init(rng, &[d, d], d),
            wk: he_init(rng, &[d, d], d),
            wv: he_init(rng, &[d, d], d),
            wo: he_init(rng, &[d, d], d),
            d,
            heads,
            cache: None,
            last_attn: None,
        }
    }

    /// Attention weights of the last forward pass, (batch, heads, s, s).
    pub fn last_attention(&self) -> Option<&Array4<f64>> {
        self.last_attn.as_ref()
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (n, seq, d) = x.dim();
        assert_eq!(d, self.d);
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let wq = self.wq.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let wk = self.wk.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let wv = self.wv.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let wo = self.wo.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();

        let mut q = Array3::zeros((n, seq, d));
        let mut k = Array3::zeros((n, seq, d));
        let mut v = Array3::zeros((n, seq, d));
        let mut concat = Array3::zeros((n, seq, d));
        let mut out = Array3::zeros((n, seq, d));
        let mut attn = Array4::zeros((n, self.heads, seq, seq));

        for si in 0..n {
            let xs = x.index_axis(Axis(0), si);
            let qs = xs.dot(&wq);
            let ks = xs.dot(&wk);
            let vs = xs.dot(&wv);
            let mut cat = Array2::<f64>::zeros((seq, d));
            for h in 0..self.heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let qh = qs.slice(cols);
                let kh = ks.slice(cols);
                let vh = vs.slice(cols);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|v| v * scale);
                // row-wise softmax
                for mut row in scores.rows_mut() {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                attn.slice_mut(s![si, h, .., ..]).assign(&scores);
                let oh = scores.dot(&vh);
                cat.slice_mut(cols).assign(&oh);
            }
            out.index_axis_mut(Axis(0), si).assign(&cat.dot(&wo));
            q.index_axis_mut(Axis(0), si).assign(&qs);
            k.index_axis_mut(Axis(0), si).assign(&ks);
            v.index_axis_mut(Axis(0), si).assign(&vs);
            concat.index_axis_mut(Axis(0), si).assign(&cat);
        }
        self.cache = Some(MhaCache {
            x: x.clone(),
            q,
            k,
            v,
            concat,
        });
        self.last_attn = Some(attn);
        out
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let attn = self.last_attn.as_ref().unwrap();
        let (n, seq, d) = dy.dim();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let wq = self.wq.w.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let wk = self.wk.w.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let wv = self.wv.w.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let wo = self.wo.w.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();

        let mut dwq = Array2::<f64>::zeros((d, d));
        let mut dwk = Array2::<f64>::zeros((d, d));
        let mut dwv = Array2::<f64>::zeros((d, d));
        let mut dwo = Array2::<f64>::zeros((d, d));
        let mut dx = Array3::<f64>::zeros((n, seq, d));

        for si in 0..n {
            let xs = cache.x.index_axis(Axis(0), si);
            let qs = cache.q.index_axis(Axis(0), si);
            let ks = cache.k.index_axis(Axis(0), si);
            let vs = cache.v.index_axis(Axis(0), si);
            let cat = cache.concat.index_axis(Axis(0), si);
            let dys = dy.index_axis(Axis(0), si);

            dwo += &cat.t().dot(&dys);
            let dcat = dys.dot(&wo.t());
            let mut dq = Array2::<f64>::zeros((seq, d));
            let mut dk_ = Array2::<f64>::zeros((seq, d));
            let mut dv = Array2::<f64>::zeros((seq, d));
            for h in 0..self.heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let a = attn.slice(s![si, h, .., ..]);
                let doh = dcat.slice(cols);
                let vh = vs.slice(cols);
                let qh = qs.slice(cols);
                let kh = ks.slice(cols);
                let da = doh.dot(&vh.t());
                dv.slice_mut(cols).assign(&a.t().dot(&doh));
                // softmax backward per row
                let mut dscores = Array2::<f64>::zeros((seq, seq));
                for i in 0..seq {
                    let dot: f64 = (0..seq).map(|j| da[[i, j]] * a[[i, j]]).sum();
                    for j in 0..seq {
                        dscores[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
                    }
                }
                dscores.mapv_inplace(|v| v * scale);
                dq.slice_mut(cols).assign(&dscores.dot(&kh));
                dk_.slice_mut(cols).assign(&dscores.t().dot(&qh));
            }
            dwq += &xs.t().dot(&dq);
            dwk += &xs.t().dot(&dk_);
            dwv += &xs.t().dot(&dv);
            let dxs = dq.dot(&wq.t()) + dk_.dot(&wk.t()) + dv.dot(&wv.t());
            dx.index_axis_mut(Axis(0), si).assign(&dxs);
        }
        self.wq.g += &dwq.into_dyn();
        self.wk.g += &dwk.into_dyn();
        self.wv.g += &dwv.into_dyn();
        self.wo.g += &dwo.into_dyn();
        dx
    }
}

impl Module for MultiHeadSelfAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}wq"), &mut self.wq);
        f(format!("{prefix}wk"), &mut self.wk);
        f(format!("{prefix}wv"), &mut self.wv);
        f(format!("{prefix}wo"), &mut self.wo);
    }
}

/// One pre-norm encoder block: `x + MHA(LN(x))` then `y + FFN(LN(y))`, with a
/// position-wise feed-forward of ReLU→linear dense layers.
#[derive(Debug, Clone)]
pub struct TransformerEncoderBlock {
    pub ln1: LayerNorm,
    pub mha: MultiHeadSelfAttention,
    pub ln2: LayerNorm,
    pub ff1: Dense,
    pub ff2: Dense,
    d: usize,
    seq: Option<usize>,
}

impl TransformerEncoderBlock {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, heads: usize, d_ff: usize) -> Self {
        Self {
            ln1: LayerNorm::new(d),
            mha: MultiHeadSelfAttention::new(rng, d, heads),
            ln2: LayerNorm::new(d),
            ff1: Dense::new(rng, d, d_ff, Act::Relu),
            ff2: Dense::new(rng, d_ff, d, Act::Linear),
            d,
            seq: None,
        }
    }

    pub fn attention(&self) -> Option<&Array4<f64>> {
        self.mha.last_attention()
    }

    fn to2d(x: &Array3<f64>) -> Array2<f64> {
        let (n, s_, d) = x.dim();
        x.to_owned()
            .into_shape_with_order((n * s_, d))
            .unwrap()
    }

    fn to3d(x: Array2<f64>, n: usize, s_: usize) -> Array3<f64> {
        let d = x.ncols();
        x.into_shape_with_order((n, s_, d)).unwrap()
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (n, s_, _) = x.dim();
        self.seq = Some(s_);
        let h1 = Self::to3d(self.ln1.forward(&Self::to2d(x)), n, s_);
        let y = x + &self.mha.forward(&h1);
        let h2 = self.ln2.forward(&Self::to2d(&y));
        let ff = self.ff2.forward(&self.ff1.forward(&h2));
        &y + &Self::to3d(ff, n, s_)
    }

    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let (n, s_, _) = dy.dim();
        let dff = self.ff1.backward(&self.ff2.backward(&Self::to2d(dy)));
        let dyy = dy + &Self::to3d(self.ln2.backward(&dff), n, s_);
        let dmha = self.mha.backward(&dyy);
        &dyy + &Self::to3d(self.ln1.backward(&Self::to2d(&dmha)), n, s_)
    }

    pub fn width(&self) -> usize {
        self.d
    }
}

impl Module for TransformerEncoderBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.ln1.visit_params(&format!("{prefix}ln1."), f);
        self.mha.visit_params(&format!("{prefix}mha."), f);
        self.ln2.visit_params(&format!("{prefix}ln2."), f);
        self.ff1.visit_params(&format!("{prefix}ff1."), f);
        self.ff2.visit_params(&format!("{prefix}ff2."), f);
    }
}
