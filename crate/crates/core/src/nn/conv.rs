//! Gated (GLU) convolutions over channels-last `(time, freq, channels)` grids
//! with kernel (2, 3) and stride (1, 2).
//!
//! Time is causal: output frame `t` sees input frames `t - 1` and `t`, with
//! the frame before 0 taken as zeros.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use super::param::{sigmoid, standard, Module, Param};
use crate::error::{PaecError, Result};

pub const KT: usize = 2;
pub const KF: usize = 3;
pub const STRIDE_F: usize = 2;

pub fn conv_out_bins(f_in: usize) -> usize {
    (f_in - KF) / STRIDE_F + 1
}

pub fn trans_out_bins(f_in: usize, out_pad: usize) -> usize {
    (f_in - 1) * STRIDE_F + KF + out_pad
}

/// GLU over the last axis: first half is the value, second half the gate.
fn glu(pre: &Array2<f64>, co: usize) -> Array2<f64> {
    let mut out = Array2::zeros((pre.nrows(), co));
    for (mut o, p) in out.outer_iter_mut().zip(pre.outer_iter()) {
        for c in 0..co {
            o[c] = p[c] * sigmoid(p[c + co]);
        }
    }
    out
}

fn glu_backward(pre: &Array2<f64>, dout: &Array2<f64>, co: usize) -> Array2<f64> {
    let mut dpre = Array2::zeros(pre.raw_dim());
    for ((mut d, p), g) in dpre.outer_iter_mut().zip(pre.outer_iter()).zip(dout.outer_iter()) {
        for c in 0..co {
            let sg = sigmoid(p[c + co]);
            d[c] = g[c] * sg;
            d[c + co] = g[c] * p[c] * sg * (1.0 - sg);
        }
    }
    dpre
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedConv {
    /// `(2 * co, KT * KF * ci)`, columns ordered `(kt, kf, ci)`.
    pub w: Param,
    /// `(1, 2 * co)`.
    pub b: Param,
    pub ci: usize,
    pub co: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
    in_dim: (usize, usize, usize),
}

impl GatedConv {
    pub fn new(ci: usize, co: usize, rng: &mut impl Rng) -> Self {
        let fan_in = KT * KF * ci;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Param::uniform(2 * co, fan_in, bound, rng),
            b: Param::uniform(1, 2 * co, bound, rng),
            ci,
            co,
        }
    }

    /// Causal gather: row `(t, fo)` holds `x[t - 1 + kt, 2 fo + kf, :]` for
    /// every tap.
    fn im2col(&self, x: &ArrayView3<f64>) -> Array2<f64> {
        let (t_n, f_in, ci) = x.dim();
        let f_out = conv_out_bins(f_in);
        let mut cols = Array2::zeros((t_n * f_out, KT * KF * ci));
        for t in 0..t_n {
            for kt in 0..KT {
                let Some(src_t) = (t + kt).checked_sub(1) else { continue };
                let src = x.index_axis(Axis(0), src_t);
                for fo in 0..f_out {
                    let mut row = cols.row_mut(t * f_out + fo);
                    for kf in 0..KF {
                        let off = (kt * KF + kf) * ci;
                        row.slice_mut(s![off..off + ci]).assign(&src.row(STRIDE_F * fo + kf));
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, ConvCache)> {
        let (t_n, f_in, ci) = x.dim();
        if ci != self.ci || f_in < KF {
            return Err(PaecError::shape(format!(
                "gated conv expects {} channels and >= {KF} bins, got {ci} channels x {f_in} bins",
                self.ci
            )));
        }
        let cols = self.im2col(&x);
        let pre = standard(cols.dot(&self.w.value.t()) + &self.b.value);
        let out = glu(&pre, self.co)
            .into_shape_with_order((t_n, conv_out_bins(f_in), self.co))
            .expect("contiguous");
        Ok((
            out,
            ConvCache {
                cols,
                pre,
                in_dim: (t_n, f_in, ci),
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvCache, dout: ArrayView3<f64>) -> Array3<f64> {
        let (t_n, f_in, ci) = cache.in_dim;
        let f_out = conv_out_bins(f_in);
        let dout = dout
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_n * f_out, self.co))
            .expect("contiguous");
        let dpre = glu_backward(&cache.pre, &dout, self.co);
        self.w.grad += &dpre.t().dot(&cache.cols);
        self.b.grad += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = standard(dpre.dot(&self.w.value));
        let mut dx = Array3::zeros((t_n, f_in, ci));
        for t in 0..t_n {
            for kt in 0..KT {
                let Some(src_t) = (t + kt).checked_sub(1) else { continue };
                let mut dsrc = dx.index_axis_mut(Axis(0), src_t);
                for fo in 0..f_out {
                    let row = dcols.row(t * f_out + fo);
                    for kf in 0..KF {
                        let off = (kt * KF + kf) * ci;
                        let mut dst = dsrc.row_mut(STRIDE_F * fo + kf);
                        dst += &row.slice(s![off..off + ci]);
                    }
                }
            }
        }
        dx
    }
}

impl Module for GatedConv {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

/// Transposed counterpart: frequency is upsampled by the stride, time stays
/// causal (frames `t - 1` and `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatedTransConv {
    /// `(KF * 2 * co, KT * ci)`; rows ordered `(kf, channel)`, columns `(kt, ci)`.
    pub w: Param,
    /// `(1, 2 * co)`.
    pub b: Param,
    pub ci: usize,
    pub co: usize,
    pub out_pad: usize,
}

#[derive(Debug, Clone)]
pub struct TransConvCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
    in_dim: (usize, usize, usize),
}

impl GatedTransConv {
    pub fn new(ci: usize, co: usize, out_pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = KT * KF * ci;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Param::uniform(KF * 2 * co, KT * ci, bound, rng),
            b: Param::uniform(1, 2 * co, bound, rng),
            ci,
            co,
            out_pad,
        }
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, TransConvCache)> {
        let (t_n, f_in, ci) = x.dim();
        if ci != self.ci || f_in == 0 {
            return Err(PaecError::shape(format!(
                "transposed conv expects {} channels, got {ci} channels x {f_in} bins",
                self.ci
            )));
        }
        let f_out = trans_out_bins(f_in, self.out_pad);
        let c2 = 2 * self.co;
        let mut cols = Array2::zeros((t_n * f_in, KT * ci));
        for t in 0..t_n {
            for kt in 0..KT {
                let Some(src_t) = (t + kt).checked_sub(1) else { continue };
                cols.slice_mut(s![t * f_in..(t + 1) * f_in, kt * ci..(kt + 1) * ci])
                    .assign(&x.index_axis(Axis(0), src_t));
            }
        }
        let y = standard(cols.dot(&self.w.value.t()));
        let mut pre = Array2::zeros((t_n * f_out, c2));
        pre += &self.b.value;
        for t in 0..t_n {
            for fi in 0..f_in {
                let src = y.row(t * f_in + fi);
                for kf in 0..KF {
                    let mut dst = pre.row_mut(t * f_out + STRIDE_F * fi + kf);
                    dst += &src.slice(s![kf * c2..(kf + 1) * c2]);
                }
            }
        }
        let out = glu(&pre, self.co)
            .into_shape_with_order((t_n, f_out, self.co))
            .expect("contiguous");
        Ok((
            out,
            TransConvCache {
                cols,
                pre,
                in_dim: (t_n, f_in, ci),
            },
        ))
    }

    pub fn backward(&mut self, cache: &TransConvCache, dout: ArrayView3<f64>) -> Array3<f64> {
        let (t_n, f_in, ci) = cache.in_dim;
        let f_out = trans_out_bins(f_in, self.out_pad);
        let c2 = 2 * self.co;
        let dout = dout
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_n * f_out, self.co))
            .expect("contiguous");
        let dpre = glu_backward(&cache.pre, &dout, self.co);
        self.b.grad += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dy = Array2::zeros((t_n * f_in, KF * c2));
        for t in 0..t_n {
            for fi in 0..f_in {
                let mut dst = dy.row_mut(t * f_in + fi);
                for kf in 0..KF {
                    dst.slice_mut(s![kf * c2..(kf + 1) * c2])
                        .assign(&dpre.row(t * f_out + STRIDE_F * fi + kf));
                }
            }
        }
        self.w.grad += &dy.t().dot(&cache.cols);
        let dcols = standard(dy.dot(&self.w.value));
        let mut dx = Array3::zeros((t_n, f_in, ci));
        for t in 0..t_n {
            for kt in 0..KT {
                let Some(src_t) = (t + kt).checked_sub(1) else { continue };
                let mut d = dx.index_axis_mut(Axis(0), src_t);
                d += &dcols.slice(s![t * f_in..(t + 1) * f_in, kt * ci..(kt + 1) * ci]);
            }
        }
        dx
    }
}

impl Module for GatedTransConv {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}
