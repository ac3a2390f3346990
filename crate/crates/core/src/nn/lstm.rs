//! Batched LSTM over `(batch, length, features)` sequences with zero initial
//! state. Gate order is input, forget, cell, output.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use super::param::{sigmoid, standard, Module, Param};
use crate::error::{PaecError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `(4h, in)`.
    pub wx: Param,
    /// `(4h, h)`.
    pub wh: Param,
    /// `(1, 4h)`.
    pub b: Param,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    /// Activated gates per step, `(len, batch, 4h)`.
    gates: Array3<f64>,
    /// Cell states, index 0 is the zero initial state, `(len + 1, batch, h)`.
    c: Array3<f64>,
    /// Hidden states, same layout as `c`.
    h: Array3<f64>,
    dims: (usize, usize),
    reverse: bool,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = Param::uniform(1, 4 * hidden, bound, rng);
        // Start with the forget gate mostly open.
        b.value.slice_mut(s![0, hidden..2 * hidden]).mapv_inplace(|v| v + 1.0);
        Self {
            wx: Param::uniform(4 * hidden, input, bound, rng),
            wh: Param::uniform(4 * hidden, hidden, bound, rng),
            b,
            input,
            hidden,
        }
    }

    /// Runs along axis 1; `reverse` processes positions from last to first.
    pub fn forward(&self, x: ArrayView3<f64>, reverse: bool) -> Result<(Array3<f64>, LstmCache)> {
        let (batch, len, input) = x.dim();
        if input != self.input {
            return Err(PaecError::shape(format!(
                "lstm expects {} features, got {input}",
                self.input
            )));
        }
        let h_n = self.hidden;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * len, input))
            .expect("contiguous");
        let xw = standard(x2.dot(&self.wx.value.t()) + &self.b.value);
        let xw = xw.into_shape_with_order((batch, len, 4 * h_n)).expect("contiguous");
        let mut gates = Array3::<f64>::zeros((len, batch, 4 * h_n));
        let mut c = Array3::<f64>::zeros((len + 1, batch, h_n));
        let mut h = Array3::<f64>::zeros((len + 1, batch, h_n));
        let mut out = Array3::zeros((batch, len, h_n));
        let wh_t = self.wh.value.t();
        for step in 0..len {
            let pos = if reverse { len - 1 - step } else { step };
            let mut a: Array2<f64> = h.index_axis(Axis(0), step).dot(&wh_t);
            a += &xw.slice(s![.., pos, ..]);
            let (c_prev, mut c_next) = {
                let (lo, hi) = c.view_mut().split_at(Axis(0), step + 1);
                (lo.index_axis_move(Axis(0), step), hi.index_axis_move(Axis(0), 0))
            };
            let mut g = gates.index_axis_mut(Axis(0), step);
            let mut h_next = h.index_axis_mut(Axis(0), step + 1);
            for bi in 0..batch {
                for j in 0..h_n {
                    let i_g = sigmoid(a[[bi, j]]);
                    let f_g = sigmoid(a[[bi, h_n + j]]);
                    let c_g = a[[bi, 2 * h_n + j]].tanh();
                    let o_g = sigmoid(a[[bi, 3 * h_n + j]]);
                    let cell = f_g * c_prev[[bi, j]] + i_g * c_g;
                    c_next[[bi, j]] = cell;
                    h_next[[bi, j]] = o_g * cell.tanh();
                    g[[bi, j]] = i_g;
                    g[[bi, h_n + j]] = f_g;
                    g[[bi, 2 * h_n + j]] = c_g;
                    g[[bi, 3 * h_n + j]] = o_g;
                }
            }
            out.slice_mut(s![.., pos, ..]).assign(&h_next);
        }
        Ok((
            out,
            LstmCache {
                x: x2,
                gates,
                c,
                h,
                dims: (batch, len),
                reverse,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LstmCache, dout: ArrayView3<f64>) -> Array3<f64> {
        let (batch, len) = cache.dims;
        let h_n = self.hidden;
        let mut dxw = Array3::<f64>::zeros((batch, len, 4 * h_n));
        let mut dh_next = Array2::<f64>::zeros((batch, h_n));
        let mut dc_next = Array2::<f64>::zeros((batch, h_n));
        let mut da = Array2::<f64>::zeros((batch, 4 * h_n));
        for step in (0..len).rev() {
            let pos = if cache.reverse { len - 1 - step } else { step };
            let g = cache.gates.index_axis(Axis(0), step);
            let c_prev = cache.c.index_axis(Axis(0), step);
            let c_cur = cache.c.index_axis(Axis(0), step + 1);
            for bi in 0..batch {
                for j in 0..h_n {
                    let dh = dout[[bi, pos, j]] + dh_next[[bi, j]];
                    let (i_g, f_g, c_g, o_g) =
                        (g[[bi, j]], g[[bi, h_n + j]], g[[bi, 2 * h_n + j]], g[[bi, 3 * h_n + j]]);
                    let tc = c_cur[[bi, j]].tanh();
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[[bi, j]];
                    da[[bi, j]] = dc * c_g * i_g * (1.0 - i_g);
                    da[[bi, h_n + j]] = dc * c_prev[[bi, j]] * f_g * (1.0 - f_g);
                    da[[bi, 2 * h_n + j]] = dc * i_g * (1.0 - c_g * c_g);
                    da[[bi, 3 * h_n + j]] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[[bi, j]] = dc * f_g;
                }
            }
            self.wh.grad += &da.t().dot(&cache.h.index_axis(Axis(0), step));
            dh_next = da.dot(&self.wh.value);
            dxw.slice_mut(s![.., pos, ..]).assign(&da);
        }
        let dxw = dxw.into_shape_with_order((batch * len, 4 * h_n)).expect("contiguous");
        self.wx.grad += &dxw.t().dot(&cache.x);
        self.b.grad += &dxw.sum_axis(Axis(0)).insert_axis(Axis(0));
        standard(dxw.dot(&self.wx.value))
            .into_shape_with_order((batch, len, self.input))
            .expect("contiguous")
    }
}

impl Module for Lstm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("wx", &self.wx);
        f("wh", &self.wh);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("wx", &mut self.wx);
        f("wh", &mut self.wh);
        f("b", &mut self.b);
    }
}

/// Forward and backward LSTMs whose outputs are concatenated on the feature
/// axis, `(batch, len, 2h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fwd: Lstm::new(input, hidden, rng),
            bwd: Lstm::new(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, BiLstmCache)> {
        let (hf, cf) = self.fwd.forward(x, false)?;
        let (hb, cb) = self.bwd.forward(x, true)?;
        let out = ndarray::concatenate(Axis(2), &[hf.view(), hb.view()]).expect("same shape");
        Ok((out, BiLstmCache { fwd: cf, bwd: cb }))
    }

    pub fn backward(&mut self, cache: &BiLstmCache, dout: ArrayView3<f64>) -> Array3<f64> {
        let h = self.hidden();
        let dx = self.fwd.backward(&cache.fwd, dout.slice(s![.., .., ..h]));
        dx + self.bwd.backward(&cache.bwd, dout.slice(s![.., .., h..]))
    }
}

impl Module for BiLstm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        super::param::visit_scoped(&self.fwd, "fwd", f);
        super::param::visit_scoped(&self.bwd, "bwd", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        super::param::visit_scoped_mut(&mut self.fwd, "fwd", f);
        super::param::visit_scoped_mut(&mut self.bwd, "bwd", f);
    }
}
