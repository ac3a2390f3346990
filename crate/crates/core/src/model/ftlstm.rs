//! Bottleneck block: bidirectional recurrence across frequency within each
//! frame, then causal recurrence across frames, each with a residual.

use ndarray::{Array3, ArrayView3};
use rand::Rng;

use crate::error::Result;
use crate::nn::lstm::{BiLstmCache, LstmCache};
use crate::nn::param::{visit_scoped, visit_scoped_mut};
use crate::nn::{BiLstm, Linear, Lstm, Module, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct FtLstmBlock {
    pub freq: BiLstm,
    pub freq_fc: Linear,
    pub time: Lstm,
    pub time_fc: Linear,
}

#[derive(Debug, Clone)]
pub struct FtLstmCache {
    freq: BiLstmCache,
    freq_h: Array3<f64>,
    time: LstmCache,
    time_h: Array3<f64>,
    dims: (usize, usize, usize),
}

impl FtLstmBlock {
    /// For a bottleneck of `bins` frequency positions and `channels` channels.
    pub fn new(channels: usize, bins: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            freq: BiLstm::new(channels, hidden, rng),
            freq_fc: Linear::new(2 * hidden, channels, rng),
            time: Lstm::new(bins * channels, hidden, rng),
            time_fc: Linear::new(hidden, bins * channels, rng),
        }
    }

    /// `x`: `(frames, bins, channels)`.
    pub fn forward(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, FtLstmCache)> {
        let (t_n, f_n, c_n) = x.dim();
        let h = self.freq.hidden();
        let (freq_h, freq) = self.freq.forward(x)?;
        let flat_h = freq_h.to_shape((t_n * f_n, 2 * h)).expect("contiguous");
        let x1 = self
            .freq_fc
            .forward(flat_h.view())
            .into_shape_with_order((t_n, f_n, c_n))
            .expect("contiguous")
            + x;
        let seq = x1.to_shape((1, t_n, f_n * c_n)).expect("contiguous");
        let (time_h, time) = self.time.forward(seq.view(), false)?;
        let th = self.time.hidden;
        let y = self
            .time_fc
            .forward(time_h.to_shape((t_n, th)).expect("contiguous").view())
            .into_shape_with_order((t_n, f_n, c_n))
            .expect("contiguous")
            + &x1;
        Ok((
            y,
            FtLstmCache {
                freq,
                freq_h,
                time,
                time_h,
                dims: (t_n, f_n, c_n),
            },
        ))
    }

    pub fn backward(&mut self, cache: &FtLstmCache, dy: ArrayView3<f64>) -> Array3<f64> {
        let (t_n, f_n, c_n) = cache.dims;
        let th = self.time.hidden;
        let h = self.freq.hidden();
        let dy2 = dy.to_shape((t_n, f_n * c_n)).expect("contiguous");
        let th_flat = cache.time_h.to_shape((t_n, th)).expect("contiguous");
        let dth = self.time_fc.backward(th_flat.view(), dy2.view());
        let dseq = self
            .time
            .backward(&cache.time, dth.to_shape((1, t_n, th)).expect("contiguous").view());
        let dx1 = dseq.into_shape_with_order((t_n, f_n, c_n)).expect("contiguous") + dy;
        let fh_flat = cache.freq_h.to_shape((t_n * f_n, 2 * h)).expect("contiguous");
        let dfh = self.freq_fc.backward(
            fh_flat.view(),
            dx1.to_shape((t_n * f_n, c_n)).expect("contiguous").view(),
        );
        let dfh = dfh.into_shape_with_order((t_n, f_n, 2 * h)).expect("contiguous");
        self.freq.backward(&cache.freq, dfh.view()) + dx1
    }
}

impl Module for FtLstmBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.freq, "freq", f);
        visit_scoped(&self.freq_fc, "freq_fc", f);
        visit_scoped(&self.time, "time", f);
        visit_scoped(&self.time_fc, "time_fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.freq, "freq", f);
        visit_scoped_mut(&mut self.freq_fc, "freq_fc", f);
        visit_scoped_mut(&mut self.time, "time", f);
        visit_scoped_mut(&mut self.time_fc, "time_fc", f);
    }
}
