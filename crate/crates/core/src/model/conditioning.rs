//! Speaker conditioning of the second stage: the local path (enrollment
//! BiLSTM vector and parallel speaker encoder) and the global path (fusion
//! of the utterance-level representation into the bottleneck).

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use super::config::{GlobalFusion, SpeakerConfig};
use crate::error::{PaecError, Result};
use crate::nn::conv::ConvCache;
use crate::nn::lstm::BiLstmCache;
use crate::nn::param::{visit_scoped, visit_scoped_mut};
use crate::nn::{BiLstm, GatedConv, Linear, Module, Param};
use crate::speaker::{EMBEDDING_DIM, FBANK_DIM};

/// Enrollment-derived inputs to the speaker-conditioned stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerInputs {
    /// Compressed enrollment spectrum as `(frames, bins, 2)`.
    pub enroll: Array3<f64>,
    pub fbank: Array1<f64>,
    pub embedding: Array1<f64>,
}

/// Enrollment BiLSTM across frequency, averaged over frames and mapped to
/// one value per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVector {
    pub lstm: BiLstm,
    pub fc: Linear,
}

#[derive(Debug, Clone)]
pub struct LocalVectorCache {
    lstm: BiLstmCache,
    mean: Array2<f64>,
    frames: usize,
}

impl LocalVector {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            lstm: BiLstm::new(2, hidden, rng),
            fc: Linear::new(2 * hidden, 1, rng),
        }
    }

    pub fn forward(&self, enroll: ArrayView3<f64>) -> Result<(Array1<f64>, LocalVectorCache)> {
        let frames = enroll.dim().0;
        if frames == 0 {
            return Err(PaecError::Duration { needed_s: 0.02, got_s: 0.0 });
        }
        let (h, lstm) = self.lstm.forward(enroll)?;
        let mean = h.mean_axis(Axis(0)).expect("nonempty");
        let v = self.fc.forward(mean.view()).index_axis_move(Axis(1), 0);
        Ok((v, LocalVectorCache { lstm, mean, frames }))
    }

    pub fn backward(&mut self, cache: &LocalVectorCache, dv: ArrayView1<f64>) {
        let dmean = self.fc.backward(cache.mean.view(), dv.insert_axis(Axis(1)));
        let dh = dmean / cache.frames as f64;
        let dh = dh
            .insert_axis(Axis(0))
            .broadcast((cache.frames, cache.mean.nrows(), cache.mean.ncols()))
            .expect("broadcast")
            .to_owned();
        self.lstm.backward(&cache.lstm, dh.view());
    }
}

impl Module for LocalVector {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.lstm, "lstm", f);
        visit_scoped(&self.fc, "fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.lstm, "lstm", f);
        visit_scoped_mut(&mut self.fc, "fc", f);
    }
}

/// Four gated convolutions mirroring the first four main encoder layers;
/// consumes the stage input with the local vector appended as one extra
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    pub layers: Vec<GatedConv>,
}

pub const SPEAKER_ENCODER_LAYERS: usize = 4;

impl SpeakerEncoder {
    pub fn new(in_channels: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..SPEAKER_ENCODER_LAYERS)
            .map(|i| GatedConv::new(if i == 0 { in_channels + 1 } else { channels }, channels, rng))
            .collect();
        Self { layers }
    }

    /// Appends `v` (one value per bin) to every frame of `x` as a channel.
    pub fn augment(x: ArrayView3<f64>, v: ArrayView1<f64>) -> Array3<f64> {
        let (t_n, f_n, c_n) = x.dim();
        let mut out = Array3::zeros((t_n, f_n, c_n + 1));
        out.slice_mut(s![.., .., ..c_n]).assign(&x);
        out.slice_mut(s![.., .., c_n]).assign(&v.broadcast((t_n, f_n)).expect("bins match"));
        out
    }

    pub fn forward(&self, x_aug: ArrayView3<f64>) -> Result<(Vec<Array3<f64>>, Vec<ConvCache>)> {
        let mut maps: Vec<Array3<f64>> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = maps.last().map_or(x_aug, |m| m.view());
            let (y, c) = layer.forward(input)?;
            maps.push(y);
            caches.push(c);
        }
        Ok((maps, caches))
    }

    /// `dmaps[k]` is the gradient reaching map `k` from the main encoder.
    /// Returns the gradient of the augmented input.
    pub fn backward(&mut self, caches: &[ConvCache], dmaps: &[Array3<f64>]) -> Array3<f64> {
        let mut carry: Option<Array3<f64>> = None;
        for k in (0..self.layers.len()).rev() {
            let d = match carry.take() {
                Some(c) => c + &dmaps[k],
                None => dmaps[k].clone(),
            };
            carry = Some(self.layers[k].backward(&caches[k], d.view()));
        }
        carry.expect("at least one layer")
    }
}

impl Module for SpeakerEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.layers.visit_mut(f);
    }
}

/// Multi-head cross-attention: each bottleneck frame queries the speaker
/// tokens and the attended value is projected to a per-frame gain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mca {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub fbank_token: Option<Linear>,
    pub provider_token: Linear,
}

#[derive(Debug, Clone)]
pub struct McaCache {
    q_in: Array2<f64>,
    q: Array2<f64>,
    tokens: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    /// `(frames, heads, tokens)`.
    weights: Array3<f64>,
    attended: Array2<f64>,
    speaker: (Array1<f64>, Array1<f64>),
}

impl Mca {
    pub fn new(bottleneck: usize, cfg: &SpeakerConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.attn_dim;
        Self {
            heads: cfg.heads,
            q: Linear::new(bottleneck, d, rng),
            k: Linear::new(d, d, rng),
            v: Linear::new(d, d, rng),
            out: Linear::new(d, bottleneck, rng),
            fbank_token: (cfg.fusion == GlobalFusion::Mca).then(|| Linear::new(FBANK_DIM, d, rng)),
            provider_token: Linear::new(EMBEDDING_DIM, d, rng),
        }
    }

    fn tokens(&self, fbank: ArrayView1<f64>, emb: ArrayView1<f64>) -> Array2<f64> {
        let mut rows = Vec::new();
        if let Some(fb) = &self.fbank_token {
            rows.push(fb.forward(fbank.insert_axis(Axis(0))));
        }
        rows.push(self.provider_token.forward(emb.insert_axis(Axis(0))));
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("same width")
    }

    /// `x`: flattened bottleneck `(frames, bins * channels)`. Returns the gain
    /// grid with the same shape.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        fbank: ArrayView1<f64>,
        emb: ArrayView1<f64>,
    ) -> Result<(Array2<f64>, McaCache)> {
        if x.ncols() != self.q.input_dim() {
            return Err(PaecError::shape(format!(
                "attention query expects {} features, got {}",
                self.q.input_dim(),
                x.ncols()
            )));
        }
        if fbank.len() != FBANK_DIM || emb.len() != EMBEDDING_DIM {
            return Err(PaecError::shape(format!(
                "speaker vectors must be {FBANK_DIM} and {EMBEDDING_DIM} long, got {} and {}",
                fbank.len(),
                emb.len()
            )));
        }
        let q = self.q.forward(x);
        let tokens = self.tokens(fbank, emb);
        let keys = self.k.forward(tokens.view());
        let values = self.v.forward(tokens.view());
        let (t_n, d) = q.dim();
        let n_tok = tokens.nrows();
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut weights = Array3::zeros((t_n, self.heads, n_tok));
        let mut attended = Array2::zeros((t_n, d));
        for t in 0..t_n {
            for h in 0..self.heads {
                let qs = q.slice(s![t, h * hd..(h + 1) * hd]);
                let scores: Vec<f64> = (0..n_tok)
                    .map(|i| qs.dot(&keys.slice(s![i, h * hd..(h + 1) * hd])) * scale)
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = ex.iter().sum();
                for i in 0..n_tok {
                    let a = ex[i] / z;
                    weights[[t, h, i]] = a;
                    let mut o = attended.slice_mut(s![t, h * hd..(h + 1) * hd]);
                    o.scaled_add(a, &values.slice(s![i, h * hd..(h + 1) * hd]));
                }
            }
        }
        let gain = self.out.forward(attended.view());
        Ok((
            gain,
            McaCache {
                q_in: x.to_owned(),
                q,
                tokens,
                keys,
                values,
                weights,
                attended,
                speaker: (fbank.to_owned(), emb.to_owned()),
            },
        ))
    }

    pub fn weights(cache: &McaCache) -> &Array3<f64> {
        &cache.weights
    }

    /// Returns the gradient of the flattened bottleneck.
    pub fn backward(&mut self, cache: &McaCache, dgain: ArrayView2<f64>) -> Array2<f64> {
        let datt = self.out.backward(cache.attended.view(), dgain);
        let (t_n, d) = cache.q.dim();
        let n_tok = cache.tokens.nrows();
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Array2::zeros((t_n, d));
        let mut dk = Array2::zeros((n_tok, d));
        let mut dv = Array2::zeros((n_tok, d));
        for t in 0..t_n {
            for h in 0..self.heads {
                let dout = datt.slice(s![t, h * hd..(h + 1) * hd]);
                let a: Vec<f64> = (0..n_tok).map(|i| cache.weights[[t, h, i]]).collect();
                let da: Vec<f64> = (0..n_tok)
                    .map(|i| dout.dot(&cache.values.slice(s![i, h * hd..(h + 1) * hd])))
                    .collect();
                let mean: f64 = a.iter().zip(&da).map(|(a, d)| a * d).sum();
                for i in 0..n_tok {
                    dv.slice_mut(s![i, h * hd..(h + 1) * hd]).scaled_add(a[i], &dout);
                    let ds = a[i] * (da[i] - mean) * scale;
                    dq.slice_mut(s![t, h * hd..(h + 1) * hd])
                        .scaled_add(ds, &cache.keys.slice(s![i, h * hd..(h + 1) * hd]));
                    dk.slice_mut(s![i, h * hd..(h + 1) * hd])
                        .scaled_add(ds, &cache.q.slice(s![t, h * hd..(h + 1) * hd]));
                }
            }
        }
        let dtok = self.k.backward(cache.tokens.view(), dk.view()) + self.v.backward(cache.tokens.view(), dv.view());
        let mut row = 0;
        if let Some(fb) = &mut self.fbank_token {
            fb.backward(cache.speaker.0.view().insert_axis(Axis(0)), dtok.slice(s![0..1, ..]));
            row = 1;
        }
        self.provider_token
            .backward(cache.speaker.1.view().insert_axis(Axis(0)), dtok.slice(s![row..row + 1, ..]));
        self.q.backward(cache.q_in.view(), dq.view())
    }
}

impl Module for Mca {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.q, "q", f);
        visit_scoped(&self.k, "k", f);
        visit_scoped(&self.v, "v", f);
        visit_scoped(&self.out, "out", f);
        if let Some(fb) = &self.fbank_token {
            visit_scoped(fb, "fbank_token", f);
        }
        visit_scoped(&self.provider_token, "provider_token", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.q, "q", f);
        visit_scoped_mut(&mut self.k, "k", f);
        visit_scoped_mut(&mut self.v, "v", f);
        visit_scoped_mut(&mut self.out, "out", f);
        if let Some(fb) = &mut self.fbank_token {
            visit_scoped_mut(fb, "fbank_token", f);
        }
        visit_scoped_mut(&mut self.provider_token, "provider_token", f);
    }
}

/// Concatenation baseline: one linear map from the 416-dim speaker vector to
/// a gain grid shared by all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatFusion {
    pub proj: Linear,
}

impl ConcatFusion {
    pub fn new(bottleneck: usize, rng: &mut impl Rng) -> Self {
        Self {
            proj: Linear::new(FBANK_DIM + EMBEDDING_DIM, bottleneck, rng),
        }
    }

    fn input(fbank: ArrayView1<f64>, emb: ArrayView1<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[fbank, emb])
            .expect("1-d")
            .insert_axis(Axis(0))
    }

    pub fn forward(&self, fbank: ArrayView1<f64>, emb: ArrayView1<f64>) -> Result<Array1<f64>> {
        if fbank.len() != FBANK_DIM || emb.len() != EMBEDDING_DIM {
            return Err(PaecError::shape("speaker vectors have the wrong length"));
        }
        Ok(self.proj.forward(Self::input(fbank, emb).view()).index_axis_move(Axis(0), 0))
    }

    pub fn backward(&mut self, fbank: ArrayView1<f64>, emb: ArrayView1<f64>, dgain: ArrayView1<f64>) {
        self.proj.backward(Self::input(fbank, emb).view(), dgain.insert_axis(Axis(0)));
    }
}

impl Module for ConcatFusion {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.proj, "proj", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.proj, "proj", f);
    }
}
