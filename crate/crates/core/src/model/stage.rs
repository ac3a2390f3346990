//! One post-filter stage: gated conv encoder, F-T-LSTM bottleneck, gated
//! transposed-conv decoder with 1x1 skip connections, and an output head.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use num_complex::Complex64;
use rand::Rng;

use super::conditioning::{
    ConcatFusion, LocalVector, LocalVectorCache, Mca, McaCache, SpeakerEncoder, SpeakerInputs,
};
use super::config::{GlobalFusion, OutputMode, StageConfig, N_ENC_LAYERS, STAGE_INPUT_CHANNELS};
use super::ftlstm::{FtLstmBlock, FtLstmCache};
use crate::error::{PaecError, Result};
use crate::nn::conv::{ConvCache, TransConvCache};
use crate::nn::param::{visit_scoped, visit_scoped_mut};
use crate::nn::{conv_out_bins, trans_out_bins, GatedConv, GatedTransConv, Linear, Module, Param};
use crate::signal::N_BINS;

/// Frequency sizes along the encoder, input first.
pub fn encoder_bins() -> [usize; N_ENC_LAYERS + 1] {
    let mut out = [N_BINS; N_ENC_LAYERS + 1];
    for k in 0..N_ENC_LAYERS {
        out[k + 1] = conv_out_bins(out[k]);
    }
    out
}

/// Index of the error-signal channels in the stage input.
const ERROR_RE: usize = 2;
const ERROR_IM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub cfg: StageConfig,
    pub encoder: Vec<GatedConv>,
    pub blocks: Vec<FtLstmBlock>,
    pub skips: Vec<Linear>,
    pub decoder: Vec<GatedTransConv>,
    pub head: Linear,
    pub local_vector: Option<LocalVector>,
    pub speaker_encoder: Option<SpeakerEncoder>,
    pub mca: Option<Mca>,
    pub concat: Option<ConcatFusion>,
}

#[derive(Debug, Clone)]
enum FusionCache {
    Mca(Box<McaCache>),
    Concat(Array1<f64>, Array1<f64>),
}

#[derive(Debug, Clone)]
pub struct StageCache {
    enc: Vec<ConvCache>,
    enc_out: Vec<Array3<f64>>,
    local: Option<(LocalVectorCache, Vec<ConvCache>)>,
    fusion: Option<(FusionCache, Array3<f64>)>,
    bottleneck: Array3<f64>,
    blocks: Vec<FtLstmCache>,
    dec: Vec<TransConvCache>,
    head_in: Array3<f64>,
    raw: Array3<f64>,
    error: Array2<Complex64>,
}

/// `m = a * tanh(|a|) / |a|` and the two factors needed for its Jacobian:
/// `phi = tanh(r) / r` and `psi = phi'(r) / r`.
fn mask_terms(a: Complex64) -> (f64, f64) {
    let r = a.norm();
    if r < 1e-4 {
        (1.0 - r * r / 3.0, -2.0 / 3.0)
    } else {
        let t = r.tanh();
        let sech2 = 1.0 - t * t;
        (t / r, (r * sech2 - t) / (r * r * r))
    }
}

pub fn bounded_mask(a: Complex64) -> Complex64 {
    a * mask_terms(a).0
}

/// Stacks complex grids `(frames, bins)` as real/imaginary channel pairs.
pub fn stack_channels(signals: &[&Array2<Complex64>]) -> Array3<f64> {
    let (t_n, f_n) = signals[0].dim();
    let mut out = Array3::zeros((t_n, f_n, 2 * signals.len()));
    for (k, sig) in signals.iter().enumerate() {
        for ((t, f), z) in sig.indexed_iter() {
            out[[t, f, 2 * k]] = z.re;
            out[[t, f, 2 * k + 1]] = z.im;
        }
    }
    out
}

pub fn channel_pair(x: ArrayView3<f64>, re: usize) -> Array2<Complex64> {
    let (t_n, f_n, _) = x.dim();
    Array2::from_shape_fn((t_n, f_n), |(t, f)| Complex64::new(x[[t, f, re]], x[[t, f, re + 1]]))
}

impl Stage {
    pub fn new(cfg: &StageConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let bins = encoder_bins();
        let encoder = (0..N_ENC_LAYERS)
            .map(|k| GatedConv::new(if k == 0 { STAGE_INPUT_CHANNELS } else { c }, c, rng))
            .collect();
        let bottleneck_bins = bins[N_ENC_LAYERS];
        let blocks = (0..cfg.ftlstm_blocks)
            .map(|_| FtLstmBlock::new(c, bottleneck_bins, cfg.ftlstm_hidden, rng))
            .collect();
        let skips = (0..N_ENC_LAYERS).map(|_| Linear::new(c, c, rng)).collect();
        let decoder = (0..N_ENC_LAYERS)
            .map(|j| {
                let f_in = bins[N_ENC_LAYERS - j];
                let f_out = bins[N_ENC_LAYERS - j - 1];
                GatedTransConv::new(c, c, f_out - trans_out_bins(f_in, 0), rng)
            })
            .collect();
        let head = Linear::new(c, 2, rng);
        let spk = cfg.speaker.as_ref();
        let local = spk.is_some_and(|s| s.local);
        let fusion = spk.map_or(GlobalFusion::None, |s| s.fusion);
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            blocks,
            skips,
            decoder,
            head,
            local_vector: local.then(|| LocalVector::new(spk.expect("speaker").lstm_hidden, rng)),
            speaker_encoder: local.then(|| SpeakerEncoder::new(STAGE_INPUT_CHANNELS, c, rng)),
            mca: matches!(fusion, GlobalFusion::Mca | GlobalFusion::McaProviderOnly)
                .then(|| Mca::new(bottleneck_bins * c, spk.expect("speaker"), rng)),
            concat: (fusion == GlobalFusion::Concat).then(|| ConcatFusion::new(bottleneck_bins * c, rng)),
        })
    }

    pub fn needs_speaker(&self) -> bool {
        self.cfg.speaker.is_some()
    }

    /// Runs the stage on a `(frames, 161, 6)` input. Returns the compressed
    /// complex estimate and, when `train` is set, the cache for
    /// [`Stage::backward`].
    pub fn forward(
        &self,
        x: ArrayView3<f64>,
        speaker: Option<&SpeakerInputs>,
        train: bool,
    ) -> Result<(Array2<Complex64>, Option<StageCache>)> {
        let (t_n, f_n, c_in) = x.dim();
        if f_n != N_BINS || c_in != STAGE_INPUT_CHANNELS || t_n == 0 {
            return Err(PaecError::shape(format!(
                "stage input must be (frames >= 1, {N_BINS}, {STAGE_INPUT_CHANNELS}), got {:?}",
                x.dim()
            )));
        }
        let speaker = match (self.needs_speaker(), speaker) {
            (true, None) => {
                return Err(PaecError::Conditioning(
                    "this stage needs speaker conditioning but no enrollment was given".into(),
                ))
            }
            (true, s) => s,
            (false, _) => None,
        };

        // Local speaker path.
        let mut local = None;
        let mut spk_maps = Vec::new();
        if let (Some(lv), Some(se), Some(sp)) = (&self.local_vector, &self.speaker_encoder, speaker) {
            let (v, vc) = lv.forward(sp.enroll.view())?;
            let aug = SpeakerEncoder::augment(x, v.view());
            let (maps, caches) = se.forward(aug.view())?;
            spk_maps = maps;
            local = Some((vc, caches));
        }

        let mut enc = Vec::new();
        let mut enc_out: Vec<Array3<f64>> = Vec::new();
        for (k, layer) in self.encoder.iter().enumerate() {
            let input = enc_out.last().map_or(x, |a| a.view());
            let (mut y, c) = layer.forward(input)?;
            if let Some(m) = spk_maps.get(k) {
                y += m;
            }
            enc.push(c);
            enc_out.push(y);
        }
        let bottleneck = enc_out.last().expect("encoder layers").clone();
        let (_, fb, cb) = bottleneck.dim();

        // Global speaker fusion: multiply the bottleneck by a gain grid.
        let mut fusion = None;
        let mut z = bottleneck.clone();
        if let Some(sp) = speaker {
            let flat = bottleneck.to_shape((t_n, fb * cb)).expect("contiguous");
            if let Some(mca) = &self.mca {
                let (g, c) = mca.forward(flat.view(), sp.fbank.view(), sp.embedding.view())?;
                let g = g.into_shape_with_order((t_n, fb, cb)).expect("contiguous");
                z *= &g;
                fusion = Some((FusionCache::Mca(Box::new(c)), g));
            } else if let Some(cf) = &self.concat {
                let g = cf.forward(sp.fbank.view(), sp.embedding.view())?;
                let g = g
                    .into_shape_with_order((fb, cb))
                    .expect("contiguous")
                    .insert_axis(Axis(0))
                    .broadcast((t_n, fb, cb))
                    .expect("broadcast")
                    .to_owned();
                z *= &g;
                fusion = Some((FusionCache::Concat(sp.fbank.clone(), sp.embedding.clone()), g));
            }
        }

        let mut blocks = Vec::new();
        for b in &self.blocks {
            let (y, c) = b.forward(z.view())?;
            blocks.push(c);
            z = y;
        }

        let mut dec = Vec::new();
        for (j, layer) in self.decoder.iter().enumerate() {
            let skip_src = &enc_out[N_ENC_LAYERS - 1 - j];
            z += &apply_pointwise(&self.skips[j], skip_src.view());
            let (y, c) = layer.forward(z.view())?;
            dec.push(c);
            z = y;
        }
        let raw = apply_pointwise(&self.head, z.view());
        let error = channel_pair(x, ERROR_RE);
        let out = match self.cfg.output_mode {
            OutputMode::Map => channel_pair(raw.view(), 0),
            OutputMode::Mask => {
                let mut m = channel_pair(raw.view(), 0);
                m.zip_mut_with(&error, |m, e| *m = bounded_mask(*m) * e);
                m
            }
        };
        debug_assert_eq!(ERROR_IM, ERROR_RE + 1);
        let cache = train.then(|| StageCache {
            enc,
            enc_out,
            local,
            fusion,
            bottleneck,
            blocks,
            dec,
            head_in: z,
            raw,
            error,
        });
        Ok((out, cache))
    }

    /// Backpropagates `g` (the gradient with respect to the real and
    /// imaginary parts of the output, packed as `re + i im`). Returns the
    /// gradient of the stage input.
    pub fn backward(&mut self, cache: &StageCache, g: &Array2<Complex64>) -> Array3<f64> {
        let (t_n, f_n, _) = cache.raw.dim();
        let mut draw = Array3::zeros((t_n, f_n, 2));
        for ((t, f), gs) in g.indexed_iter() {
            let (dr, di) = match self.cfg.output_mode {
                OutputMode::Map => (gs.re, gs.im),
                OutputMode::Mask => {
                    let a = Complex64::new(cache.raw[[t, f, 0]], cache.raw[[t, f, 1]]);
                    let gm = gs * cache.error[[t, f]].conj();
                    let (phi, psi) = mask_terms(a);
                    (
                        gm.re * (phi + a.re * a.re * psi) + gm.im * (a.re * a.im * psi),
                        gm.re * (a.re * a.im * psi) + gm.im * (phi + a.im * a.im * psi),
                    )
                }
            };
            draw[[t, f, 0]] = dr;
            draw[[t, f, 1]] = di;
        }
        let mut dz = pointwise_backward(&mut self.head, cache.head_in.view(), draw.view());
        let mut denc: Vec<Option<Array3<f64>>> = vec![None; N_ENC_LAYERS];
        let add = |slot: &mut Option<Array3<f64>>, d: Array3<f64>| match slot {
            Some(s) => *s += &d,
            None => *slot = Some(d),
        };
        for j in (0..N_ENC_LAYERS).rev() {
            let dinp = self.decoder[j].backward(&cache.dec[j], dz.view());
            let k = N_ENC_LAYERS - 1 - j;
            add(
                &mut denc[k],
                pointwise_backward(&mut self.skips[j], cache.enc_out[k].view(), dinp.view()),
            );
            dz = dinp;
        }
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dz = b.backward(c, dz.view());
        }
        // Through the bottleneck gain.
        let dbottleneck = match &cache.fusion {
            None => dz,
            Some((fc, gain)) => {
                let dgain = &dz * &cache.bottleneck;
                let mut db = dz * gain;
                let (_, fb, cb) = db.dim();
                match fc {
                    FusionCache::Mca(c) => {
                        let mca = self.mca.as_mut().expect("mca cache implies mca");
                        let dg = dgain.to_shape((t_n, fb * cb)).expect("contiguous");
                        let dq = mca.backward(c, dg.view());
                        db += &dq.into_shape_with_order((t_n, fb, cb)).expect("contiguous");
                    }
                    FusionCache::Concat(fbank, emb) => {
                        let cf = self.concat.as_mut().expect("concat cache implies concat");
                        let dg = dgain.sum_axis(Axis(0)).into_shape_with_order(fb * cb).expect("contiguous");
                        cf.backward(fbank.view(), emb.view(), dg.view());
                    }
                }
                db
            }
        };
        add(&mut denc[N_ENC_LAYERS - 1], dbottleneck);

        let mut dspk: Vec<Array3<f64>> = Vec::new();
        let mut carry: Option<Array3<f64>> = None;
        for k in (0..N_ENC_LAYERS).rev() {
            let mut dy = denc[k].take().expect("every encoder output feeds a skip");
            if let Some(c) = carry.take() {
                dy += &c;
            }
            if cache.local.is_some() && k < self.speaker_encoder.as_ref().map_or(0, |s| s.layers.len()) {
                dspk.push(dy.clone());
            }
            carry = Some(self.encoder[k].backward(&cache.enc[k], dy.view()));
        }
        let mut dx = carry.expect("encoder layers");
        if let (Some((vc, sc)), Some(se), Some(lv)) =
            (&cache.local, self.speaker_encoder.as_mut(), self.local_vector.as_mut())
        {
            dspk.reverse();
            let daug = se.backward(sc, &dspk);
            let c_in = dx.dim().2;
            dx += &daug.slice(s![.., .., ..c_in]);
            let dv = daug.slice(s![.., .., c_in]).sum_axis(Axis(0));
            lv.backward(vc, dv.view());
        }
        dx
    }
}

fn apply_pointwise(l: &Linear, x: ArrayView3<f64>) -> Array3<f64> {
    let (t_n, f_n, c_n) = x.dim();
    let flat = x.to_shape((t_n * f_n, c_n)).expect("contiguous");
    l.forward(flat.view())
        .into_shape_with_order((t_n, f_n, l.output_dim()))
        .expect("contiguous")
}

fn pointwise_backward(l: &mut Linear, x: ArrayView3<f64>, dy: ArrayView3<f64>) -> Array3<f64> {
    let (t_n, f_n, c_n) = x.dim();
    let flat = x.to_shape((t_n * f_n, c_n)).expect("contiguous");
    let dflat = dy.to_shape((t_n * f_n, l.output_dim())).expect("contiguous");
    l.backward(flat.view(), dflat.view())
        .into_shape_with_order((t_n, f_n, c_n))
        .expect("contiguous")
}

impl Module for Stage {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.encoder, "enc", f);
        visit_scoped(&self.blocks, "ftl", f);
        visit_scoped(&self.skips, "skip", f);
        visit_scoped(&self.decoder, "dec", f);
        visit_scoped(&self.head, "head", f);
        visit_scoped(&self.local_vector, "spk_vec", f);
        visit_scoped(&self.speaker_encoder, "spk_enc", f);
        visit_scoped(&self.mca, "mca", f);
        visit_scoped(&self.concat, "concat", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.encoder, "enc", f);
        visit_scoped_mut(&mut self.blocks, "ftl", f);
        visit_scoped_mut(&mut self.skips, "skip", f);
        visit_scoped_mut(&mut self.decoder, "dec", f);
        visit_scoped_mut(&mut self.head, "head", f);
        visit_scoped_mut(&mut self.local_vector, "spk_vec", f);
        visit_scoped_mut(&mut self.speaker_encoder, "spk_enc", f);
        visit_scoped_mut(&mut self.mca, "mca", f);
        visit_scoped_mut(&mut self.concat, "concat", f);
    }
}
