//! C interface to the paec echo canceller.
//!
//! A model is loaded from a checkpoint directory into an opaque handle and
//! then processes whole recordings: microphone, far-end reference and, for
//! personalized models, an enrollment utterance. Every call returns a
//! status code; on failure `paec_last_error` describes what went wrong on
//! the calling thread. Audio is 16 kHz mono `float` in [-1, 1].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use paec::dsp::DspConfig;
use paec::model::{load_checkpoint, CheckpointKind, Model, ModelVariantConfig, SpeakerInputs, Variant};
use paec::nn::Module;
use paec::pipeline::run_pipeline;
use paec::signal::frame_count;
use paec::speaker::{embed_speaker, ProviderEmbedding, StubProvider, EMBEDDING_DIM};
use paec::{PaecError, Waveform};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaecStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument is out of range or inconsistent, or a signal is too short.
    InvalidArgument = 2,
    /// The checkpoint is missing, corrupt or not a full model.
    Checkpoint = 3,
    /// The output buffer is too small; the required length is reported.
    BufferTooSmall = 4,
    /// Processing failed inside the signal chain.
    Processing = 5,
    /// A bug inside the library. The handle should not be used again.
    Internal = 6,
}

/// A loaded model together with its front-end settings.
pub struct PaecModel {
    model: Model,
    dsp: DspConfig,
    embedding: Option<ProviderEmbedding>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: PaecStatus, msg: impl Into<String>) -> PaecStatus {
    set_error(msg);
    status
}

fn status_of(e: &PaecError) -> PaecStatus {
    match e {
        PaecError::Checkpoint { .. } | PaecError::Config(_) => PaecStatus::Checkpoint,
        PaecError::Parameter(_) | PaecError::Duration { .. } | PaecError::Provider(_) | PaecError::Conditioning(_) => PaecStatus::InvalidArgument,
        _ => PaecStatus::Processing,
    }
}

fn guard(f: impl FnOnce() -> PaecStatus) -> PaecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == PaecStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PaecStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

unsafe fn samples<'a>(p: *const f32, n: usize) -> &'a [f32] {
    if n == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(p, n)
    }
}

fn waveform(s: &[f32]) -> Waveform {
    Waveform::from_samples(s.iter().map(|&x| x as f64).collect())
}

fn boxed(model: Model, out: *mut *mut PaecModel) -> PaecStatus {
    let handle = Box::new(PaecModel {
        model,
        dsp: DspConfig::default(),
        embedding: None,
    });
    unsafe { *out = Box::into_raw(handle) };
    PaecStatus::Ok
}

/// Loads a trained model from a checkpoint directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn paec_model_load(path: *const c_char, out: *mut *mut PaecModel) -> PaecStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PaecStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PaecStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let ck = match load_checkpoint(Path::new(path)) {
            Ok(ck) => ck,
            Err(e) => return fail(PaecStatus::Checkpoint, e.to_string()),
        };
        if matches!(ck.kind, CheckpointKind::Stage { .. }) {
            return fail(PaecStatus::Checkpoint, format!("{path}: a single pretrained stage, not a full model"));
        }
        match Model::from_checkpoint(&ck) {
            Ok(m) => boxed(m, out),
            Err(e) => fail(PaecStatus::Checkpoint, e.to_string()),
        }
    })
}

/// Creates an untrained model of the named variant (`"tdpf2"`, `"gftnn-aec"`
/// and so on). `toy` selects the small preset. Meant for testing bindings.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn paec_model_new(variant: *const c_char, toy: bool, seed: u64, out: *mut *mut PaecModel) -> PaecStatus {
    guard(|| {
        if variant.is_null() || out.is_null() {
            return fail(PaecStatus::NullPointer, "variant and out must not be null");
        }
        *out = ptr::null_mut();
        let v: Variant = match CStr::from_ptr(variant).to_str().map_err(|_| ()).and_then(|s| s.parse().map_err(|_| ())) {
            Ok(v) => v,
            Err(()) => {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                return fail(PaecStatus::InvalidArgument, format!("unknown variant; valid: {}", names.join(", ")));
            }
        };
        let cfg = if toy {
            ModelVariantConfig::toy(v)
        } else {
            ModelVariantConfig::default_for(v)
        };
        match Model::new(&cfg, seed) {
            Ok(m) => boxed(m, out),
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `paec_model_load` or `paec_model_new` and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn paec_model_free(model: *mut PaecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Whether the model needs an enrollment utterance.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn paec_model_is_personalized(model: *const PaecModel) -> bool {
    model.as_ref().is_some_and(|m| m.model.variant().is_personalized())
}

/// Trainable parameter count.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn paec_model_param_count(model: *const PaecModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.param_count())
}

/// Replaces the built-in stand-in speaker embedding with `dim` values from
/// an external speaker-verification model. `dim` must be 256. Passing null
/// restores the stand-in.
///
/// # Safety
/// `model` must be a live handle and `embedding` point at `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn paec_model_set_embedding(model: *mut PaecModel, embedding: *const f32, dim: usize) -> PaecStatus {
    guard(|| {
        let Some(m) = model.as_mut() else {
            return fail(PaecStatus::NullPointer, "model must not be null");
        };
        if embedding.is_null() {
            m.embedding = None;
            return PaecStatus::Ok;
        }
        if dim != EMBEDDING_DIM {
            return fail(PaecStatus::InvalidArgument, format!("embedding has {dim} values, expected {EMBEDDING_DIM}"));
        }
        match ProviderEmbedding::new(samples(embedding, dim).iter().map(|&x| x as f64).collect()) {
            Ok(e) => {
                m.embedding = Some(e);
                PaecStatus::Ok
            }
            Err(e) => fail(PaecStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Output length for an `n`-sample input. The output covers whole frames
/// and can be slightly longer than the input.
#[no_mangle]
pub extern "C" fn paec_output_len(n: usize) -> usize {
    if n < 320 {
        0
    } else {
        (frame_count(n) - 1) * 160 + 320
    }
}

/// Cancels the echo of `reference` in `mic` (both `n` samples).
///
/// `enroll` may be null for non-personalized models. The enhanced signal
/// goes to `out`, which holds `out_cap` samples; `out_len` receives the
/// written length, or the required length with `PAEC_STATUS_BUFFER_TOO_SMALL`.
/// `delay_ms`, if not null, receives the estimated echo-path delay.
///
/// # Safety
/// All non-null pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn paec_process(
    model: *const PaecModel,
    mic: *const f32,
    reference: *const f32,
    n: usize,
    enroll: *const f32,
    n_enroll: usize,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
    delay_ms: *mut f32,
) -> PaecStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(PaecStatus::NullPointer, "model must not be null");
        };
        if mic.is_null() || reference.is_null() || out.is_null() || out_len.is_null() {
            return fail(PaecStatus::NullPointer, "mic, reference, out and out_len must not be null");
        }
        let need = paec_output_len(n);
        if need == 0 {
            return fail(PaecStatus::InvalidArgument, format!("{n} samples is shorter than one 320-sample frame"));
        }
        *out_len = need;
        if out_cap < need {
            return fail(PaecStatus::BufferTooSmall, format!("output needs {need} samples, buffer holds {out_cap}"));
        }
        let d = waveform(samples(mic, n));
        let x = waveform(samples(reference, n));
        let speaker = if m.model.variant().is_personalized() {
            if enroll.is_null() || n_enroll == 0 {
                return fail(PaecStatus::InvalidArgument, format!("{} needs an enrollment utterance", m.model.variant()));
            }
            let enroll = waveform(samples(enroll, n_enroll));
            let emb = match &m.embedding {
                Some(e) => Ok(e.clone()),
                None => embed_speaker(&enroll, None, &StubProvider::new(0)),
            };
            match emb.and_then(|e| SpeakerInputs::from_enrollment(&enroll, &e, m.model.cfg.compress_p)) {
                Ok(s) => Some(s),
                Err(e) => return fail(status_of(&e), e.to_string()),
            }
        } else {
            None
        };
        let res = match run_pipeline(&m.model, &d, &x, speaker, &m.dsp) {
            Ok(r) => r,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        let s_hat = &res.enhanced.s_hat.samples;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (o, &v) in dst.iter_mut().zip(s_hat) {
            *o = v as f32;
        }
        *out_len = s_hat.len().min(need);
        if !delay_ms.is_null() {
            *delay_ms = res.frontend.delay.delay_samples as f32 / 16.0;
        }
        PaecStatus::Ok
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn paec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn paec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
