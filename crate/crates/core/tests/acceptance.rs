//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use paec::dsp::{estimate_delay, nlms_run, DspConfig};
use paec::metrics::{erle, si_snr};
use paec::model::network::decompress_bins;
use paec::model::{
    count_params, save_checkpoint, Model, ModelInputs, ModelVariantConfig, SpeakerInputs, Variant,
};
use paec::nn::{AdamConfig, Module};
use paec::signal::{istft, stft_default, Waveform, HOP, N_BINS};
use paec::speaker::{StubProvider, EMBEDDING_DIM, FBANK_DIM};
use paec::synth::{build_scene, sample_specs, toy_clips, Corpus, ImageSourceRir, MemCorpus, Scenario, ScenarioClip, SceneConfig};
use paec::train::{
    build_example, dataset_loss, init_model, pretrain_stage, stage_loss, train, variant_loss, Example,
    ExampleOptions, LossSpec, PretrainSpec, PretrainTask, RunIo, StageSpectra, StrategyKind, TargetSpectra,
    TrainOptions, TrainStrategy,
};
use paec::train::loss::{plcpa_bins, plcpa_grad, plcpa_grad_compressed, stage_targets};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn db(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

fn gaussian(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------- signal

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let signals: Vec<Waveform> = (0..100)
        .map(|_| Waveform::from_samples((0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let t = Instant::now();
    let mut worst = 0.0f64;
    for x in &signals {
        let y = istft(&stft_default(x).unwrap()).unwrap();
        // The first and last hop are covered by a single window.
        for n in HOP..y.len().min(x.len()) - HOP {
            worst = worst.max((x.samples[n] - y.samples[n]).abs());
        }
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-6 && el < Duration::from_secs(1),
        format!("max interior error {worst:.2e} (< 1e-6), {:.3} s (< 1 s)", el.as_secs_f64()),
    )
}

fn fir(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| h.iter().enumerate().take(n + 1).map(|(k, hk)| hk * x[n - k]).sum())
        .collect()
}

fn nlms_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let x: Vec<f64> = gaussian(160_000, &mut rng).iter().map(|v| 0.3 * v).collect();
    let h: Vec<f64> = (0..64)
        .map(|k| rng.sample::<f64, _>(StandardNormal) * (-(k as f64) / 12.0).exp())
        .collect();
    let d = fir(&x, &h);
    let t = Instant::now();
    let out = nlms_run(&Waveform::from_samples(d.clone()), &Waveform::from_samples(x), &DspConfig::default()).unwrap();
    let el = t.elapsed();
    let half = d.len() / 2;
    let e = &out.e.samples[half..];
    let erle_db = db(energy(&d[half..]), energy(e));
    outcome(
        erle_db >= 20.0 && el < Duration::from_secs(60),
        format!("steady-state ERLE {erle_db:.2} dB (>= 20), {:.2} s (< 60 s)", el.as_secs_f64()),
    )
}

fn tde_recovery() -> Outcome {
    let corpus = MemCorpus::synthetic(1, 2, 4.0, 300);
    let spk = corpus.speakers()[0].clone();
    let far = corpus.utterance(&spk, 0).unwrap().samples;
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    // A short decaying echo path in front of the bulk delay.
    let path: Vec<f64> = (0..32).map(|k| 0.6 * (-(k as f64) / 6.0).exp() * if k % 3 == 1 { -1.0 } else { 1.0 }).collect();
    let echo = fir(&far, &path);
    let mut lines = Vec::new();
    let mut pass = true;
    for delay_ms in [0usize, 50, 230, 480] {
        let delay = delay_ms * 16;
        let mut y = vec![0.0; far.len()];
        y[delay..].copy_from_slice(&echo[..far.len() - delay]);
        let noise = gaussian(far.len(), &mut rng);
        let g = (energy(&y) / (energy(&noise) * 10f64.powf(10.0 / 10.0))).sqrt();
        let mic: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + g * b).collect();
        let enr = db(energy(&y), energy(&noise) * g * g);
        let est = estimate_delay(&Waveform::from_samples(mic), &Waveform::from_samples(far.clone())).unwrap();
        let got_ms = est.delay_samples as f64 / 16.0;
        let ok = (got_ms - delay_ms as f64).abs() <= 10.0;
        pass &= ok;
        lines.push(format!("{delay_ms}->{got_ms:.0} ms"));
        assert!((enr - 10.0).abs() < 1e-9);
    }
    outcome(pass, format!("{} at 10 dB ENR (each within 10 ms)", lines.join(", ")))
}

// ---------------------------------------------------------------- mixing

fn mixing_accuracy() -> Outcome {
    let corpus = MemCorpus::synthetic(10, 4, 2.0, 400);
    let specs = sample_specs(500, 401, &corpus.speakers(), "acc").unwrap();
    let cfg = SceneConfig { clip_seconds: 2.0 };
    let (mut worst_ratio, mut worst_sum) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for spec in &specs {
        let c = build_scene(spec, &corpus, &ImageSourceRir, &cfg).unwrap();
        let (es, ey, ev, ez) = (c.s.energy(), c.y.energy(), c.v.energy(), c.z.energy());
        let mut dev = |measured: f64, target: f64| {
            worst_ratio = worst_ratio.max((measured - target).abs());
            checked += 1;
        };
        match spec.scenario {
            Scenario::Dt => {
                dev(db(es, ey), spec.ser_db.unwrap());
                dev(db(es, ev), spec.snr_db);
            }
            Scenario::Nest => dev(db(es, ev), spec.snr_db),
            Scenario::Fest => dev(db(ey, ev), spec.snr_db),
        }
        if spec.n_interferers > 0 {
            dev(db(es, ez), spec.snr_db);
        }
        for i in 0..c.d.len() {
            let sum = c.s.samples[i] + c.y.samples[i] + c.v.samples[i] + c.z.samples[i];
            worst_sum = worst_sum.max((c.d.samples[i] - sum).abs());
        }
    }

    let many = sample_specs(5000, 402, &corpus.speakers(), "acc").unwrap();
    let frac = |f: &dyn Fn(&paec::synth::SceneSpec) -> bool, of: &[&paec::synth::SceneSpec]| {
        of.iter().filter(|s| f(s)).count() as f64 / of.len() as f64
    };
    let all: Vec<_> = many.iter().collect();
    let scen = [Scenario::Dt, Scenario::Fest, Scenario::Nest].map(|k| frac(&|s| s.scenario == k, &all));
    let with_near: Vec<_> = many.iter().filter(|s| s.scenario.has_near_end()).collect();
    let inter = [0u8, 1, 2].map(|k| frac(&|s| s.n_interferers == k, &with_near));
    let within = |got: &[f64; 3], want: [f64; 3]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.03);
    let pass = worst_ratio <= 0.1 && worst_sum <= 1e-6 && within(&scen, [0.8, 0.1, 0.1]) && within(&inter, [0.2, 0.5, 0.3]);
    outcome(
        pass,
        format!(
            "500 clips: worst SER/SNR deviation {worst_ratio:.2e} dB over {checked} ratios (<= 0.1), worst |d-(s+y+v+z)| {worst_sum:.1e} (<= 1e-6); \
             5000 specs: DT/FEST/NEST {:.3}/{:.3}/{:.3}, interferers 0/1/2 {:.3}/{:.3}/{:.3} (+-0.03)",
            scen[0], scen[1], scen[2], inter[0], inter[1], inter[2]
        ),
    )
}

// ---------------------------------------------------------------- model

fn parameter_budgets() -> Outcome {
    let budgets = [
        (Variant::GftnnAec, 2.45),
        (Variant::GftnnPse, 3.54),
        (Variant::GftnnL, 7.15),
        (Variant::Tdpf1, 6.59),
        (Variant::Tdpf2, 6.59),
        (Variant::Tdpf3, 6.59),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (v, budget) in budgets {
        let m = count_params(&ModelVariantConfig::default_for(v)).unwrap() as f64 / 1e6;
        let rel = m / budget - 1.0;
        pass &= rel.abs() <= 0.15;
        parts.push(format!("{v} {m:.3}M ({:+.1}%)", 100.0 * rel));
    }
    outcome(pass, format!("{} (within 15%)", parts.join(", ")))
}

fn random_inputs(frames: usize, enroll_frames: usize, seed: u64) -> ModelInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = || Array2::from_shape_simple_fn((frames, N_BINS), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let (d, e, y_lin) = (spec(), spec(), spec());
    ModelInputs {
        d,
        e,
        y_lin,
        speaker: Some(SpeakerInputs {
            enroll: Array3::from_shape_simple_fn((enroll_frames, N_BINS, 2), || rng.random_range(-1.0..1.0)),
            fbank: Array1::from_shape_simple_fn(FBANK_DIM, || rng.random_range(-1.0..1.0)),
            embedding: Array1::from_shape_simple_fn(EMBEDDING_DIM, || rng.random_range(-0.1..0.1)),
        }),
    }
}

fn causality() -> Outcome {
    let base = random_inputs(100, 20, 500);
    let mut pass = true;
    let mut failures = Vec::new();
    let mut checks = 0;
    for v in Variant::ALL {
        let m = Model::new(&ModelVariantConfig::default_for(v), 501).unwrap();
        let reference = m.forward(&base).unwrap();
        for t in [1usize, 10, 99] {
            let mut pert = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(502 + t as u64);
            for sig in [&mut pert.d, &mut pert.e, &mut pert.y_lin] {
                sig.row_mut(t).mapv_inplace(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
            }
            let out = m.forward(&pert).unwrap();
            for (a, b) in [(&reference.s1, &out.s1), (&reference.s2, &out.s2)] {
                if let (Some(a), Some(b)) = (a, b) {
                    checks += 1;
                    let past_same = a.slice(s![..t, ..]) == b.slice(s![..t, ..]);
                    let t_moved = a.row(t) != b.row(t);
                    if !(past_same && t_moved) {
                        pass = false;
                        failures.push(format!("{v} t={t}"));
                    }
                }
            }
        }
    }
    outcome(
        pass,
        if failures.is_empty() {
            format!("6 variants, t in {{1, 10, 99}}, 100 frames: {checks} stage outputs bit-identical before t")
        } else {
            format!("violations: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- losses

/// PLCPA written out in polar form, independently of the library.
fn plcpa_reference(target: &Array2<Complex64>, estimate: &Array2<Complex64>, p: f64, alpha: f64) -> f64 {
    const EPS: f64 = 1e-12;
    // Magnitude (|x|^2 + eps)^(p/2) carrying the phase of x.
    let compressed = |x: Complex64| {
        let m = (x.norm_sqr() + EPS).powf(p / 2.0);
        let (r, theta) = x.to_polar();
        let c = Complex64::from_polar(m * r / (r * r + EPS).sqrt(), theta);
        (m, c)
    };
    let n = target.len() as f64;
    let mut total = 0.0;
    for (t, e) in target.iter().zip(estimate) {
        let (mt, ct) = compressed(*t);
        let (me, ce) = compressed(*e);
        total += alpha * (mt - me).powi(2) + (1.0 - alpha) * (ct - ce).norm_sqr();
    }
    total / n
}

fn random_grid(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Central differences of `f` at every entry of `x`.
fn numeric_grad(x: &Array2<Complex64>, h: f64, f: &dyn Fn(&Array2<Complex64>) -> f64) -> Array2<Complex64> {
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let mut part = [0.0; 2];
        for (k, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += dir;
            xm.as_slice_mut().unwrap()[idx] -= dir;
            part[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g.as_slice_mut().unwrap()[idx] = Complex64::new(part[0], part[1]);
    }
    g
}

fn rel_err(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt());
    diff / scale.max(1e-300)
}

fn plcpa_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut worst = 0.0f64;
    let mut worst_compressed = 0.0f64;
    let mut zero_ok = true;
    for (rows, cols, alpha) in [(3, 5, 0.5), (4, 7, 0.3), (2, 9, 1.0), (5, 4, 0.0)] {
        let spec = LossSpec { p: 0.5, alpha };
        let t = random_grid(rows, cols, &mut rng);
        let e = random_grid(rows, cols, &mut rng);
        let (loss, g) = plcpa_grad(&t, &e, &spec).unwrap();
        assert!((loss - plcpa_reference(&t, &e, 0.5, alpha)).abs() < 1e-12);
        let num = numeric_grad(&e, 1e-6, &|x| plcpa_reference(&t, x, 0.5, alpha));
        worst = worst.max(rel_err(&g, &num));

        // Gradient with respect to the compressed network output.
        let z = random_grid(rows, cols, &mut rng);
        let (_, gz) = plcpa_grad_compressed(&t, &z, &spec, 0.5).unwrap();
        let decompress = |x: &Array2<Complex64>| x.mapv(|v| v * v.norm());
        let num = numeric_grad(&z, 1e-6, &|x| plcpa_reference(&t, &decompress(x), 0.5, alpha));
        worst_compressed = worst_compressed.max(rel_err(&gz, &num));

        zero_ok &= plcpa_bins(&t, &t, &spec).unwrap() == 0.0;
        for (k, bump) in [Complex64::new(1e-4, 0.0), Complex64::new(0.0, 1e-4), t[[0, 0]] * 1e-4].into_iter().enumerate() {
            let mut e2 = t.clone();
            e2[[k % rows, k % cols]] += bump;
            zero_ok &= plcpa_bins(&t, &e2, &spec).unwrap() > 0.0;
        }
        // A phase change alone moves the complex term.
        if alpha < 1.0 {
            let mut e2 = t.clone();
            e2[[0, 0]] *= Complex64::from_polar(1.0, 0.3);
            zero_ok &= plcpa_bins(&t, &e2, &spec).unwrap() > 0.0;
        }
    }
    outcome(
        worst < 1e-4 && worst_compressed < 1e-4 && zero_ok,
        format!(
            "relative error {worst:.2e} (estimate), {worst_compressed:.2e} (compressed output), < 1e-4; zero iff equal: {zero_ok}"
        ),
    )
}

fn loss_wiring(clips: &[ScenarioClip]) -> Outcome {
    let spec = LossSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst_sum = 0.0f64;
    let mut oracle_term = f64::NAN;
    let mut worst_target = 0.0f64;
    let mut with_interferers = 0;
    for c in clips.iter().filter(|c| c.spec.scenario == Scenario::Dt) {
        let targets = TargetSpectra::from_waveforms(Some(&c.s), Some(&c.y), Some(&c.z)).unwrap();
        let shape = targets.s.as_ref().unwrap().raw_dim();
        let rand_out = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_simple_fn(shape.clone(), || Complex64::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        };
        for v in [Variant::Tdpf2, Variant::Tdpf3] {
            let out = StageSpectra {
                s1: Some(rand_out(&mut rng)),
                s2: Some(rand_out(&mut rng)),
            };
            let terms = variant_loss(v, &targets, &out, &spec).unwrap();
            // Terms recomputed from the component signals.
            let t1 = match v {
                Variant::Tdpf2 => stft_default(&c.y).unwrap().bins,
                _ => stft_default(&Waveform::from_samples(c.s.samples.iter().zip(&c.z.samples).map(|(a, b)| a + b).collect()))
                    .unwrap()
                    .bins,
            };
            let t2 = stft_default(&c.s).unwrap().bins;
            let r1 = plcpa_reference(&t1, out.s1.as_ref().unwrap(), spec.p, spec.alpha);
            let r2 = plcpa_reference(&t2, out.s2.as_ref().unwrap(), spec.p, spec.alpha);
            worst_sum = worst_sum.max((terms.total - (r1 + r2)).abs()).max((terms.term1.unwrap() - r1).abs());
        }

        // TDPF-2 with the echo spectrogram as its first-stage output.
        let out = StageSpectra {
            s1: Some(stft_default(&c.y).unwrap().bins),
            s2: Some(rand_out(&mut rng)),
        };
        let t = variant_loss(Variant::Tdpf2, &targets, &out, &spec).unwrap().term1.unwrap();
        oracle_term = if oracle_term.is_nan() { t } else { oracle_term.max(t) };

        if c.spec.n_interferers > 0 && c.z.energy() > 0.0 {
            with_interferers += 1;
            let (t1, _) = stage_targets(Variant::Tdpf3, &targets).unwrap();
            let sum: Vec<f64> = c.s.samples.iter().zip(&c.z.samples).map(|(a, b)| a + b).collect();
            let expect = stft_default(&Waveform::from_samples(sum)).unwrap().bins;
            let t1 = t1.unwrap();
            let scale = expect.iter().map(|x| x.norm()).fold(0.0, f64::max);
            worst_target = worst_target.max(t1.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale);
            assert_ne!(&t1, targets.s.as_ref().unwrap());
        }
    }
    let pass = worst_sum <= 1e-9 && oracle_term == 0.0 && with_interferers > 0 && worst_target <= 1e-9;
    outcome(
        pass,
        format!(
            "two-term additivity {worst_sum:.1e} (<= 1e-9); TDPF-2 stage-1 term at the echo spectrogram {oracle_term:.1e}; \
             TDPF-3 stage-1 target vs STFT(s+z) {worst_target:.1e} on {with_interferers} clips with interferers"
        ),
    )
}

// ---------------------------------------------------------------- training

fn examples(clips: &[ScenarioClip]) -> Vec<Example> {
    let provider = StubProvider::new(0);
    clips
        .iter()
        .map(|c| build_example(c, &provider, &ExampleOptions::default()).unwrap())
        .collect()
}

fn options(steps: u64, lr: f64, seed: u64) -> TrainOptions {
    TrainOptions {
        steps,
        seed,
        adam: AdamConfig { lr, ..AdamConfig::default() },
        ..TrainOptions::default()
    }
}

/// Mean SI-SNR of the first-stage output against the echo, over clips with echo.
fn stage1_echo_si_snr(model: &Model, clips: &[ScenarioClip], ex: &[Example]) -> f64 {
    let p = model.cfg.compress_p;
    let mut sum = 0.0;
    let mut n = 0;
    for (c, e) in clips.iter().zip(ex) {
        if !c.spec.scenario.has_echo() {
            continue;
        }
        let out = model.forward(&e.inputs).unwrap();
        let s1 = istft(&decompress_bins(out.s1.as_ref().unwrap(), p).unwrap()).unwrap();
        let len = s1.len().min(c.y.len());
        sum += si_snr(&s1.samples[..len], &c.y.samples[..len]).unwrap();
        n += 1;
    }
    sum / n as f64
}

struct Pretrained {
    _dir: tempfile::TempDir,
    echo_map: std::path::PathBuf,
    pse: std::path::PathBuf,
}

fn overfit(clips: &[ScenarioClip], ex: &[Example], pre: &mut Option<Pretrained>) -> Outcome {
    let start = Instant::now();
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    let mut echo_ratio = f64::NAN;
    for task in [PretrainTask::EchoMap, PretrainTask::Pse] {
        let spec = PretrainSpec::for_variant(&cfg, task).unwrap();
        let opts = options(200, 3e-3, 1);
        let init = pretrain_stage(&spec, ex, &TrainOptions { steps: 0, ..opts.clone() }, &RunIo::default()).unwrap();
        let l0 = stage_loss(&init.stage, &spec, ex, &opts.loss).unwrap();
        let out = pretrain_stage(&spec, ex, &opts, &RunIo::default()).unwrap();
        let l1 = stage_loss(&out.stage, &spec, ex, &opts.loss).unwrap();
        if task == PretrainTask::EchoMap {
            echo_ratio = l1 / l0;
        }
        let path = dir.path().join(task.name());
        save_checkpoint(&path, &out.checkpoint(&spec)).unwrap();
        paths.push(path);
    }

    let strategy = TrainStrategy {
        kind: StrategyKind::Finetune,
        stage1: Some(paths[0].clone()),
        stage2: Some(paths[1].clone()),
    };
    let seed = 2;
    let random = Model::new(&cfg, seed).unwrap();
    let snr_random = stage1_echo_si_snr(&random, clips, ex);
    let start_model = init_model(&cfg, &strategy, seed).unwrap();
    let snr_start = stage1_echo_si_snr(&start_model, clips, ex);
    let loss_start = dataset_loss(&start_model, ex, &LossSpec::default()).unwrap().total;

    // Finetune in resumable chunks and stop once the target is met.
    let run = dir.path().join("finetune");
    let io = RunIo {
        checkpoint_dir: Some(run.clone()),
        log_path: None,
        resume: true,
    };
    let (mut steps, mut reduction, mut model) = (0u64, 0.0, start_model);
    while steps < 2000 && reduction < 0.8 {
        steps += 250;
        model = train(&cfg, &strategy, ex, &options(steps, StrategyKind::Finetune.default_lr(), seed), &io)
            .unwrap()
            .model;
        reduction = 1.0 - dataset_loss(&model, ex, &LossSpec::default()).unwrap().total / loss_start;
    }
    let snr_end = stage1_echo_si_snr(&model, clips, ex);
    let el = start.elapsed();
    let pass = echo_ratio <= 0.2 && reduction >= 0.8 && snr_end - snr_random >= 5.0 && el <= Duration::from_secs(1800);
    *pre = Some(Pretrained {
        echo_map: paths[0].clone(),
        pse: paths[1].clone(),
        _dir: dir,
    });
    outcome(
        pass,
        format!(
            "echo-map loss at {:.1}% of initial after 200 steps (<= 20%); TDPF-2 finetune loss -{:.1}% after {steps} steps (>= 80%); \
             stage-1 SI-SNR vs y {snr_random:.2} dB at random init, {snr_start:.2} dB at finetune start, {snr_end:.2} dB after (gain >= 5 dB); {:.0} s (<= 1800 s)",
            100.0 * echo_ratio,
            100.0 * reduction,
            el.as_secs_f64()
        ),
    )
}

fn stage_weights(model: &Model, prefix: &str) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit(&mut |name, p| {
        if name.starts_with(prefix) {
            out.push((name.to_string(), p.value.iter().copied().collect()));
        }
    });
    out
}

fn stage_checkpoint_weights(path: &std::path::Path) -> Vec<(String, Vec<f64>)> {
    let ck = paec::model::load_checkpoint(path).unwrap();
    let stage = paec::train::stage_from_checkpoint(&ck).unwrap();
    let mut out = Vec::new();
    stage.visit(&mut |name, p| out.push((name.to_string(), p.value.iter().copied().collect())));
    out
}

fn strip(ws: Vec<(String, Vec<f64>)>, prefix: &str) -> Vec<(String, Vec<f64>)> {
    ws.into_iter().map(|(n, v)| (n[prefix.len()..].to_string(), v)).collect()
}

fn strategy_contracts(ex: &[Example], pre: &Pretrained) -> Outcome {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let both = |kind| TrainStrategy {
        kind,
        stage1: Some(pre.echo_map.clone()),
        stage2: Some(pre.pse.clone()),
    };
    let seed = 3;
    let mut freeze_ok = true;
    for strategy in [
        both(StrategyKind::FinetuneFreeze),
        TrainStrategy {
            kind: StrategyKind::JointFreeze,
            stage1: Some(pre.echo_map.clone()),
            stage2: None,
        },
    ] {
        let before = stage_weights(&init_model(&cfg, &strategy, seed).unwrap(), "stage1.");
        let trained = train(&cfg, &strategy, ex, &options(20, 1e-3, seed), &RunIo::default()).unwrap().model;
        freeze_ok &= stage_weights(&trained, "stage1.") == before;
        freeze_ok &= stage_weights(&trained, "stage2.") != stage_weights(&init_model(&cfg, &strategy, seed).unwrap(), "stage2.");
    }

    let mut load_ok = true;
    for kind in [StrategyKind::Finetune, StrategyKind::FinetuneFreeze] {
        let m = init_model(&cfg, &both(kind), seed).unwrap();
        load_ok &= strip(stage_weights(&m, "stage1."), "stage1.") == stage_checkpoint_weights(&pre.echo_map);
        load_ok &= strip(stage_weights(&m, "stage2."), "stage2.") == stage_checkpoint_weights(&pre.pse);
    }

    // Joint training from random initialization is the scratch strategy;
    // the joint strategy itself starts from the same pretrained stage 1.
    let batch = &ex[..4];
    let term1 = |s: &TrainStrategy| dataset_loss(&init_model(&cfg, s, seed).unwrap(), batch, &LossSpec::default()).unwrap().term1.unwrap();
    let ft = term1(&both(StrategyKind::Finetune));
    let random = term1(&TrainStrategy::scratch());
    let joint = term1(&TrainStrategy {
        kind: StrategyKind::Joint,
        stage1: Some(pre.echo_map.clone()),
        stage2: None,
    });
    outcome(
        freeze_ok && load_ok && ft <= random && ft <= joint,
        format!(
            "freeze leaves stage 1 bit-identical: {freeze_ok}; finetune loads both stages: {load_ok}; \
             initial stage-1 term on a 4-clip batch: finetune {ft:.4}, random-init joint {random:.4}, pretrained joint {joint:.4}"
        ),
    )
}

// ---------------------------------------------------------------- metrics

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let d = gaussian(16_000, &mut rng);
    let e0 = erle(&d, &d).unwrap();
    let tenth: Vec<f64> = d.iter().map(|x| 0.1 * x).collect();
    let e20 = erle(&d, &tenth).unwrap();

    let centered = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let s = centered(gaussian(16_000, &mut rng));
    let raw = centered(gaussian(16_000, &mut rng));
    // Noise orthogonal to s at exactly 1% of its energy.
    let proj = raw.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / energy(&s);
    let n: Vec<f64> = raw.iter().zip(&s).map(|(a, b)| a - proj * b).collect();
    let g = (energy(&s) / (100.0 * energy(&n))).sqrt();
    let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    let v20 = si_snr(&est, &s).unwrap();
    let mut worst_scale = 0.0f64;
    for k in [1e-3, 0.5, 7.0, 1e3] {
        let scaled: Vec<f64> = est.iter().map(|x| k * x).collect();
        worst_scale = worst_scale.max((si_snr(&scaled, &s).unwrap() - v20).abs());
    }
    let pass = e0 == 0.0 && (e20 - 20.0).abs() <= 1e-9 && worst_scale <= 1e-6 && (v20 - 20.0).abs() <= 1e-6;
    outcome(
        pass,
        format!(
            "erle(d,d) {e0} dB; erle(d,0.1d) {e20:.12} dB; SI-SNR scale drift {worst_scale:.1e} dB; orthogonal 20 dB case {v20:.9} dB"
        ),
    )
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("stft round trip", stft_round_trip());
    report("nlms oracle", nlms_oracle());
    report("delay estimation", tde_recovery());
    report("mixing accuracy", mixing_accuracy());
    report("parameter budgets", parameter_budgets());
    report("causality", causality());
    report("plcpa gradient", plcpa_gradient_check());

    let clips = toy_clips(20, 1.0, 0).unwrap();
    report("loss wiring", loss_wiring(&clips));
    let ex = examples(&clips);
    let mut pre = None;
    report("overfit", overfit(&clips, &ex, &mut pre));
    report("training strategies", strategy_contracts(&ex, pre.as_ref().unwrap()));
    report("metric identities", metric_identities());

    let failed: Vec<_> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
