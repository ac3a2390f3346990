use std::sync::OnceLock;

use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pretrain::STAGE_PREFIX;
use super::runner::sample_index;
use super::strategy::model_step;
use super::*;
use crate::error::PaecError;
use crate::model::checkpoint::collect_weights;
use crate::model::stage::stack_channels;
use crate::model::{save_checkpoint, Model, ModelInputs, ModelVariantConfig, SpeakerInputs, Variant};
use crate::nn::{AdamConfig, Module};
use crate::speaker::StubProvider;
use crate::synth::{toy_clips, Scenario};

fn toy_examples() -> &'static [Example] {
    static EX: OnceLock<Vec<Example>> = OnceLock::new();
    EX.get_or_init(|| {
        let provider = StubProvider::new(0);
        toy_clips(10, 1.0, 0)
            .unwrap()
            .iter()
            .map(|c| build_example(c, &provider, &ExampleOptions::default()).unwrap())
            .collect()
    })
}

fn opts(steps: u64) -> TrainOptions {
    TrainOptions {
        steps,
        seed: 11,
        ..TrainOptions::default()
    }
}

#[test]
fn toy_set_has_every_scenario_kind_needed() {
    let ex = toy_examples();
    assert!(ex.iter().any(|e| e.scenario.has_echo()));
    assert!(ex.iter().all(|e| e.inputs.speaker.is_some()));
    let frames = ex[0].inputs.frames();
    assert_eq!(ex[0].targets.s.as_ref().unwrap().nrows(), frames);
}

#[test]
fn pretraining_is_deterministic() {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let spec = PretrainSpec::for_variant(&cfg, PretrainTask::EchoMap).unwrap();
    let a = pretrain_stage(&spec, toy_examples(), &opts(4), &RunIo::default()).unwrap();
    let b = pretrain_stage(&spec, toy_examples(), &opts(4), &RunIo::default()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.stage, b.stage);
    assert_eq!(a.log.iter().map(|e| e.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}

#[test]
fn task_and_stage_must_agree() {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let mut spec = PretrainSpec::for_variant(&cfg, PretrainTask::EchoMap).unwrap();
    spec.task = PretrainTask::AecNs;
    assert!(matches!(
        pretrain_stage(&spec, toy_examples(), &opts(1), &RunIo::default()),
        Err(PaecError::Config(_))
    ));
    assert!(PretrainSpec::for_variant(&cfg, PretrainTask::AecNs).is_err());
    assert!(PretrainSpec::for_variant(&ModelVariantConfig::toy(Variant::GftnnL), PretrainTask::EchoMap).is_err());
}

#[test]
fn pse_needs_echo_free_clips() {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let spec = PretrainSpec::for_variant(&cfg, PretrainTask::Pse).unwrap();
    let echo_only: Vec<Example> = toy_examples().iter().filter(|e| e.scenario.has_echo()).cloned().collect();
    let err = pretrain_stage(&spec, &echo_only, &opts(1), &RunIo::default()).unwrap_err();
    assert!(err.to_string().contains("echo-free"), "{err}");
}

#[test]
fn aec_ns_stage_loads_as_gftnn_aec() {
    let cfg = ModelVariantConfig::toy(Variant::GftnnAec);
    let spec = PretrainSpec::for_variant(&cfg, PretrainTask::AecNs).unwrap();
    assert_eq!(Some(&spec.stage), ModelVariantConfig::toy(Variant::Tdpf3).stage1.as_ref());
    let out = pretrain_stage(&spec, toy_examples(), &opts(2), &RunIo::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aec");
    save_checkpoint(&path, &out.checkpoint(&spec)).unwrap();

    let strategy = TrainStrategy {
        kind: StrategyKind::Finetune,
        stage1: Some(path.clone()),
        stage2: None,
    };
    let model = init_model(&cfg, &strategy, 99).unwrap();
    let ex = &toy_examples()[0];
    let x = stack_channels(&[&ex.inputs.d, &ex.inputs.e, &ex.inputs.y_lin]);
    let (direct, _) = out.stage.forward(x.view(), None, false).unwrap();
    assert_eq!(model.forward(&ex.inputs).unwrap().s1.unwrap(), direct);

    // The same stage also seeds TDPF-3's first stage.
    let tdpf3 = TrainStrategy {
        kind: StrategyKind::Joint,
        stage1: Some(path),
        stage2: None,
    };
    let m3 = init_model(&ModelVariantConfig::toy(Variant::Tdpf3), &tdpf3, 5).unwrap();
    assert_eq!(
        collect_weights(m3.stage1.as_ref().unwrap(), STAGE_PREFIX),
        collect_weights(&out.stage, STAGE_PREFIX)
    );
}

fn pretrained_pair(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let mut paths = Vec::new();
    for task in [PretrainTask::EchoMap, PretrainTask::Pse] {
        let spec = PretrainSpec::for_variant(&cfg, task).unwrap();
        let out = pretrain_stage(&spec, toy_examples(), &opts(2), &RunIo::default()).unwrap();
        let p = dir.join(task.name());
        save_checkpoint(&p, &out.checkpoint(&spec)).unwrap();
        paths.push(p);
    }
    (paths[0].clone(), paths[1].clone())
}

#[test]
fn freezing_keeps_stage1_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = pretrained_pair(dir.path());
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    for (kind, s2) in [(StrategyKind::FinetuneFreeze, Some(p2.clone())), (StrategyKind::JointFreeze, None)] {
        let strategy = TrainStrategy {
            kind,
            stage1: Some(p1.clone()),
            stage2: s2,
        };
        let before = init_model(&cfg, &strategy, 0).unwrap();
        let out = train(&cfg, &strategy, toy_examples(), &opts(5), &RunIo::default()).unwrap();
        assert_eq!(out.model.stage1, before.stage1, "{kind}");
        assert_ne!(out.model.stage2, before.stage2, "{kind}");
    }
    // Without freezing both stages move.
    let strategy = TrainStrategy {
        kind: StrategyKind::Finetune,
        stage1: Some(p1),
        stage2: Some(p2),
    };
    let before = init_model(&cfg, &strategy, 0).unwrap();
    let out = train(&cfg, &strategy, toy_examples(), &opts(3), &RunIo::default()).unwrap();
    assert_ne!(out.model.stage1, before.stage1);
}

#[test]
fn strategy_requirements() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let missing = TrainStrategy {
        kind: StrategyKind::Finetune,
        stage1: Some(dir.path().join("nope")),
        stage2: Some(dir.path().join("nope2")),
    };
    let err = init_model(&cfg, &missing, 0).unwrap_err();
    assert!(matches!(err, PaecError::Strategy(_)) && err.to_string().contains("nope"), "{err}");
    let none = TrainStrategy {
        kind: StrategyKind::JointFreeze,
        stage1: None,
        stage2: None,
    };
    assert!(matches!(init_model(&cfg, &none, 0), Err(PaecError::Strategy(_))));
    let one_stage = ModelVariantConfig::toy(Variant::GftnnL);
    let joint = TrainStrategy {
        kind: StrategyKind::Joint,
        stage1: Some(dir.path().to_path_buf()),
        stage2: None,
    };
    assert!(matches!(init_model(&one_stage, &joint, 0), Err(PaecError::Strategy(_))));
    assert!("finetune_freeze".parse::<StrategyKind>().is_ok());
    assert!("warm".parse::<StrategyKind>().unwrap_err().to_string().contains("joint_freeze"));
}

#[test]
fn mismatched_stage_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (p1, _) = pretrained_pair(dir.path());
    // An echo-map stage does not fit TDPF-3's masking first stage.
    let strategy = TrainStrategy {
        kind: StrategyKind::Joint,
        stage1: Some(p1),
        stage2: None,
    };
    assert!(matches!(
        init_model(&ModelVariantConfig::toy(Variant::Tdpf3), &strategy, 0),
        Err(PaecError::Strategy(_))
    ));
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelVariantConfig::toy(Variant::Tdpf1);
    let io = RunIo {
        checkpoint_dir: Some(dir.path().join("ck")),
        log_path: Some(dir.path().join("loss.jsonl")),
        resume: true,
    };
    let mut o = opts(6);
    o.checkpoint_every = 2;
    let full = train(&cfg, &TrainStrategy::scratch(), toy_examples(), &o, &RunIo::default()).unwrap();

    // Interrupted after step 3: the last checkpoint is at step 2.
    let mut first = o.clone();
    first.steps = 3;
    let mut io_first = io.clone();
    io_first.resume = false;
    train(&cfg, &TrainStrategy::scratch(), toy_examples(), &first, &io_first).unwrap();
    assert_eq!(read_log(io.log_path.as_ref().unwrap()).unwrap().len(), 3);
    // Simulate the crash by rolling the checkpoint back to step 2.
    let mut o2 = o.clone();
    o2.steps = 2;
    train(&cfg, &TrainStrategy::scratch(), toy_examples(), &o2, &io_first).unwrap();

    let resumed = train(&cfg, &TrainStrategy::scratch(), toy_examples(), &o, &io).unwrap();
    assert_eq!(resumed.log.first().unwrap().step, 3);
    assert_eq!(resumed.model, full.model);
    let steps: Vec<u64> = read_log(io.log_path.as_ref().unwrap()).unwrap().iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn training_reduces_loss_on_toy_set() {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let ex = &toy_examples()[..4];
    let before = dataset_loss(&Model::new(&cfg, 1).unwrap(), ex, &LossSpec::default()).unwrap();
    let mut o = opts(60);
    o.seed = 1;
    o.adam = AdamConfig { lr: 3e-3, ..AdamConfig::default() };
    let out = train(&cfg, &TrainStrategy::scratch(), ex, &o, &RunIo::default()).unwrap();
    let after = dataset_loss(&out.model, ex, &LossSpec::default()).unwrap();
    assert!(after.total < 0.7 * before.total, "{before:?} -> {after:?}");
}

#[test]
fn sampler_visits_every_example() {
    let n = toy_examples().len();
    let mut hits = vec![0; n];
    for c in 0..(3 * n as u64) {
        hits[sample_index(4, n, c)] += 1;
    }
    assert!(hits.iter().all(|&h| h == 3));
}

/// Random 5-frame inputs with speaker features.
fn random_inputs(frames: usize, seed: u64) -> (ModelInputs, TargetSpectra) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = || {
        ndarray::Array2::from_shape_fn((frames, 161), |_| {
            Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
        })
    };
    let (d, e, y_lin) = (grid(), grid(), grid());
    let (ts, ty, tz) = (grid(), grid(), grid());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let speaker = SpeakerInputs {
        enroll: Array3::from_shape_fn((4, 161, 2), |_| rng.random_range(-0.5..0.5)),
        fbank: Array1::from_shape_fn(160, |_| rng.random_range(-1.0..1.0)),
        embedding: Array1::from_shape_fn(256, |_| rng.random_range(-0.1..0.1)),
    };
    (
        ModelInputs {
            d,
            e,
            y_lin,
            speaker: Some(speaker),
        },
        TargetSpectra {
            s: Some(ts),
            y: Some(ty),
            z: Some(tz),
        },
    )
}

#[test]
fn training_loss_gradients_match_finite_differences() {
    for variant in [Variant::Tdpf2, Variant::Tdpf3, Variant::GftnnL] {
        let cfg = ModelVariantConfig::toy(variant);
        let mut model = Model::new(&cfg, 21).unwrap();
        let (inputs, targets) = random_inputs(5, 8);
        let ex = Example {
            id: "fd".into(),
            scenario: Scenario::Dt,
            inputs,
            targets,
        };
        let spec = LossSpec::default();
        model.zero_grad();
        model_step(&mut model, &ex, &spec, true, false).unwrap();

        let mut names = Vec::new();
        model.visit(&mut |n, p| names.push((n.to_string(), p.len())));
        let total: usize = names.iter().map(|n| n.1).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let picks: Vec<(String, usize)> = (0..(total / 100).max(20))
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let (name, _) = names.iter().find(|(_, len)| {
                    if k < *len {
                        true
                    } else {
                        k -= len;
                        false
                    }
                }).unwrap();
                (name.clone(), k)
            })
            .collect();
        let loss_at = |m: &Model| {
            let mut m = m.clone();
            model_step(&mut m, &ex, &spec, false, false).unwrap().total
        };
        let mut worst: f64 = 0.0;
        for (name, k) in &picks {
            let mut analytic = 0.0;
            model.visit(&mut |n, p| {
                if n == name {
                    analytic = p.grad.as_slice().unwrap()[*k];
                }
            });
            let h = 1e-5;
            let bumped = |d: f64| {
                let mut m = model.clone();
                m.visit_mut(&mut |n, p| {
                    if n == name {
                        p.value.as_slice_mut().unwrap()[*k] += d;
                    }
                });
                loss_at(&m)
            };
            let numeric = (bumped(h) - bumped(-h)) / (2.0 * h);
            let scale = numeric.abs().max(analytic.abs());
            // Below the floor central differences are dominated by roundoff.
            worst = worst.max((numeric - analytic).abs() / scale.max(1e-6));
        }
        assert!(worst < 1e-3, "{variant}: worst relative error {worst}");
    }
}

#[test]
fn stage1_term_does_not_depend_on_stage2() {
    let cfg = ModelVariantConfig::toy(Variant::Tdpf2);
    let ex = &toy_examples()[..2];
    let a = Model::new(&cfg, 3).unwrap();
    let mut b = Model::new(&cfg, 4).unwrap();
    b.stage1 = a.stage1.clone();
    let la = dataset_loss(&a, ex, &LossSpec::default()).unwrap();
    let lb = dataset_loss(&b, ex, &LossSpec::default()).unwrap();
    assert_eq!(la.term1, lb.term1);
    assert_ne!(la.term2, lb.term2);
}
