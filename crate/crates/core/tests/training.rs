//! Trainer semantics: early stopping, determinism, resume, checkpoints,
//! the optimizer and the ablation harness.

use std::fs;
use std::path::Path;

use whar::data::{generate_synthetic, GenConfig, Splits};
use whar::model::config::{SensorFusion, VariableFusion};
use whar::model::{Model, ModelConfig};
use whar::params::ParamStore;
use whar::train::ablation::run_ablation;
use whar::train::{train, AdamW, Checkpoint, EpochLog, TrainConfig, TrainOptions, Variant};
use whar::{Error, Tensor};

fn splits() -> Splits {
    generate_synthetic(&GenConfig {
        sensors: 2,
        variables: 2,
        length: 32,
        classes: 3,
        samples_per_class: 4,
        train_domains: 2,
        ..GenConfig::default()
    })
    .unwrap()
}

fn model_cfg() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.model.sensors = 2;
    c.model.variables = 2;
    c.model.length = 32;
    c.model.classes = 3;
    c.mfe.channels = 4;
    c.csi.d_k = 8;
    c
}

fn tc(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        batch: 8,
        max_epochs,
        patience,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn trainable(store: &ParamStore) -> Vec<Vec<f32>> {
    store.iter().filter(|p| p.trainable).map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn patience_counts_epochs_without_improvement() {
    let s = splits();
    // a frozen model never improves after its first evaluation
    let t = TrainConfig {
        lr: 0.0,
        ..tc(10, 2)
    };
    let out = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.best.state.best_epoch, 1);
    assert_eq!(out.last.state.epochs_since_best, 2);
}

#[test]
fn runs_stop_at_max_epochs() {
    let s = splits();
    let out = train(&model_cfg(), &tc(2, 1), &s.train, &s.val, TrainOptions::default()).unwrap();
    assert!(out.log.len() <= 2);
    assert_eq!(out.log.last().unwrap().epoch as usize, out.log.len());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let s = splits();
    let t = TrainConfig {
        lr: 0.0,
        weight_decay: 0.5,
        batch: s.train.len(),
        variant: Some(Variant::Baseline),
        ..tc(4, 3)
    };
    let cfg = t.resolve(&model_cfg());
    let init = Model::new(&cfg, t.seed).unwrap();
    let out = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).unwrap();
    let mut after = Model::new(&cfg, t.seed).unwrap();
    out.last.restore(&mut after.store).unwrap();
    assert_eq!(trainable(&init.store), trainable(&after.store));
    // one full batch without moment mixing or batch norm: only summation order changes
    let first = out.log[0].train_loss;
    for e in &out.log {
        assert!((e.train_loss - first).abs() <= 1e-6 * first, "{} vs {first}", e.train_loss);
    }
}

#[test]
fn runs_are_reproducible() {
    let s = splits();
    let t = TrainConfig {
        variant: Some(Variant::Full),
        ..tc(3, 2)
    };
    let a = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).unwrap();
    let b = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).unwrap();
    assert_eq!(a.last.encode(), b.last.encode());
    let rows = |l: &[EpochLog]| l.iter().map(EpochLog::metrics_row).collect::<Vec<_>>();
    assert_eq!(rows(&a.log), rows(&b.log));
}

#[test]
fn resume_follows_the_uninterrupted_trajectory() {
    let s = splits();
    let tmp = tempfile::tempdir().unwrap();
    let (full, part, resumed) = (tmp.path().join("full"), tmp.path().join("snap"), tmp.path().join("resumed"));
    fs::create_dir_all(&part).unwrap();
    let t = TrainConfig {
        variant: Some(Variant::Full),
        ..tc(4, 3)
    };

    // snapshot the run directory after epoch 2
    let snap = |e: &EpochLog| {
        if e.epoch == 2 {
            for f in ["last.ckpt", "best.ckpt", "train_log.csv", "metrics.csv"] {
                fs::copy(full.join(f), part.join(f)).unwrap();
            }
        }
    };
    let mut snap = snap;
    let opts = TrainOptions {
        out_dir: Some(full.clone()),
        on_epoch: Some(&mut snap),
        ..TrainOptions::default()
    };
    let a = train(&model_cfg(), &t, &s.train, &s.val, opts).unwrap();
    assert_eq!(a.log.len(), 4);

    copy_dir(&part, &resumed);
    let ck = Checkpoint::load(&resumed.join("last.ckpt")).unwrap();
    assert_eq!(ck.state.epoch, 2);
    let opts = TrainOptions {
        out_dir: Some(resumed.clone()),
        resume: Some(ck),
        ..TrainOptions::default()
    };
    let b = train(&model_cfg(), &t, &s.train, &s.val, opts).unwrap();
    assert_eq!(b.log.len(), 2);
    for f in ["last.ckpt", "best.ckpt", "metrics.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(resumed.join(f)).unwrap(), "{f} differs");
    }
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn resume_under_other_config_is_rejected() {
    let s = splits();
    let out = train(&model_cfg(), &tc(2, 1), &s.train, &s.val, TrainOptions::default()).unwrap();
    let other = TrainConfig { lr: 3e-4, ..tc(2, 1) };
    let opts = TrainOptions {
        resume: Some(out.last),
        ..TrainOptions::default()
    };
    let err = train(&model_cfg(), &other, &s.train, &s.val, opts).err().unwrap();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
}

#[test]
fn eval_passes_are_identical() {
    let s = splits();
    let t = TrainConfig {
        variant: Some(Variant::Full),
        ..tc(2, 1)
    };
    let mut out = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).unwrap();
    let mut val = s.val.clone();
    out.best.norm.apply(&mut val).unwrap();
    let a = out.model.evaluate(&val, 3).unwrap();
    let b = out.model.evaluate(&val, 7).unwrap();
    assert_eq!(a.confusion.counts, b.confusion.counts);
    assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let s = splits();
    let out = train(&model_cfg(), &tc(2, 1), &s.train, &s.val, TrainOptions::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (p1, p2) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    out.last.save(&p1).unwrap();
    Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(&fs::read(&p1).unwrap()[..4], b"WHCK");
}

#[test]
fn checkpoint_refuses_a_different_architecture() {
    let s = splits();
    let out = train(&model_cfg(), &tc(2, 1), &s.train, &s.val, TrainOptions::default()).unwrap();
    let mut cfg = out.last.model_config.clone();
    cfg.mfe.channels = 8;
    let mut other = Model::new(&cfg, 0).unwrap();
    assert!(matches!(out.last.restore(&mut other.store), Err(Error::Checkpoint(_))));
    // and a rebuilt model under the stored config scores like the original
    let mut rebuilt = out.best.model().unwrap();
    let mut val = s.val.clone();
    out.best.norm.apply(&mut val).unwrap();
    let mut original = out.model;
    assert_eq!(
        rebuilt.evaluate(&val, 4).unwrap().macro_f1,
        original.evaluate(&val, 4).unwrap().macro_f1
    );
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let s = splits();
    let out = train(&model_cfg(), &tc(2, 1), &s.train, &s.val, TrainOptions::default()).unwrap();
    let bytes = out.last.encode();
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn divergence_aborts_the_run() {
    let s = splits();
    let t = TrainConfig {
        lr: 1e30,
        ..tc(5, 4)
    };
    let err = train(&model_cfg(), &t, &s.train, &s.val, TrainOptions::default()).err().unwrap();
    assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)), "{err}");
}

fn scalar_store(theta: f32, grad: f32) -> ParamStore {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::new(&[1], vec![theta]).unwrap());
    store.get_mut(id).grad[0] = grad;
    store
}

#[test]
fn adamw_zero_gradient_is_pure_decay() {
    let mut store = scalar_store(1.5, 0.0);
    let mut opt = AdamW::new(1e-2, 0.1);
    opt.step(&mut store).unwrap();
    assert_eq!(store.iter().next().unwrap().value.data()[0], 1.5 * (1.0 - 1e-2 * 0.1) as f32);
}

#[test]
fn adamw_first_step_closed_form() {
    // m = 0.1, v = 0.001; corrected both to 1, so the step is lr / (1 + eps)
    let mut store = scalar_store(1.0, 1.0);
    let mut opt = AdamW::new(1e-3, 1e-2);
    opt.step(&mut store).unwrap();
    let want = 1.0 * (1.0 - 1e-3 * 1e-2) - 1e-3 / (1.0 + 1e-8);
    assert!((store.iter().next().unwrap().value.data()[0] as f64 - want).abs() < 1e-7);
}

#[test]
fn adamw_constant_gradient_approaches_sign_descent() {
    let lr = 1e-3;
    let mut store = scalar_store(0.0, 0.37);
    let mut opt = AdamW::new(lr, 0.0);
    let mut prev = 0.0f32;
    let mut last_step = 0.0;
    for _ in 0..1000 {
        store.iter_mut().next().unwrap().grad[0] = 0.37;
        opt.step(&mut store).unwrap();
        let now = store.iter().next().unwrap().value.data()[0];
        last_step = (prev - now) as f64;
        prev = now;
    }
    assert!((last_step - lr).abs() < 0.01 * lr, "step {last_step}");
}

#[test]
fn adamw_rejects_non_finite_gradients_by_name() {
    let mut store = scalar_store(1.0, f32::NAN);
    let err = AdamW::new(1e-3, 0.0).step(&mut store).unwrap_err();
    assert!(err.to_string().contains("theta"), "{err}");
    assert_eq!(store.iter().next().unwrap().value.data()[0], 1.0);
}

#[test]
fn cfb_variant_is_lighter_than_baseline() {
    // the synthetic benchmark shape the ablation runs on
    let mut base = ModelConfig::default();
    base.model.sensors = 4;
    base.model.variables = 3;
    base.model.length = 128;
    base.model.classes = 6;
    let b = Model::new(&Variant::Baseline.apply(&base), 0).unwrap();
    let c = Model::new(&Variant::Cfb.apply(&base), 0).unwrap();
    assert!(c.num_parameters() < b.num_parameters());
    assert!(c.net.flops().total() < b.net.flops().total());
}

#[test]
fn variants_differ_only_in_their_flags() {
    let base = ModelConfig::default();
    let strip = |mut c: ModelConfig| {
        c.mom.enabled_pre_ltfe = false;
        c.mom.enabled_pre_gta = false;
        c.fusion.variable = VariableFusion::None;
        c.fusion.sensor = SensorFusion::Attention;
        c
    };
    let b = Variant::Baseline.apply(&base);
    for v in Variant::ALL {
        let c = v.apply(&base);
        assert_eq!(strip(c.clone()), b, "{v:?}");
    }
    let full = Variant::Full.apply(&base);
    assert!(full.mom.enabled_pre_ltfe && full.mom.enabled_pre_gta);
    assert_eq!((full.fusion.variable, full.fusion.sensor), (VariableFusion::Cfb, SensorFusion::Cfb));
    assert!(!b.mom.enabled_pre_ltfe && b.fusion.sensor == SensorFusion::Attention);
}

#[test]
fn ablation_rows_share_data_and_seeds() {
    let s = splits();
    let mut seen = 0;
    let rows = run_ablation(&model_cfg(), &tc(2, 1), &[5], (&s.train, &s.val, &s.test), |_| seen += 1).unwrap();
    assert_eq!(seen, 4);
    let labels: Vec<_> = rows.iter().map(|r| r.variant).collect();
    assert_eq!(labels, Variant::ALL);
    for r in &rows {
        assert_eq!((r.seed, r.train_samples, r.test_samples), (5, s.train.len(), s.test.len()));
        assert!(r.latency.iters >= 100);
    }
    assert!(rows[2].params < rows[0].params);
    assert_eq!(rows[0].flops, rows[1].flops);
}
