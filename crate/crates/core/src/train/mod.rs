//! Training loop, early stopping, checkpointing and the ablation driver.

pub mod ablation;
pub mod adamw;
pub mod checkpoint;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::data::{batch_indices, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, SensorFusion, VariableFusion};
use crate::model::Model;
use crate::params::Ctx;

pub use adamw::AdamW;
pub use checkpoint::{Checkpoint, TrainState};

/// The four configurations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Attention sensor fusion, no variable fusion, no moment mixing.
    Baseline,
    /// Baseline plus moment mixing.
    Mom,
    /// Baseline with both fusion stages replaced by cascaded fusion blocks.
    Cfb,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Mom, Variant::Cfb, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Mom => "+mom",
            Variant::Cfb => "+cfb",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label() == s || v.label().trim_start_matches('+') == s)
    }

    /// Sets the moment-mixing and fusion flags; everything else is kept.
    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut c = cfg.clone();
        let (mom, cfb) = match self {
            Variant::Baseline => (false, false),
            Variant::Mom => (true, false),
            Variant::Cfb => (false, true),
            Variant::Full => (true, true),
        };
        c.mom.enabled_pre_ltfe = mom;
        c.mom.enabled_pre_gta = mom;
        if cfb {
            c.fusion.variable = VariableFusion::Cfb;
            c.fusion.sensor = SensorFusion::Cfb;
        } else {
            c.fusion.variable = VariableFusion::None;
            c.fusion.sensor = SensorFusion::Attention;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without strict improvement of validation macro-F1 before
    /// stopping.
    pub patience: usize,
    pub seed: u64,
    /// When set, overrides the moment-mixing and fusion flags.
    pub variant: Option<Variant>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch: 32,
            max_epochs: 100,
            patience: 15,
            seed: 0,
            variant: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::Config("train.batch and train.max_epochs must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "train.patience ({}) must be below train.max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("train.lr and train.weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// The model configuration after applying [`TrainConfig::variant`].
    pub fn resolve(&self, cfg: &ModelConfig) -> ModelConfig {
        self.variant.map_or_else(|| cfg.clone(), |v| v.apply(cfg))
    }
}

const SHUFFLE_STREAM: u64 = 1;
const MOM_STREAM: u64 = 2;

/// Independent generator for `(seed, purpose, epoch)`, so a resumed run
/// draws exactly what an uninterrupted one would.
pub fn epoch_rng(seed: u64, purpose: u64, epoch: u32) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((purpose << 32) | epoch as u64);
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_acc,val_macro_f1,seconds";
    pub const METRICS_HEADER: &'static str = "epoch,train_loss,val_acc,val_macro_f1";

    pub fn csv_row(&self) -> String {
        format!("{},{:.3}", self.metrics_row(), self.seconds)
    }

    /// Row without wall-clock time; reproducible byte for byte.
    pub fn metrics_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_acc, self.val_macro_f1
        )
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where `last.ckpt`, `best.ckpt`, `train_log.csv` and `metrics.csv`
    /// go. Nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub model: Model,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn check_dims(cfg: &ModelConfig, d: &Dataset, which: &str) -> Result<()> {
    let m = &cfg.model;
    if (m.sensors, m.variables, m.length, m.classes) != (d.sensors, d.variables, d.length, d.classes) {
        return Err(Error::Config(format!(
            "{which} data is N={} M={} L={} C={} but the model expects N={} M={} L={} C={}",
            d.sensors, d.variables, d.length, d.classes, m.sensors, m.variables, m.length, m.classes
        )));
    }
    if d.is_empty() {
        return Err(Error::Empty("training needs non-empty train and validation splits"));
    }
    Ok(())
}

fn append_line(path: &PathBuf, header: &str, line: &str, fresh: bool) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

/// Trains on raw (unnormalized) splits. Normalization statistics come from
/// `train_raw` and travel inside the checkpoints.
pub fn train(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    train_raw: &Dataset,
    val_raw: &Dataset,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let cfg = tc.resolve(model_cfg);
    cfg.validate()?;
    check_dims(&cfg, train_raw, "training")?;
    check_dims(&cfg, val_raw, "validation")?;

    let mut model = Model::new(&cfg, tc.seed)?;
    let mut state = TrainState {
        best_metric: -1.0,
        ..TrainState::default()
    };
    let norm = match &opts.resume {
        Some(ck) => {
            if ck.model_config != cfg || ck.train_config != *tc {
                return Err(Error::Checkpoint("resume checkpoint was written under a different configuration".into()));
            }
            ck.restore(&mut model.store)?;
            state = ck.state;
            ck.norm.clone()
        }
        None => NormStats::fit(train_raw)?,
    };
    let mut train_set = train_raw.clone();
    norm.apply(&mut train_set)?;
    let mut val_set = val_raw.clone();
    norm.apply(&mut val_set)?;

    let mut opt = AdamW::new(tc.lr, tc.weight_decay);
    opt.t = state.step;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut best = match &opts.resume {
        Some(_) => match &opts.out_dir {
            Some(dir) if dir.join("best.ckpt").exists() => Checkpoint::load(&dir.join("best.ckpt"))?,
            _ => Checkpoint::capture(&cfg, tc, &norm, state, &model.store),
        },
        None => Checkpoint::capture(&cfg, tc, &norm, state, &model.store),
    };
    let mut last = best.clone();
    let mut log = Vec::new();

    while (state.epoch as usize) < tc.max_epochs && (state.epoch == 0 || (state.epochs_since_best as usize) < tc.patience) {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let mut shuffle = epoch_rng(tc.seed, SHUFFLE_STREAM, epoch);
        let mut mom_rng = epoch_rng(tc.seed, MOM_STREAM, epoch);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (bi, idx) in batch_indices(train_set.len(), tc.batch, Some(&mut shuffle)).iter().enumerate() {
            let batch = train_set.batch(idx)?;
            model.store.zero_grad();
            let mut ctx = Ctx::<f32>::new(&mut model.store, Mode::Train).with_rng(&mut mom_rng);
            let x = ctx.tape.constant(batch.x);
            let logits = model.net.forward(&mut ctx, x)?;
            let loss = ctx.tape.cross_entropy(logits, &batch.labels)?;
            let lv = ctx.tape.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                let kept = opts
                    .out_dir
                    .as_ref()
                    .map_or("in memory".to_string(), |d| d.join("last.ckpt").display().to_string());
                return Err(Error::Diverged {
                    epoch: epoch as usize,
                    msg: format!("loss is {lv} at batch {bi}; last good checkpoint: {kept}"),
                });
            }
            ctx.backward(loss)?;
            drop(ctx);
            opt.step(&mut model.store)?;
            loss_sum += lv * idx.len() as f64;
            seen += idx.len();
        }
        let m = model.evaluate(&val_set, tc.batch)?;
        state.epoch = epoch;
        state.step = opt.t;
        if m.macro_f1 > state.best_metric {
            state.best_metric = m.macro_f1;
            state.best_epoch = epoch;
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        last = Checkpoint::capture(&cfg, tc, &norm, state, &model.store);
        if state.best_epoch == epoch {
            best = last.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_acc: m.accuracy,
            val_macro_f1: m.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &opts.out_dir {
            last.save(&dir.join("last.ckpt"))?;
            if state.best_epoch == epoch {
                best.save(&dir.join("best.ckpt"))?;
            }
            let fresh = epoch == 1;
            append_line(&dir.join("train_log.csv"), EpochLog::HEADER, &entry.csv_row(), fresh)?;
            append_line(&dir.join("metrics.csv"), EpochLog::METRICS_HEADER, &entry.metrics_row(), fresh)?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&entry);
        }
        log.push(entry);
    }
    best.restore(&mut model.store)?;
    Ok(TrainOutcome { model, best, last, log })
}
