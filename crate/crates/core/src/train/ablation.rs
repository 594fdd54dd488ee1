//! Four-way ablation: the same data, seeds and hyperparameters for every
//! configuration, differing only in the moment-mixing and fusion flags.

use crate::bench::{measure_latency, LatencyStats, MIN_ITERS, WARMUP};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::ModelConfig;
use crate::train::{train, TrainConfig, TrainOptions, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub test_acc: f64,
    pub test_macro_f1: f64,
    pub params: usize,
    pub flops: u64,
    pub latency: LatencyStats,
}

impl AblationRow {
    pub const HEADER: &'static str =
        "variant,seed,train_samples,test_samples,test_acc,test_macro_f1,params,flops,latency_mean_us,latency_p50_us,latency_p95_us";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{},{},{:.1},{:.1},{:.1}",
            self.variant.label(),
            self.seed,
            self.train_samples,
            self.test_samples,
            self.test_acc,
            self.test_macro_f1,
            self.params,
            self.flops,
            self.latency.mean_us,
            self.latency.p50_us,
            self.latency.p95_us
        )
    }
}

/// Trains `variant` with `seed` and scores it on `test` (raw values).
pub fn run_variant(
    base: &ModelConfig,
    tc: &TrainConfig,
    variant: Variant,
    seed: u64,
    (train_set, val, test): (&Dataset, &Dataset, &Dataset),
) -> Result<AblationRow> {
    let tc = TrainConfig {
        seed,
        variant: Some(variant),
        ..tc.clone()
    };
    let mut out = train(base, &tc, train_set, val, TrainOptions::default())?;
    let mut test_norm = test.clone();
    out.best.norm.apply(&mut test_norm)?;
    let m = out.model.evaluate(&test_norm, tc.batch)?;
    let latency = measure_latency(&mut out.model, WARMUP, MIN_ITERS, seed)?;
    Ok(AblationRow {
        variant,
        seed,
        train_samples: train_set.len(),
        test_samples: test.len(),
        test_acc: m.accuracy,
        test_macro_f1: m.macro_f1,
        params: out.model.num_parameters(),
        flops: out.model.net.flops().total(),
        latency,
    })
}

/// One row per variant and seed, variants in [`Variant::ALL`] order for
/// each seed.
pub fn run_ablation(
    base: &ModelConfig,
    tc: &TrainConfig,
    seeds: &[u64],
    data: (&Dataset, &Dataset, &Dataset),
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for v in Variant::ALL {
            let row = run_variant(base, tc, v, seed, data)?;
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Median over seeds of each variant's test accuracy and macro-F1.
pub fn summarize(rows: &[AblationRow]) -> Vec<(Variant, f64, f64)> {
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    Variant::ALL
        .into_iter()
        .filter_map(|v| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            (!sel.is_empty()).then(|| {
                (
                    v,
                    median(sel.iter().map(|r| r.test_acc).collect()),
                    median(sel.iter().map(|r| r.test_macro_f1).collect()),
                )
            })
        })
        .collect()
}
