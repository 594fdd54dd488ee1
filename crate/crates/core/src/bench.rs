//! Single-sample inference latency and the parameter/FLOP sweep.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::SensorFusion;
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const WARMUP: usize = 10;
pub const MIN_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub iters: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over the recorded samples.
    pub fn from_samples(samples_us: &[f64]) -> Result<Self> {
        if samples_us.is_empty() {
            return Err(Error::Empty("latency samples"));
        }
        let mut s = samples_us.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Ok(LatencyStats {
            iters: s.len(),
            mean_us: s.iter().sum::<f64>() / s.len() as f64,
            p50_us: rank(0.5),
            p95_us: rank(0.95),
        })
    }
}

/// Times `iters` single-sample eval forwards after `warmup` untimed ones.
pub fn measure_latency(model: &mut Model, warmup: usize, iters: usize, seed: u64) -> Result<LatencyStats> {
    let d = &model.config().model;
    let shape = [1, d.sensors, d.variables, d.length];
    let x = Tensor::randn(&shape, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
    for _ in 0..warmup {
        model.logits(&x)?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        model.logits(&x)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    LatencyStats::from_samples(&samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sensors: usize,
    pub channels: usize,
    pub fusion: SensorFusion,
    pub params: usize,
    pub flops: u64,
    pub fusion_flops: u64,
    pub latency: LatencyStats,
}

impl BenchRow {
    pub const HEADER: &'static str = "sensors,channels,fusion,params,flops,fusion_flops,iters,mean_us,p50_us,p95_us";

    pub fn csv_row(&self) -> String {
        let fusion = match self.fusion {
            SensorFusion::Cfb => "cfb",
            SensorFusion::Attention => "attention",
        };
        format!(
            "{},{},{},{},{},{},{},{:.1},{:.1},{:.1}",
            self.sensors,
            self.channels,
            fusion,
            self.params,
            self.flops,
            self.fusion_flops,
            self.latency.iters,
            self.latency.mean_us,
            self.latency.p50_us,
            self.latency.p95_us
        )
    }
}

/// For every (sensors, channels) point, a CFB-fusion row followed by an
/// attention-fusion row; everything else comes from `base`.
pub fn sweep(base: &ModelConfig, sensors: &[usize], channels: &[usize], iters: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sensors {
        for &d in channels {
            for fusion in [SensorFusion::Cfb, SensorFusion::Attention] {
                let mut cfg = base.clone();
                cfg.model.sensors = n;
                cfg.mfe.channels = d;
                cfg.fusion.sensor = fusion;
                let mut model = Model::new(&cfg, seed)?;
                let report = model.net.flops();
                let latency = measure_latency(&mut model, WARMUP, iters.max(MIN_ITERS), seed)?;
                rows.push(BenchRow {
                    sensors: n,
                    channels: d,
                    fusion,
                    params: model.num_parameters(),
                    flops: report.total(),
                    fusion_flops: report.stage("sensor_fusion").unwrap_or(0),
                    latency,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_by_nearest_rank() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        let st = LatencyStats::from_samples(&s).unwrap();
        assert_eq!(st.p50_us, 10.0);
        assert_eq!(st.p95_us, 19.0);
        assert_eq!(st.mean_us, 10.5);
    }

    #[test]
    fn empty_samples_rejected() {
        assert!(LatencyStats::from_samples(&[]).is_err());
    }

    #[test]
    fn sweep_pairs_fusions_and_flops_match_analyzer() {
        let mut base = ModelConfig::default();
        base.model.sensors = 2;
        base.model.variables = 2;
        base.model.length = 16;
        base.model.classes = 3;
        base.csi.d_k = 8;
        let rows = sweep(&base, &[2], &[4, 8], 1, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].fusion, SensorFusion::Cfb);
        assert_eq!(rows[1].fusion, SensorFusion::Attention);
        for r in &rows {
            assert_eq!(r.latency.iters, MIN_ITERS);
            let mut cfg = base.clone();
            cfg.mfe.channels = r.channels;
            cfg.fusion.sensor = r.fusion;
            let model = Model::new(&cfg, 5).unwrap();
            assert_eq!(model.net.flops().total(), r.flops);
        }
    }
}
