//! Datasets, the `.whar` file format, normalization, synthetic data and
//! batching.

pub mod format;
pub mod normalize;
pub mod synth;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use format::{read_dataset, write_dataset};
pub use normalize::NormStats;
pub use synth::{generate_synthetic, GenConfig, Splits};

/// Windows of shape `(N, M, L)` with integer labels in `[0, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sensors: usize,
    pub variables: usize,
    pub length: usize,
    pub classes: usize,
    /// `samples * N * M * L` values, sample-major.
    pub x: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(sensors: usize, variables: usize, length: usize, classes: usize) -> Self {
        Dataset {
            sensors,
            variables,
            length,
            classes,
            x: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self) -> usize {
        self.sensors * self.variables * self.length
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.window();
        &self.x[i * w..(i + 1) * w]
    }

    pub fn push(&mut self, window: &[f32], label: u32) -> Result<()> {
        if window.len() != self.window() {
            return Err(Error::Shape {
                op: "dataset",
                detail: format!("window of {} values, expected {}", window.len(), self.window()),
            });
        }
        if label as usize >= self.classes {
            return Err(Error::Label {
                label: label as usize,
                classes: self.classes,
            });
        }
        self.x.extend_from_slice(window);
        self.labels.push(label);
        Ok(())
    }

    /// Gathers `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<SampleBatch> {
        if indices.is_empty() {
            return Err(Error::Empty("batch needs at least one sample"));
        }
        let mut x = Vec::with_capacity(indices.len() * self.window());
        for &i in indices {
            x.extend_from_slice(self.sample(i));
        }
        Ok(SampleBatch {
            x: Tensor::new(&[indices.len(), self.sensors, self.variables, self.length], x)?,
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    /// `(B, N, M, L)`.
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Splits `0..n` into consecutive chunks of at most `batch`, optionally
/// shuffled first. Every index appears exactly once.
pub fn batch_indices<R: Rng + ?Sized>(n: usize, batch: usize, rng: Option<&mut R>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}
