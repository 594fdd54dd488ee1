//! Per-(sensor, variable) min/max scaling to `[-1, 1]`.

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    /// Channel extrema over every sample of `d` (the training split).
    pub fn fit(d: &Dataset) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::Empty("normalization statistics need a non-empty dataset"));
        }
        let ch = d.sensors * d.variables;
        let mut min = vec![f32::INFINITY; ch];
        let mut max = vec![f32::NEG_INFINITY; ch];
        for i in 0..d.len() {
            for (c, row) in d.sample(i).chunks(d.length).enumerate() {
                for &v in row {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        Ok(NormStats { min, max })
    }

    /// Maps `[min, max]` affinely onto `[-1, 1]` and clamps. A channel with
    /// `max == min` maps to 0.
    pub fn apply(&self, d: &mut Dataset) -> Result<()> {
        let ch = d.sensors * d.variables;
        if self.min.len() != ch {
            return Err(Error::Shape {
                op: "normalize",
                detail: format!("statistics for {} channels, dataset has {ch}", self.min.len()),
            });
        }
        let len = d.length;
        for (j, row) in d.x.chunks_mut(len).enumerate() {
            let c = j % ch;
            let (lo, hi) = (self.min[c], self.max[c]);
            if hi <= lo {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let (mid, half) = ((hi as f64 + lo as f64) / 2.0, (hi as f64 - lo as f64) / 2.0);
            for v in row {
                *v = ((*v as f64 - mid) / half).clamp(-1.0, 1.0) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        let mut d = Dataset::new(1, 2, 3, 2);
        d.push(&[0.0, 5.0, 10.0, 3.0, 3.0, 3.0], 0).unwrap();
        d
    }

    #[test]
    fn endpoints_and_midpoint() {
        let mut d = data();
        let s = NormStats::fit(&d).unwrap();
        s.apply(&mut d).unwrap();
        assert_eq!(&d.x[..3], &[-1.0, 0.0, 1.0]);
        assert_eq!(&d.x[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range_clamps() {
        let s = NormStats::fit(&data()).unwrap();
        let mut t = Dataset::new(1, 2, 3, 2);
        t.push(&[-4.0, 20.0, 7.5, 1.0, 2.0, 3.0], 1).unwrap();
        s.apply(&mut t).unwrap();
        assert_eq!(&t.x[..3], &[-1.0, 1.0, 0.5]);
    }
}
