use rand::Rng;
use rand_distr::StandardNormal;

use super::file::TeacherPredictions;
use crate::data::FlowSeries;
use crate::data::Windows;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{stream, stream_rng};

/// A synthetic teacher: ground truth shifted by `bias` plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub noise_std: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            noise_std: 0.0,
            bias: 0.0,
            seed: 0,
        }
    }
}

/// `max(0, Y + b + ε)` for every window's target block, `ε ~ N(0, σ²)`.
pub fn oracle_teacher(
    series: &FlowSeries,
    windows: &Windows,
    cfg: OracleConfig,
    fingerprint: u64,
) -> Result<TeacherPredictions> {
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) || !cfg.bias.is_finite() {
        return Err(Error::contract("oracle noise must be ≥ 0 and bias finite"));
    }
    let (n, c) = (series.regions(), series.channel_count());
    let (h_in, h_out) = (windows.spec.h_in, windows.spec.h_out);
    let mut rng = stream_rng(cfg.seed, stream::ORACLE);
    let mut values = Vec::with_capacity(windows.len() * n * h_out * c);
    for &start in &windows.starts {
        for r in 0..n {
            for t in start + h_in..start + h_in + h_out {
                for ch in 0..c {
                    let y = f64::from(series.at(r, t, ch));
                    let eps = if cfg.noise_std > 0.0 {
                        cfg.noise_std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    values.push((y + cfg.bias + eps).max(0.0) as f32);
                }
            }
        }
    }
    TeacherPredictions::new(
        Tensor::new(vec![windows.len(), n, h_out, c], values)?,
        fingerprint,
    )
}

/// Population standard deviation over every value of the series, used to
/// express oracle noise relative to the data scale.
pub fn series_std(series: &FlowSeries) -> f64 {
    let v = series.values().data();
    let n = v.len() as f64;
    let mean = v.iter().map(|x| f64::from(*x)).sum::<f64>() / n;
    (v.iter()
        .map(|x| (f64::from(*x) - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}
