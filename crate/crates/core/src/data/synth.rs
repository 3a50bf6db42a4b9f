use std::f64::consts::TAU;

use chrono::{DateTime, Utc};
use rand::Rng;
use rand_distr::StandardNormal;

use super::calendar::calendar_features;
use super::neighbors::{grid_neighbors, square_grid, RegionGraph};
use super::series::{parse_time, FlowSeries};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{stream, stream_rng};

/// Parameters of the diurnal/weekly synthetic traffic field.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub regions: usize,
    pub timesteps: usize,
    pub channels: usize,
    pub interval_minutes: u32,
    pub seed: u64,
    /// Relative diurnal amplitude `a`.
    pub amplitude: f64,
    /// Multiplier applied on Saturdays and Sundays.
    pub weekend_factor: f64,
    /// Weight of the 8-neighbor mean in spatial mixing, in `[0, 1)`.
    pub mixing: f64,
    pub noise_std: f64,
    /// Explicit per-region base rates; drawn per (region, channel) from
    /// `base_range` when absent.
    pub base_rates: Option<Vec<f64>>,
    pub base_range: (f64, f64),
    /// Grid shape; the most-square factorization of `regions` by default.
    pub grid: Option<(usize, usize)>,
    pub start_time: DateTime<Utc>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            regions: 16,
            timesteps: 2000,
            channels: 2,
            interval_minutes: 30,
            seed: 0,
            amplitude: 0.6,
            weekend_factor: 0.7,
            mixing: 0.3,
            noise_std: 2.0,
            base_rates: None,
            base_range: (10.0, 50.0),
            grid: None,
            start_time: parse_time("2021-01-01T00:00:00Z").expect("constant timestamp"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.timesteps == 0 || self.channels == 0 {
            return Err(Error::contract("synthetic N, T and C must be ≥ 1"));
        }
        if self.interval_minutes == 0 || 1440 % self.interval_minutes != 0 {
            return Err(Error::contract(format!(
                "interval of {} minutes does not divide a day",
                self.interval_minutes
            )));
        }
        let amps = [
            ("amplitude", self.amplitude),
            ("weekend_factor", self.weekend_factor),
            ("noise_std", self.noise_std),
            ("base_range low", self.base_range.0),
        ];
        for (name, v) in amps {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!(
                    "synthetic {name} must be ≥ 0, got {v}"
                )));
            }
        }
        if self.base_range.1 < self.base_range.0 {
            return Err(Error::contract("synthetic base_range is reversed"));
        }
        if !(0.0..1.0).contains(&self.mixing) {
            return Err(Error::contract(format!(
                "mixing {} outside [0, 1)",
                self.mixing
            )));
        }
        if let Some(b) = &self.base_rates {
            if b.len() != self.regions || b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::contract("base_rates needs one value ≥ 0 per region"));
            }
        }
        if let Some((r, c)) = self.grid {
            if r * c != self.regions {
                return Err(Error::contract(format!(
                    "grid {r}×{c} does not cover {} regions",
                    self.regions
                )));
            }
        }
        Ok(())
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid.unwrap_or_else(|| square_grid(self.regions))
    }

    pub fn channel_names(&self) -> Vec<String> {
        match self.channels {
            1 => vec!["inflow".into()],
            2 => vec!["inflow".into(), "outflow".into()],
            c => (0..c).map(|i| format!("flow{i}")).collect(),
        }
    }
}

/// The generator parameters behind a synthetic series.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// `[N × C]` base rates.
    pub base: Vec<f64>,
    /// `[N]` diurnal phase offsets.
    pub phase: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub series: FlowSeries,
    pub graph: RegionGraph,
    pub truth: SynthTruth,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let (n, t_len, c) = (cfg.regions, cfg.timesteps, cfg.channels);
    let (rows, cols) = cfg.grid_shape();

    let mut phase_rng = stream_rng(cfg.seed, stream::SYNTH_PHASE);
    let phase: Vec<f64> = (0..n).map(|_| phase_rng.random_range(0.0..TAU)).collect();
    let mut base_rng = stream_rng(cfg.seed, stream::SYNTH_BASE);
    let base: Vec<f64> = match &cfg.base_rates {
        Some(b) => b.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect(),
        None => (0..n * c)
            .map(|_| {
                let (lo, hi) = cfg.base_range;
                if hi > lo {
                    base_rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect(),
    };

    // calendar of an all-zero placeholder of the right shape
    let frame = FlowSeries::new(
        Tensor::zeros(vec![1, t_len, 1]),
        cfg.start_time,
        cfg.interval_minutes,
        vec!["x".into()],
    )?;
    let cal = calendar_features(&frame);
    let t1 = cal.slots_per_day as f64;

    let mut noise_rng = stream_rng(cfg.seed, stream::SYNTH_NOISE);
    let mut raw = vec![0.0f64; n * t_len * c];
    for s in 0..n {
        for t in 0..t_len {
            let diurnal = 1.0 + cfg.amplitude * (TAU * cal.tod[t] as f64 / t1 + phase[s]).sin();
            let weekly = if cal.dow[t] >= 5 {
                cfg.weekend_factor
            } else {
                1.0
            };
            for ch in 0..c {
                let clean = (base[s * c + ch] * diurnal * weekly).max(0.0);
                let eps: f64 = noise_rng.sample(StandardNormal);
                raw[(s * t_len + t) * c + ch] = clean + cfg.noise_std * eps;
            }
        }
    }

    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|s| grid_neighbors(rows, cols, s / cols, s % cols))
        .collect();
    let mut values = Vec::with_capacity(raw.len());
    for (s, nbrs) in neighbors.iter().enumerate() {
        for t in 0..t_len {
            for ch in 0..c {
                let own = raw[(s * t_len + t) * c + ch];
                let mixed = if nbrs.is_empty() || cfg.mixing == 0.0 {
                    own
                } else {
                    let mean = nbrs
                        .iter()
                        .map(|&j| raw[(j * t_len + t) * c + ch])
                        .sum::<f64>()
                        / nbrs.len() as f64;
                    (1.0 - cfg.mixing) * own + cfg.mixing * mean
                };
                values.push(mixed.max(0.0) as f32);
            }
        }
    }

    let series = FlowSeries::new(
        Tensor::new(vec![n, t_len, c], values)?,
        cfg.start_time,
        cfg.interval_minutes,
        cfg.channel_names(),
    )?;
    Ok(Synthetic {
        series,
        graph: RegionGraph::grid(rows, cols),
        truth: SynthTruth { base, phase },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spatial_tv(s: &FlowSeries, rows: usize, cols: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..s.regions() {
            for j in grid_neighbors(rows, cols, r / cols, r % cols) {
                for t in 0..s.timesteps() {
                    for ch in 0..s.channel_count() {
                        sum += f64::from((s.at(r, t, ch) - s.at(j, t, ch)).abs());
                        count += 1;
                    }
                }
            }
        }
        sum / count as f64
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            timesteps: 300,
            seed: 5,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert!(a.series.values().bit_eq(b.series.values()));
        let other = generate_synthetic(&SynthConfig { seed: 6, ..cfg }).unwrap();
        assert!(!a.series.values().bit_eq(other.series.values()));
    }

    #[test]
    fn no_modulation_is_constant_base() {
        let cfg = SynthConfig {
            timesteps: 200,
            amplitude: 0.0,
            weekend_factor: 1.0,
            mixing: 0.0,
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let syn = generate_synthetic(&cfg).unwrap();
        for s in 0..cfg.regions {
            for ch in 0..cfg.channels {
                let base = syn.truth.base[s * cfg.channels + ch] as f32;
                assert!((0..200).all(|t| syn.series.at(s, t, ch) == base));
            }
        }
    }

    #[test]
    fn mixing_lowers_spatial_variation() {
        let cfg = SynthConfig {
            timesteps: 500,
            mixing: 0.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let plain = generate_synthetic(&cfg).unwrap();
        let mixed = generate_synthetic(&SynthConfig {
            mixing: 0.5,
            ..cfg.clone()
        })
        .unwrap();
        let (r, c) = cfg.grid_shape();
        assert!(spatial_tv(&mixed.series, r, c) < spatial_tv(&plain.series, r, c));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_synthetic(&SynthConfig {
            mixing: 1.0,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate_synthetic(&SynthConfig {
            amplitude: -0.1,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate_synthetic(&SynthConfig {
            grid: Some((3, 3)),
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn weekend_is_damped() {
        // 2021-01-02 is a Saturday
        let cfg = SynthConfig {
            regions: 1,
            timesteps: 96,
            channels: 1,
            amplitude: 0.0,
            weekend_factor: 0.5,
            mixing: 0.0,
            noise_std: 0.0,
            base_rates: Some(vec![20.0]),
            ..SynthConfig::default()
        };
        let syn = generate_synthetic(&cfg).unwrap();
        assert_eq!(syn.series.at(0, 0, 0), 20.0);
        assert_eq!(syn.series.at(0, 48, 0), 10.0);
    }
}
