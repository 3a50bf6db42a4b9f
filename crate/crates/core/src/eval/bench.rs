use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::harness::median;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor};
use crate::model::{forward, init_params, ModelConfig, ModelInput, Noise};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Template model; `regions` is the base N.
    pub model: ModelConfig,
    /// Windows in the ×1 test set.
    pub windows: usize,
    pub batch_size: usize,
    pub test_multiples: Vec<usize>,
    pub region_factors: Vec<usize>,
    pub reps: usize,
    /// Untimed passes before measuring each row.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelConfig {
                d: 32,
                k: 32,
                regions: 64,
                ..ModelConfig::default()
            },
            windows: 64,
            batch_size: 32,
            test_multiples: vec![1, 2, 3, 4, 5],
            region_factors: vec![1, 2, 4],
            reps: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub regions: usize,
    pub windows: usize,
    pub median_secs: f64,
    /// Largest total of tensor bytes held by one inference graph.
    pub peak_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// Test-set scaling at the base region count.
    pub size_rows: Vec<BenchRow>,
    /// Region scaling at the ×1 test set.
    pub region_rows: Vec<BenchRow>,
    /// Least-squares slope of ln(latency) against ln(N).
    pub region_exponent: f64,
    /// Latency(×2) / latency(×1), when both were measured.
    pub doubling_ratio: Option<f64>,
    pub warning: Option<String>,
    pub timer: &'static str,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("axis,regions,windows,median_secs,peak_bytes\n");
        for (axis, rows) in [("size", &self.size_rows), ("regions", &self.region_rows)] {
            for r in rows {
                let _ = writeln!(
                    s,
                    "{axis},{},{},{},{}",
                    r.regions, r.windows, r.median_secs, r.peak_bytes
                );
            }
        }
        s
    }
}

pub const TIMER: &str = "std::time::Instant (monotonic wall clock, ns resolution on Linux)";

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn random_input(cfg: &ModelConfig, batch: usize, rng: &mut impl Rng) -> Result<ModelInput> {
    let len = batch * cfg.regions * cfg.h_in * cfg.channels;
    let inputs = Tensor::new(
        vec![batch, cfg.regions, cfg.h_in, cfg.channels],
        (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )?;
    let steps = batch * cfg.h_in;
    Ok(ModelInput {
        inputs,
        tod_idx: (0..steps)
            .map(|_| rng.random_range(0..cfg.slots_per_day))
            .collect(),
        dow_idx: (0..steps)
            .map(|_| rng.random_range(0..cfg.days_per_week))
            .collect(),
    })
}

fn measure(cfg: &BenchConfig, regions: usize, windows: usize) -> Result<BenchRow> {
    let model = ModelConfig {
        regions,
        ..cfg.model.clone()
    };
    let params = init_params(&model, cfg.seed)?;
    let mut rng = stream_rng(cfg.seed, stream::BENCH);
    let mut batches = Vec::new();
    let mut left = windows;
    while left > 0 {
        let b = left.min(cfg.batch_size);
        batches.push(random_input(&model, b, &mut rng)?);
        left -= b;
    }
    let mut peak = 0usize;
    let pass = |peak: &mut usize| -> Result<()> {
        for input in &batches {
            let mut g: Graph<f32> = Graph::new();
            let p = params.to_graph(&mut g);
            let out = forward(&mut g, &p, &model, input, Noise::Mean)?;
            std::hint::black_box(g.value(out.pred));
            *peak = (*peak).max(g.value_bytes());
        }
        Ok(())
    };
    for _ in 0..cfg.warmup {
        pass(&mut peak)?;
    }
    let mut times = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let t0 = Instant::now();
        pass(&mut peak)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(BenchRow {
        regions,
        windows,
        median_secs: median(&times),
        peak_bytes: peak,
    })
}

/// Single-threaded inference latency over test-set multiples and region counts.
pub fn scaling_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 || cfg.windows == 0 || cfg.batch_size == 0 {
        return Err(Error::contract(
            "bench needs reps, windows and batch_size ≥ 1",
        ));
    }
    if cfg.region_factors.len() < 2 {
        return Err(Error::contract(
            "bench needs at least two region factors to fit an exponent",
        ));
    }
    cfg.model.validate()?;
    let base = cfg.model.regions;
    let size_rows = cfg
        .test_multiples
        .iter()
        .map(|&m| measure(cfg, base, cfg.windows * m))
        .collect::<Result<Vec<_>>>()?;
    let region_rows = cfg
        .region_factors
        .iter()
        .map(|&f| measure(cfg, base * f, cfg.windows))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = region_rows
        .iter()
        .map(|r| (r.regions as f64, r.median_secs))
        .collect();
    let at = |m: usize| {
        size_rows
            .iter()
            .find(|r| r.windows == cfg.windows * m)
            .map(|r| r.median_secs)
    };
    let doubling_ratio = match (at(1), at(2)) {
        (Some(a), Some(b)) => Some(b / a),
        _ => None,
    };
    Ok(BenchReport {
        size_rows,
        region_rows,
        region_exponent: loglog_slope(&pts),
        doubling_ratio,
        warning: (cfg.reps == 1)
            .then(|| "reps = 1: a single measurement per row is unstable".to_string()),
        timer: TIMER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(1.3)))
            .collect();
        assert!((loglog_slope(&pts) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn single_rep_warns() {
        let cfg = BenchConfig {
            model: ModelConfig {
                d: 2,
                k: 2,
                layers: 1,
                h_in: 2,
                h_out: 2,
                regions: 2,
                ..ModelConfig::default()
            },
            windows: 3,
            batch_size: 2,
            test_multiples: vec![1, 2],
            reps: 1,
            warmup: 0,
            ..BenchConfig::default()
        };
        let rep = scaling_benchmark(&cfg).unwrap();
        assert!(rep.warning.is_some());
        assert_eq!(rep.size_rows.len(), 2);
        assert_eq!(
            rep.region_rows
                .iter()
                .map(|r| r.regions)
                .collect::<Vec<_>>(),
            vec![2, 4, 8]
        );
        assert!(rep.region_rows[2].peak_bytes > rep.region_rows[0].peak_bytes);
        let rep = scaling_benchmark(&BenchConfig { reps: 2, ..cfg }).unwrap();
        assert!(rep.warning.is_none());
    }
}
