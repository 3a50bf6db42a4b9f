use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{compute_metrics, horizon_breakdown, roughness_metrics, Metrics, Roughness};
use super::predict::predict_windows;
use crate::data::{
    chronological_split, fit_normalizer, make_windows, Dataset, FlowSeries, NeighborLists,
    SplitRatios, SplitTag, WindowSpec, Windows,
};
use crate::error::{Error, Result};
use crate::losses::Ablation;
use crate::teacher::{oracle_teacher, OracleConfig, TeacherPredictions};
use crate::train::{train, EpochLog, TrainConfig, TrainData};

/// What a teacher provider is told about the cell it serves.
pub struct CellContext<'a> {
    pub series: &'a FlowSeries,
    pub windows: &'a Windows,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Supplies teacher predictions per experiment cell; `None` for no teacher.
pub type TeacherProvider<'a> = dyn Fn(&CellContext<'_>) -> Result<Option<TeacherPredictions>> + 'a;

/// Oracle teacher re-drawn per cell from the cell's seed.
pub fn oracle_provider(
    noise_std: f64,
    bias: f64,
) -> impl Fn(&CellContext<'_>) -> Result<Option<TeacherPredictions>> {
    move |cell: &CellContext<'_>| {
        let cfg = OracleConfig {
            noise_std,
            bias,
            seed: cell.seed,
        };
        oracle_teacher(cell.series, cell.windows, cfg, 0).map(Some)
    }
}

/// A series plus the fixed parts of every run on it.
pub struct Experiment<'a> {
    pub series: &'a FlowSeries,
    pub neighbors: &'a NeighborLists,
    pub spec: WindowSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub train_ratio: f64,
    pub seed: u64,
    pub test: Metrics,
    pub horizon: Vec<Metrics>,
    pub roughness: Roughness,
    pub epochs: usize,
    pub best_epoch: usize,
    #[serde(skip)]
    pub log: Vec<EpochLog>,
}

/// Split, normalize, train and score one (ratios, config) cell on the test split.
pub fn run_cell(
    exp: &Experiment<'_>,
    ratios: SplitRatios,
    cfg: &TrainConfig,
    teacher: &TeacherProvider<'_>,
) -> Result<CellResult> {
    let windows = make_windows(exp.series, exp.spec)?;
    let splits = chronological_split(&windows, ratios)?;
    let norm = fit_normalizer(exp.series, &windows, &splits.train)?;
    let t = teacher(&CellContext {
        series: exp.series,
        windows: &windows,
        ratios,
        seed: cfg.seed,
    })?;
    let dataset = Dataset::new(exp.series.clone(), windows, norm);
    let data = TrainData {
        dataset: &dataset,
        splits: &splits,
        neighbors: exp.neighbors,
        teacher: t.as_ref(),
    };
    let out = train(&data, cfg)?;
    let test = predict_windows(
        out.best_params(),
        &out.last.model,
        &dataset,
        &splits.test,
        SplitTag::Test,
        cfg.batch_size,
        cfg.seed,
    )?;
    Ok(CellResult {
        train_ratio: ratios.train,
        seed: cfg.seed,
        test: compute_metrics(&test.pred, &test.target)?,
        horizon: horizon_breakdown(&test.pred, &test.target)?,
        roughness: roughness_metrics(&test.pred, exp.neighbors)?,
        epochs: out.log.len(),
        best_epoch: out.last.progress.best_epoch,
        log: out.log,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummary {
    pub ratio: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    pub fn summary_for(&self, ratio: f64) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.ratio == ratio)
    }

    /// `ratio,seed,mae,rmse` rows.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("ratio,seed,mae,rmse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.ratio, r.seed, r.mae, r.rmse);
        }
        s
    }

    /// One row per statistic, an MAE/RMSE column pair per training ratio.
    pub fn table_csv(&self, method: &str) -> String {
        let mut s = String::from("Method");
        for r in &self.summary {
            let pct = (r.ratio * 100.0).round();
            let _ = write!(s, ",{pct}% MAE,{pct}% RMSE");
        }
        s.push('\n');
        s.push_str(method);
        for r in &self.summary {
            let _ = write!(s, ",{:.2},{:.2}", r.mae_mean, r.rmse_mean);
        }
        s.push('\n');
        let _ = write!(s, "{method} (std)");
        for r in &self.summary {
            let _ = write!(s, ",{:.2},{:.2}", r.mae_std, r.rmse_std);
        }
        s.push('\n');
        s
    }
}

/// Fresh split and training for every (ratio, seed). `val_ratio` and
/// `test_ratio` stay fixed.
pub fn training_ratio_sweep(
    exp: &Experiment<'_>,
    teacher: &TeacherProvider<'_>,
    ratios: &[f64],
    template: &TrainConfig,
    seeds: &[u64],
    val_ratio: f64,
    test_ratio: f64,
) -> Result<SweepReport> {
    if seeds.is_empty() || ratios.is_empty() {
        return Err(Error::contract(
            "sweep needs at least one ratio and one seed",
        ));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::contract(format!(
            "training ratio {r} outside (0, 1)"
        )));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &ratio in ratios {
        let split = SplitRatios {
            train: ratio,
            val: val_ratio,
            test: test_ratio,
        };
        let mut maes = Vec::new();
        let mut rmses = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..template.clone()
            };
            let cell = run_cell(exp, split, &cfg, teacher)?;
            rows.push(SweepRow {
                ratio,
                seed,
                mae: cell.test.mae,
                rmse: cell.test.rmse,
            });
            maes.push(cell.test.mae);
            rmses.push(cell.test.rmse);
        }
        let (mae_mean, mae_std) = mean_std(&maes);
        let (rmse_mean, rmse_std) = mean_std(&rmses);
        summary.push(SweepSummary {
            ratio,
            mae_mean,
            mae_std,
            rmse_mean,
            rmse_std,
        });
    }
    Ok(SweepReport { rows, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Full,
    NoTb,
    NoIb,
    NoSc,
    NoTc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoTb,
        Variant::NoIb,
        Variant::NoSc,
        Variant::NoTc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "FlowDistill",
            Variant::NoTb => "w/o-TB",
            Variant::NoIb => "w/o-IB",
            Variant::NoSc => "w/o-SC",
            Variant::NoTc => "w/o-TC",
        }
    }

    pub fn ablation(self) -> Ablation {
        let mut a = Ablation::default();
        match self {
            Variant::Full => {}
            Variant::NoTb => a.no_tbl = true,
            Variant::NoIb => a.no_ib = true,
            Variant::NoSc => a.no_spa = true,
            Variant::NoTc => a.no_tem = true,
        }
        a
    }

    /// The template config with this variant's terms switched off.
    pub fn apply(self, template: &TrainConfig) -> TrainConfig {
        let mut cfg = template.clone();
        cfg.weights.ablation = self.ablation();
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub spatial_tv: f64,
    pub temporal_tv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    pub variant: &'static str,
    pub mae_mean: f64,
    pub rmse_mean: f64,
    pub spatial_tv_median: f64,
    pub temporal_tv_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    pub fn summary_for(&self, v: Variant) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.variant == v.label())
    }

    /// `Model,MAE,RMSE` rows plus the roughness diagnostics.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("Model,MAE,RMSE,spatial_tv,temporal_tv\n");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{},{:.2},{:.2},{:.4},{:.4}",
                r.variant, r.mae_mean, r.rmse_mean, r.spatial_tv_median, r.temporal_tv_median
            );
        }
        s
    }

    pub fn long_csv(&self) -> String {
        let mut s = String::from("variant,seed,mae,rmse,spatial_tv,temporal_tv\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant, r.seed, r.mae, r.rmse, r.spatial_tv, r.temporal_tv
            );
        }
        s
    }
}

/// Train every variant with identical seeds and schedule.
pub fn ablation_suite(
    exp: &Experiment<'_>,
    teacher: &TeacherProvider<'_>,
    ratios: SplitRatios,
    template: &TrainConfig,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::contract("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &v in variants {
        let mut cells = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..v.apply(template)
            };
            let no_teacher = |_: &CellContext<'_>| Ok(None);
            let provider: &TeacherProvider<'_> = if cfg.weights.needs_teacher() {
                teacher
            } else {
                &no_teacher
            };
            let cell = run_cell(exp, ratios, &cfg, provider)?;
            rows.push(AblationRow {
                variant: v.label(),
                seed,
                mae: cell.test.mae,
                rmse: cell.test.rmse,
                spatial_tv: cell.roughness.spatial,
                temporal_tv: cell.roughness.temporal,
            });
            cells.push(cell);
        }
        let pick = |f: fn(&CellResult) -> f64| cells.iter().map(f).collect::<Vec<_>>();
        summary.push(AblationSummary {
            variant: v.label(),
            mae_mean: mean_std(&pick(|c| c.test.mae)).0,
            rmse_mean: mean_std(&pick(|c| c.test.rmse)).0,
            spatial_tv_median: median(&pick(|c| c.roughness.spatial)),
            temporal_tv_median: median(&pick(|c| c.roughness.temporal)),
        });
    }
    Ok(AblationReport { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn variants_switch_single_terms() {
        let t = TrainConfig::default();
        assert_eq!(Variant::Full.apply(&t), t);
        assert_eq!(Variant::NoTc.apply(&t).weights.effective().lambda_tem, 0.0);
        assert_eq!(
            Variant::NoTc.apply(&t).weights.effective().lambda_spa,
            t.weights.lambda_spa
        );
        assert!(!Variant::NoTb.apply(&t).weights.needs_teacher());
        assert_eq!(Variant::NoIb.apply(&t).weights.effective().lambda_kl, 0.0);
    }

    #[test]
    fn table_layout() {
        let rep = SweepReport {
            rows: vec![],
            summary: vec![
                SweepSummary {
                    ratio: 0.1,
                    mae_mean: 7.221,
                    mae_std: 0.1,
                    rmse_mean: 17.02,
                    rmse_std: 0.2,
                },
                SweepSummary {
                    ratio: 0.2,
                    mae_mean: 6.94,
                    mae_std: 0.1,
                    rmse_mean: 16.24,
                    rmse_std: 0.2,
                },
            ],
        };
        let csv = rep.table_csv("FlowDistill");
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Method,10% MAE,10% RMSE,20% MAE,20% RMSE"
        );
        assert_eq!(lines.next().unwrap(), "FlowDistill,7.22,17.02,6.94,16.24");
    }
}
