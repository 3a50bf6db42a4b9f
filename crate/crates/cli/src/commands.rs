use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde_json::json;

use flowdistill::data::{
    build_neighbor_lists, chronological_split, fit_normalizer, generate_synthetic, ingest_csv,
    make_windows, write_csv, Dataset, FlowSeries, Meta, NeighborLists, NeighborMode, RegionGraph,
    SplitRatios, SplitTag, Splits, Windows,
};
use flowdistill::eval::{
    ablation_suite, compute_metrics, horizon_breakdown, predict_windows, quartile_edges,
    roughness_metrics, scaling_benchmark, training_ratio_sweep, volume_bucket_breakdown,
    CellContext, Experiment, Report, Variant,
};
use flowdistill::teacher::{
    dataset_fingerprint, export_instruction_prompts, load_predictions, oracle_teacher, series_std,
    OracleConfig, RegionInfo, TeacherDims, TeacherPredictions,
};
use flowdistill::train::{train, train_from, Checkpoint, EpochLog, TrainData};

use crate::config::{RunConfig, TeacherChoice, UsageError};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime {
        stage: &'static str,
        source: anyhow::Error,
    },
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime {
            stage,
            source: e.into(),
        })
    }
}

type Outcome = Result<(), Failure>;

pub const FLOWS_FILE: &str = "flows.csv";
pub const META_FILE: &str = "meta.txt";
const DEFAULT_CITY: &str = "New York City";

struct Loaded {
    series: FlowSeries,
    graph: RegionGraph,
    meta: Meta,
    meta_bytes: Vec<u8>,
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.data
        .as_deref()
        .ok_or_else(|| Failure::Usage("missing required `--data` (dataset directory)".into()))
}

fn load(cfg: &RunConfig) -> Result<Loaded, Failure> {
    let dir = data_dir(cfg)?;
    let inner = || -> anyhow::Result<Loaded> {
        let meta_path = dir.join(META_FILE);
        let meta_bytes =
            fs::read(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
        let meta = Meta::parse(std::str::from_utf8(&meta_bytes).context("meta file is not UTF-8")?)
            .with_context(|| format!("parsing {}", meta_path.display()))?;
        let ingested = ingest_csv(&dir.join(FLOWS_FILE), &meta)?;
        if ingested.missing_cells > 0 || ingested.rejected_rows > 0 {
            eprintln!(
                "note: {} missing cells filled with 0, {} rows outside the series dropped",
                ingested.missing_cells, ingested.rejected_rows
            );
        }
        let n = meta.regions;
        let graph = if let Some(p) = &meta.adjacency_path {
            let p = if p.is_absolute() {
                p.clone()
            } else {
                dir.join(p)
            };
            RegionGraph::from_adjacency(n, flowdistill::data::read_adjacency(&p, n)?)?
        } else if let Some((r, c)) = meta.grid {
            RegionGraph::grid(r, c)
        } else if cfg.neighbor_mode == NeighborMode::LiteralIndex {
            RegionGraph::from_adjacency(n, vec![0.0; n * n])?
        } else {
            bail!("meta needs grid_rows/grid_cols or adjacency_path unless neighbor_mode = literal-index");
        };
        Ok(Loaded {
            series: ingested.series,
            graph,
            meta,
            meta_bytes,
        })
    };
    inner().stage("load data")
}

struct Prepared {
    dataset: Dataset,
    splits: Splits,
    neighbors: NeighborLists,
    fingerprint: u64,
}

fn prepare(cfg: &RunConfig, data: &Loaded, ratios: SplitRatios) -> Result<Prepared, Failure> {
    let windows = make_windows(&data.series, cfg.spec).stage("windowing")?;
    let splits = chronological_split(&windows, ratios).stage("split")?;
    let norm = fit_normalizer(&data.series, &windows, &splits.train).stage("normalize")?;
    let fingerprint = dataset_fingerprint(&data.meta_bytes, ratios, &windows);
    Ok(Prepared {
        dataset: Dataset::new(data.series.clone(), windows, norm),
        splits,
        neighbors: build_neighbor_lists(&data.graph, cfg.train.weights.k_r, cfg.neighbor_mode),
        fingerprint,
    })
}

fn require_teacher(cfg: &RunConfig) -> Outcome {
    if cfg.train.weights.needs_teacher() && cfg.teacher == TeacherChoice::None {
        return Err(Failure::Usage(
            "teacher required: lambda_tbl > 0 but no teacher was given (pass --teacher oracle, --teacher <file>, or --lambda-tbl 0)"
                .into(),
        ));
    }
    Ok(())
}

/// Teacher predictions for one (ratios, windows) layout.
fn resolve_teacher(
    cfg: &RunConfig,
    meta_bytes: &[u8],
    series: &FlowSeries,
    windows: &Windows,
    ratios: SplitRatios,
    seed: u64,
) -> anyhow::Result<Option<TeacherPredictions>> {
    let fingerprint = dataset_fingerprint(meta_bytes, ratios, windows);
    match &cfg.teacher {
        TeacherChoice::None => Ok(None),
        TeacherChoice::Oracle => {
            let oc = OracleConfig {
                noise_std: cfg.oracle_noise * series_std(series),
                bias: cfg.oracle_bias,
                seed,
            };
            Ok(Some(oracle_teacher(series, windows, oc, fingerprint)?))
        }
        TeacherChoice::File(p) => {
            let path = PathBuf::from(p.replace("{ratio}", &ratios.train.to_string()));
            let dims = TeacherDims {
                windows: windows.len(),
                regions: series.regions(),
                h_out: windows.spec.h_out,
                channels: series.channel_count(),
            };
            let t = load_predictions(&path, dims, fingerprint)
                .with_context(|| format!("teacher file {}", path.display()))?;
            Ok(Some(t))
        }
    }
}

fn write(out: &Path, name: &str, text: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
    let p = out.join(name);
    fs::write(&p, text)
        .with_context(|| format!("writing {}", p.display()))
        .stage("write output")?;
    Ok(p)
}

fn split_name(tag: SplitTag) -> &'static str {
    match tag {
        SplitTag::Train => "train",
        SplitTag::Val => "val",
        SplitTag::Test => "test",
        SplitTag::Unsplit => "unsplit",
    }
}

pub fn generate(cfg: &RunConfig) -> Outcome {
    let syn = generate_synthetic(&cfg.synth).stage("generate")?;
    let series = &syn.series;
    let meta = Meta {
        regions: series.regions(),
        interval_minutes: series.interval_minutes(),
        start_time: series.start_time(),
        channels: series.channels().to_vec(),
        timesteps: Some(series.timesteps()),
        grid: Some(cfg.synth.grid_shape()),
        adjacency_path: None,
        city: cfg.city.clone(),
    };
    write_csv(series, &cfg.out.join(FLOWS_FILE)).stage("write output")?;
    write(&cfg.out, META_FILE, meta.render())?;
    println!(
        "wrote {} regions × {} steps × {} channels to {}",
        series.regions(),
        series.timesteps(),
        series.channel_count(),
        cfg.out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Outcome {
    data_dir(cfg)?;
    require_teacher(cfg)?;
    let data = load(cfg)?;
    let p = prepare(cfg, &data, cfg.ratios)?;
    let teacher = resolve_teacher(
        cfg,
        &data.meta_bytes,
        &data.series,
        &p.dataset.windows,
        cfg.ratios,
        cfg.seed,
    )
    .stage("teacher")?;
    let td = TrainData {
        dataset: &p.dataset,
        splits: &p.splits,
        neighbors: &p.neighbors,
        teacher: teacher.as_ref(),
    };
    let mut tc = cfg.train.clone();
    tc.checkpoint_dir = Some(cfg.out.clone());
    let out = match &cfg.ckpt {
        Some(path) => {
            let start = Checkpoint::load(path, None).stage("load checkpoint")?;
            train_from(&td, &tc, start).stage("train")?
        }
        None => train(&td, &tc).stage("train")?,
    };
    let mut log = format!("{}\n", EpochLog::HEADER);
    for l in &out.log {
        let _ = writeln!(log, "{l}");
    }
    write(&cfg.out, "train_log.csv", log)?;
    let pr = &out.last.progress;
    println!(
        "trained {} epochs{}; best validation MAE {:.4} at epoch {}; checkpoints in {}",
        pr.epochs_done,
        if out.stopped_early {
            " (early stop)"
        } else {
            ""
        },
        pr.best_val_mae,
        pr.best_epoch,
        cfg.out.display()
    );
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.ckpt
        .as_deref()
        .ok_or_else(|| Failure::Usage("missing required `--ckpt` (checkpoint file)".into()))
}

/// Dataset prepared with the checkpoint's normalization.
fn with_checkpoint(cfg: &RunConfig) -> Result<(Loaded, Prepared, Checkpoint), Failure> {
    let path = checkpoint_path(cfg)?.to_path_buf();
    let data = load(cfg)?;
    let mut p = prepare(cfg, &data, cfg.ratios)?;
    let ck = Checkpoint::load(&path, None).stage("load checkpoint")?;
    let m = &ck.model;
    if m.regions != data.series.regions()
        || m.channels != data.series.channel_count()
        || m.h_in != cfg.spec.h_in
        || m.h_out != cfg.spec.h_out
    {
        return Err(Failure::Runtime {
            stage: "load checkpoint",
            source: anyhow!("checkpoint model {m:?} does not fit this dataset and window spec"),
        });
    }
    p.dataset.norm = ck.norm.clone();
    Ok((data, p, ck))
}

pub fn evaluate(cfg: &RunConfig) -> Outcome {
    let (_, p, ck) = with_checkpoint(cfg)?;
    let positions = p.splits.get(cfg.split).to_vec();
    let wp = predict_windows(
        &ck.best,
        &ck.model,
        &p.dataset,
        &positions,
        cfg.split,
        cfg.train.batch_size,
        cfg.seed,
    )
    .stage("predict")?;
    let inner = || -> anyhow::Result<_> {
        let overall = compute_metrics(&wp.pred, &wp.target)?;
        let horizon = horizon_breakdown(&wp.pred, &wp.target)?;
        let edges = quartile_edges(&wp.target)?;
        let buckets = volume_bucket_breakdown(&wp.pred, &wp.target, &edges)?;
        let rough = roughness_metrics(&wp.pred, &p.neighbors)?;
        Ok((overall, horizon, buckets, rough))
    };
    let (overall, horizon, buckets, rough) = inner().stage("evaluate")?;

    let mut csv = String::from("step,mae,rmse,count\n");
    for (i, m) in horizon.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", i + 1, m.mae, m.rmse, m.count);
    }
    write(&cfg.out, "horizon.csv", csv)?;
    let mut csv = String::from("lower,upper,regions,mae,rmse,count\n");
    for b in &buckets {
        let edge = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let (mae, rmse, count) = match &b.metrics {
            Some(m) => (m.mae.to_string(), m.rmse.to_string(), m.count),
            None => (String::new(), String::new(), 0),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{mae},{rmse},{count}",
            edge(b.lower),
            edge(b.upper),
            b.regions
        );
    }
    write(&cfg.out, "buckets.csv", csv)?;

    let mut rows = vec![
        json!({"scope": "overall", "mae": overall.mae, "rmse": overall.rmse, "count": overall.count}),
    ];
    rows.extend(
        horizon
            .iter()
            .enumerate()
            .map(|(i, m)| json!({"scope": format!("step {}", i + 1), "mae": m.mae, "rmse": m.rmse, "count": m.count})),
    );
    rows.extend(
        buckets
            .iter()
            .map(|b| json!({"scope": "volume bucket", "bucket": b})),
    );
    rows.push(
        json!({"scope": "roughness", "spatial_tv": rough.spatial, "temporal_tv": rough.temporal}),
    );
    Report::new(config_map(cfg), rows)
        .write(&cfg.out.join("report.json"))
        .stage("write output")?;
    println!(
        "{} split: MAE {:.4}, RMSE {:.4} over {} values; spatial TV {:.4}, temporal TV {:.4}",
        split_name(cfg.split),
        overall.mae,
        overall.rmse,
        overall.count,
        rough.spatial,
        rough.temporal
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Outcome {
    let (_, p, ck) = with_checkpoint(cfg)?;
    let all: Vec<usize> = (0..p.dataset.windows.len()).collect();
    let wp = predict_windows(
        &ck.best,
        &ck.model,
        &p.dataset,
        &all,
        SplitTag::Unsplit,
        cfg.train.batch_size,
        cfg.seed,
    )
    .stage("predict")?;
    let file = TeacherPredictions::new(wp.pred.clone(), p.fingerprint).stage("predict")?;
    file.save(&cfg.out.join("predictions.fdtp"))
        .stage("write output")?;

    let (n, h, c) = (ck.model.regions, ck.model.h_out, ck.model.channels);
    let mut csv = String::from("window_start,region,step,channel,prediction,target\n");
    let (pred, target) = (wp.pred.data(), wp.target.data());
    for &w in p.splits.get(cfg.split) {
        let start = p.dataset.windows.starts[w];
        for r in 0..n {
            for s in 0..h {
                for ch in 0..c {
                    let i = ((w * n + r) * h + s) * c + ch;
                    let _ = writeln!(csv, "{start},{r},{},{ch},{},{}", s + 1, pred[i], target[i]);
                }
            }
        }
    }
    write(&cfg.out, "predictions.csv", csv)?;
    println!(
        "wrote predictions for {} windows (predictions.fdtp) and the {} split (predictions.csv)",
        all.len(),
        split_name(cfg.split)
    );
    Ok(())
}

fn config_map(cfg: &RunConfig) -> std::collections::BTreeMap<String, String> {
    cfg.raw
        .values
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn experiment_teacher<'a>(
    cfg: &'a RunConfig,
    data: &'a Loaded,
) -> impl Fn(&CellContext<'_>) -> flowdistill::Result<Option<TeacherPredictions>> + 'a {
    move |cell: &CellContext<'_>| {
        resolve_teacher(
            cfg,
            &data.meta_bytes,
            cell.series,
            cell.windows,
            cell.ratios,
            cell.seed,
        )
        .map_err(|e| flowdistill::Error::Contract(format!("{e:#}")))
    }
}

pub fn sweep(cfg: &RunConfig) -> Outcome {
    data_dir(cfg)?;
    require_teacher(cfg)?;
    if cfg.sweep_ratios.is_empty() {
        return Err(Failure::Usage(
            "`ratios`: need at least one training ratio".into(),
        ));
    }
    let data = load(cfg)?;
    let neighbors = build_neighbor_lists(&data.graph, cfg.train.weights.k_r, cfg.neighbor_mode);
    let exp = Experiment {
        series: &data.series,
        neighbors: &neighbors,
        spec: cfg.spec,
    };
    let teacher = experiment_teacher(cfg, &data);
    let rep = training_ratio_sweep(
        &exp,
        &teacher,
        &cfg.sweep_ratios,
        &cfg.train,
        &cfg.seeds,
        cfg.ratios.val,
        cfg.ratios.test,
    )
    .stage("sweep")?;
    write(&cfg.out, "sweep.csv", rep.long_csv())?;
    let table = rep.table_csv("FlowDistill");
    write(&cfg.out, "sweep_table.csv", &table)?;
    Report::new(config_map(cfg), rep.rows.clone())
        .write(&cfg.out.join("report.json"))
        .stage("write output")?;
    print!("{table}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Outcome {
    data_dir(cfg)?;
    require_teacher(cfg)?;
    let data = load(cfg)?;
    let neighbors = build_neighbor_lists(&data.graph, cfg.train.weights.k_r, cfg.neighbor_mode);
    let exp = Experiment {
        series: &data.series,
        neighbors: &neighbors,
        spec: cfg.spec,
    };
    let teacher = experiment_teacher(cfg, &data);
    let rep = ablation_suite(
        &exp,
        &teacher,
        cfg.ratios,
        &cfg.train,
        &cfg.seeds,
        &Variant::ALL,
    )
    .stage("ablate")?;
    let table = rep.table_csv();
    write(&cfg.out, "ablation.csv", &table)?;
    write(&cfg.out, "ablation_runs.csv", rep.long_csv())?;
    Report::new(config_map(cfg), rep.rows.clone())
        .write(&cfg.out.join("report.json"))
        .stage("write output")?;
    print!("{table}");
    Ok(())
}

pub fn export_prompts(cfg: &RunConfig) -> Outcome {
    let data = load(cfg)?;
    let p = prepare(cfg, &data, cfg.ratios)?;
    let mut starts: Vec<usize> = p
        .splits
        .get(cfg.split)
        .iter()
        .map(|&w| p.dataset.windows.starts[w])
        .collect();
    if cfg.prompt_limit > 0 {
        starts.truncate(cfg.prompt_limit);
    }
    let windows = Windows {
        spec: p.dataset.windows.spec,
        starts,
    };
    let info = match &cfg.poi {
        Some(path) => RegionInfo::read_csv(path).stage("read region info")?,
        None => RegionInfo::default(),
    };
    let city = cfg
        .city
        .clone()
        .or_else(|| data.meta.city.clone())
        .unwrap_or_else(|| DEFAULT_CITY.to_string());
    let written = export_instruction_prompts(
        &data.series,
        &windows,
        &info,
        &city,
        &cfg.out.join("prompts"),
    )
    .stage("export prompts")?;
    println!(
        "wrote {} prompt files to {}",
        written.len(),
        cfg.out.join("prompts").display()
    );
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Outcome {
    let rep = scaling_benchmark(&cfg.bench).stage("bench")?;
    write(&cfg.out, "bench.csv", rep.csv())?;
    let mut rows: Vec<serde_json::Value> = Vec::new();
    for (axis, list) in [("size", &rep.size_rows), ("regions", &rep.region_rows)] {
        rows.extend(list.iter().map(|r| json!({"axis": axis, "row": r})));
    }
    rows.push(json!({
        "axis": "summary",
        "region_exponent": rep.region_exponent,
        "doubling_ratio": rep.doubling_ratio,
        "warning": rep.warning,
    }));
    Report::new(config_map(cfg), rows)
        .write(&cfg.out.join("report.json"))
        .stage("write output")?;
    if let Some(w) = &rep.warning {
        eprintln!("warning: {w}");
    }
    println!(
        "latency exponent vs regions {:.3}; ×2 test-set latency ratio {}",
        rep.region_exponent,
        rep.doubling_ratio
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}
