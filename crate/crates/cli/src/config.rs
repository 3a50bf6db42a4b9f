//! Flat run configuration: one key table shared by flags and config files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use flowdistill::data::{kv, NeighborMode, SplitRatios, SplitTag, SynthConfig, WindowSpec};
use flowdistill::eval::BenchConfig;
use flowdistill::losses::{Granularity, LossWeights, TblVariant};
use flowdistill::model::{Activation, EvalMode, ModelConfig, NoiseMode};
use flowdistill::train::TrainConfig;

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($key:literal = $default:literal : $help:literal,)*) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { key: $key, default: $default, help: $help }),*];
    };
}

keys! {
    "data" = "": "dataset directory holding flows.csv and meta.txt",
    "teacher" = "none": "none, oracle, or a teacher prediction file ({ratio} is substituted in sweeps)",
    "ckpt" = "": "checkpoint to resume from or evaluate",
    "out" = "out": "output directory",
    "seed" = "0": "base seed",
    "synth_n" = "16": "synthetic regions",
    "synth_t" = "2000": "synthetic time steps",
    "synth_channels" = "2": "synthetic channels",
    "synth_interval" = "30": "synthetic interval in minutes",
    "synth_amplitude" = "0.6": "daily modulation amplitude",
    "synth_weekend" = "0.7": "weekend damping factor",
    "synth_mixing" = "0.3": "spatial mixing weight",
    "synth_noise" = "2.0": "observation noise std",
    "city" = "": "city name for prompts (falls back to meta, then New York City)",
    "h_in" = "12": "input steps",
    "h_out" = "12": "forecast steps",
    "stride" = "1": "window stride",
    "train_ratio" = "0.1": "training share of windows",
    "val_ratio" = "0.1": "validation share of windows",
    "test_ratio" = "0.1": "test share of windows",
    "d" = "64": "embedding width",
    "layers" = "3": "encoder layers",
    "k" = "64": "latent width",
    "activation" = "relu": "relu or softplus",
    "noise_mode" = "std": "std or paper-variance",
    "eval_mode" = "mean": "mean or sample",
    "lr0" = "0.0055": "initial learning rate",
    "decay" = "0.6": "learning rate decay factor",
    "decay_every" = "5": "epochs between decays",
    "batch_size" = "80": "batch size",
    "max_epochs" = "50": "epoch limit",
    "patience" = "10": "early stopping patience",
    "clip_norm" = "5.0": "global gradient norm limit (0 disables)",
    "lambda_tbl" = "0.1": "teacher-bounded weight",
    "delta" = "10.0": "teacher gate margin",
    "lambda_kl" = "0.001": "KL weight",
    "lambda_spa" = "0.6": "spatial smoothness weight",
    "lambda_tem" = "0.35": "temporal smoothness weight",
    "temporal_window" = "12": "temporal neighbourhood width (even)",
    "k_r" = "8": "spatial neighbours per region",
    "granularity" = "element": "teacher gate unit: element, sample or batch",
    "tbl_variant" = "paper-literal": "paper-literal or to-teacher",
    "neighbor_mode" = "adjacency": "adjacency or literal-index",
    "oracle_noise" = "0.5": "oracle noise std as a multiple of the data std",
    "oracle_bias" = "0.0": "oracle bias in flow units",
    "ratios" = "0.1,0.2,0.3,0.4,0.5,0.6,0.7": "training ratios for sweep",
    "seeds" = "3": "seeds per sweep or ablation cell",
    "split" = "test": "split for evaluate, predict and export-prompts",
    "poi" = "": "region_id,poi_categories CSV for prompts",
    "prompt_limit" = "0": "windows to export (0 = all in the split)",
    "bench_regions" = "64": "base region count for bench",
    "bench_windows" = "64": "windows in the x1 bench test set",
    "bench_multiples" = "1,2,3,4,5": "test-set multiples",
    "bench_factors" = "1,2,4": "region-count multiples",
    "bench_reps" = "5": "timed repetitions per row",
}

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// A usage problem; the CLI exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// String values for every key after applying defaults, file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    pub values: BTreeMap<&'static str, String>,
}

impl RawConfig {
    /// Defaults, then `file` entries, then `flags`, each overriding the last.
    pub fn merge(file: Option<&str>, flags: &[(String, String)]) -> Result<Self, UsageError> {
        let mut values: BTreeMap<&'static str, String> = KEYS
            .iter()
            .map(|k| (k.key, k.default.to_string()))
            .collect();
        if let Some(text) = file {
            let pairs = kv::parse(text).map_err(|e| UsageError(format!("config file: {e}")))?;
            for (k, v) in pairs {
                let s = spec(&k).ok_or_else(|| UsageError(format!("unknown config key `{k}`")))?;
                values.insert(s.key, v);
            }
        }
        for (k, v) in flags {
            let s = spec(k).ok_or_else(|| UsageError(format!("unknown key `{k}`")))?;
            values.insert(s.key, v.clone());
        }
        Ok(RawConfig { values })
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// `key = value` text that reproduces this run through `--config`.
    pub fn render(&self, command: &str) -> String {
        let mut s = format!("# flowdistill {command} --config <this file>\n");
        s.push_str(&kv::render(
            self.values.iter().map(|(k, v)| (*k, v.clone())),
        ));
        s
    }
}

fn typed<T: FromStr>(raw: &RawConfig, key: &str, what: &str) -> Result<T, UsageError> {
    let v = raw.get(key);
    v.parse()
        .map_err(|_| UsageError(format!("`{key}`: expected {what}, got `{v}`")))
}

fn list<T: FromStr>(raw: &RawConfig, key: &str, what: &str) -> Result<Vec<T>, UsageError> {
    raw.get(key)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| {
                UsageError(format!(
                    "`{key}`: expected a comma-separated list of {what}, got `{s}`"
                ))
            })
        })
        .collect()
}

fn path(raw: &RawConfig, key: &str) -> Option<PathBuf> {
    Some(raw.get(key))
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherChoice {
    None,
    Oracle,
    File(String),
}

/// Typed view of a [`RawConfig`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub data: Option<PathBuf>,
    pub teacher: TeacherChoice,
    pub ckpt: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub synth: SynthConfig,
    pub city: Option<String>,
    pub spec: WindowSpec,
    pub ratios: SplitRatios,
    pub train: TrainConfig,
    pub neighbor_mode: NeighborMode,
    pub oracle_noise: f64,
    pub oracle_bias: f64,
    pub sweep_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split: SplitTag,
    pub poi: Option<PathBuf>,
    pub prompt_limit: usize,
    pub bench: BenchConfig,
}

const COUNT: &str = "a non-negative integer";
const NUMBER: &str = "a number";

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, UsageError> {
        let r = &raw;
        let seed: u64 = typed(r, "seed", COUNT)?;
        let teacher = match r.get("teacher") {
            "" | "none" => TeacherChoice::None,
            "oracle" => TeacherChoice::Oracle,
            p => TeacherChoice::File(p.to_string()),
        };
        let synth = SynthConfig {
            regions: typed(r, "synth_n", COUNT)?,
            timesteps: typed(r, "synth_t", COUNT)?,
            channels: typed(r, "synth_channels", COUNT)?,
            interval_minutes: typed(r, "synth_interval", COUNT)?,
            amplitude: typed(r, "synth_amplitude", NUMBER)?,
            weekend_factor: typed(r, "synth_weekend", NUMBER)?,
            mixing: typed(r, "synth_mixing", NUMBER)?,
            noise_std: typed(r, "synth_noise", NUMBER)?,
            seed,
            ..SynthConfig::default()
        };
        let spec = WindowSpec {
            h_in: typed(r, "h_in", COUNT)?,
            h_out: typed(r, "h_out", COUNT)?,
            stride: typed(r, "stride", COUNT)?,
        };
        let ratios = SplitRatios {
            train: typed(r, "train_ratio", NUMBER)?,
            val: typed(r, "val_ratio", NUMBER)?,
            test: typed(r, "test_ratio", NUMBER)?,
        };
        let model = ModelConfig {
            d: typed(r, "d", COUNT)?,
            layers: typed(r, "layers", COUNT)?,
            k: typed(r, "k", COUNT)?,
            h_in: spec.h_in,
            h_out: spec.h_out,
            activation: typed::<Activation>(r, "activation", "relu or softplus")?,
            noise_mode: typed::<NoiseMode>(r, "noise_mode", "std or paper-variance")?,
            eval_mode: typed::<EvalMode>(r, "eval_mode", "mean or sample")?,
            ..ModelConfig::default()
        };
        let weights = LossWeights {
            lambda_tbl: typed(r, "lambda_tbl", NUMBER)?,
            delta: typed(r, "delta", NUMBER)?,
            lambda_kl: typed(r, "lambda_kl", NUMBER)?,
            lambda_spa: typed(r, "lambda_spa", NUMBER)?,
            lambda_tem: typed(r, "lambda_tem", NUMBER)?,
            temporal_window: typed(r, "temporal_window", COUNT)?,
            k_r: typed(r, "k_r", COUNT)?,
            granularity: typed::<Granularity>(r, "granularity", "element, sample or batch")?,
            variant: typed::<TblVariant>(r, "tbl_variant", "paper-literal or to-teacher")?,
            ..LossWeights::default()
        };
        let train = TrainConfig {
            lr0: typed(r, "lr0", NUMBER)?,
            decay: typed(r, "decay", NUMBER)?,
            decay_every: typed(r, "decay_every", COUNT)?,
            batch_size: typed(r, "batch_size", COUNT)?,
            max_epochs: typed(r, "max_epochs", COUNT)?,
            patience: typed(r, "patience", COUNT)?,
            clip_norm: typed(r, "clip_norm", NUMBER)?,
            seed,
            weights,
            model: model.clone(),
            checkpoint_dir: None,
        };
        let split = match r.get("split") {
            "train" => SplitTag::Train,
            "val" => SplitTag::Val,
            "test" => SplitTag::Test,
            other => {
                return Err(UsageError(format!(
                    "`split`: expected train, val or test, got `{other}`"
                )))
            }
        };
        let n_seeds: u64 = typed(r, "seeds", COUNT)?;
        if n_seeds == 0 {
            return Err(UsageError("`seeds`: need at least one seed".into()));
        }
        let bench = BenchConfig {
            model: ModelConfig {
                regions: typed(r, "bench_regions", COUNT)?,
                ..model
            },
            windows: typed(r, "bench_windows", COUNT)?,
            batch_size: typed(r, "batch_size", COUNT)?,
            test_multiples: list(r, "bench_multiples", "integers")?,
            region_factors: list(r, "bench_factors", "integers")?,
            reps: typed(r, "bench_reps", COUNT)?,
            seed,
            ..BenchConfig::default()
        };
        Ok(RunConfig {
            data: path(r, "data"),
            teacher,
            ckpt: path(r, "ckpt"),
            out: path(r, "out").unwrap_or_else(|| PathBuf::from("out")),
            seed,
            synth,
            city: Some(r.get("city").to_string()).filter(|c| !c.is_empty()),
            spec,
            ratios,
            train,
            neighbor_mode: typed(r, "neighbor_mode", "adjacency or literal-index")?,
            oracle_noise: typed(r, "oracle_noise", NUMBER)?,
            oracle_bias: typed(r, "oracle_bias", NUMBER)?,
            sweep_ratios: list(r, "ratios", "numbers")?,
            seeds: (0..n_seeds).map(|i| seed + i).collect(),
            split,
            poi: path(r, "poi"),
            prompt_limit: typed(r, "prompt_limit", COUNT)?,
            bench,
            raw,
        })
    }
}
