use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::adam::AdamState;
use crate::binio::{put_f32s, Reader};
use crate::data::{kv, NormStats};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::model::{ModelConfig, ParamSet};
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"FDCK";
const VERSION: u32 = 1;

/// Where a run stands after a completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub epochs_done: usize,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub stale: usize,
}

impl Default for Progress {
    fn default() -> Self {
        Progress {
            epochs_done: 0,
            best_val_mae: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }
}

/// Complete training state; reloading it continues the run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub norm: NormStats,
    pub params: ParamSet,
    /// Parameters of the best validation epoch so far.
    pub best: ParamSet,
    pub adam: AdamState,
    pub progress: Progress,
    pub shuffle_rng: RngState,
    pub latent_rng: RngState,
}

fn f32_list(v: &[f32]) -> String {
    v.iter()
        .map(|x| format!("{:08x}", x.to_bits()))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f32_list(s: &str) -> Option<Vec<f32>> {
    s.split(',')
        .map(|h| u32::from_str_radix(h, 16).ok().map(f32::from_bits))
        .collect()
}

impl Checkpoint {
    fn config_block(&self) -> String {
        let m = &self.model;
        let p = &self.progress;
        kv::render([
            ("model.d", m.d.to_string()),
            ("model.layers", m.layers.to_string()),
            ("model.k", m.k.to_string()),
            ("model.h_in", m.h_in.to_string()),
            ("model.h_out", m.h_out.to_string()),
            ("model.regions", m.regions.to_string()),
            ("model.slots_per_day", m.slots_per_day.to_string()),
            ("model.days_per_week", m.days_per_week.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.noise_mode", m.noise_mode.as_str().to_string()),
            ("model.eval_mode", m.eval_mode.as_str().to_string()),
            ("model.activation", m.activation.as_str().to_string()),
            ("norm.mean", f32_list(&self.norm.mean)),
            ("norm.std", f32_list(&self.norm.std)),
            ("progress.epochs_done", p.epochs_done.to_string()),
            (
                "progress.best_val_mae",
                format!("{:016x}", p.best_val_mae.to_bits()),
            ),
            ("progress.best_epoch", p.best_epoch.to_string()),
            ("progress.stale", p.stale.to_string()),
            ("adam.step", self.adam.step.to_string()),
            ("rng.shuffle", self.shuffle_rng.encode()),
            ("rng.latent", self.latent_rng.encode()),
        ])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let block = self.config_block();
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());

        let names: Vec<String> = self.params.named().into_iter().map(|(n, _)| n).collect();
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (prefix, set) in [
            ("param", self.params.tensors()),
            ("best", self.best.tensors()),
        ] {
            tensors.extend(
                names
                    .iter()
                    .zip(set)
                    .map(|(n, t)| (format!("{prefix}.{n}"), t)),
            );
        }
        for (prefix, set) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            tensors.extend(
                names
                    .iter()
                    .zip(set.iter())
                    .map(|(n, t)| (format!("{prefix}.{n}"), t)),
            );
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            if t.ndim() > u8::MAX as usize {
                return Err(Error::Unsupported(format!(
                    "tensor {name} has too many dimensions"
                )));
            }
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, t.data());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail("bad magic, not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32("config block length")? as usize;
        let block = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|_| r.fail("config block is not UTF-8"))?;
        let mut cfg: HashMap<String, String> = kv::parse(block)?.into_iter().collect();
        let mut get = |k: &str| {
            cfg.remove(k)
                .ok_or_else(|| r.fail(format!("config block lacks `{k}`")))
        };
        let count = |v: String| {
            v.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad count `{v}`")))
        };

        let model = ModelConfig {
            d: count(get("model.d")?)?,
            layers: count(get("model.layers")?)?,
            k: count(get("model.k")?)?,
            h_in: count(get("model.h_in")?)?,
            h_out: count(get("model.h_out")?)?,
            regions: count(get("model.regions")?)?,
            slots_per_day: count(get("model.slots_per_day")?)?,
            days_per_week: count(get("model.days_per_week")?)?,
            channels: count(get("model.channels")?)?,
            noise_mode: get("model.noise_mode")?.parse()?,
            eval_mode: get("model.eval_mode")?.parse()?,
            activation: get("model.activation")?.parse()?,
        };
        model.validate()?;
        let bad = |k: &str| Error::format(path, format!("bad `{k}`"));
        let norm = NormStats {
            mean: parse_f32_list(&get("norm.mean")?).ok_or_else(|| bad("norm.mean"))?,
            std: parse_f32_list(&get("norm.std")?).ok_or_else(|| bad("norm.std"))?,
        };
        let best_bits = u64::from_str_radix(&get("progress.best_val_mae")?, 16)
            .map_err(|_| bad("progress.best_val_mae"))?;
        let progress = Progress {
            epochs_done: count(get("progress.epochs_done")?)?,
            best_val_mae: f64::from_bits(best_bits),
            best_epoch: count(get("progress.best_epoch")?)?,
            stale: count(get("progress.stale")?)?,
        };
        let step = get("adam.step")?
            .parse::<u64>()
            .map_err(|_| bad("adam.step"))?;
        let shuffle_rng =
            RngState::decode(&get("rng.shuffle")?).ok_or_else(|| bad("rng.shuffle"))?;
        let latent_rng = RngState::decode(&get("rng.latent")?).ok_or_else(|| bad("rng.latent"))?;

        let n_tensors = r.u32("tensor count")? as usize;
        let mut tensors: HashMap<String, Tensor<f32>> = HashMap::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u16("tensor name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
                .map_err(|_| r.fail("tensor name is not UTF-8"))?;
            let ndim = r.u8("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let data = r.f32s(shape.iter().product(), &format!("tensor {name}"))?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        r.finish()?;

        let names: Vec<String> = crate::model::shapes(&model)
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut group = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
            names
                .iter()
                .map(|n| {
                    tensors
                        .remove(&format!("{prefix}.{n}"))
                        .ok_or_else(|| Error::format(path, format!("missing tensor {prefix}.{n}")))
                })
                .collect()
        };
        let params = ParamSet::from_tensors(&model, group("param")?)?;
        let best = ParamSet::from_tensors(&model, group("best")?)?;
        let m = group("adam.m")?;
        let v = group("adam.v")?;
        for (a, b) in m.iter().chain(&v).zip(params.tensors().into_iter().cycle()) {
            if a.shape() != b.shape() {
                return Err(Error::format(
                    path,
                    "optimizer moment shape does not match its parameter",
                ));
            }
        }
        Ok(Checkpoint {
            model,
            norm,
            params,
            best,
            adam: AdamState { m, v, step },
            progress,
            shuffle_rng,
            latent_rng,
        })
    }

    /// Load and, when `expected` is given, require a matching model config.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let ck = Checkpoint::from_bytes(&fs::read(path)?, path)?;
        if let Some(want) = expected {
            if *want != ck.model {
                return Err(Error::Mismatch {
                    what: "checkpoint model config",
                    expected: format!("{want:?}"),
                    found: format!("{:?}", ck.model),
                });
            }
        }
        Ok(ck)
    }
}
