use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::adam::{clip_global_norm, lr_schedule, optimizer_step, AdamState};
use super::checkpoint::{Checkpoint, Progress};
use crate::data::{Dataset, NeighborLists, SplitTag, Splits};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, predict_windows};
use crate::gradcore::{Graph, Tensor};
use crate::losses::{denormalize, total_loss, LossBreakdown, LossInputs, LossWeights};
use crate::model::{forward, init_params, EvalMode, ModelConfig, ModelInput, Noise};
use crate::rng::{stream, stream_rng, RngState};
use crate::teacher::{TeacherDims, TeacherPredictions};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once this many consecutive epochs fail to improve validation MAE.
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// When set, `last.fdck` is written after every epoch and `best.fdck`
    /// on every improvement.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.0055,
            decay: 0.6,
            decay_every: 5,
            batch_size: 80,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            clip_norm: 5.0,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::contract(format!(
                "lr0 must be > 0, got {}",
                self.lr0
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::contract(format!(
                "decay must be in (0, 1], got {}",
                self.decay
            )));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::contract("batch_size and decay_every must be ≥ 1"));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    /// Model config with data-dependent dimensions taken from the dataset.
    pub fn model_for(&self, dataset: &Dataset) -> ModelConfig {
        let mut m = self.model.clone();
        m.regions = dataset.series.regions();
        m.channels = dataset.series.channel_count();
        m.h_in = dataset.spec().h_in;
        m.h_out = dataset.spec().h_out;
        m.slots_per_day = dataset.calendar.slots_per_day;
        m.days_per_week = dataset.calendar.days_per_week;
        if self.weights.ablation.no_ib {
            m.eval_mode = EvalMode::Mean;
        }
        m
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Batch-size-weighted means of the per-batch breakdowns.
    pub loss: LossBreakdown,
    pub val_mae: f64,
    pub val_rmse: f64,
}

impl EpochLog {
    pub const HEADER: &'static str =
        "epoch,lr,reg,tbl,kl,spa,tem,total,gate_open_frac,val_mae,val_rmse";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            l.reg,
            l.tbl,
            l.kl,
            l.spa,
            l.tem,
            l.total,
            l.gate_open_fraction,
            self.val_mae,
            self.val_rmse
        )
    }
}

/// What a training run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the end of the last completed epoch.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn best_params(&self) -> &crate::model::ParamSet {
        &self.last.best
    }
}

/// Everything training reads besides its config.
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub splits: &'a Splits,
    pub neighbors: &'a NeighborLists,
    pub teacher: Option<&'a TeacherPredictions>,
}

impl TrainData<'_> {
    fn check(&self, cfg: &TrainConfig) -> Result<()> {
        if cfg.weights.needs_teacher() && self.teacher.is_none() {
            return Err(Error::contract(
                "teacher required: the teacher-bounded term is active but no teacher predictions were given",
            ));
        }
        if let Some(t) = self.teacher {
            let want = TeacherDims {
                windows: self.dataset.windows.len(),
                regions: self.dataset.series.regions(),
                h_out: self.dataset.spec().h_out,
                channels: self.dataset.series.channel_count(),
            };
            if t.dims() != want {
                return Err(Error::Mismatch {
                    what: "teacher dimensions",
                    expected: format!("{want:?}"),
                    found: format!("{:?}", t.dims()),
                });
            }
        }
        if self.neighbors.regions() != self.dataset.series.regions() {
            return Err(Error::Mismatch {
                what: "neighbor list regions",
                expected: self.dataset.series.regions().to_string(),
                found: self.neighbors.regions().to_string(),
            });
        }
        if self.splits.train.is_empty() || self.splits.val.is_empty() {
            return Err(Error::Split(
                "training and validation splits must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Fresh state: initialized parameters, zero moments, seeded streams.
pub fn initial_checkpoint(cfg: &TrainConfig, dataset: &Dataset) -> Result<Checkpoint> {
    let model = cfg.model_for(dataset);
    let params = init_params(&model, cfg.seed)?;
    Ok(Checkpoint {
        adam: AdamState::new(&params),
        best: params.clone(),
        params,
        model,
        norm: dataset.norm.clone(),
        progress: Progress::default(),
        shuffle_rng: RngState::capture(&stream_rng(cfg.seed, stream::SHUFFLE)),
        latent_rng: RngState::capture(&stream_rng(cfg.seed, stream::LATENT)),
    })
}

pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = initial_checkpoint(cfg, data.dataset)?;
    train_from(data, cfg, start)
}

/// Continue training from a checkpoint (fresh or resumed).
pub fn train_from(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut state: Checkpoint,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check(cfg)?;
    let model = cfg.model_for(data.dataset);
    if model != state.model {
        return Err(Error::Mismatch {
            what: "checkpoint model config",
            expected: format!("{model:?}"),
            found: format!("{:?}", state.model),
        });
    }
    if state.norm != data.dataset.norm {
        return Err(Error::Mismatch {
            what: "normalization statistics",
            expected: format!("{:?}", data.dataset.norm),
            found: format!("{:?}", state.norm),
        });
    }
    let weights = cfg.weights.effective();
    let deterministic_latent = cfg.weights.ablation.no_ib;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut shuffle_rng = state.shuffle_rng.restore();
    let mut latent_rng = state.latent_rng.restore();
    let mut log = Vec::new();
    let mut stopped_early = false;

    if state.progress.epochs_done > 0 && state.progress.stale >= cfg.patience {
        stopped_early = true;
    }
    while !stopped_early && state.progress.epochs_done < cfg.max_epochs {
        let epoch = state.progress.epochs_done;
        let lr = lr_schedule(epoch, cfg.lr0, cfg.decay, cfg.decay_every);
        let mut order = data.splits.train.clone();
        order.shuffle(&mut shuffle_rng);

        let mut sums = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.dataset.batch(chunk, SplitTag::Train)?;
            if batch.split != SplitTag::Train {
                return Err(Error::contract(
                    "only training windows may produce gradients",
                ));
            }
            let teacher_rows = data
                .teacher
                .map(|t| t.rows(&batch.window_index))
                .transpose()?;
            let diverged = |reason: String| Error::Diverged { epoch, reason };

            let mut g: Graph<f32> = Graph::new();
            let p = state.params.to_graph(&mut g);
            let input = ModelInput::from_batch(&batch);
            let noise = if deterministic_latent {
                Noise::Mean
            } else {
                Noise::Sample(&mut latent_rng)
            };
            let fwd = forward(&mut g, &p, &state.model, &input, noise)
                .map_err(|e| diverged(e.to_string()))?;
            let pred =
                denormalize(&mut g, fwd.pred, &state.norm).map_err(|e| diverged(e.to_string()))?;
            let inputs = LossInputs {
                pred,
                target: &batch.targets,
                teacher: teacher_rows.as_ref(),
                latent: fwd.latent,
                batch: batch.len(),
                neighbors: data.neighbors,
                frozen_gate: None,
            };
            let (total, br) = total_loss(&mut g, &inputs, &weights).map_err(|e| match e {
                Error::Numerical(m) => diverged(m),
                other => other,
            })?;
            if !br.total.is_finite() {
                return Err(diverged(format!("loss is {}", br.total)));
            }
            let grads = g.backward(total).map_err(|e| diverged(e.to_string()))?;
            let mut grad_list: Vec<Tensor<f32>> = p
                .ids()
                .into_iter()
                .zip(state.params.tensors())
                .map(|(id, t)| grads.get_or_zeros(id, t.shape()))
                .collect();
            clip_global_norm(&mut grad_list, cfg.clip_norm);
            optimizer_step(&mut state.params, &grad_list, &mut state.adam, lr)
                .map_err(|e| diverged(e.to_string()))?;

            let b = batch.len() as f64;
            sums.reg += b * br.reg;
            sums.tbl += b * br.tbl;
            sums.kl += b * br.kl;
            sums.spa += b * br.spa;
            sums.tem += b * br.tem;
            sums.total += b * br.total;
            sums.gate_open_fraction += b * br.gate_open_fraction;
            seen += batch.len();
        }
        let k = seen as f64;
        let loss = LossBreakdown {
            reg: sums.reg / k,
            tbl: sums.tbl / k,
            kl: sums.kl / k,
            spa: sums.spa / k,
            tem: sums.tem / k,
            total: sums.total / k,
            gate_open_fraction: sums.gate_open_fraction / k,
        };

        let val = predict_windows(
            &state.params,
            &state.model,
            data.dataset,
            &data.splits.val,
            SplitTag::Val,
            cfg.batch_size,
            cfg.seed,
        )?;
        let m = compute_metrics(&val.pred, &val.target)?;
        if !m.mae.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation MAE is {}", m.mae),
            });
        }
        log.push(EpochLog {
            epoch,
            lr,
            loss,
            val_mae: m.mae,
            val_rmse: m.rmse,
        });

        let improved = m.mae < state.progress.best_val_mae;
        if improved {
            state.progress.best_val_mae = m.mae;
            state.progress.best_epoch = epoch;
            state.progress.stale = 0;
            state.best = state.params.clone();
        } else {
            state.progress.stale += 1;
        }
        state.progress.epochs_done = epoch + 1;
        state.shuffle_rng = RngState::capture(&shuffle_rng);
        state.latent_rng = RngState::capture(&latent_rng);
        if let Some(dir) = &cfg.checkpoint_dir {
            state.save(&dir.join("last.fdck"))?;
            if improved {
                state.save(&dir.join("best.fdck"))?;
            }
        }
        if state.progress.stale >= cfg.patience {
            stopped_early = true;
        }
    }
    Ok(TrainOutcome {
        last: state,
        log,
        stopped_early,
    })
}
