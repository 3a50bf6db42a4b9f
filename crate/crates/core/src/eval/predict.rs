use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::model::{predict, ModelConfig, ModelInput, ParamSet};

/// Predictions and targets for the given windows, both in original units,
/// `[W, N, H_out, C]`.
#[derive(Debug, Clone)]
pub struct WindowPredictions {
    pub pred: Tensor<f32>,
    pub target: Tensor<f32>,
    pub positions: Vec<usize>,
}

/// Run the model over `positions` in chunks of `batch_size` and invert the
/// normalization of its output.
pub fn predict_windows(
    params: &ParamSet,
    cfg: &ModelConfig,
    dataset: &Dataset,
    positions: &[usize],
    split: SplitTag,
    batch_size: usize,
    sample_seed: u64,
) -> Result<WindowPredictions> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be ≥ 1"));
    }
    let (n, h, c) = (cfg.regions, cfg.h_out, cfg.channels);
    let mut pred = Vec::with_capacity(positions.len() * n * h * c);
    let mut target = Vec::with_capacity(positions.len() * n * h * c);
    for (i, chunk) in positions.chunks(batch_size).enumerate() {
        let batch = dataset.batch(chunk, split)?;
        let out = predict(
            params,
            cfg,
            &ModelInput::from_batch(&batch),
            sample_seed.wrapping_add(i as u64),
        )?;
        for (k, v) in out.data().iter().enumerate() {
            pred.push(dataset.norm.invert(k % c, *v));
        }
        target.extend_from_slice(batch.targets.data());
    }
    let shape = vec![positions.len(), n, h, c];
    Ok(WindowPredictions {
        pred: Tensor::new(shape.clone(), pred)?,
        target: Tensor::new(shape, target)?,
        positions: positions.to_vec(),
    })
}
