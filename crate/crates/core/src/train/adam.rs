use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::model::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter tensor, in [`ParamSet::named`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor<f32>> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails before touching anything if a
/// gradient is non-finite or misshapen.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if grads.len() != names.len() || state.m.len() != names.len() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            names.len()
        )));
    }
    for ((name, g), p) in names.iter().zip(grads).zip(params.tensors()) {
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::Numerical(format!("gradient of parameter `{name}`")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = f64::from(g[j]);
            let mj = BETA1 * f64::from(m[j]) + (1.0 - BETA1) * gj;
            let vj = BETA2 * f64::from(v[j]) + (1.0 - BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + EPSILON);
            *w = (f64::from(*w) - update) as f32;
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| f64::from(*v) * f64::from(*v))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = (f64::from(*v) * s) as f32;
            }
        }
    }
    norm
}

/// `lr0 · decay^⌊epoch / every⌋`.
pub fn lr_schedule(epoch: usize, lr0: f64, decay: f64, every: usize) -> f64 {
    lr0 * decay.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, shapes, ModelConfig};

    fn tiny() -> (ModelConfig, ParamSet) {
        let cfg = ModelConfig {
            d: 2,
            layers: 1,
            k: 1,
            h_in: 1,
            h_out: 1,
            regions: 1,
            slots_per_day: 1,
            days_per_week: 1,
            channels: 1,
            ..ModelConfig::default()
        };
        let p = init_params(&cfg, 0).unwrap();
        (cfg, p)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (cfg, mut p) = tiny();
        let before = p.clone();
        let mut grads: Vec<Tensor<f32>> = shapes(&cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        grads[0] = Tensor::full(grads[0].shape().to_vec(), 1.0);
        let mut st = AdamState::new(&p);
        optimizer_step(&mut p, &grads, &mut st, 0.1).unwrap();
        for (a, b) in p.e_s.data().iter().zip(before.e_s.data()) {
            assert!(((b - a) - 0.1).abs() < 1e-6);
        }
        // zero gradients leave the rest untouched
        assert!(p.w_o.bit_eq(&before.w_o));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (cfg, mut p) = tiny();
        let mut grads: Vec<Tensor<f32>> = shapes(&cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        grads[3] = Tensor::full(grads[3].shape().to_vec(), f32::NAN);
        let mut st = AdamState::new(&p);
        let err = optimizer_step(&mut p, &grads, &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("w_p"), "{err}");
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let (cfg, mut p) = tiny();
            let mut st = AdamState::new(&p);
            for k in 0..5 {
                let grads: Vec<Tensor<f32>> = shapes(&cfg)
                    .into_iter()
                    .map(|(_, s)| Tensor::full(s, 0.3 * k as f32 - 0.5))
                    .collect();
                optimizer_step(&mut p, &grads, &mut st, 0.01).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a
            .tensors()
            .iter()
            .zip(b.tensors())
            .all(|(x, y)| x.bit_eq(y)));
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 0.0055, 0.6, 5), 0.0055);
        assert!((lr_schedule(5, 0.0055, 0.6, 5) - 0.0033).abs() < 1e-15);
        assert_eq!(lr_schedule(4, 0.0055, 0.6, 5), 0.0055);
        assert_eq!(lr_schedule(37, 0.01, 1.0, 5), 0.01);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0f32, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-7);
    }
}
