use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter position, flat coordinate) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

fn eval_loss<F>(build: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numerical("loss in gradient check".into()));
    }
    Ok(v)
}

/// Compare reverse-mode gradients of `build` against
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every coordinate of every parameter.
///
/// `build` receives the graph and the node ids of `params` (in order) and
/// returns the scalar loss node. Any randomness inside it must be frozen.
/// The relative error uses `max(|analytic|, 1e-8)` as denominator.
pub fn grad_check<F>(build: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    if !g.value(loss).item()?.is_finite() {
        return Err(Error::Numerical("loss in gradient check".into()));
    }
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, params[pi].shape());
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let plus = eval_loss(&build, &work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let minus = eval_loss(&build, &work)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[ci];
            let rel = (a - numeric).abs() / a.abs().max(1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}
