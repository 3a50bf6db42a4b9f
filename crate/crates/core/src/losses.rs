//! Loss terms, all evaluated on predictions in original flow units.
//!
//! `total = reg + λ_tbl·tbl + λ_kl·kl + λ_spa·spa + λ_tem·tem`, where `reg` is
//! MAE against the targets, `tbl` the teacher-gated regression term, `kl` the
//! Gaussian latent's divergence from the unit prior, and `spa`/`tem` L1
//! penalties between neighboring regions and nearby horizon steps.

use std::sync::Arc;

use crate::data::{NeighborLists, NormStats};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, Real, Tensor};
use crate::model::LatentNodes;

/// Unit over which the teacher gate is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Element,
    Sample,
    Batch,
}

string_enum!(Granularity, "gate granularity", "element" => Granularity::Element, "sample" => Granularity::Sample, "batch" => Granularity::Batch);

/// What an open gate compares the prediction against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TblVariant {
    /// The ground truth; the teacher only decides where the term applies.
    #[default]
    PaperLiteral,
    /// The teacher's prediction.
    ToTeacher,
}

string_enum!(TblVariant, "teacher-bounded variant", "paper-literal" => TblVariant::PaperLiteral, "to-teacher" => TblVariant::ToTeacher);

/// Terms switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub no_tbl: bool,
    /// Drops the KL term; training also uses the latent mean.
    pub no_ib: bool,
    pub no_spa: bool,
    pub no_tem: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_tbl: f64,
    /// Gate threshold in original flow units.
    pub delta: f64,
    pub lambda_kl: f64,
    pub lambda_spa: f64,
    pub lambda_tem: f64,
    /// Temporal window `H`; offsets run over `[−H/2, H/2]`.
    pub temporal_window: usize,
    pub k_r: usize,
    pub granularity: Granularity,
    pub variant: TblVariant,
    pub ablation: Ablation,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_tbl: 0.10,
            delta: 10.0,
            lambda_kl: 1e-3,
            lambda_spa: 0.6,
            lambda_tem: 0.35,
            temporal_window: 12,
            k_r: 8,
            granularity: Granularity::Element,
            variant: TblVariant::PaperLiteral,
            ablation: Ablation::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_tbl", self.lambda_tbl),
            ("delta", self.delta),
            ("lambda_kl", self.lambda_kl),
            ("lambda_spa", self.lambda_spa),
            ("lambda_tem", self.lambda_tem),
        ];
        for (name, v) in lambdas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !self.temporal_window.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "temporal window {} must be even",
                self.temporal_window
            )));
        }
        Ok(())
    }

    /// Weights with ablated terms forced to zero.
    pub fn effective(&self) -> LossWeights {
        let a = self.ablation;
        LossWeights {
            lambda_tbl: if a.no_tbl { 0.0 } else { self.lambda_tbl },
            lambda_kl: if a.no_ib { 0.0 } else { self.lambda_kl },
            lambda_spa: if a.no_spa { 0.0 } else { self.lambda_spa },
            lambda_tem: if a.no_tem { 0.0 } else { self.lambda_tem },
            ..self.clone()
        }
    }

    pub fn needs_teacher(&self) -> bool {
        self.effective().lambda_tbl > 0.0
    }
}

/// Scalar values of every term of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reg: f64,
    pub tbl: f64,
    pub kl: f64,
    pub spa: f64,
    pub tem: f64,
    pub total: f64,
    pub gate_open_fraction: f64,
}

fn check_same<T: Real>(what: &'static str, a: &[usize], b: &Tensor<T>) -> Result<()> {
    if a != b.shape() {
        return Err(Error::Shape {
            op: what,
            lhs: a.to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zero<T: Real>(g: &mut Graph<T>) -> NodeId {
    g.constant(Tensor::scalar(T::zero()))
}

/// Map normalized `[.., C]` predictions back to original units.
pub fn denormalize<T: Real>(g: &mut Graph<T>, pred: NodeId, norm: &NormStats) -> Result<NodeId> {
    let c = norm.mean.len();
    let std = g.constant(Tensor::new(
        vec![c],
        norm.std.iter().map(|&v| T::of(f64::from(v))).collect(),
    )?);
    let mean = g.constant(Tensor::new(
        vec![c],
        norm.mean.iter().map(|&v| T::of(f64::from(v))).collect(),
    )?);
    let scaled = g.mul_broadcast(pred, std)?;
    g.add_broadcast(scaled, mean)
}

/// Mean absolute error against a fixed target.
pub fn regression_loss<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    target: &Tensor<T>,
) -> Result<NodeId> {
    check_same("regression_loss", g.shape(pred), target)?;
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    let abs = g.abs(diff)?;
    g.mean(abs)
}

fn mae<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossless() - y.to_f64_lossless()).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// 0/1 mask, open where the teacher's error exceeds the student's by less
/// than `delta` over the gating unit. Returns the mask and its open fraction.
pub fn gate_mask<T: Real>(
    pred: &Tensor<T>,
    teacher: &Tensor<T>,
    target: &Tensor<T>,
    delta: f64,
    granularity: Granularity,
) -> Result<(Tensor<T>, f64)> {
    check_same("teacher gate", pred.shape(), teacher)?;
    check_same("teacher gate", pred.shape(), target)?;
    if pred.is_empty() {
        return Err(Error::contract("teacher gate on an empty prediction"));
    }
    let unit = match granularity {
        Granularity::Element => 1,
        Granularity::Sample => pred.len() / pred.shape()[0],
        Granularity::Batch => pred.len(),
    };
    let (p, te, ta) = (pred.data(), teacher.data(), target.data());
    let mut mask = Vec::with_capacity(p.len());
    let mut open_units = 0usize;
    for u in (0..p.len()).step_by(unit) {
        let r = u..u + unit;
        let open = mae(&te[r.clone()], &ta[r.clone()]) - mae(&p[r.clone()], &ta[r]) < delta;
        open_units += usize::from(open);
        mask.extend(std::iter::repeat_n(
            if open { T::one() } else { T::zero() },
            unit,
        ));
    }
    let units = p.len() / unit;
    Ok((
        Tensor::new(pred.shape().to_vec(), mask)?,
        open_units as f64 / units as f64,
    ))
}

/// Mean over gating units of the open units' regression error; the gate is
/// a constant for differentiation. `frozen_gate` replaces the computed mask.
#[allow(clippy::too_many_arguments)]
pub fn teacher_bounded_loss<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    teacher: &Tensor<T>,
    target: &Tensor<T>,
    delta: f64,
    granularity: Granularity,
    variant: TblVariant,
    frozen_gate: Option<&Tensor<T>>,
) -> Result<(NodeId, f64)> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::contract(format!("delta must be ≥ 0, got {delta}")));
    }
    let (mask, open) = match frozen_gate {
        Some(m) => {
            check_same("teacher gate", g.shape(pred), m)?;
            let open = m.data().iter().filter(|v| **v != T::zero()).count() as f64 / m.len() as f64;
            (m.clone(), open)
        }
        None => gate_mask(g.value(pred), teacher, target, delta, granularity)?,
    };
    let reference = match variant {
        TblVariant::PaperLiteral => target,
        TblVariant::ToTeacher => teacher,
    };
    let r = g.constant(reference.clone());
    let m = g.constant(mask);
    let diff = g.sub(pred, r)?;
    let abs = g.abs(diff)?;
    let gated = g.mul(abs, m)?;
    Ok((g.mean(gated)?, open))
}

/// `Σ ½(−ln σ² − 1 + σ² + μ²) / B` over every latent coordinate.
pub fn kl_divergence<T: Real>(
    g: &mut Graph<T>,
    latent: LatentNodes,
    batch: usize,
) -> Result<NodeId> {
    if batch == 0 {
        return Err(Error::contract("KL over an empty batch"));
    }
    if let Some(bad) = g
        .value(latent.sigma2)
        .data()
        .iter()
        .find(|v| **v <= T::zero())
    {
        return Err(Error::contract(format!(
            "latent variance must be > 0, found {bad}"
        )));
    }
    let ln = g.log(latent.sigma2)?;
    let mu2 = g.square(latent.mu)?;
    let a = g.add(latent.sigma2, mu2)?;
    let b = g.sub(a, ln)?;
    let c = g.add_scalar(b, -1.0)?;
    let s = g.sum(c)?;
    g.scale(s, 0.5 / batch as f64)
}

fn pred_dims<T: Real>(g: &Graph<T>, pred: NodeId) -> Result<[usize; 4]> {
    match *g.shape(pred) {
        [b, n, h, c] => Ok([b, n, h, c]),
        ref other => Err(Error::contract(format!(
            "prediction must be B×N×H×C, got {other:?}"
        ))),
    }
}

/// Sum over each region's neighbor list of `|ŷ_s − ŷ_nbr|`, averaged over
/// `(b, s, t, c)`.
pub fn spatial_correlation_loss<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    neighbors: &NeighborLists,
) -> Result<NodeId> {
    let [b, n, h, c] = pred_dims(g, pred)?;
    if neighbors.regions() != n {
        return Err(Error::Mismatch {
            what: "neighbor list regions",
            expected: n.to_string(),
            found: neighbors.regions().to_string(),
        });
    }
    let (src, dst) = neighbors.pairs();
    if src.is_empty() {
        return Ok(zero(g));
    }
    let mut si = Vec::with_capacity(b * src.len());
    let mut di = Vec::with_capacity(b * src.len());
    for bi in 0..b {
        si.extend(src.iter().map(|s| bi * n + s));
        di.extend(dst.iter().map(|d| bi * n + d));
    }
    let rows = g.reshape(pred, vec![b * n, h * c])?;
    let a = g.gather_rows(rows, Arc::new(si))?;
    let z = g.gather_rows(rows, Arc::new(di))?;
    let diff = g.sub(a, z)?;
    let abs = g.abs(diff)?;
    let s = g.sum(abs)?;
    g.scale(s, 1.0 / (b * n * h * c) as f64)
}

/// For each step, the mean of `|ŷ_t − ŷ_{t+l}|` over in-horizon offsets
/// `0 < |l| ≤ H/2`, averaged over `(b, s, t, c)`.
pub fn temporal_correlation_loss<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    window: usize,
) -> Result<NodeId> {
    if !window.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "temporal window {window} must be even"
        )));
    }
    let [b, n, h, c] = pred_dims(g, pred)?;
    let half = (window / 2) as i64;
    let mut offsets: Vec<(usize, usize, f64)> = Vec::new();
    for t in 0..h as i64 {
        let valid: Vec<i64> = (-half..=half)
            .filter(|&l| l != 0 && (0..h as i64).contains(&(t + l)))
            .collect();
        for &l in &valid {
            offsets.push((t as usize, (t + l) as usize, 1.0 / valid.len() as f64));
        }
    }
    if offsets.is_empty() {
        return Ok(zero(g));
    }
    let per_series = offsets.len();
    let mut si = Vec::with_capacity(b * n * per_series);
    let mut di = Vec::with_capacity(b * n * per_series);
    let mut w = Vec::with_capacity(b * n * per_series * c);
    for series in 0..b * n {
        for &(t, u, weight) in &offsets {
            si.push(series * h + t);
            di.push(series * h + u);
            w.extend(std::iter::repeat_n(T::of(weight), c));
        }
    }
    let pairs = si.len();
    let rows = g.reshape(pred, vec![b * n * h, c])?;
    let a = g.gather_rows(rows, Arc::new(si))?;
    let z = g.gather_rows(rows, Arc::new(di))?;
    let diff = g.sub(a, z)?;
    let abs = g.abs(diff)?;
    let weights = g.constant(Tensor::new(vec![pairs, c], w)?);
    let weighted = g.mul(abs, weights)?;
    let s = g.sum(weighted)?;
    g.scale(s, 1.0 / (b * n * h * c) as f64)
}

/// Everything the combined loss reads for one batch.
pub struct LossInputs<'a, T: Real> {
    /// `[B, N, H_out, C]` in original units.
    pub pred: NodeId,
    pub target: &'a Tensor<T>,
    pub teacher: Option<&'a Tensor<T>>,
    pub latent: LatentNodes,
    pub batch: usize,
    pub neighbors: &'a NeighborLists,
    pub frozen_gate: Option<&'a Tensor<T>>,
}

/// Build the weighted total. Terms with zero effective weight are not built
/// and report 0.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    inputs: &LossInputs<'_, T>,
    weights: &LossWeights,
) -> Result<(NodeId, LossBreakdown)> {
    weights.validate()?;
    let w = weights.effective();
    let mut out = LossBreakdown::default();

    let reg = regression_loss(g, inputs.pred, inputs.target)?;
    out.reg = g.value(reg).item()?.to_f64_lossless();
    let mut total = reg;

    if w.lambda_tbl > 0.0 {
        let teacher = inputs.teacher.ok_or_else(|| {
            Error::contract("teacher predictions required for the teacher-bounded term")
        })?;
        let (tbl, open) = teacher_bounded_loss(
            g,
            inputs.pred,
            teacher,
            inputs.target,
            w.delta,
            w.granularity,
            w.variant,
            inputs.frozen_gate,
        )?;
        out.tbl = g.value(tbl).item()?.to_f64_lossless();
        out.gate_open_fraction = open;
        let scaled = g.scale(tbl, w.lambda_tbl)?;
        total = g.add(total, scaled)?;
    }
    if w.lambda_kl > 0.0 {
        let kl = kl_divergence(g, inputs.latent, inputs.batch)?;
        out.kl = g.value(kl).item()?.to_f64_lossless();
        let scaled = g.scale(kl, w.lambda_kl)?;
        total = g.add(total, scaled)?;
    }
    if w.lambda_spa > 0.0 {
        let spa = spatial_correlation_loss(g, inputs.pred, inputs.neighbors)?;
        out.spa = g.value(spa).item()?.to_f64_lossless();
        let scaled = g.scale(spa, w.lambda_spa)?;
        total = g.add(total, scaled)?;
    }
    if w.lambda_tem > 0.0 {
        let tem = temporal_correlation_loss(g, inputs.pred, w.temporal_window)?;
        out.tem = g.value(tem).item()?.to_f64_lossless();
        let scaled = g.scale(tem, w.lambda_tem)?;
        total = g.add(total, scaled)?;
    }
    out.total = out.reg
        + w.lambda_tbl * out.tbl
        + w.lambda_kl * out.kl
        + w.lambda_spa * out.spa
        + w.lambda_tem * out.tem;
    Ok((total, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_neighbor_lists, NeighborMode, RegionGraph};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn t64(shape: Vec<usize>, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn value(g: &Graph<f64>, id: NodeId) -> f64 {
        g.value(id).item().unwrap()
    }

    #[test]
    fn regression_hand_values() {
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![3], &[2.0, 2.0, 5.0]));
        let l = regression_loss(&mut g, p, &t64(vec![3], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(value(&g, l), 1.0);
        let same = regression_loss(&mut g, p, &t64(vec![3], &[2.0, 2.0, 5.0])).unwrap();
        assert_eq!(value(&g, same), 0.0);
        let bad = regression_loss(&mut g, p, &t64(vec![2], &[1.0, 2.0]));
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn perfect_teacher_duplicates_regression() {
        let mut g = Graph::<f64>::new();
        let target = t64(vec![2, 3], &[1.0, 5.0, 2.0, 0.0, 9.0, 4.0]);
        let p = g.param(t64(vec![2, 3], &[40.0, 5.5, 2.0, 1.0, -3.0, 4.0]));
        let reg = regression_loss(&mut g, p, &target).unwrap();
        for gran in [
            Granularity::Element,
            Granularity::Sample,
            Granularity::Batch,
        ] {
            let (tbl, open) = teacher_bounded_loss(
                &mut g,
                p,
                &target,
                &target,
                10.0,
                gran,
                TblVariant::PaperLiteral,
                None,
            )
            .unwrap();
            assert_eq!(open, 1.0);
            assert_eq!(value(&g, tbl), value(&g, reg));
        }
    }

    #[test]
    fn batch_gate_hand_values() {
        // teacher MAE 20 vs student MAE 5: 15 ≥ δ=10 closes the gate
        let target = t64(vec![1, 2], &[10.0, 10.0]);
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![1, 2], &[15.0, 5.0]));
        let bad_teacher = t64(vec![1, 2], &[30.0, 30.0]);
        let (tbl, open) = teacher_bounded_loss(
            &mut g,
            p,
            &bad_teacher,
            &target,
            10.0,
            Granularity::Batch,
            TblVariant::PaperLiteral,
            None,
        )
        .unwrap();
        assert_eq!((value(&g, tbl), open), (0.0, 0.0));

        // teacher MAE 2 vs student MAE 5: −3 < 10 keeps the student's 5
        let good_teacher = t64(vec![1, 2], &[12.0, 8.0]);
        let (tbl, open) = teacher_bounded_loss(
            &mut g,
            p,
            &good_teacher,
            &target,
            10.0,
            Granularity::Batch,
            TblVariant::PaperLiteral,
            None,
        )
        .unwrap();
        assert_eq!((value(&g, tbl), open), (5.0, 1.0));

        let (to_teacher, _) = teacher_bounded_loss(
            &mut g,
            p,
            &good_teacher,
            &target,
            10.0,
            Granularity::Batch,
            TblVariant::ToTeacher,
            None,
        )
        .unwrap();
        assert_eq!(value(&g, to_teacher), 3.0);
    }

    #[test]
    fn sample_gate_splits_by_leading_axis() {
        let target = t64(vec![2, 1], &[0.0, 0.0]);
        let teacher = t64(vec![2, 1], &[0.0, 50.0]);
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![2, 1], &[4.0, 2.0]));
        let (tbl, open) = teacher_bounded_loss(
            &mut g,
            p,
            &teacher,
            &target,
            10.0,
            Granularity::Sample,
            TblVariant::PaperLiteral,
            None,
        )
        .unwrap();
        assert_eq!(open, 0.5);
        assert_eq!(value(&g, tbl), 2.0);
    }

    #[test]
    fn gate_blocks_gradient_of_closed_units() {
        let target = t64(vec![2], &[0.0, 0.0]);
        let teacher = t64(vec![2], &[0.0, 100.0]);
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![2], &[3.0, -3.0]));
        let (tbl, _) = teacher_bounded_loss(
            &mut g,
            p,
            &teacher,
            &target,
            10.0,
            Granularity::Element,
            TblVariant::PaperLiteral,
            None,
        )
        .unwrap();
        let grads = g.backward(tbl).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, 0.0]);
    }

    #[test]
    fn kl_hand_values() {
        let mut g = Graph::<f64>::new();
        let mu = g.param(t64(vec![1, 3], &[0.0, 0.0, 0.0]));
        let s2 = g.param(t64(vec![1, 3], &[1.0, 1.0, 1.0]));
        let kl = kl_divergence(&mut g, LatentNodes { mu, sigma2: s2 }, 1).unwrap();
        assert_eq!(value(&g, kl), 0.0);

        let mu = g.param(t64(vec![1, 1], &[1.0]));
        let s2 = g.param(t64(vec![1, 1], &[1.0]));
        let kl = kl_divergence(&mut g, LatentNodes { mu, sigma2: s2 }, 1).unwrap();
        assert_eq!(value(&g, kl), 0.5);

        let bad = g.constant(t64(vec![1, 1], &[0.0]));
        assert!(kl_divergence(&mut g, LatentNodes { mu, sigma2: bad }, 1).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut g = Graph::<f64>::new();
        let mu = g.param(t64(vec![1, 1], &[0.0]));
        let s2 = g.param(t64(vec![1, 1], &[2.0]));
        let kl = {
            let id = kl_divergence(&mut g, LatentNodes { mu, sigma2: s2 }, 1).unwrap();
            value(&g, id)
        };
        assert!((kl - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-12);

        // E_q[ln q(z) − ln p(z)] with q = N(0, 2), p = N(0, 1)
        let mut rng = stream_rng(11, 0);
        let n = 1_000_000;
        let var = 2.0f64;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let ln_q = -0.5 * (z * z / var) - 0.5 * var.ln();
            let ln_p = -0.5 * z * z;
            acc += ln_q - ln_p;
        }
        let mc = acc / n as f64;
        assert!((mc / kl - 1.0).abs() < 0.01, "mc {mc} vs {kl}");
    }

    #[test]
    fn spatial_hand_values() {
        // one sample, 3 regions, one step; region 0 sees {1, 2}
        let lists = NeighborLists::new(3, vec![vec![1, 2], vec![], vec![]]).unwrap();
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![1, 3, 1, 1], &[1.0, 4.0, 2.0]));
        let spa = spatial_correlation_loss(&mut g, p, &lists).unwrap();
        // region-0 term |1−4|+|1−2| = 4, averaged over 3 (s, t, c) cells
        assert!((value(&g, spa) - 4.0 / 3.0).abs() < 1e-15);

        let none = build_neighbor_lists(&RegionGraph::grid(1, 3), 0, NeighborMode::Adjacency);
        let zero = spatial_correlation_loss(&mut g, p, &none).unwrap();
        assert_eq!(value(&g, zero), 0.0);
    }

    #[test]
    fn temporal_hand_values() {
        let mut g = Graph::<f64>::new();
        let p = g.param(t64(vec![1, 1, 3, 1], &[1.0, 3.0, 2.0]));
        let tem = temporal_correlation_loss(&mut g, p, 2).unwrap();
        // t=0: |1−3| = 2; t=1: (2+1)/2 = 1.5; t=2: |2−3| = 1
        assert!((value(&g, tem) - (2.0 + 1.5 + 1.0) / 3.0).abs() < 1e-15);
        let off = temporal_correlation_loss(&mut g, p, 0).unwrap();
        assert_eq!(value(&g, off), 0.0);
        assert!(temporal_correlation_loss(&mut g, p, 3).is_err());
    }

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 0);
        let len = shape.iter().product();
        Tensor::new(
            shape,
            (0..len).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn total_is_weighted_sum_and_ablation_zeroes_terms() {
        let lists = build_neighbor_lists(&RegionGraph::grid(2, 2), 8, NeighborMode::Adjacency);
        let shape = vec![2, 4, 4, 2];
        let target = random(shape.clone(), 1);
        let teacher = random(shape.clone(), 2);
        for ablation in [
            Ablation::default(),
            Ablation {
                no_tem: true,
                ..Ablation::default()
            },
            Ablation {
                no_tbl: true,
                no_ib: true,
                no_spa: true,
                no_tem: true,
            },
        ] {
            let mut g = Graph::<f64>::new();
            let p = g.param(random(shape.clone(), 3));
            let mu = g.param(random(vec![8, 3], 4));
            let raw = g.param(random(vec![8, 3], 5));
            let s2 = g.softplus(raw).unwrap();
            let weights = LossWeights {
                ablation,
                ..LossWeights::default()
            };
            let inputs = LossInputs {
                pred: p,
                target: &target,
                teacher: Some(&teacher),
                latent: LatentNodes { mu, sigma2: s2 },
                batch: 2,
                neighbors: &lists,
                frozen_gate: None,
            };
            let (total, br) = total_loss(&mut g, &inputs, &weights).unwrap();
            let graph_total = value(&g, total);
            assert!((graph_total - br.total).abs() <= 1e-12 * br.total.abs());
            if ablation.no_tem {
                assert_eq!(br.tem, 0.0);
            } else {
                assert!(br.tem > 0.0);
            }
            if ablation.no_spa {
                assert_eq!(graph_total, br.reg);
            }
        }
    }

    #[test]
    fn zero_weights_leave_regression() {
        let lists = build_neighbor_lists(&RegionGraph::grid(2, 2), 8, NeighborMode::Adjacency);
        let target = random(vec![1, 4, 3, 1], 1);
        let mut g = Graph::<f64>::new();
        let p = g.param(random(vec![1, 4, 3, 1], 3));
        let mu = g.param(random(vec![4, 2], 4));
        let weights = LossWeights {
            lambda_tbl: 0.0,
            lambda_kl: 0.0,
            lambda_spa: 0.0,
            lambda_tem: 0.0,
            ..LossWeights::default()
        };
        let inputs = LossInputs {
            pred: p,
            target: &target,
            teacher: None,
            latent: LatentNodes { mu, sigma2: mu },
            batch: 1,
            neighbors: &lists,
            frozen_gate: None,
        };
        let (_, br) = total_loss(&mut g, &inputs, &weights).unwrap();
        assert_eq!(br.total, br.reg);
    }

    #[test]
    fn missing_teacher_is_an_error() {
        let lists = build_neighbor_lists(&RegionGraph::grid(1, 2), 8, NeighborMode::Adjacency);
        let target = random(vec![1, 2, 2, 1], 1);
        let mut g = Graph::<f64>::new();
        let p = g.param(random(vec![1, 2, 2, 1], 2));
        let inputs = LossInputs {
            pred: p,
            target: &target,
            teacher: None,
            latent: LatentNodes { mu: p, sigma2: p },
            batch: 1,
            neighbors: &lists,
            frozen_gate: None,
        };
        assert!(total_loss(&mut g, &inputs, &LossWeights::default()).is_err());
        assert!(!LossWeights {
            ablation: Ablation {
                no_tbl: true,
                ..Ablation::default()
            },
            ..LossWeights::default()
        }
        .needs_teacher());
    }

    #[test]
    fn defaults() {
        let w = LossWeights::default();
        assert_eq!(
            (
                w.lambda_tbl,
                w.delta,
                w.lambda_kl,
                w.lambda_spa,
                w.lambda_tem
            ),
            (0.10, 10.0, 1e-3, 0.6, 0.35)
        );
        assert_eq!((w.temporal_window, w.k_r), (12, 8));
    }

    proptest! {
        #[test]
        fn structural_invariants(
            vals in proptest::collection::vec(-20.0f64..20.0, 24),
            tgt in proptest::collection::vec(-20.0f64..20.0, 24),
            tch in proptest::collection::vec(-20.0f64..20.0, 24),
            shift in -50.0f64..50.0,
            delta in 0.0f64..15.0,
        ) {
            let lists = build_neighbor_lists(&RegionGraph::grid(1, 3), 8, NeighborMode::Adjacency);
            let shape = vec![2, 3, 4, 1];
            let target = t64(shape.clone(), &tgt);
            let teacher = t64(shape.clone(), &tch);
            let mut g = Graph::<f64>::new();
            let p = g.param(t64(shape.clone(), &vals));
            let reg = { let id = regression_loss(&mut g, p, &target).unwrap(); value(&g, id) };
            for gran in [Granularity::Element, Granularity::Sample, Granularity::Batch] {
                let (tbl, _) = teacher_bounded_loss(&mut g, p, &teacher, &target, delta, gran, TblVariant::PaperLiteral, None).unwrap();
                prop_assert!(value(&g, tbl) <= reg + 1e-12);
                prop_assert!(value(&g, tbl) >= 0.0);
            }
            let spa = { let id = spatial_correlation_loss(&mut g, p, &lists).unwrap(); value(&g, id) };
            let tem = { let id = temporal_correlation_loss(&mut g, p, 4).unwrap(); value(&g, id) };
            prop_assert!(spa >= 0.0 && tem >= 0.0);
            let q = g.add_scalar(p, shift).unwrap();
            let spa2 = { let id = spatial_correlation_loss(&mut g, q, &lists).unwrap(); value(&g, id) };
            let tem2 = { let id = temporal_correlation_loss(&mut g, q, 4).unwrap(); value(&g, id) };
            prop_assert!((spa - spa2).abs() <= 1e-9 * spa.max(1.0));
            prop_assert!((tem - tem2).abs() <= 1e-9 * tem.max(1.0));

            let flat = g.constant(Tensor::full(shape, shift));
            prop_assert_eq!({ let id = spatial_correlation_loss(&mut g, flat, &lists).unwrap(); value(&g, id) }, 0.0);
            prop_assert_eq!({ let id = temporal_correlation_loss(&mut g, flat, 4).unwrap(); value(&g, id) }, 0.0);
        }

        #[test]
        fn kl_zero_only_at_prior(mu in -2.0f64..2.0, s2 in 0.05f64..4.0) {
            let mut g = Graph::<f64>::new();
            let m = g.param(t64(vec![1, 1], &[mu]));
            let s = g.param(t64(vec![1, 1], &[s2]));
            let kl = { let id = kl_divergence(&mut g, LatentNodes { mu: m, sigma2: s }, 1).unwrap(); value(&g, id) };
            prop_assert!(kl >= 0.0);
            if mu.abs() > 1e-3 || (s2 - 1.0).abs() > 1e-3 {
                prop_assert!(kl > 1e-9);
            }
        }

        #[test]
        fn regression_is_homogeneous(vals in proptest::collection::vec(-20.0f64..20.0, 6), c in 0.1f64..10.0) {
            let target = t64(vec![6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
            let mut g = Graph::<f64>::new();
            let p = g.param(t64(vec![6], &vals));
            let base = { let id = regression_loss(&mut g, p, &target).unwrap(); value(&g, id) };
            let scaled_p = g.scale(p, c).unwrap();
            let scaled_t = target.map(|v| v * c);
            let scaled = { let id = regression_loss(&mut g, scaled_p, &scaled_t).unwrap(); value(&g, id) };
            prop_assert!((scaled - c * base).abs() <= 1e-9 * scaled.max(1.0));
        }
    }
}
