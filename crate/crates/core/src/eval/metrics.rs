use serde::Serialize;

use crate::data::NeighborLists;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

impl Metrics {
    fn from_sums(abs: f64, sq: f64, count: usize) -> Option<Self> {
        (count > 0).then(|| Metrics {
            mae: abs / count as f64,
            rmse: (sq / count as f64).sqrt(),
            count,
        })
    }
}

fn same_shape(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::contract("metrics over an empty prediction"));
    }
    Ok(())
}

/// MAE and RMSE over every element, accumulated in f64.
pub fn compute_metrics(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<Metrics> {
    same_shape(pred, target)?;
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = f64::from(*p) - f64::from(*t);
        abs += e.abs();
        sq += e * e;
    }
    Ok(Metrics::from_sums(abs, sq, pred.len()).expect("non-empty"))
}

fn dims4(t: &Tensor<f32>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, n, h, c] => Ok([b, n, h, c]),
        ref other => Err(Error::contract(format!("expected B×N×H×C, got {other:?}"))),
    }
}

/// Metrics per output step `1..=H_out` of `[B, N, H_out, C]` tensors.
pub fn horizon_breakdown(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<Vec<Metrics>> {
    same_shape(pred, target)?;
    let [b, n, h, c] = dims4(pred)?;
    let mut abs = vec![0.0f64; h];
    let mut sq = vec![0.0f64; h];
    for series in 0..b * n {
        for step in 0..h {
            for ch in 0..c {
                let i = (series * h + step) * c + ch;
                let e = f64::from(pred.data()[i]) - f64::from(target.data()[i]);
                abs[step] += e.abs();
                sq[step] += e * e;
            }
        }
    }
    Ok((0..h)
        .map(|s| Metrics::from_sums(abs[s], sq[s], b * n * c).expect("non-empty"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketMetrics {
    /// Half-open flow range `[lower, upper)` of region mean target flow.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub regions: usize,
    /// Absent when no region falls in the bucket.
    pub metrics: Option<Metrics>,
}

/// Quartile edges of the per-region mean target flow.
pub fn quartile_edges(target: &Tensor<f32>) -> Result<Vec<f64>> {
    let mut means = region_means(target)?;
    means.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (means.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        means[lo] + (means[hi] - means[lo]) * (pos - lo as f64)
    };
    let mut edges: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p| q(p)).collect();
    edges.dedup();
    Ok(edges)
}

fn region_means(target: &Tensor<f32>) -> Result<Vec<f64>> {
    let [b, n, h, c] = dims4(target)?;
    let mut sums = vec![0.0f64; n];
    for bi in 0..b {
        for (r, sum) in sums.iter_mut().enumerate() {
            let start = (bi * n + r) * h * c;
            *sum += target.data()[start..start + h * c]
                .iter()
                .map(|v| f64::from(*v))
                .sum::<f64>();
        }
    }
    Ok(sums.into_iter().map(|s| s / (b * h * c) as f64).collect())
}

/// Regions grouped by mean target flow; `k` interior edges give `k + 1`
/// buckets, the last one closed above.
pub fn volume_bucket_breakdown(
    pred: &Tensor<f32>,
    target: &Tensor<f32>,
    edges: &[f64],
) -> Result<Vec<BucketMetrics>> {
    same_shape(pred, target)?;
    if edges
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::contract("bucket edges must be strictly increasing"));
    }
    let [b, n, h, c] = dims4(pred)?;
    let means = region_means(target)?;
    let bucket_of = |m: f64| edges.iter().take_while(|&&e| m >= e).count();
    let k = edges.len() + 1;
    let mut abs = vec![0.0f64; k];
    let mut sq = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    let mut regions = vec![0usize; k];
    for (r, &m) in means.iter().enumerate() {
        let bk = bucket_of(m);
        regions[bk] += 1;
        for bi in 0..b {
            let start = (bi * n + r) * h * c;
            for i in start..start + h * c {
                let e = f64::from(pred.data()[i]) - f64::from(target.data()[i]);
                abs[bk] += e.abs();
                sq[bk] += e * e;
                counts[bk] += 1;
            }
        }
    }
    Ok((0..k)
        .map(|i| BucketMetrics {
            lower: i.checked_sub(1).map(|j| edges[j]),
            upper: edges.get(i).copied(),
            regions: regions[i],
            metrics: Metrics::from_sums(abs[i], sq[i], counts[i]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Roughness {
    pub spatial: f64,
    pub temporal: f64,
}

/// Spatial TV: the neighbor-difference sum of the spatial loss without its
/// weight. Temporal TV: mean `|ŷ_{t+1} − ŷ_t|` over the horizon.
pub fn roughness_metrics(pred: &Tensor<f32>, neighbors: &NeighborLists) -> Result<Roughness> {
    let [b, n, h, c] = dims4(pred)?;
    if neighbors.regions() != n {
        return Err(Error::Mismatch {
            what: "neighbor list regions",
            expected: n.to_string(),
            found: neighbors.regions().to_string(),
        });
    }
    let v = |bi: usize, r: usize, t: usize, ch: usize| {
        f64::from(pred.data()[((bi * n + r) * h + t) * c + ch])
    };
    let mut spa = 0.0f64;
    let mut tem = 0.0f64;
    for bi in 0..b {
        for r in 0..n {
            for t in 0..h {
                for ch in 0..c {
                    let x = v(bi, r, t, ch);
                    spa += neighbors
                        .of(r)
                        .iter()
                        .map(|&j| (x - v(bi, j, t, ch)).abs())
                        .sum::<f64>();
                    if t + 1 < h {
                        tem += (v(bi, r, t + 1, ch) - x).abs();
                    }
                }
            }
        }
    }
    let temporal = if h > 1 {
        tem / (b * n * (h - 1) * c) as f64
    } else {
        0.0
    };
    Ok(Roughness {
        spatial: spa / (b * n * h * c) as f64,
        temporal,
    })
}
