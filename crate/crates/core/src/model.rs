//! The variational information-bottleneck MLP student.
//!
//! Every input token `(sample, region, step)` is embedded as
//! `[W_p·x + b | E^s[region] | E^tod[slot] | E^dow[day]]`, pushed through an
//! MLP encoder to a Gaussian latent of width `K`, sampled, and decoded per
//! region from the flattened `H_in × K` latent block to `H_out × C` outputs.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, Real, Tensor};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// `Z = μ + σ ⊙ ε`.
    #[default]
    Std,
    /// `Z = μ + σ² ⊙ ε`, the variance-scaled form.
    PaperVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Use the latent mean; deterministic.
    #[default]
    Mean,
    /// Draw the latent from a dedicated seeded stream.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

string_enum!(NoiseMode, "latent noise mode", "std" => NoiseMode::Std, "paper-variance" => NoiseMode::PaperVariance);
string_enum!(EvalMode, "eval mode", "mean" => EvalMode::Mean, "sample" => EvalMode::Sample);
string_enum!(Activation, "activation", "relu" => Activation::Relu, "softplus" => Activation::Softplus);

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding width `d`; tokens are `4d` wide.
    pub d: usize,
    /// Encoder depth `L`: `L − 1` hidden layers plus the latent head.
    pub layers: usize,
    /// Latent width `K`.
    pub k: usize,
    pub h_in: usize,
    pub h_out: usize,
    pub regions: usize,
    pub slots_per_day: usize,
    pub days_per_week: usize,
    pub channels: usize,
    pub noise_mode: NoiseMode,
    pub eval_mode: EvalMode,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            layers: 3,
            k: 64,
            h_in: 12,
            h_out: 12,
            regions: 1,
            slots_per_day: 48,
            days_per_week: 7,
            channels: 1,
            noise_mode: NoiseMode::Std,
            eval_mode: EvalMode::Mean,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("layers", self.layers),
            ("k", self.k),
            ("h_in", self.h_in),
            ("h_out", self.h_out),
            ("regions", self.regions),
            ("slots_per_day", self.slots_per_day),
            ("days_per_week", self.days_per_week),
            ("channels", self.channels),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::contract(format!("model {name} must be ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn token_width(&self) -> usize {
        4 * self.d
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, w) = (self.d, self.token_width());
        (self.regions + self.slots_per_day + self.days_per_week) * d
            + (self.channels + 1) * d
            + (self.layers - 1) * (w * w + w)
            + (w * 2 * self.k + 2 * self.k)
            + (self.h_in * self.k * self.h_out * self.channels + self.h_out * self.channels)
    }
}

/// All learnable tensors of the student.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    pub e_s: Tensor<T>,
    pub e_tod: Tensor<T>,
    pub e_dow: Tensor<T>,
    pub w_p: Tensor<T>,
    pub b_p: Tensor<T>,
    pub hidden: Vec<(Tensor<T>, Tensor<T>)>,
    pub w_h: Tensor<T>,
    pub b_h: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
}

impl<T: Real> ParamSet<T> {
    /// Tensors in a fixed canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("e_s".to_string(), &self.e_s),
            ("e_tod".to_string(), &self.e_tod),
            ("e_dow".to_string(), &self.e_dow),
            ("w_p".to_string(), &self.w_p),
            ("b_p".to_string(), &self.b_p),
        ];
        for (i, (w, b)) in self.hidden.iter().enumerate() {
            out.push((format!("w_{i}"), w));
            out.push((format!("b_{i}"), b));
        }
        out.push(("w_h".to_string(), &self.w_h));
        out.push(("b_h".to_string(), &self.b_h));
        out.push(("w_o".to_string(), &self.w_o));
        out.push(("b_o".to_string(), &self.b_o));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.e_s,
            &mut self.e_tod,
            &mut self.e_dow,
            &mut self.w_p,
            &mut self.b_p,
        ];
        for (w, b) in &mut self.hidden {
            out.push(w);
            out.push(b);
        }
        out.extend([&mut self.w_h, &mut self.b_h, &mut self.w_o, &mut self.b_o]);
        out
    }

    /// Rebuild from tensors in [`ParamSet::named`] order, checking shapes
    /// against the config.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let expected = shapes(cfg);
        if tensors.len() != expected.len() {
            return Err(Error::Mismatch {
                what: "parameter tensor count",
                expected: expected.len().to_string(),
                found: tensors.len().to_string(),
            });
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Mismatch {
                    what: "parameter shape",
                    expected: format!("{name} {shape:?}"),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let (e_s, e_tod, e_dow, w_p, b_p) = (next(), next(), next(), next(), next());
        let hidden = (1..cfg.layers).map(|_| (next(), next())).collect();
        Ok(ParamSet {
            e_s,
            e_tod,
            e_dow,
            w_p,
            b_p,
            hidden,
            w_h: next(),
            b_h: next(),
            w_o: next(),
            b_o: next(),
        })
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            e_s: self.e_s.cast(),
            e_tod: self.e_tod.cast(),
            e_dow: self.e_dow.cast(),
            w_p: self.w_p.cast(),
            b_p: self.b_p.cast(),
            hidden: self
                .hidden
                .iter()
                .map(|(w, b)| (w.cast(), b.cast()))
                .collect(),
            w_h: self.w_h.cast(),
            b_h: self.b_h.cast(),
            w_o: self.w_o.cast(),
            b_o: self.b_o.cast(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Register every tensor as a graph parameter.
    pub fn to_graph(&self, g: &mut Graph<T>) -> ParamNodes {
        let ids: Vec<NodeId> = self
            .tensors()
            .into_iter()
            .map(|t| g.param(t.clone()))
            .collect();
        ParamNodes::from_ids(ids, self.hidden.len())
    }
}

/// Canonical `(name, shape)` list for a config.
pub fn shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, w) = (cfg.d, cfg.token_width());
    let mut out = vec![
        ("e_s".to_string(), vec![cfg.regions, d]),
        ("e_tod".to_string(), vec![cfg.slots_per_day, d]),
        ("e_dow".to_string(), vec![cfg.days_per_week, d]),
        ("w_p".to_string(), vec![cfg.channels, d]),
        ("b_p".to_string(), vec![d]),
    ];
    for i in 0..cfg.layers - 1 {
        out.push((format!("w_{i}"), vec![w, w]));
        out.push((format!("b_{i}"), vec![w]));
    }
    out.push(("w_h".to_string(), vec![w, 2 * cfg.k]));
    out.push(("b_h".to_string(), vec![2 * cfg.k]));
    out.push((
        "w_o".to_string(),
        vec![cfg.h_in * cfg.k, cfg.h_out * cfg.channels],
    ));
    out.push(("b_o".to_string(), vec![cfg.h_out * cfg.channels]));
    out
}

/// Weights uniform in `±1/√fan_in`, biases zero, embeddings uniform in `±0.1`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, stream::INIT);
    let tensors = shapes(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let data: Vec<f32> = if name.starts_with('b') {
                vec![0.0; len]
            } else {
                let bound = if name.starts_with('e') {
                    0.1
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                (0..len)
                    .map(|_| rng.random_range(-bound..bound) as f32)
                    .collect()
            };
            Tensor::new(shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    ParamSet::from_tensors(cfg, tensors)
}

/// Graph handles of a registered [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub e_s: NodeId,
    pub e_tod: NodeId,
    pub e_dow: NodeId,
    pub w_p: NodeId,
    pub b_p: NodeId,
    pub hidden: Vec<(NodeId, NodeId)>,
    pub w_h: NodeId,
    pub b_h: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
}

impl ParamNodes {
    /// Interpret ids listed in [`ParamSet::named`] order.
    pub fn from_ids(ids: Vec<NodeId>, hidden_layers: usize) -> Self {
        assert_eq!(ids.len(), 9 + 2 * hidden_layers, "parameter id count");
        let hidden = (0..hidden_layers)
            .map(|i| (ids[5 + 2 * i], ids[6 + 2 * i]))
            .collect();
        let tail = 5 + 2 * hidden_layers;
        ParamNodes {
            e_s: ids[0],
            e_tod: ids[1],
            e_dow: ids[2],
            w_p: ids[3],
            b_p: ids[4],
            hidden,
            w_h: ids[tail],
            b_h: ids[tail + 1],
            w_o: ids[tail + 2],
            b_o: ids[tail + 3],
        }
    }

    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.e_s, self.e_tod, self.e_dow, self.w_p, self.b_p];
        for &(w, b) in &self.hidden {
            out.push(w);
            out.push(b);
        }
        out.extend([self.w_h, self.b_h, self.w_o, self.b_o]);
        out
    }
}

/// What the model reads from a batch.
#[derive(Debug, Clone)]
pub struct ModelInput<T: Real = f32> {
    /// Normalized `[B, N, H_in, C]`.
    pub inputs: Tensor<T>,
    /// `[B × H_in]`.
    pub tod_idx: Vec<usize>,
    pub dow_idx: Vec<usize>,
}

impl<T: Real> ModelInput<T> {
    pub fn from_batch(batch: &WindowBatch) -> Self {
        ModelInput {
            inputs: batch.inputs.cast(),
            tod_idx: batch.tod_idx.clone(),
            dow_idx: batch.dow_idx.clone(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.shape()[0]
    }
}

fn check_input<T: Real>(cfg: &ModelConfig, input: &ModelInput<T>) -> Result<(usize, usize)> {
    let shape = input.inputs.shape();
    if shape.len() != 4
        || shape[1] != cfg.regions
        || shape[2] != cfg.h_in
        || shape[3] != cfg.channels
    {
        return Err(Error::Shape {
            op: "model input",
            lhs: shape.to_vec(),
            rhs: vec![0, cfg.regions, cfg.h_in, cfg.channels],
        });
    }
    let b = shape[0];
    if input.tod_idx.len() != b * cfg.h_in || input.dow_idx.len() != b * cfg.h_in {
        return Err(Error::contract(format!(
            "calendar indices must have B×H_in = {} entries",
            b * cfg.h_in
        )));
    }
    Ok((b, b * cfg.regions * cfg.h_in))
}

/// Token embeddings `[B·N·H_in, 4d]`, tokens ordered `(b, n, t)`.
pub fn assemble_embeddings<T: Real>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    cfg: &ModelConfig,
    input: &ModelInput<T>,
) -> Result<NodeId> {
    let (b, m) = check_input(cfg, input)?;
    let (n, h) = (cfg.regions, cfg.h_in);
    let mut region = Vec::with_capacity(m);
    let mut tod = Vec::with_capacity(m);
    let mut dow = Vec::with_capacity(m);
    for bi in 0..b {
        for r in 0..n {
            for t in 0..h {
                region.push(r);
                tod.push(input.tod_idx[bi * h + t]);
                dow.push(input.dow_idx[bi * h + t]);
            }
        }
    }
    let x = g.constant(input.inputs.reshape(vec![m, cfg.channels])?);
    let proj = g.matmul(x, p.w_p)?;
    let proj = g.add_broadcast(proj, p.b_p)?;
    let es = g.gather_rows(p.e_s, Arc::new(region))?;
    let etod = g.gather_rows(p.e_tod, Arc::new(tod))?;
    let edow = g.gather_rows(p.e_dow, Arc::new(dow))?;
    g.concat(&[proj, es, etod, edow])
}

/// Latent mean and variance nodes, each `[tokens, K]`.
#[derive(Debug, Clone, Copy)]
pub struct LatentNodes {
    pub mu: NodeId,
    pub sigma2: NodeId,
}

pub fn encode_latent<T: Real>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    cfg: &ModelConfig,
    embeddings: NodeId,
) -> Result<LatentNodes> {
    let at_layer = |i: usize| {
        move |e: Error| match e {
            Error::Numerical(m) => Error::Numerical(format!("encoder layer {i}: {m}")),
            other => other,
        }
    };
    let mut h = embeddings;
    for (i, &(w, b)) in p.hidden.iter().enumerate() {
        let mut layer = || -> Result<NodeId> {
            let z = g.matmul(h, w)?;
            let z = g.add_broadcast(z, b)?;
            match cfg.activation {
                Activation::Relu => g.relu(z),
                Activation::Softplus => g.softplus(z),
            }
        };
        h = layer().map_err(at_layer(i + 1))?;
    }
    let mut head = || -> Result<LatentNodes> {
        let out = g.matmul(h, p.w_h)?;
        let out = g.add_broadcast(out, p.b_h)?;
        let mu = g.slice_last(out, 0, cfg.k)?;
        let raw = g.slice_last(out, cfg.k, 2 * cfg.k)?;
        let sigma2 = g.softplus(raw)?;
        Ok(LatentNodes { mu, sigma2 })
    };
    head().map_err(at_layer(cfg.layers))
}

/// Reparameterized latent. `eps = None` means the mean (`ε = 0`).
pub fn sample_latent<T: Real>(
    g: &mut Graph<T>,
    stats: LatentNodes,
    eps: Option<&Tensor<T>>,
    mode: NoiseMode,
) -> Result<NodeId> {
    let Some(eps) = eps else {
        return Ok(stats.mu);
    };
    if eps.shape() != g.shape(stats.mu) {
        return Err(Error::Shape {
            op: "sample_latent",
            lhs: g.shape(stats.mu).to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let e = g.constant(eps.clone());
    let scale = match mode {
        NoiseMode::Std => g.sqrt(stats.sigma2)?,
        NoiseMode::PaperVariance => stats.sigma2,
    };
    let noise = g.mul(scale, e)?;
    g.add(stats.mu, noise)
}

/// `[B, N, H_out, C]` prediction in normalized units from `[B·N·H_in, K]`.
pub fn decode_prediction<T: Real>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    cfg: &ModelConfig,
    z: NodeId,
    batch: usize,
) -> Result<NodeId> {
    let rows = batch * cfg.regions;
    let flat = g.reshape(z, vec![rows, cfg.h_in * cfg.k])?;
    let out = g.matmul(flat, p.w_o)?;
    let out = g.add_broadcast(out, p.b_o)?;
    g.reshape(out, vec![batch, cfg.regions, cfg.h_out, cfg.channels])
}

/// Source of the reparameterization noise for one forward pass.
pub enum Noise<'a, T: Real> {
    /// `ε = 0`.
    Mean,
    /// Fresh standard normal draws.
    Sample(&'a mut ChaCha8Rng),
    /// A fixed `[tokens, K]` tensor, e.g. for gradient checks.
    Frozen(&'a Tensor<T>),
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `[B, N, H_out, C]`, normalized units.
    pub pred: NodeId,
    pub latent: LatentNodes,
    pub batch: usize,
}

pub fn draw_noise<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

pub fn forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    cfg: &ModelConfig,
    input: &ModelInput<T>,
    noise: Noise<'_, T>,
) -> Result<ForwardNodes> {
    let batch = input.batch_size();
    let e = assemble_embeddings(g, p, cfg, input)?;
    let latent = encode_latent(g, p, cfg, e)?;
    let drawn;
    let eps = match noise {
        Noise::Mean => None,
        Noise::Frozen(t) => Some(t),
        Noise::Sample(rng) => {
            drawn = draw_noise(rng, g.shape(latent.mu).to_vec());
            Some(&drawn)
        }
    };
    let z = sample_latent(g, latent, eps, cfg.noise_mode)?;
    let pred = decode_prediction(g, p, cfg, z, batch)?;
    Ok(ForwardNodes {
        pred,
        latent,
        batch,
    })
}

/// Latent parameters as `[B, N, H_in, K]` tensors.
#[derive(Debug, Clone)]
pub struct LatentStats<T: Real = f32> {
    pub mu: Tensor<T>,
    pub sigma2: Tensor<T>,
}

impl<T: Real> LatentStats<T> {
    pub fn from_graph(g: &Graph<T>, cfg: &ModelConfig, nodes: &ForwardNodes) -> Result<Self> {
        let shape = vec![nodes.batch, cfg.regions, cfg.h_in, cfg.k];
        Ok(LatentStats {
            mu: g.value(nodes.latent.mu).reshape(shape.clone())?,
            sigma2: g.value(nodes.latent.sigma2).reshape(shape)?,
        })
    }
}

/// Inference without gradients: normalized predictions `[B, N, H_out, C]`.
///
/// `sample_seed` is used only when the config asks for sampled evaluation.
pub fn predict(
    params: &ParamSet,
    cfg: &ModelConfig,
    input: &ModelInput,
    sample_seed: u64,
) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let p = params.to_graph(&mut g);
    let mut rng = stream_rng(sample_seed, stream::EVAL_LATENT);
    let noise = match cfg.eval_mode {
        EvalMode::Mean => Noise::Mean,
        EvalMode::Sample => Noise::Sample(&mut rng),
    };
    let out = forward(&mut g, &p, cfg, input, noise)?;
    Ok(g.value(out.pred).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d: 8,
            layers: 3,
            k: 4,
            h_in: 4,
            h_out: 3,
            regions: 3,
            slots_per_day: 48,
            days_per_week: 7,
            channels: 2,
            ..ModelConfig::default()
        }
    }

    fn random_input(cfg: &ModelConfig, b: usize, seed: u64) -> ModelInput {
        let mut rng = stream_rng(seed, 99);
        ModelInput {
            inputs: draw_noise(&mut rng, vec![b, cfg.regions, cfg.h_in, cfg.channels]),
            tod_idx: (0..b * cfg.h_in)
                .map(|i| (i * 7) % cfg.slots_per_day)
                .collect(),
            dow_idx: (0..b * cfg.h_in).map(|i| i % 7).collect(),
        }
    }

    fn zeroed(cfg: &ModelConfig) -> ParamSet {
        let tensors = shapes(cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        ParamSet::from_tensors(cfg, tensors).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig {
            regions: 5,
            d: 8,
            ..small_cfg()
        };
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        assert!(a
            .tensors()
            .iter()
            .zip(b.tensors())
            .all(|(x, y)| x.bit_eq(y)));
        assert_eq!(a.e_s.shape(), &[5, 8]);
        for (name, t) in a.named() {
            if name.starts_with('b') {
                assert!(t.data().iter().all(|v| *v == 0.0), "{name}");
            }
        }
        assert!(a.e_s.data().iter().all(|v| v.abs() <= 0.1));
        let bound = 1.0 / (32f32).sqrt();
        assert!(a.hidden[0].0.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.count(), cfg.param_count());
    }

    #[test]
    fn zero_everything_embeds_to_zero() {
        let cfg = small_cfg();
        let params = zeroed(&cfg);
        let mut input = random_input(&cfg, 2, 1);
        input.inputs = Tensor::zeros(input.inputs.shape().to_vec());
        let mut g = Graph::new();
        let p = params.to_graph(&mut g);
        let e = assemble_embeddings(&mut g, &p, &cfg, &input).unwrap();
        assert_eq!(g.shape(e), &[2 * 3 * 4, 32]);
        assert!(g.value(e).data().iter().all(|v| *v == 0.0));

        let lat = encode_latent(&mut g, &p, &cfg, e).unwrap();
        assert!(g.value(lat.mu).data().iter().all(|v| *v == 0.0));
        let ln2 = std::f32::consts::LN_2;
        assert!(g
            .value(lat.sigma2)
            .data()
            .iter()
            .all(|v| (v - ln2).abs() < 1e-7));
    }

    #[test]
    fn identical_tokens_embed_identically() {
        let cfg = small_cfg();
        let params = init_params(&cfg, 1).unwrap();
        let one = random_input(&cfg, 1, 4);
        let mut data = one.inputs.data().to_vec();
        data.extend_from_slice(one.inputs.data());
        let two = ModelInput {
            inputs: Tensor::new(vec![2, 3, 4, 2], data).unwrap(),
            tod_idx: [one.tod_idx.clone(), one.tod_idx.clone()].concat(),
            dow_idx: [one.dow_idx.clone(), one.dow_idx.clone()].concat(),
        };
        let mut g = Graph::new();
        let p = params.to_graph(&mut g);
        let e = assemble_embeddings(&mut g, &p, &cfg, &two).unwrap();
        let v = g.value(e).data();
        let half = v.len() / 2;
        assert_eq!(&v[..half], &v[half..]);
    }

    #[test]
    fn bad_calendar_index_is_a_bounds_error() {
        let cfg = small_cfg();
        let params = init_params(&cfg, 1).unwrap();
        let mut input = random_input(&cfg, 1, 2);
        input.tod_idx[0] = 48;
        let mut g = Graph::new();
        let p = params.to_graph(&mut g);
        assert!(matches!(
            assemble_embeddings(&mut g, &p, &cfg, &input),
            Err(Error::Bounds { index: 48, .. })
        ));
    }

    #[test]
    fn single_layer_encoder_is_head_only() {
        let cfg = ModelConfig {
            layers: 1,
            ..small_cfg()
        };
        let params = init_params(&cfg, 1).unwrap();
        assert!(params.hidden.is_empty());
        let out = predict(&params, &cfg, &random_input(&cfg, 2, 3), 0).unwrap();
        assert_eq!(out.shape(), &[2, 3, 3, 2]);
    }

    #[test]
    fn reparameterization_modes() {
        let mut g: Graph<f64> = Graph::new();
        let mu = g.param(Tensor::from_f64(vec![1, 1], &[0.5]).unwrap());
        let sigma2 = g.param(Tensor::from_f64(vec![1, 1], &[4.0]).unwrap());
        let stats = LatentNodes { mu, sigma2 };
        let eps = Tensor::from_f64(vec![1, 1], &[1.0]).unwrap();
        let z = sample_latent(&mut g, stats, Some(&eps), NoiseMode::Std).unwrap();
        assert_eq!(g.value(z).data()[0], 2.5);
        let z = sample_latent(&mut g, stats, Some(&eps), NoiseMode::PaperVariance).unwrap();
        assert_eq!(g.value(z).data()[0], 4.5);
        let z = sample_latent(&mut g, stats, None, NoiseMode::Std).unwrap();
        assert_eq!(z, mu);
        let zero = Tensor::zeros(vec![1, 1]);
        let z = sample_latent(&mut g, stats, Some(&zero), NoiseMode::Std).unwrap();
        assert_eq!(g.value(z).data()[0], 0.5);
    }

    #[test]
    fn std_mode_sample_variance_matches_sigma2() {
        let n = 100_000;
        let mut g: Graph<f64> = Graph::new();
        let mu = g.constant(Tensor::full(vec![n, 1], 1.0));
        let sigma2 = g.constant(Tensor::full(vec![n, 1], 2.5));
        let mut rng = stream_rng(7, 0);
        let eps: Tensor<f64> = draw_noise(&mut rng, vec![n, 1]);
        let z = sample_latent(
            &mut g,
            LatentNodes { mu, sigma2 },
            Some(&eps),
            NoiseMode::Std,
        )
        .unwrap();
        let v = g.value(z).data();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / 2.5 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn decoder_is_affine() {
        let cfg = small_cfg();
        let params = init_params(&cfg, 2).unwrap();
        let mut rng = stream_rng(1, 0);
        let z1: Tensor<f32> = draw_noise(&mut rng, vec![2 * 3 * 4, 4]);
        let z2 = z1.map(|v| 2.0 * v);
        let z0 = Tensor::zeros(vec![24, 4]);
        let mut g = Graph::new();
        let p = params.to_graph(&mut g);
        let mut dec = |z: &Tensor<f32>| {
            let id = g.constant(z.clone());
            let out = decode_prediction(&mut g, &p, &cfg, id, 2).unwrap();
            g.value(out).clone()
        };
        let (y0, y1, y2) = (dec(&z0), dec(&z1), dec(&z2));
        assert_eq!(y1.shape(), &[2, 3, 3, 2]);
        for i in 0..y1.len() {
            let lhs = y2.data()[i] - y1.data()[i];
            let rhs = y1.data()[i] - y0.data()[i];
            assert!((lhs - rhs).abs() < 1e-5);
        }

        let zero = zeroed(&cfg);
        let mut g = Graph::new();
        let p = zero.to_graph(&mut g);
        let id = g.constant(z1.clone());
        let out = decode_prediction(&mut g, &p, &cfg, id, 2).unwrap();
        assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_training_is_not() {
        let cfg = small_cfg();
        let params = init_params(&cfg, 5).unwrap();
        let input = random_input(&cfg, 2, 9);
        let a = predict(&params, &cfg, &input, 0).unwrap();
        let b = predict(&params, &cfg, &input, 0).unwrap();
        assert!(a.bit_eq(&b));

        let mut rng = stream_rng(1, stream::LATENT);
        let run = |rng: &mut ChaCha8Rng| {
            let mut g = Graph::new();
            let p = params.to_graph(&mut g);
            let out = forward(&mut g, &p, &cfg, &input, Noise::Sample(rng)).unwrap();
            g.value(out.pred).clone()
        };
        let s1 = run(&mut rng);
        let s2 = run(&mut rng);
        assert!(!s1.bit_eq(&s2));
    }

    #[test]
    fn region_permutation_equivariance() {
        let cfg = small_cfg();
        let params = init_params(&cfg, 8).unwrap();
        let input = random_input(&cfg, 2, 10);
        let perm = [2usize, 0, 1];
        let (b, n, h, c) = (2, 3, 4, 2);
        let mut permuted = vec![0.0f32; input.inputs.len()];
        for bi in 0..b {
            for (new, &old) in perm.iter().enumerate() {
                let src = ((bi * n + old) * h) * c;
                let dst = ((bi * n + new) * h) * c;
                permuted[dst..dst + h * c].copy_from_slice(&input.inputs.data()[src..src + h * c]);
            }
        }
        let mut pp = params.clone();
        let d = cfg.d;
        let mut es = vec![0.0f32; n * d];
        for (new, &old) in perm.iter().enumerate() {
            es[new * d..(new + 1) * d].copy_from_slice(&params.e_s.data()[old * d..(old + 1) * d]);
        }
        pp.e_s = Tensor::new(vec![n, d], es).unwrap();
        let pin = ModelInput {
            inputs: Tensor::new(input.inputs.shape().to_vec(), permuted).unwrap(),
            ..input.clone()
        };
        let y = predict(&params, &cfg, &input, 0).unwrap();
        let yp = predict(&pp, &cfg, &pin, 0).unwrap();
        let row = cfg.h_out * c;
        for bi in 0..b {
            for (new, &old) in perm.iter().enumerate() {
                let a = &y.data()[(bi * n + old) * row..(bi * n + old + 1) * row];
                let p = &yp.data()[(bi * n + new) * row..(bi * n + new + 1) * row];
                assert_eq!(a, p);
            }
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in [NoiseMode::Std, NoiseMode::PaperVariance] {
            assert_eq!(m.as_str().parse::<NoiseMode>().unwrap(), m);
        }
        assert!("nope".parse::<EvalMode>().is_err());
        assert_eq!(
            "softplus".parse::<Activation>().unwrap(),
            Activation::Softplus
        );
    }
}
