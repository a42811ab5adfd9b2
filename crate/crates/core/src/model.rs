//! Embedding encoders, MLP scorer, rating losses, gradients and Adam.
//!
//! A pair `(u, i)` is encoded as `h = g_u(u) ++ g_i(i)` (width `2d`), passed
//! through the hidden layers and a final 1-unit linear layer producing the
//! logit `z`; the prediction is `y = sigmoid(z)`.
//!
//! All parameters live in one flat `Vec<f64>`; [`ModelShape`] knows the layout.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exposure::sigmoid;

const LOG_EPS: f64 = 1e-12;
const CHECKPOINT_MAGIC: &[u8; 8] = b"CCLCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub hidden: Vec<HiddenLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseLayout {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl ModelShape {
    /// `layers` hidden ReLU layers of width `width`.
    pub fn new(users: usize, items: usize, dim: usize, layers: usize, width: usize) -> Self {
        Self {
            users,
            items,
            dim,
            hidden: vec![
                HiddenLayer {
                    width,
                    activation: Activation::Relu,
                };
                layers
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.dim
    }

    fn user_offset(&self) -> usize {
        0
    }

    fn item_offset(&self) -> usize {
        self.users * self.dim
    }

    fn dense_layouts(&self) -> Vec<DenseLayout> {
        let mut offset = (self.users + self.items) * self.dim;
        let mut inputs = self.input_width();
        let widths = self
            .hidden
            .iter()
            .map(|h| h.width)
            .chain(std::iter::once(1));
        widths
            .map(|outputs| {
                let layout = DenseLayout {
                    inputs,
                    outputs,
                    weight_offset: offset,
                    bias_offset: offset + inputs * outputs,
                };
                offset += inputs * outputs + outputs;
                inputs = outputs;
                layout
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        let last = *self.dense_layouts().last().expect("output layer");
        last.bias_offset + last.outputs
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.users == 0 || self.items == 0 {
            return Err(Error::Shape(format!(
                "degenerate model {}x{} with dim {}",
                self.users, self.items, self.dim
            )));
        }
        if self.hidden.iter().any(|h| h.width == 0) {
            return Err(Error::Shape("hidden layer of width 0".into()));
        }
        Ok(())
    }
}

/// Embedding tables plus MLP weights, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    layers: Vec<DenseLayout>,
    values: Vec<f64>,
}

/// Gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            values: vec![0.0; params.values.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }
}

impl ModelParams {
    /// Embeddings ~ U(-1/sqrt(d), 1/sqrt(d)), weights Xavier-uniform, biases 0.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (params.shape.dim as f64).sqrt();
        let emb_len = (params.shape.users + params.shape.items) * params.shape.dim;
        for v in &mut params.values[..emb_len] {
            *v = rng.random_range(-bound..bound);
        }
        for layer in params.layers.clone() {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            let w = &mut params.values
                [layer.weight_offset..layer.weight_offset + layer.inputs * layer.outputs];
            for v in w {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(params)
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let layers = shape.dense_layouts();
        let values = vec![0.0; shape.num_params()];
        Ok(Self {
            shape,
            layers,
            values,
        })
    }

    pub fn from_values(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        if values.len() != params.values.len() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                params.values.len()
            )));
        }
        params.values = values;
        Ok(params)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn user_embedding(&self, user: usize) -> &[f64] {
        let d = self.shape.dim;
        let start = self.shape.user_offset() + user * d;
        &self.values[start..start + d]
    }

    pub fn item_embedding(&self, item: usize) -> &[f64] {
        let d = self.shape.dim;
        let start = self.shape.item_offset() + item * d;
        &self.values[start..start + d]
    }

    /// `(weights [out x in, row-major], bias)` of dense layer `idx`; the last is the output layer.
    pub fn layer(&self, idx: usize) -> (&[f64], &[f64]) {
        let l = self.layers[idx];
        (
            &self.values[l.weight_offset..l.bias_offset],
            &self.values[l.bias_offset..l.bias_offset + l.outputs],
        )
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn check_ids(&self, users: &[usize], items: &[usize]) -> Result<()> {
        if users.len() != items.len() {
            return Err(Error::Shape(format!(
                "{} users but {} items",
                users.len(),
                items.len()
            )));
        }
        if let Some(&u) = users.iter().find(|&&u| u >= self.shape.users) {
            return Err(Error::OutOfRange {
                what: "user",
                index: u,
                len: self.shape.users,
            });
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.shape.items) {
            return Err(Error::OutOfRange {
                what: "item",
                index: i,
                len: self.shape.items,
            });
        }
        Ok(())
    }

    /// Row-major `rows x 2d` pair representations `g_u(u) ++ g_i(i)`.
    pub fn pair_representations(&self, users: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(users, items)?;
        let d = self.shape.dim;
        let mut out = Vec::with_capacity(users.len() * 2 * d);
        for (&u, &i) in users.iter().zip(items) {
            out.extend_from_slice(self.user_embedding(u));
            out.extend_from_slice(self.item_embedding(i));
        }
        Ok(out)
    }

    /// Adds `grad` (rows of width `2d`) back onto the embedding rows that produced them.
    pub fn scatter_pair_gradients(
        &self,
        grads: &mut Gradients,
        users: &[usize],
        items: &[usize],
        pair_grads: &[f64],
    ) {
        let d = self.shape.dim;
        let (uo, io) = (self.shape.user_offset(), self.shape.item_offset());
        for ((&u, &i), g) in users.iter().zip(items).zip(pair_grads.chunks(2 * d)) {
            let (gu, gi) = g.split_at(d);
            for (acc, v) in grads.values[uo + u * d..uo + (u + 1) * d]
                .iter_mut()
                .zip(gu)
            {
                *acc += v;
            }
            for (acc, v) in grads.values[io + i * d..io + (i + 1) * d]
                .iter_mut()
                .zip(gi)
            {
                *acc += v;
            }
        }
    }

    /// Runs the MLP over precomputed pair representations.
    pub fn forward_inputs(&self, inputs: &[f64]) -> Result<MlpCache> {
        let width = self.shape.input_width();
        if !inputs.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "input length {} is not a multiple of {width}",
                inputs.len()
            )));
        }
        let rows = inputs.len() / width;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = if idx == 0 { inputs } else { &post[idx - 1] };
            let (w, b) = self.layer(idx);
            let mut z = vec![0.0; rows * layer.outputs];
            for r in 0..rows {
                let x = &input[r * layer.inputs..(r + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let wr = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    z[r * layer.outputs + o] =
                        b[o] + wr.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            let out = match self.shape.hidden.get(idx) {
                Some(h) => z.iter().map(|&v| h.activation.apply(v)).collect(),
                None => z.clone(),
            };
            pre.push(z);
            post.push(out);
        }
        let logits = post.last().cloned().unwrap_or_default();
        Ok(MlpCache {
            rows,
            inputs: inputs.to_vec(),
            pre,
            post,
            logits,
        })
    }

    /// Backpropagates `dlogits` (dL/dz per row) through the MLP, accumulating weight
    /// gradients into `grads` and returning dL/dinput rows.
    pub fn mlp_backward(
        &self,
        cache: &MlpCache,
        dlogits: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let rows = cache.rows;
        let mut delta = dlogits.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = self.layers[idx];
            if let Some(h) = self.shape.hidden.get(idx) {
                for (k, dv) in delta.iter_mut().enumerate() {
                    *dv *= h
                        .activation
                        .derivative(cache.pre[idx][k], cache.post[idx][k]);
                }
            }
            let input = if idx == 0 {
                &cache.inputs
            } else {
                &cache.post[idx - 1]
            };
            let (w, _) = self.layer(idx);
            let mut dinput = vec![0.0; rows * layer.inputs];
            for r in 0..rows {
                let x = &input[r * layer.inputs..(r + 1) * layer.inputs];
                let dx = &mut dinput[r * layer.inputs..(r + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let g = delta[r * layer.outputs + o];
                    if g == 0.0 {
                        continue;
                    }
                    grads.values[layer.bias_offset + o] += g;
                    let gw = &mut grads.values[layer.weight_offset + o * layer.inputs
                        ..layer.weight_offset + (o + 1) * layer.inputs];
                    for (acc, xv) in gw.iter_mut().zip(x) {
                        *acc += g * xv;
                    }
                    let wr = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (acc, wv) in dx.iter_mut().zip(wr) {
                        *acc += g * wv;
                    }
                }
            }
            delta = dinput;
        }
        delta
    }

    /// Predicted probabilities for the given pairs.
    pub fn predict(&self, users: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        Ok(forward(self, users, items)?.y)
    }

    /// Writes the binary checkpoint: magic, header of little-endian u64s
    /// (users, items, dim, hidden count, then width and activation code per hidden
    /// layer, then parameter count) followed by the f64 payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let s = &self.shape;
        for v in [s.users, s.items, s.dim, s.hidden.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for h in &s.hidden {
            out.extend_from_slice(&(h.width as u64).to_le_bytes());
            out.extend_from_slice(&u64::from(h.activation.code()).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, 0, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cursor = bytes;
        let mut take = |len: usize| -> std::result::Result<&[u8], String> {
            if cursor.len() < len {
                return Err("truncated checkpoint".to_string());
            }
            let (head, tail) = cursor.split_at(len);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file".into());
        }
        let mut read_u64 = || -> std::result::Result<usize, String> {
            Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize)
        };
        let (users, items, dim, layers) = (read_u64()?, read_u64()?, read_u64()?, read_u64()?);
        let mut hidden = Vec::with_capacity(layers);
        for _ in 0..layers {
            let width = read_u64()?;
            let activation = Activation::from_code(read_u64()? as u8)
                .ok_or_else(|| "unknown activation code".to_string())?;
            hidden.push(HiddenLayer { width, activation });
        }
        let count = read_u64()?;
        let shape = ModelShape {
            users,
            items,
            dim,
            hidden,
        };
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
        if !cursor.is_empty() {
            return Err("trailing bytes after checkpoint payload".into());
        }
        Self::from_values(shape, values).map_err(|e| e.to_string())
    }
}

/// Intermediate values of one MLP pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    pub inputs: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    /// `rows x 2d`; the first `d` columns of each row are `h_u`, the rest `h_i`.
    pub pair: Vec<f64>,
    pub logits: Vec<f64>,
    pub y: Vec<f64>,
    cache: MlpCache,
}

impl PredictionBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cache(&self) -> &MlpCache {
        &self.cache
    }
}

pub fn forward(params: &ModelParams, users: &[usize], items: &[usize]) -> Result<PredictionBatch> {
    let pair = params.pair_representations(users, items)?;
    let cache = params.forward_inputs(&pair)?;
    let logits = cache.logits.clone();
    let y = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(PredictionBatch {
        users: users.to_vec(),
        items: items.to_vec(),
        pair,
        logits,
        y,
        cache,
    })
}

/// Binary cross-entropy of a probability.
pub fn log_loss(y: f64, label: u8) -> f64 {
    if label == 1 {
        -y.max(LOG_EPS).ln()
    } else {
        -(1.0 - y).max(LOG_EPS).ln()
    }
}

pub fn mean_log_loss(y: &[f64], labels: &[u8]) -> f64 {
    y.iter()
        .zip(labels)
        .map(|(&p, &l)| log_loss(p, l))
        .sum::<f64>()
        / y.len() as f64
}

pub fn focal_loss(y: f64, label: u8, gamma: f64) -> f64 {
    if label == 1 {
        -(1.0 - y).powf(gamma) * y.max(LOG_EPS).ln()
    } else {
        -y.powf(gamma) * (1.0 - y).max(LOG_EPS).ln()
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Log,
    Focal { gamma: f64 },
}

impl LossKind {
    /// Per-sample loss evaluated from the logit, which keeps both logs finite.
    pub fn value(self, logit: f64, label: u8) -> f64 {
        let (nll, p_wrong) = if label == 1 {
            (softplus(-logit), sigmoid(-logit))
        } else {
            (softplus(logit), sigmoid(logit))
        };
        match self {
            LossKind::Log => nll,
            LossKind::Focal { gamma } => {
                if gamma == 0.0 {
                    nll
                } else {
                    p_wrong.powf(gamma) * nll
                }
            }
        }
    }

    /// d(loss)/d(logit).
    pub fn derivative(self, logit: f64, label: u8) -> f64 {
        // p_wrong = 1 - y for label 1 and y for label 0; d p_wrong / dz = -/+ y(1-y)
        let y = sigmoid(logit);
        let one_minus = sigmoid(-logit);
        match (self, label) {
            (LossKind::Log, 1) => -one_minus,
            (LossKind::Log, _) => y,
            (LossKind::Focal { gamma }, 1) => {
                let nll = softplus(-logit);
                let base = one_minus.powf(gamma);
                -gamma * y * base * nll - base * one_minus
            }
            (LossKind::Focal { gamma }, _) => {
                let nll = softplus(logit);
                let base = y.powf(gamma);
                gamma * one_minus * base * nll + base * y
            }
        }
    }
}

fn check_propensities(propensities: &[f64], len: usize) -> Result<()> {
    if propensities.len() != len {
        return Err(Error::Shape(format!(
            "{len} losses but {} propensities",
            propensities.len()
        )));
    }
    // unnormalized scores are allowed
    if let Some(p) = propensities.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "propensity {p} must be positive and finite"
        )));
    }
    Ok(())
}

/// `mean_k loss_k / P_k`.
pub fn ips_loss(losses: &[f64], propensities: &[f64]) -> Result<f64> {
    let w = ips_weights(propensities)?;
    check_propensities(propensities, losses.len())?;
    Ok(losses.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// `(sum_k loss_k / P_k) / (sum_k 1 / P_k)`.
pub fn snips_loss(losses: &[f64], propensities: &[f64]) -> Result<f64> {
    check_propensities(propensities, losses.len())?;
    let w = snips_weights(propensities)?;
    Ok(losses.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// Sample weights `w_k` such that `sum_k w_k loss_k` is the IPS estimate.
pub fn ips_weights(propensities: &[f64]) -> Result<Vec<f64>> {
    check_propensities(propensities, propensities.len())?;
    let n = propensities.len() as f64;
    Ok(propensities.iter().map(|p| 1.0 / (n * p)).collect())
}

pub fn snips_weights(propensities: &[f64]) -> Result<Vec<f64>> {
    check_propensities(propensities, propensities.len())?;
    let norm: f64 = propensities.iter().map(|p| 1.0 / p).sum();
    Ok(propensities.iter().map(|p| 1.0 / (p * norm)).collect())
}

pub fn uniform_weights(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

/// `sum_k w_k loss(z_k, y_k)`.
pub fn weighted_loss(kind: LossKind, logits: &[f64], labels: &[u8], weights: &[f64]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&z, &y), &w)| if w == 0.0 { 0.0 } else { w * kind.value(z, y) })
        .sum()
}

/// Gradient of `sum_k w_k loss(z_k, y_k)` with respect to every parameter.
/// Embedding rows not in the batch receive zero gradient.
pub fn backward(
    params: &ModelParams,
    batch: &PredictionBatch,
    labels: &[u8],
    kind: LossKind,
    weights: &[f64],
) -> Result<Gradients> {
    if labels.len() != batch.len() || weights.len() != batch.len() {
        return Err(Error::Shape(format!(
            "batch of {} with {} labels and {} weights",
            batch.len(),
            labels.len(),
            weights.len()
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let dlogits: Vec<f64> = batch
        .logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&z, &y), &w)| {
            if w == 0.0 {
                0.0
            } else {
                w * kind.derivative(z, y)
            }
        })
        .collect();
    let dpair = params.mlp_backward(&batch.cache, &dlogits, &mut grads);
    params.scatter_pair_gradients(&mut grads, &batch.users, &batch.items, &dpair);
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_len(params.values.len())
    }

    pub fn with_len(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay, applied to a raw parameter slice.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, &g)) in values.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        if cfg.weight_decay != 0.0 {
            *p -= cfg.learning_rate * cfg.weight_decay * *p;
        }
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    adam_update(&mut params.values, &grads.values, state, cfg);
}
