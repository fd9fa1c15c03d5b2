//! Mixture density network: an MLP that maps a word embedding to the
//! parameters of a K-component diagonal Gaussian mixture over pitch
//! vectors, trained by negative log-likelihood with decoupled weight decay
//! and early stopping.
//!
//! The default architecture is a shared tanh trunk feeding three linear
//! heads (component weights, means, log-variances); `separate_heads` gives
//! each head its own trunk instead. Training is single-threaded and
//! bit-deterministic per seed; cross-validation cells in [`grid_search`]
//! run as independent parallel jobs.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::estimator::fold_assignments;
use crate::math;
use crate::pitch::{ProsodyVector, VECTOR_DIM};

/// Lower bound on every mixture variance, preventing likelihood blow-up on
/// duplicated or near-duplicated targets.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Log-variance head outputs are clamped to this magnitude before
/// exponentiation so a diverging run cannot overflow to infinity.
const LOG_VAR_CLAMP: f64 = 30.0;

const CHECKPOINT_VERSION: u32 = 1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Errors from mixture-density-network construction, training, and I/O.
#[derive(Debug, Error)]
pub enum MdnError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("input has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index} is invalid: {message}")]
    BadSample { index: usize, message: String },
    #[error("invalid mixture parameters: {0}")]
    BadParams(String),
    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("validation loss became non-finite at epoch {epoch}")]
    NanValidation { epoch: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("every configuration in the grid diverged")]
    AllConfigsDiverged,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training or evaluation item: an embedding and its pitch vector.
pub type MdnSample = (Vec<f64>, ProsodyVector);

// ---------------------------------------------------------------------------
// Mixture parameters and density
// ---------------------------------------------------------------------------

/// Parameters of a K-component diagonal Gaussian mixture over pitch vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    /// Component weights on the probability simplex.
    pub weights: Vec<f64>,
    /// Component means.
    pub means: Vec<[f64; VECTOR_DIM]>,
    /// Per-dimension component variances (diagonal covariance).
    pub variances: Vec<[f64; VECTOR_DIM]>,
}

impl MixtureParams {
    /// Checks the simplex and positivity invariants.
    pub fn validate(&self) -> Result<(), MdnError> {
        let k = self.weights.len();
        if k == 0 {
            return Err(MdnError::BadParams("no components".to_string()));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(MdnError::BadParams(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                self.means.len(),
                self.variances.len()
            )));
        }
        let total: f64 = math::sum(&self.weights);
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(MdnError::BadParams(format!(
                "weights must be non-negative and sum to 1 (sum = {total})"
            )));
        }
        for (i, (mean, var)) in self.means.iter().zip(&self.variances).enumerate() {
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(MdnError::BadParams(format!("component {i} mean not finite")));
            }
            if var.iter().any(|v| !v.is_finite() || *v < VARIANCE_FLOOR) {
                return Err(MdnError::BadParams(format!(
                    "component {i} variance below the floor {VARIANCE_FLOOR}"
                )));
            }
        }
        Ok(())
    }

    /// Number of mixture components.
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
}

fn component_log_density(mean: &[f64; VECTOR_DIM], var: &[f64; VECTOR_DIM], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..VECTOR_DIM {
        let diff = p[j] - mean[j];
        total += -0.5 * (2.0 * std::f64::consts::PI * var[j]).ln() - diff * diff / (2.0 * var[j]);
    }
    total
}

/// Overflow-safe log-density `ln Σₖ wₖ·N(p | μₖ, diag σ²ₖ)` in nats.
///
/// Zero-weight components contribute nothing; the sum runs in log space.
pub fn mixture_log_density(params: &MixtureParams, p: &ProsodyVector) -> f64 {
    let terms: Vec<f64> = params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.variances)
        .map(|((&w, mean), var)| {
            if w > 0.0 {
                w.ln() + component_log_density(mean, var, &p.0)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    math::log_sum_exp(&terms)
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Hyperparameters for [`train_mdn`]. One value of this struct fully
/// determines the trained model, including its architecture and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Dropout rate on trunk hidden activations during training (0 disables).
    pub dropout: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    /// Mixture component count K.
    pub kernels: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    /// Stop when validation NLL fails to improve this many epochs in a row.
    pub early_stop_patience: usize,
    /// Cross-validation folds used by [`grid_search`].
    pub folds: usize,
    pub batch_size: usize,
    /// Give each output head its own trunk instead of sharing one.
    pub separate_heads: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            dropout: 0.2,
            hidden_layers: 2,
            hidden_units: 64,
            kernels: 20,
            max_epochs: 50,
            weight_decay: 0.001,
            early_stop_patience: 3,
            folds: 5,
            batch_size: 64,
            separate_heads: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks that every hyperparameter is usable.
    pub fn validate(&self) -> Result<(), MdnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MdnError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.dropout.is_finite() && (0.0..1.0).contains(&self.dropout)) {
            return Err(MdnError::BadConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.hidden_layers == 0 || self.hidden_units == 0 || self.kernels == 0 {
            return Err(MdnError::BadConfig(
                "hidden_layers, hidden_units, and kernels must be positive".to_string(),
            ));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(MdnError::BadConfig(
                "max_epochs and batch_size must be positive".to_string(),
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(MdnError::BadConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.early_stop_patience == 0 || self.early_stop_patience >= self.max_epochs {
            return Err(MdnError::BadConfig(format!(
                "early_stop_patience must lie in 1..max_epochs, got {}",
                self.early_stop_patience
            )));
        }
        if self.folds < 2 {
            return Err(MdnError::BadConfig(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// The full hyperparameter lattice used for model selection: learning rate
/// {0.01, 0.001} × dropout {0.2, 0.5} × hidden layers {15, 20, 30} ×
/// hidden units {512, 1024}, all other fields taken from `base`.
pub fn full_search_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for &learning_rate in &[0.01, 0.001] {
        for &dropout in &[0.2, 0.5] {
            for &hidden_layers in &[15usize, 20, 30] {
                for &hidden_units in &[512usize, 1024] {
                    grid.push(TrainConfig {
                        learning_rate,
                        dropout,
                        hidden_layers,
                        hidden_units,
                        ..base.clone()
                    });
                }
            }
        }
    }
    grid
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    trunks: Vec<Vec<Linear>>,
    /// Heads in fixed order: component weights (K), means (K·4),
    /// log-variances (K·4). Head `i` reads trunk `i` when separate, trunk 0
    /// when shared.
    heads: Vec<Linear>,
    total: usize,
}

fn build_layout(
    input_dim: usize,
    kernels: usize,
    hidden_layers: usize,
    hidden_units: usize,
    separate_heads: bool,
) -> Layout {
    let mut offset = 0;
    let mut linear = |in_dim: usize, out_dim: usize| {
        let l = Linear {
            w: offset,
            b: offset + in_dim * out_dim,
            in_dim,
            out_dim,
        };
        offset += in_dim * out_dim + out_dim;
        l
    };
    let build_trunk = |linear: &mut dyn FnMut(usize, usize) -> Linear| {
        let mut layers = Vec::with_capacity(hidden_layers);
        let mut in_dim = input_dim;
        for _ in 0..hidden_layers {
            layers.push(linear(in_dim, hidden_units));
            in_dim = hidden_units;
        }
        layers
    };
    let head_dims = [kernels, kernels * VECTOR_DIM, kernels * VECTOR_DIM];
    let (trunks, heads) = if separate_heads {
        let mut trunks = Vec::with_capacity(3);
        let mut heads = Vec::with_capacity(3);
        for &out in &head_dims {
            trunks.push(build_trunk(&mut linear));
            heads.push(linear(hidden_units, out));
        }
        (trunks, heads)
    } else {
        let shared = build_trunk(&mut linear);
        let heads = head_dims.iter().map(|&out| linear(hidden_units, out)).collect();
        (vec![shared], heads)
    };
    Layout {
        trunks,
        heads,
        total: offset,
    }
}

fn affine(params: &[f64], l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(l.out_dim);
    for o in 0..l.out_dim {
        let row = &params[l.w + o * l.in_dim..l.w + (o + 1) * l.in_dim];
        let mut acc = params[l.b + o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
    out
}

/// Accumulates ∂loss/∂W and ∂loss/∂b into `grads` and, when requested,
/// adds `Wᵀ·d_out` into `d_x`.
fn affine_backward(
    params: &[f64],
    l: &Linear,
    x: &[f64],
    d_out: &[f64],
    grads: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    for o in 0..l.out_dim {
        let d = d_out[o];
        let row = l.w + o * l.in_dim;
        for (i, xi) in x.iter().enumerate() {
            grads[row + i] += d * xi;
        }
        grads[l.b + o] += d;
    }
    if let Some(dx) = d_x {
        for o in 0..l.out_dim {
            let d = d_out[o];
            let row = &params[l.w + o * l.in_dim..l.w + (o + 1) * l.in_dim];
            for (i, wi) in row.iter().enumerate() {
                dx[i] += wi * d;
            }
        }
    }
}

struct TrunkPass {
    /// Input to each layer (after the previous layer's dropout).
    inputs: Vec<Vec<f64>>,
    /// Post-tanh activations, before dropout.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout scale per unit (0 or 1/keep), when training.
    masks: Vec<Option<Vec<f64>>>,
    out: Vec<f64>,
}

fn run_trunk(
    params: &[f64],
    layers: &[Linear],
    x: &[f64],
    dropout: f64,
    mut rng: Option<&mut ChaCha20Rng>,
) -> TrunkPass {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut acts = Vec::with_capacity(layers.len());
    let mut masks = Vec::with_capacity(layers.len());
    let mut current = x.to_vec();
    for layer in layers {
        let mut act = affine(params, layer, &current);
        for a in &mut act {
            *a = a.tanh();
        }
        let mask = match rng.as_deref_mut() {
            Some(r) if dropout > 0.0 => {
                let keep = 1.0 - dropout;
                Some(
                    (0..layer.out_dim)
                        .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect::<Vec<f64>>(),
                )
            }
            _ => None,
        };
        let next = match &mask {
            Some(m) => act.iter().zip(m).map(|(a, s)| a * s).collect(),
            None => act.clone(),
        };
        inputs.push(current);
        acts.push(act);
        masks.push(mask);
        current = next;
    }
    TrunkPass {
        inputs,
        acts,
        masks,
        out: current,
    }
}

fn trunk_backward(
    params: &[f64],
    layers: &[Linear],
    pass: &TrunkPass,
    mut d: Vec<f64>,
    grads: &mut [f64],
) {
    for (idx, layer) in layers.iter().enumerate().rev() {
        if let Some(mask) = &pass.masks[idx] {
            for (di, s) in d.iter_mut().zip(mask) {
                *di *= s;
            }
        }
        for (di, a) in d.iter_mut().zip(&pass.acts[idx]) {
            *di *= 1.0 - a * a;
        }
        if idx == 0 {
            affine_backward(params, layer, &pass.inputs[idx], &d, grads, None);
        } else {
            let mut d_in = vec![0.0; layer.in_dim];
            affine_backward(params, layer, &pass.inputs[idx], &d, grads, Some(&mut d_in));
            d = d_in;
        }
    }
}

struct SamplePass {
    trunks: Vec<TrunkPass>,
    weights: Vec<f64>,
    means: Vec<f64>,
    z_raw: Vec<f64>,
    variances: Vec<f64>,
}

fn run_forward(
    params: &[f64],
    layout: &Layout,
    x: &[f64],
    dropout: f64,
    mut rng: Option<&mut ChaCha20Rng>,
) -> SamplePass {
    let trunks: Vec<TrunkPass> = layout
        .trunks
        .iter()
        .map(|layers| run_trunk(params, layers, x, dropout, rng.as_deref_mut()))
        .collect();
    let head_input = |i: usize| -> &[f64] {
        if layout.trunks.len() == 1 {
            &trunks[0].out
        } else {
            &trunks[i].out
        }
    };
    let logits = affine(params, &layout.heads[0], head_input(0));
    let means = affine(params, &layout.heads[1], head_input(1));
    let z_raw = affine(params, &layout.heads[2], head_input(2));

    // Softmax with max subtraction: exact 1/K on all-equal logits.
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let variances: Vec<f64> = z_raw
        .iter()
        .map(|z| z.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP).exp() + VARIANCE_FLOOR)
        .collect();
    SamplePass {
        trunks,
        weights,
        means,
        z_raw,
        variances,
    }
}

fn mixture_from_pass(pass: &SamplePass) -> MixtureParams {
    let k = pass.weights.len();
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let mut mean = [0.0; VECTOR_DIM];
        let mut var = [0.0; VECTOR_DIM];
        for j in 0..VECTOR_DIM {
            mean[j] = pass.means[c * VECTOR_DIM + j];
            var[j] = pass.variances[c * VECTOR_DIM + j];
        }
        means.push(mean);
        variances.push(var);
    }
    MixtureParams {
        weights: pass.weights.clone(),
        means,
        variances,
    }
}

/// Per-sample NLL from a completed forward pass; when `grads` is given,
/// also accumulates the full parameter gradient of that NLL.
fn pass_nll_and_grad(
    params: &[f64],
    layout: &Layout,
    pass: &SamplePass,
    p: &ProsodyVector,
    grads: Option<&mut [f64]>,
) -> f64 {
    let k = pass.weights.len();
    let mut terms = Vec::with_capacity(k);
    for c in 0..k {
        let w = pass.weights[c];
        if w > 0.0 {
            let mut g = w.ln();
            for j in 0..VECTOR_DIM {
                let var = pass.variances[c * VECTOR_DIM + j];
                let diff = p.0[j] - pass.means[c * VECTOR_DIM + j];
                g += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - diff * diff / (2.0 * var);
            }
            terms.push(g);
        } else {
            terms.push(f64::NEG_INFINITY);
        }
    }
    let log_p = math::log_sum_exp(&terms);
    let nll = -log_p;
    let Some(grads) = grads else {
        return nll;
    };
    if !log_p.is_finite() {
        // The batch-level finiteness check rejects this step; gradients
        // would be meaningless here.
        return nll;
    }

    let gammas: Vec<f64> = terms.iter().map(|t| (t - log_p).exp()).collect();
    let mut d_logits = Vec::with_capacity(k);
    let mut d_means = Vec::with_capacity(k * VECTOR_DIM);
    let mut d_z = Vec::with_capacity(k * VECTOR_DIM);
    for (c, &gamma) in gammas.iter().enumerate() {
        d_logits.push(pass.weights[c] - gamma);
        for j in 0..VECTOR_DIM {
            let idx = c * VECTOR_DIM + j;
            let var = pass.variances[idx];
            let diff = pass.means[idx] - p.0[j];
            d_means.push(gamma * diff / var);
            let z = pass.z_raw[idx];
            let active = z.abs() < LOG_VAR_CLAMP;
            let d_var = gamma * (1.0 / (2.0 * var) - (diff * diff) / (2.0 * var * var));
            d_z.push(if active { d_var * z.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP).exp() } else { 0.0 });
        }
    }

    let shared = layout.trunks.len() == 1;
    let head_grads = [&d_logits, &d_means, &d_z];
    if shared {
        let mut d_trunk = vec![0.0; pass.trunks[0].out.len()];
        for (head, d_head) in layout.heads.iter().zip(head_grads) {
            affine_backward(params, head, &pass.trunks[0].out, d_head, grads, Some(&mut d_trunk));
        }
        trunk_backward(params, &layout.trunks[0], &pass.trunks[0], d_trunk, grads);
    } else {
        for (i, (head, d_head)) in layout.heads.iter().zip(head_grads).enumerate() {
            let mut d_trunk = vec![0.0; pass.trunks[i].out.len()];
            affine_backward(params, head, &pass.trunks[i].out, d_head, grads, Some(&mut d_trunk));
            trunk_backward(params, &layout.trunks[i], &pass.trunks[i], d_trunk, grads);
        }
    }
    nll
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A trained (or freshly initialized) mixture density network.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnModel {
    input_dim: usize,
    kernels: usize,
    hidden_layers: usize,
    hidden_units: usize,
    dropout: f64,
    separate_heads: bool,
    seed: u64,
    params: Vec<f64>,
}

impl MdnModel {
    /// A freshly initialized model for `input_dim`-dimensional embeddings:
    /// weights drawn from U(±1/√fan_in) with the config seed, biases zero.
    pub fn new(input_dim: usize, config: &TrainConfig) -> Result<Self, MdnError> {
        config.validate()?;
        if input_dim == 0 {
            return Err(MdnError::BadConfig("input_dim must be positive".to_string()));
        }
        let layout = build_layout(
            input_dim,
            config.kernels,
            config.hidden_layers,
            config.hidden_units,
            config.separate_heads,
        );
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        for layers in layout.trunks.iter().chain(std::iter::once(&layout.heads)) {
            for l in layers {
                let bound = 1.0 / (l.in_dim as f64).sqrt();
                for p in &mut params[l.w..l.w + l.in_dim * l.out_dim] {
                    *p = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(Self {
            input_dim,
            kernels: config.kernels,
            hidden_layers: config.hidden_layers,
            hidden_units: config.hidden_units,
            dropout: config.dropout,
            separate_heads: config.separate_heads,
            seed: config.seed,
            params,
        })
    }

    fn layout(&self) -> Layout {
        build_layout(
            self.input_dim,
            self.kernels,
            self.hidden_layers,
            self.hidden_units,
            self.separate_heads,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Flat parameter vector, in layout order (trunk layers, then heads).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters, for gradient checks and custom optimizers.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, h: &[f64]) -> Result<(), MdnError> {
        if h.len() != self.input_dim {
            return Err(MdnError::DimMismatch {
                expected: self.input_dim,
                got: h.len(),
            });
        }
        Ok(())
    }

    /// Evaluation-mode forward pass (dropout off): embedding → mixture.
    pub fn forward(&self, h: &[f64]) -> Result<MixtureParams, MdnError> {
        self.check_input(h)?;
        let layout = self.layout();
        let pass = run_forward(&self.params, &layout, h, 0.0, None);
        Ok(mixture_from_pass(&pass))
    }

    /// Evaluation-mode negative log-likelihood of one (embedding, vector)
    /// pair in nats.
    pub fn nll(&self, h: &[f64], p: &ProsodyVector) -> Result<f64, MdnError> {
        self.check_input(h)?;
        let layout = self.layout();
        let pass = run_forward(&self.params, &layout, h, 0.0, None);
        Ok(pass_nll_and_grad(&self.params, &layout, &pass, p, None))
    }

    /// Evaluation-mode NLL and its analytic gradient with respect to every
    /// parameter, for one sample. The reference point for gradient checks.
    pub fn nll_and_grad(&self, h: &[f64], p: &ProsodyVector) -> Result<(f64, Vec<f64>), MdnError> {
        self.check_input(h)?;
        let layout = self.layout();
        let pass = run_forward(&self.params, &layout, h, 0.0, None);
        let mut grads = vec![0.0; self.params.len()];
        let nll = pass_nll_and_grad(&self.params, &layout, &pass, p, Some(&mut grads));
        Ok((nll, grads))
    }

    /// Writes a versioned checkpoint: architecture descriptor plus the flat
    /// parameter array, as JSON. Floating-point values round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<(), MdnError> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            kernels: self.kernels,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            dropout: self.dropout,
            separate_heads: self.separate_heads,
            seed: self.seed,
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| MdnError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`MdnModel::save`].
    pub fn load(path: &Path) -> Result<Self, MdnError> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| MdnError::Checkpoint {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if file.version != CHECKPOINT_VERSION {
            return Err(MdnError::Checkpoint {
                path: path.display().to_string(),
                message: format!(
                    "unsupported version {} (expected {CHECKPOINT_VERSION})",
                    file.version
                ),
            });
        }
        let layout = build_layout(
            file.input_dim,
            file.kernels,
            file.hidden_layers,
            file.hidden_units,
            file.separate_heads,
        );
        if file.params.len() != layout.total {
            return Err(MdnError::Checkpoint {
                path: path.display().to_string(),
                message: format!(
                    "parameter array has {} entries, architecture needs {}",
                    file.params.len(),
                    layout.total
                ),
            });
        }
        Ok(Self {
            input_dim: file.input_dim,
            kernels: file.kernels,
            hidden_layers: file.hidden_layers,
            hidden_units: file.hidden_units,
            dropout: file.dropout,
            separate_heads: file.separate_heads,
            seed: file.seed,
            params: file.params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    input_dim: usize,
    kernels: usize,
    hidden_layers: usize,
    hidden_units: usize,
    dropout: f64,
    separate_heads: bool,
    seed: u64,
    params: Vec<f64>,
}

/// Mean evaluation-mode NLL of a model over a dataset, in nats.
pub fn dataset_nll(model: &MdnModel, data: &[MdnSample]) -> Result<f64, MdnError> {
    if data.is_empty() {
        return Err(MdnError::EmptyDataset);
    }
    let nlls: Vec<f64> = data
        .par_iter()
        .map(|(h, p)| model.nll(h, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(math::mean(&nlls))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Per-epoch training statistics, written to the training-log CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub lr: f64,
}

/// A finished training run: the best-validation snapshot plus the log.
#[derive(Clone, Debug)]
pub struct TrainedMdn {
    pub model: MdnModel,
    /// One entry per epoch actually run.
    pub log: Vec<EpochStats>,
    /// 1-based epoch whose snapshot `model` holds.
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// Writes the per-epoch training log as CSV (`epoch,train_nll,val_nll,lr`).
pub fn write_training_log(path: &Path, log: &[EpochStats]) -> Result<(), MdnError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in log {
        writer.serialize(row).map_err(|e| MdnError::BadConfig(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| MdnError::BadConfig(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn check_dataset(data: &[MdnSample], input_dim: usize) -> Result<(), MdnError> {
    if data.is_empty() {
        return Err(MdnError::EmptyDataset);
    }
    for (i, (h, p)) in data.iter().enumerate() {
        if h.len() != input_dim {
            return Err(MdnError::DimMismatch {
                expected: input_dim,
                got: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(MdnError::BadSample {
                index: i,
                message: "embedding has a non-finite entry".to_string(),
            });
        }
        if !p.is_finite() {
            return Err(MdnError::BadSample {
                index: i,
                message: "pitch vector has a non-finite entry".to_string(),
            });
        }
    }
    Ok(())
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            weight_decay,
        }
    }

    /// One step of adaptive moments with decoupled weight decay.
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -=
                self.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * params[i]);
        }
    }
}

/// Trains a mixture density network by minibatch NLL minimization with
/// adaptive moments, decoupled weight decay, and early stopping on
/// validation NLL. Returns the snapshot of the best-validation epoch with
/// the per-epoch log. Bit-deterministic given the config seed.
pub fn train_mdn(
    dataset: &[MdnSample],
    config: &TrainConfig,
    validation: &[MdnSample],
) -> Result<TrainedMdn, MdnError> {
    config.validate()?;
    if dataset.is_empty() || validation.is_empty() {
        return Err(MdnError::EmptyDataset);
    }
    let input_dim = dataset[0].0.len();
    check_dataset(dataset, input_dim)?;
    check_dataset(validation, input_dim)?;

    let mut model = MdnModel::new(input_dim, config)?;
    let layout = model.layout();
    let mut opt = AdamW::new(model.n_params(), config.learning_rate, config.weight_decay);
    // Model init consumed the bare seed stream; the training loop (epoch
    // shuffles and dropout masks) runs on its own stream.
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = vec![0.0; model.n_params()];
    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.params.clone();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(dataset.len());
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (h, p) = &dataset[i];
                let pass = run_forward(&model.params, &layout, h, config.dropout, Some(&mut rng));
                let nll = pass_nll_and_grad(&model.params, &layout, &pass, p, Some(&mut grads));
                batch_losses.push(nll);
            }
            let batch_loss = math::mean(&batch_losses);
            if !batch_loss.is_finite() {
                return Err(MdnError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grads);
            epoch_losses.extend_from_slice(&batch_losses);
        }

        let train_nll = math::mean(&epoch_losses);
        let val_nll = dataset_nll(&model, validation)?;
        if !val_nll.is_finite() {
            return Err(MdnError::NanValidation { epoch });
        }
        log.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
            lr: config.learning_rate,
        });

        if val_nll < best_val {
            best_val = val_nll;
            best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }

    model.params = best_params;
    Ok(TrainedMdn {
        model,
        log,
        best_epoch,
        best_val_nll: best_val,
    })
}

// ---------------------------------------------------------------------------
// Hyperparameter search
// ---------------------------------------------------------------------------

/// Cross-validated score of one grid configuration. `mean_val_nll` is
/// `None` when any fold diverged (non-finite loss), excluding the
/// configuration from selection.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub config: TrainConfig,
    pub mean_val_nll: Option<f64>,
}

/// Outcome of [`grid_search`]: the winning configuration plus the full
/// score table.
#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best: TrainConfig,
    pub cells: Vec<GridCell>,
}

fn config_param_count(input_dim: usize, config: &TrainConfig) -> usize {
    build_layout(
        input_dim,
        config.kernels,
        config.hidden_layers,
        config.hidden_units,
        config.separate_heads,
    )
    .total
}

/// Scores every configuration by mean validation NLL across its
/// cross-validation folds and returns the argmin. Ties break toward the
/// smaller model, then the smaller learning rate. Configurations that
/// diverge (non-finite loss in any fold) are excluded. Grid cells run in
/// parallel; the result is deterministic in `seed`.
pub fn grid_search(
    dataset: &[MdnSample],
    grid: &[TrainConfig],
    seed: u64,
) -> Result<GridSearchResult, MdnError> {
    if grid.is_empty() {
        return Err(MdnError::EmptyGrid);
    }
    for config in grid {
        config.validate()?;
    }
    if dataset.is_empty() {
        return Err(MdnError::EmptyDataset);
    }
    check_dataset(dataset, dataset[0].0.len())?;

    let scored: Vec<Result<Option<f64>, MdnError>> = grid
        .par_iter()
        .enumerate()
        .map(|(ci, config)| {
            let assignments = fold_assignments(dataset.len(), config.folds, seed)
                .map_err(|e| MdnError::BadConfig(e.to_string()))?;
            let mut fold_nlls = Vec::with_capacity(config.folds);
            for fold in 0..config.folds {
                let mut train = Vec::new();
                let mut val = Vec::new();
                for (i, sample) in dataset.iter().enumerate() {
                    if assignments[i] == fold {
                        val.push(sample.clone());
                    } else {
                        train.push(sample.clone());
                    }
                }
                let mut cell_config = config.clone();
                cell_config.seed = seed
                    .wrapping_add((ci * config.folds + fold) as u64)
                    .wrapping_add(1);
                match train_mdn(&train, &cell_config, &val) {
                    Ok(run) => fold_nlls.push(run.best_val_nll),
                    Err(MdnError::NanLoss { .. }) | Err(MdnError::NanValidation { .. }) => {
                        return Ok(None);
                    }
                    Err(other) => return Err(other),
                }
            }
            let mean = math::mean(&fold_nlls);
            Ok(if mean.is_finite() { Some(mean) } else { None })
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    for (config, score) in grid.iter().zip(scored) {
        cells.push(GridCell {
            config: config.clone(),
            mean_val_nll: score?,
        });
    }

    let input_dim = dataset[0].0.len();
    let best = cells
        .iter()
        .filter_map(|cell| cell.mean_val_nll.map(|nll| (cell, nll)))
        .min_by(|(a, a_nll), (b, b_nll)| {
            a_nll
                .total_cmp(b_nll)
                .then_with(|| {
                    config_param_count(input_dim, &a.config)
                        .cmp(&config_param_count(input_dim, &b.config))
                })
                .then_with(|| a.config.learning_rate.total_cmp(&b.config.learning_rate))
        })
        .map(|(cell, _)| cell.config.clone())
        .ok_or(MdnError::AllConfigsDiverged)?;

    Ok(GridSearchResult { best, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_component(mean: [f64; VECTOR_DIM], var: [f64; VECTOR_DIM]) -> MixtureParams {
        MixtureParams {
            weights: vec![1.0],
            means: vec![mean],
            variances: vec![var],
        }
    }

    #[test]
    fn standard_normal_log_density_at_origin() {
        let params = single_component([0.0; VECTOR_DIM], [1.0; VECTOR_DIM]);
        let value = mixture_log_density(&params, &ProsodyVector([0.0; VECTOR_DIM]));
        assert_abs_diff_eq!(value, -2.0 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn identical_components_collapse_to_one() {
        let mean = [0.4, -1.0, 2.0, 0.1];
        let var = [0.5, 1.5, 1.0, 2.0];
        let single = single_component(mean, var);
        let double = MixtureParams {
            weights: vec![0.3, 0.7],
            means: vec![mean, mean],
            variances: vec![var, var],
        };
        let p = ProsodyVector([0.2, 0.0, 1.0, -0.5]);
        assert_abs_diff_eq!(
            mixture_log_density(&double, &p),
            mixture_log_density(&single, &p),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_density_matches_direct_summation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.gen_range(1..=5);
            let mut raw_weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw_weights.iter().sum();
            raw_weights.iter_mut().for_each(|w| *w /= total);
            let params = MixtureParams {
                weights: raw_weights,
                means: (0..k)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
                    .collect(),
                variances: (0..k)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(0.2..3.0)))
                    .collect(),
            };
            let p = ProsodyVector(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));

            // Independent route: densities in linear space, then one log.
            let mut direct = 0.0;
            for c in 0..k {
                let mut density = params.weights[c];
                for j in 0..VECTOR_DIM {
                    let var = params.variances[c][j];
                    let diff = p.0[j] - params.means[c][j];
                    density *= (-diff * diff / (2.0 * var)).exp()
                        / (2.0 * std::f64::consts::PI * var).sqrt();
                }
                direct += density;
            }
            assert_abs_diff_eq!(mixture_log_density(&params, &p), direct.ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_params_give_exactly_uniform_weights() {
        for kernels in [2usize, 3, 7] {
            let config = TrainConfig {
                kernels,
                hidden_units: 8,
                ..TrainConfig::default()
            };
            let mut model = MdnModel::new(3, &config).unwrap();
            model.params_mut().iter_mut().for_each(|p| *p = 0.0);
            let params = model.forward(&[0.3, -0.7, 1.0]).unwrap();
            for &w in &params.weights {
                assert_eq!(w, 1.0 / kernels as f64);
            }
            for var in &params.variances {
                for &v in var {
                    assert_eq!(v, 1.0 + VARIANCE_FLOOR);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_valid_on_random_inputs() {
        let config = TrainConfig {
            kernels: 6,
            hidden_units: 16,
            ..TrainConfig::default()
        };
        let model = MdnModel::new(5, &config).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = model.forward(&h).unwrap();
            let b = model.forward(&h).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
        }
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(MdnError::DimMismatch { expected: 5, got: 2 })
        ));
    }

    #[test]
    // The index walks four views of the parameter vector, two of them mutably.
    #[allow(clippy::needless_range_loop)]
    fn analytic_gradients_match_central_differences() {
        let config = TrainConfig {
            kernels: 2,
            hidden_layers: 1,
            hidden_units: 8,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let step = 1e-3;
        for separate_heads in [false, true] {
            let config = TrainConfig {
                separate_heads,
                ..config.clone()
            };
            let mut model = MdnModel::new(3, &config).unwrap();
            let draws = if separate_heads { 20 } else { 100 };
            for _ in 0..draws {
                for p in model.params_mut() {
                    *p = rng.gen_range(-0.5..0.5);
                }
                let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let target = ProsodyVector(std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));

                let (_, analytic) = model.nll_and_grad(&h, &target).unwrap();
                let mut fd = vec![0.0; model.n_params()];
                for i in 0..model.n_params() {
                    let original = model.params()[i];
                    model.params_mut()[i] = original + step;
                    let plus = model.nll(&h, &target).unwrap();
                    model.params_mut()[i] = original - step;
                    let minus = model.nll(&h, &target).unwrap();
                    model.params_mut()[i] = original;
                    fd[i] = (plus - minus) / (2.0 * step);
                }
                let diff: f64 = analytic
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
                    + fd.iter().map(|b| b * b).sum::<f64>().sqrt()
                    + 1e-12;
                assert!(
                    diff / scale < 1e-4,
                    "gradient mismatch: relative error {}",
                    diff / scale
                );
            }
        }
    }

    fn gaussian_samples(
        n: usize,
        mean: [f64; VECTOR_DIM],
        std: [f64; VECTOR_DIM],
        embedding: Vec<f64>,
        rng: &mut ChaCha20Rng,
    ) -> Vec<MdnSample> {
        use rand_distr::StandardNormal;
        (0..n)
            .map(|_| {
                let v: [f64; VECTOR_DIM] =
                    std::array::from_fn(|j| {
                        let z: f64 = rng.sample(StandardNormal);
                        mean[j] + std[j] * z
                    });
                (embedding.clone(), ProsodyVector(v))
            })
            .collect()
    }

    /// Differential entropy of a diagonal Gaussian in nats.
    fn gaussian_entropy(std: [f64; VECTOR_DIM]) -> f64 {
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        0.5 * (VECTOR_DIM as f64) * two_pi_e.ln() + std.iter().map(|s| s.ln()).sum::<f64>()
    }

    #[test]
    fn training_fits_a_single_gaussian_to_its_entropy() {
        let mean = [1.0, -1.0, 0.5, 2.0];
        let std = [1.0, 0.5, 2.0, 1.0];
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let train = gaussian_samples(4000, mean, std, vec![1.0], &mut rng);
        let val = gaussian_samples(800, mean, std, vec![1.0], &mut rng);
        let test = gaussian_samples(1500, mean, std, vec![1.0], &mut rng);

        let config = TrainConfig {
            learning_rate: 0.01,
            dropout: 0.0,
            hidden_layers: 2,
            hidden_units: 32,
            kernels: 5,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = train_mdn(&train, &config, &val).unwrap();
        let nll = dataset_nll(&run.model, &test).unwrap();
        let entropy = gaussian_entropy(std);
        assert!(
            (nll - entropy).abs() < 0.1,
            "held-out NLL {nll} vs analytic entropy {entropy}"
        );
    }

    #[test]
    fn training_separates_two_disjoint_word_classes() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let word_a = vec![1.0, 0.0];
        let word_b = vec![0.0, 1.0];
        let mean_a = [6.0, 0.0, 0.0, 0.0];
        let mean_b = [-6.0, 0.0, 0.0, 0.0];
        let std = [1.0; VECTOR_DIM];
        let build = |n: usize, rng: &mut ChaCha20Rng| {
            let mut data = gaussian_samples(n / 2, mean_a, std, word_a.clone(), rng);
            data.extend(gaussian_samples(n / 2, mean_b, std, word_b.clone(), rng));
            data
        };
        let train = build(4000, &mut rng);
        let val = build(800, &mut rng);
        let test = build(1500, &mut rng);

        let config = TrainConfig {
            learning_rate: 0.01,
            dropout: 0.0,
            hidden_layers: 2,
            hidden_units: 32,
            kernels: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = train_mdn(&train, &config, &val).unwrap();
        let conditional_nll = dataset_nll(&run.model, &test).unwrap();
        // Per-class entropy: each class is a unit Gaussian.
        let class_entropy = gaussian_entropy(std);
        assert!(
            (conditional_nll - class_entropy).abs() < 0.15,
            "conditional NLL {conditional_nll} vs per-class entropy {class_entropy}"
        );
    }

    #[test]
    fn early_stopping_waits_exactly_patience_epochs() {
        // A learning rate so small that parameters never change: the first
        // epoch sets the best validation NLL and no later epoch improves.
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let data = gaussian_samples(64, [0.0; VECTOR_DIM], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let val = gaussian_samples(32, [0.0; VECTOR_DIM], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let config = TrainConfig {
            learning_rate: 1e-300,
            dropout: 0.2,
            hidden_units: 8,
            kernels: 2,
            max_epochs: 50,
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        let run = train_mdn(&data, &config, &val).unwrap();
        assert_eq!(run.best_epoch, 1);
        assert_eq!(run.log.len(), 1 + 3);
    }

    #[test]
    fn train_nll_is_non_increasing_with_small_full_batch_steps() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let data =
            gaussian_samples(256, [2.0, 0.0, -1.0, 0.5], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let val = gaussian_samples(64, [2.0, 0.0, -1.0, 0.5], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let config = TrainConfig {
            learning_rate: 1e-3,
            dropout: 0.0,
            hidden_units: 16,
            kernels: 3,
            batch_size: 256,
            max_epochs: 30,
            early_stop_patience: 29,
            ..TrainConfig::default()
        };
        let run = train_mdn(&data, &config, &val).unwrap();
        for pair in run.log.windows(2) {
            assert!(
                pair[1].train_nll <= pair[0].train_nll + 1e-3,
                "train NLL rose from {} to {}",
                pair[0].train_nll,
                pair[1].train_nll
            );
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let data = gaussian_samples(128, [0.0; VECTOR_DIM], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let val = gaussian_samples(64, [0.0; VECTOR_DIM], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let config = TrainConfig {
            hidden_units: 8,
            kernels: 2,
            max_epochs: 5,
            early_stop_patience: 4,
            ..TrainConfig::default()
        };
        let a = train_mdn(&data, &config, &val).unwrap();
        let b = train_mdn(&data, &config, &val).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            kernels: 3,
            hidden_units: 8,
            separate_heads: true,
            seed: 17,
            ..TrainConfig::default()
        };
        let model = MdnModel::new(4, &config).unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let restored = MdnModel::load(&path).unwrap();
        assert_eq!(model, restored);

        let probe = ProsodyVector([0.3, -0.3, 1.0, 0.0]);
        let h = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            model.nll(&h, &probe).unwrap().to_bits(),
            restored.nll(&h, &probe).unwrap().to_bits()
        );

        // A foreign version number is rejected.
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        let bad_path = dir.path().join("bad.json");
        std::fs::write(&bad_path, bumped).unwrap();
        assert!(matches!(
            MdnModel::load(&bad_path),
            Err(MdnError::Checkpoint { .. })
        ));
    }

    #[test]
    fn training_log_csv_has_the_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = vec![
            EpochStats {
                epoch: 1,
                train_nll: 5.5,
                val_nll: 5.6,
                lr: 0.001,
            },
            EpochStats {
                epoch: 2,
                train_nll: 5.2,
                val_nll: 5.4,
                lr: 0.001,
            },
        ];
        write_training_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,train_nll,val_nll,lr"));
        assert_eq!(lines.next(), Some("1,5.5,5.6,0.001"));
    }

    #[test]
    fn grid_search_picks_the_sane_config_and_excludes_divergence() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let data = gaussian_samples(300, [1.0, 0.0, 0.0, 0.0], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let base = TrainConfig {
            dropout: 0.0,
            hidden_units: 8,
            kernels: 2,
            max_epochs: 12,
            early_stop_patience: 11,
            folds: 3,
            ..TrainConfig::default()
        };
        // The second rate makes the decoupled-decay term multiply the
        // parameters by ~1e9 per step, overflowing to a non-finite loss
        // within a few epochs.
        let grid = vec![
            TrainConfig {
                learning_rate: 5e-3,
                ..base.clone()
            },
            TrainConfig {
                learning_rate: 1e12,
                ..base.clone()
            },
        ];
        let result = grid_search(&data, &grid, 1).unwrap();
        assert_eq!(result.best.learning_rate, 5e-3);
        assert!(result.cells[0].mean_val_nll.is_some());
        assert!(result.cells[1].mean_val_nll.is_none());
    }

    #[test]
    fn grid_search_returns_a_single_element_grid_directly() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let data = gaussian_samples(150, [0.0; VECTOR_DIM], [1.0; VECTOR_DIM], vec![1.0], &mut rng);
        let only = TrainConfig {
            dropout: 0.0,
            hidden_units: 8,
            kernels: 2,
            max_epochs: 4,
            early_stop_patience: 3,
            folds: 3,
            ..TrainConfig::default()
        };
        let result = grid_search(&data, std::slice::from_ref(&only), 2).unwrap();
        assert_eq!(result.best, only);
        assert_eq!(result.cells.len(), 1);
    }

    #[test]
    fn full_search_grid_covers_the_reference_lattice() {
        let grid = full_search_grid(&TrainConfig::default());
        assert_eq!(grid.len(), 24);
        assert!(grid.iter().any(|c| c.learning_rate == 0.01
            && c.dropout == 0.5
            && c.hidden_layers == 30
            && c.hidden_units == 1024));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let bad_patience = TrainConfig {
            early_stop_patience: 50,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(bad_patience.validate(), Err(MdnError::BadConfig(_))));

        let config = TrainConfig {
            hidden_units: 8,
            kernels: 2,
            ..TrainConfig::default()
        };
        let sample: MdnSample = (vec![1.0], ProsodyVector([0.0; VECTOR_DIM]));
        assert!(matches!(
            train_mdn(&[], &config, std::slice::from_ref(&sample)),
            Err(MdnError::EmptyDataset)
        ));
        let mismatched: MdnSample = (vec![1.0, 2.0], ProsodyVector([0.0; VECTOR_DIM]));
        assert!(matches!(
            train_mdn(
                &[sample.clone(), mismatched],
                &config,
                std::slice::from_ref(&sample)
            ),
            Err(MdnError::DimMismatch { .. })
        ));
        assert!(matches!(grid_search(&[sample], &[], 0), Err(MdnError::EmptyGrid)));
    }
}
