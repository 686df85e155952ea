//! Stochastic macro-action policy: a tanh MLP trunk with a 3-logit action
//! head and a scalar value head, plus the JSON checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fswactions::MacroAction;
use crate::twinsim::{OBS_LAYOUT, OBS_LEN};

pub const N_ACTIONS: usize = 3;
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint rejected: unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint rejected: {0}")]
    Invalid(String),
    #[error("checkpoint rejected: malformed JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Fully connected layer, weights stored row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn uniform(inputs: usize, outputs: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let limit = scale * (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect();
        Dense { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x`, and returns the gradient with respect to `x`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    fn check(&self, name: &str, inputs: usize, outputs: Option<usize>) -> Result<(), PolicyError> {
        if self.inputs != inputs || outputs.is_some_and(|o| o != self.outputs) || self.outputs == 0 {
            return Err(PolicyError::Shape(format!(
                "layer {name}: got {}→{}, expected {inputs}→{}",
                self.inputs,
                self.outputs,
                outputs.map_or("*".to_string(), |o| o.to_string())
            )));
        }
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(PolicyError::Shape(format!("layer {name}: parameter count does not match shape")));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(PolicyError::Invalid(format!("layer {name}: non-finite parameter")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub hidden: Vec<Dense>,
    pub action_head: Dense,
    pub value_head: Dense,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each hidden layer's tanh output.
    pub activations: Vec<Vec<f64>>,
    pub logits: [f64; N_ACTIONS],
    pub value: f64,
}

impl PolicyParams {
    pub fn zeros(hidden_sizes: &[usize]) -> Self {
        let mut hidden = Vec::new();
        let mut width = OBS_LEN;
        for &h in hidden_sizes {
            hidden.push(Dense::zeros(width, h));
            width = h;
        }
        PolicyParams { hidden, action_head: Dense::zeros(width, N_ACTIONS), value_head: Dense::zeros(width, 1) }
    }

    /// Glorot-uniform trunk; the action head starts near zero so the initial
    /// policy is close to uniform.
    pub fn init(hidden_sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::new();
        let mut width = OBS_LEN;
        for &h in hidden_sizes {
            hidden.push(Dense::uniform(width, h, 1.0, rng));
            width = h;
        }
        let action_head = Dense::uniform(width, N_ACTIONS, 0.01, rng);
        let value_head = Dense::uniform(width, 1, 1.0, rng);
        PolicyParams { hidden, action_head, value_head }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.outputs).collect()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.action_head, &self.value_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.action_head, &mut self.value_head])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters in a fixed order: per layer, weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut i = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams::zeros(&self.hidden_sizes())
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut width = OBS_LEN;
        for (i, l) in self.hidden.iter().enumerate() {
            l.check(&format!("hidden_{i}"), width, None)?;
            width = l.outputs;
        }
        self.action_head.check("action_head", width, Some(N_ACTIONS))?;
        self.value_head.check("value_head", width, Some(1))
    }

    pub fn forward(&self, obs: &[f64]) -> Result<([f64; N_ACTIONS], f64), PolicyError> {
        let c = self.forward_cached(obs)?;
        Ok((c.logits, c.value))
    }

    pub fn forward_cached(&self, obs: &[f64]) -> Result<ForwardCache, PolicyError> {
        if obs.len() != OBS_LEN {
            return Err(PolicyError::Shape(format!("observation has length {}, expected {OBS_LEN}", obs.len())));
        }
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        activations.push(obs.to_vec());
        let mut buf = Vec::new();
        for l in &self.hidden {
            l.apply(activations.last().expect("input present"), &mut buf);
            activations.push(buf.iter().map(|v| v.tanh()).collect());
        }
        let top = activations.last().expect("input present");
        self.action_head.apply(top, &mut buf);
        let logits = [buf[0], buf[1], buf[2]];
        self.value_head.apply(top, &mut buf);
        let value = buf[0];
        Ok(ForwardCache { activations, logits, value })
    }

    /// Accumulates into `grad` the gradient of a scalar whose derivatives with
    /// respect to the logits and value are `dlogits` and `dvalue`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64; N_ACTIONS], dvalue: f64, grad: &mut PolicyParams) {
        let top = cache.activations.last().expect("input present");
        let mut dh = self.action_head.backward(top, dlogits, &mut grad.action_head);
        let dv = self.value_head.backward(top, &[dvalue], &mut grad.value_head);
        dh.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        for k in (0..self.hidden.len()).rev() {
            let out = &cache.activations[k + 1];
            let dz: Vec<f64> = dh.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            dh = self.hidden[k].backward(&cache.activations[k], &dz, &mut grad.hidden[k]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub probs: [f64; N_ACTIONS],
}

impl ActionDistribution {
    pub fn prob(&self, action: MacroAction) -> f64 {
        self.probs[action.code()]
    }

    pub fn log_prob(&self, action: MacroAction) -> f64 {
        self.probs[action.code()].ln()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Softmax with max subtraction.
pub fn distribution(logits: &[f64; N_ACTIONS]) -> ActionDistribution {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let sum: f64 = e.iter().sum();
    ActionDistribution { probs: e.map(|v| v / sum) }
}

/// Log-softmax, accurate even when a probability underflows.
pub fn log_softmax(logits: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.map(|l| l - lse)
}

pub fn sample(dist: &ActionDistribution, rng: &mut impl Rng) -> MacroAction {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in dist.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return MacroAction::ALL[i];
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = dist.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    MacroAction::ALL[last]
}

/// Most likely action; ties go to the lowest code.
pub fn argmax(dist: &ActionDistribution) -> MacroAction {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if dist.probs[i] > dist.probs[best] {
            best = i;
        }
    }
    MacroAction::ALL[best]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    #[serde(default)]
    pub episodes: u64,
    #[serde(default)]
    pub iteration: u64,
    #[serde(default)]
    pub mean_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Portable checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub obs_layout: Vec<String>,
    pub action_names: Vec<String>,
    pub layers: Vec<LayerRecord>,
    pub metadata: CheckpointMetadata,
}

impl Checkpoint {
    pub fn from_params(params: &PolicyParams, metadata: CheckpointMetadata) -> Self {
        let record = |name: String, l: &Dense, activation: &str| LayerRecord {
            name,
            inputs: l.inputs,
            outputs: l.outputs,
            activation: activation.to_string(),
            weights: l.weights.chunks(l.inputs).map(|c| c.to_vec()).collect(),
            bias: l.bias.clone(),
        };
        let mut layers: Vec<LayerRecord> =
            params.hidden.iter().enumerate().map(|(i, l)| record(format!("hidden_{i}"), l, "tanh")).collect();
        layers.push(record("action_head".into(), &params.action_head, "linear"));
        layers.push(record("value_head".into(), &params.value_head, "linear"));
        Checkpoint {
            format_version: FORMAT_VERSION,
            obs_layout: OBS_LAYOUT.iter().map(|s| s.to_string()).collect(),
            action_names: MacroAction::NAMES.iter().map(|s| s.to_string()).collect(),
            layers,
            metadata,
        }
    }

    /// Validates the document and rebuilds the parameters.
    pub fn to_params(&self) -> Result<PolicyParams, PolicyError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PolicyError::Version(self.format_version));
        }
        if self.obs_layout.iter().map(String::as_str).ne(OBS_LAYOUT) {
            return Err(PolicyError::Invalid(format!(
                "observation layout mismatch: file has {:?}",
                self.obs_layout
            )));
        }
        if self.action_names.iter().map(String::as_str).ne(MacroAction::NAMES) {
            return Err(PolicyError::Invalid(format!("action names mismatch: file has {:?}", self.action_names)));
        }
        if self.layers.len() < 2 {
            return Err(PolicyError::Shape("checkpoint needs an action head and a value head".into()));
        }
        let n = self.layers.len();
        let mut dense = Vec::with_capacity(n);
        for (i, rec) in self.layers.iter().enumerate() {
            let (want_name, want_act) = match i {
                _ if i == n - 2 => ("action_head".to_string(), "linear"),
                _ if i == n - 1 => ("value_head".to_string(), "linear"),
                _ => (format!("hidden_{i}"), "tanh"),
            };
            if rec.name != want_name || rec.activation != want_act {
                return Err(PolicyError::Invalid(format!(
                    "layer {i} is {}/{}, expected {want_name}/{want_act}",
                    rec.name, rec.activation
                )));
            }
            if rec.weights.len() != rec.outputs || rec.weights.iter().any(|r| r.len() != rec.inputs) {
                return Err(PolicyError::Shape(format!("layer {}: weight rows do not match {}→{}", rec.name, rec.inputs, rec.outputs)));
            }
            dense.push(Dense {
                inputs: rec.inputs,
                outputs: rec.outputs,
                weights: rec.weights.concat(),
                bias: rec.bias.clone(),
            });
        }
        let value_head = dense.pop().expect("len >= 2");
        let action_head = dense.pop().expect("len >= 2");
        let params = PolicyParams { hidden: dense, action_head, value_head };
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Writes a checkpoint atomically (temporary file then rename).
pub fn save(params: &PolicyParams, metadata: CheckpointMetadata, path: &Path) -> Result<(), PolicyError> {
    params.validate()?;
    let text = Checkpoint::from_params(params, metadata).to_json();
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let text = fs::read_to_string(path)?;
    let ck = Checkpoint::from_json(&text)?;
    ck.to_params()?;
    Ok(ck)
}

pub fn load(path: &Path) -> Result<PolicyParams, PolicyError> {
    let text = fs::read_to_string(path)?;
    Checkpoint::from_json(&text)?.to_params()
}
