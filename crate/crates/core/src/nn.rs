//! MLP building blocks: linear layers, batch normalization, dropout and
//! multi-head outputs, plus the encoder/decoder/mixing architectures used
//! throughout the crate.

use std::collections::BTreeMap;

use crate::graph::{Graph, Var};
use crate::linalg::orthonormalize_columns;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
    Softplus,
    /// `tanh(prescale * x)`; used only by mixing-function overrides.
    Tanh { prescale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadActivation {
    None,
    Softplus,
    RowSoftmax,
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub name: String,
    pub width: usize,
    pub activation: HeadActivation,
}

#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::Config("mlp input width must be positive".into()));
        }
        for l in &self.layers {
            if l.width == 0 {
                return Err(Error::Config("layer width must be positive".into()));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::Config(format!(
                    "dropout rate {} outside [0, 1)",
                    l.dropout
                )));
            }
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.width == 0) {
            return Err(Error::Config("mlp needs at least one non-empty head".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors. Batch-norm running statistics live in a
/// separate map and are never touched by the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    trainable: BTreeMap<String, Tensor>,
    stats: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.trainable.contains_key(name),
            "duplicate parameter {name}"
        );
        self.trainable.insert(name.to_string(), t);
    }

    pub fn insert_stat(&mut self, name: &str, t: Tensor) {
        self.stats.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.trainable
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.trainable
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn stat(&self, name: &str) -> &Tensor {
        self.stats
            .get(name)
            .unwrap_or_else(|| panic!("missing statistic {name}"))
    }

    pub fn set_stat(&mut self, name: &str, t: Tensor) {
        self.stats.insert(name.to_string(), t);
    }

    pub fn trainable(&self) -> &BTreeMap<String, Tensor> {
        &self.trainable
    }

    pub fn trainable_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.trainable
    }

    pub fn stats(&self) -> &BTreeMap<String, Tensor> {
        &self.stats
    }

    pub fn merge(&mut self, other: ParamStore) {
        for (k, v) in other.trainable {
            assert!(!self.trainable.contains_key(&k), "duplicate parameter {k}");
            self.trainable.insert(k, v);
        }
        self.stats.extend(other.stats);
    }

    pub fn param_count(&self) -> usize {
        self.trainable.values().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// `N(0, 1/fan_in)` weights, zero biases: training networks.
    FanInGaussian,
    /// Gaussian weights orthonormalized along the smaller dimension
    /// (scale c = 1), zero biases: injective ground-truth mixing.
    OrthonormalColumns,
}

/// Batch-norm hyperparameters (the usual framework conventions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnOptions {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnOptions {
    fn default() -> Self {
        BnOptions {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

fn init_weight(rng: &mut Rng, rows: usize, cols: usize, scheme: InitScheme) -> Result<Tensor> {
    match scheme {
        InitScheme::FanInGaussian => {
            Ok(rng.normal_tensor(rows, cols).scale(1.0 / (rows as f64).sqrt()))
        }
        InitScheme::OrthonormalColumns => {
            let raw = rng.normal_tensor(rows, cols);
            if rows >= cols {
                orthonormalize_columns(&raw)
            } else {
                // Orthonormal rows keep a wide layer injective.
                Ok(orthonormalize_columns(&raw.transpose())?.transpose())
            }
        }
    }
}

/// Initialize all parameters of `spec` under `prefix`.
pub fn init_params(
    spec: &MlpSpec,
    prefix: &str,
    rng: &mut Rng,
    scheme: InitScheme,
) -> Result<ParamStore> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut fan_in = spec.input;
    for (i, layer) in spec.layers.iter().enumerate() {
        store.insert(
            &format!("{prefix}.l{i}.w"),
            init_weight(rng, fan_in, layer.width, scheme)?,
        );
        store.insert(&format!("{prefix}.l{i}.b"), Tensor::zeros(1, layer.width));
        if layer.batch_norm {
            store.insert(
                &format!("{prefix}.l{i}.bn.gamma"),
                Tensor::full(1, layer.width, 1.0),
            );
            store.insert(&format!("{prefix}.l{i}.bn.beta"), Tensor::zeros(1, layer.width));
            store.insert_stat(
                &format!("{prefix}.l{i}.bn.running_mean"),
                Tensor::zeros(1, layer.width),
            );
            store.insert_stat(
                &format!("{prefix}.l{i}.bn.running_var"),
                Tensor::full(1, layer.width, 1.0),
            );
        }
        fan_in = layer.width;
    }
    for head in &spec.heads {
        store.insert(
            &format!("{prefix}.{}.w", head.name),
            init_weight(rng, fan_in, head.width, scheme)?,
        );
        store.insert(&format!("{prefix}.{}.b", head.name), Tensor::zeros(1, head.width));
    }
    Ok(store)
}

/// Trainable parameters bound into a graph, keyed by name.
pub struct ParamBinding {
    vars: BTreeMap<String, Var>,
}

impl ParamBinding {
    pub fn bind(g: &mut Graph, store: &ParamStore) -> Self {
        let mut vars = BTreeMap::new();
        for (name, t) in store.trainable() {
            vars.insert(name.clone(), g.param(name, t.clone()));
        }
        ParamBinding { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }
}

pub enum Mode<'a> {
    Train { rng: &'a mut Rng },
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Forward outputs: one graph node per head, plus the batch-norm running
/// statistic updates to apply after the step (train mode only).
pub struct ForwardOut {
    pub heads: BTreeMap<String, Var>,
    pub bn_updates: Vec<(String, Tensor)>,
}

impl ForwardOut {
    pub fn head(&self, name: &str) -> Var {
        *self
            .heads
            .get(name)
            .unwrap_or_else(|| panic!("missing head {name}"))
    }
}

pub fn apply_bn_updates(store: &mut ParamStore, updates: Vec<(String, Tensor)>) {
    for (name, value) in updates {
        store.set_stat(&name, value);
    }
}

/// Run an MLP forward inside `g`.
///
/// Train mode draws fresh dropout masks and normalizes with batch
/// statistics (batch size >= 2 required); eval mode is a deterministic
/// function of `(store, x)` using running statistics.
pub fn mlp_forward(
    g: &mut Graph,
    binding: &ParamBinding,
    store: &ParamStore,
    spec: &MlpSpec,
    prefix: &str,
    x: Var,
    bn_opts: BnOptions,
    mode: &mut Mode,
) -> Result<ForwardOut> {
    let batch = g.value(x)?.rows();
    let mut bn_updates = Vec::new();
    let mut h = x;
    for (i, layer) in spec.layers.iter().enumerate() {
        let w = binding.var(&format!("{prefix}.l{i}.w"));
        let b = binding.var(&format!("{prefix}.l{i}.b"));
        let lin = g.matmul(h, w);
        let mut cur = g.add(lin, b);
        if layer.batch_norm {
            let gamma = binding.var(&format!("{prefix}.l{i}.bn.gamma"));
            let beta = binding.var(&format!("{prefix}.l{i}.bn.beta"));
            if mode.is_train() {
                if batch < 2 {
                    return Err(Error::Config(
                        "batch norm needs batch size >= 2 in train mode".into(),
                    ));
                }
                let mu = g.col_mean(cur);
                let centered = g.sub(cur, mu);
                let sq = g.square(centered);
                let var = g.col_mean(sq);
                let shifted = g.affine(var, 1.0, bn_opts.eps);
                let denom = g.sqrt(shifted);
                let normed = g.div(centered, denom);
                let scaled = g.mul(normed, gamma);
                cur = g.add(scaled, beta);

                // Running statistics track the unbiased batch variance.
                let n = batch as f64;
                let batch_mean = g.value(mu)?.clone();
                let batch_var = g.value(var)?.scale(n / (n - 1.0));
                let m = bn_opts.momentum;
                let rm_name = format!("{prefix}.l{i}.bn.running_mean");
                let rv_name = format!("{prefix}.l{i}.bn.running_var");
                let new_rm = store.stat(&rm_name).scale(1.0 - m).add(&batch_mean.scale(m));
                let new_rv = store.stat(&rv_name).scale(1.0 - m).add(&batch_var.scale(m));
                bn_updates.push((rm_name, new_rm));
                bn_updates.push((rv_name, new_rv));
            } else {
                let rm = g.constant(store.stat(&format!("{prefix}.l{i}.bn.running_mean")).clone());
                let rv = g.constant(store.stat(&format!("{prefix}.l{i}.bn.running_var")).clone());
                let centered = g.sub(cur, rm);
                let shifted = g.affine(rv, 1.0, bn_opts.eps);
                let denom = g.sqrt(shifted);
                let normed = g.div(centered, denom);
                let scaled = g.mul(normed, gamma);
                cur = g.add(scaled, beta);
            }
        }
        cur = match layer.activation {
            Activation::None => cur,
            Activation::Relu => g.relu(cur),
            Activation::LeakyRelu(s) => g.leaky_relu(cur, s),
            Activation::Softplus => g.softplus(cur),
            Activation::Tanh { prescale } => {
                let pre = g.affine(cur, prescale, 0.0);
                g.tanh(pre)
            }
        };
        if layer.dropout > 0.0 {
            if let Mode::Train { rng } = mode {
                let keep = 1.0 - layer.dropout;
                let mut mask = Tensor::zeros(batch, layer.width);
                for v in mask.data_mut() {
                    *v = if rng.bernoulli(keep).expect("valid keep rate") {
                        1.0 / keep
                    } else {
                        0.0
                    };
                }
                let mask = g.constant(mask);
                cur = g.mul(cur, mask);
            }
        }
        h = cur;
    }
    let mut heads = BTreeMap::new();
    for head in &spec.heads {
        let w = binding.var(&format!("{prefix}.{}.w", head.name));
        let b = binding.var(&format!("{prefix}.{}.b", head.name));
        let lin = g.matmul(h, w);
        let mut out = g.add(lin, b);
        out = match head.activation {
            HeadActivation::None => out,
            HeadActivation::Softplus => g.softplus(out),
            HeadActivation::RowSoftmax => g.row_softmax(out),
        };
        heads.insert(head.name.clone(), out);
    }
    Ok(ForwardOut { heads, bn_updates })
}

/// Deterministic eval-mode forward returning plain head tensors.
pub fn eval_heads(
    store: &ParamStore,
    spec: &MlpSpec,
    prefix: &str,
    x: &Tensor,
) -> Result<BTreeMap<String, Tensor>> {
    let mut g = Graph::new();
    let binding = ParamBinding::bind(&mut g, store);
    let xv = g.constant(x.clone());
    let out = mlp_forward(
        &mut g,
        &binding,
        store,
        spec,
        prefix,
        xv,
        BnOptions::default(),
        &mut Mode::Eval,
    )?;
    let mut heads = BTreeMap::new();
    for (name, var) in &out.heads {
        heads.insert(name.clone(), g.value(*var)?.clone());
    }
    Ok(heads)
}

/// Observation models supported by decoders and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Fixed observation variance.
    Gaussian,
    Poisson,
    NegBinomial,
    Bernoulli,
}

/// The encoder/decoder/mixing architecture set for given dimensions.
#[derive(Debug, Clone)]
pub struct ArchSet {
    pub encoder_z: MlpSpec,
    pub encoder_s: MlpSpec,
    pub decoder: MlpSpec,
    pub ground_truth: MlpSpec,
}

fn encoder_spec(data_dim: usize, latent: usize, dropout: f64) -> MlpSpec {
    MlpSpec {
        input: data_dim,
        layers: vec![LayerSpec {
            width: 128,
            activation: Activation::Relu,
            batch_norm: true,
            dropout,
        }],
        heads: vec![
            HeadSpec {
                name: "mu".into(),
                width: latent,
                activation: HeadActivation::None,
            },
            HeadSpec {
                name: "logvar".into(),
                width: latent,
                activation: HeadActivation::None,
            },
        ],
    }
}

pub fn decoder_spec(latent_in: usize, data_dim: usize, dropout: f64) -> MlpSpec {
    let hidden = LayerSpec {
        width: 128,
        activation: Activation::Relu,
        batch_norm: true,
        dropout,
    };
    MlpSpec {
        input: latent_in,
        layers: vec![hidden.clone(), hidden],
        heads: vec![HeadSpec {
            name: "rate".into(),
            width: data_dim,
            activation: HeadActivation::Softplus,
        }],
    }
}

/// Ground-truth mixing: four hidden layers of 40 units, leaky-ReLU slope
/// 0.2, row-softmax output.
pub fn mixing_spec(latent_in: usize, data_dim: usize) -> MlpSpec {
    MlpSpec {
        input: latent_in,
        layers: (0..4)
            .map(|_| LayerSpec {
                width: 40,
                activation: Activation::LeakyRelu(0.2),
                batch_norm: false,
                dropout: 0.0,
            })
            .collect(),
        heads: vec![HeadSpec {
            name: "rate_scale".into(),
            width: data_dim,
            activation: HeadActivation::RowSoftmax,
        }],
    }
}

/// Architectures for latent dims `(p_hat, q_hat)` over `data_dim`
/// features. The NB dispersion vector is owned by the model, not a head.
pub fn build_architectures(p_hat: usize, q_hat: usize, data_dim: usize, dropout: f64) -> ArchSet {
    ArchSet {
        encoder_z: encoder_spec(data_dim, p_hat, dropout),
        encoder_s: encoder_spec(data_dim, q_hat, dropout),
        decoder: decoder_spec(p_hat + q_hat, data_dim, dropout),
        ground_truth: mixing_spec(p_hat + q_hat, data_dim),
    }
}
