//! Synthetic contrastive and multi-group data sets with ground-truth
//! latents retained for evaluation.
//!
//! Latent draws, mixing initialization, dispersions, group structure and
//! observation noise each use their own named RNG substream, so swapping
//! the noise kind never perturbs the stored latents.

use crate::nn::{
    self, init_params, Activation, HeadActivation, HeadSpec, InitScheme,LayerSpec, Likelihood,
    MlpSpec, ParamStore,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Hidden activation override for the ground-truth mixing network.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MixingActivation {
    LeakyRelu { slope: f64 },
    /// `tanh(prescale * x)`: prescale 0.1 is the quasi-linear preset,
    /// 1.0 the non-linear one.
    Tanh { prescale: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixingOverride {
    pub hidden_widths: Vec<usize>,
    pub activation: MixingActivation,
    /// Hidden biases are drawn as N(0, (bias_scale * layer input sd)^2);
    /// 0 keeps every unit at its rectifier kink, larger values park most
    /// units on a single linear piece over the sampled support.
    pub bias_scale: f64,
    /// Gain applied to the softmax head weights; sets how strongly the
    /// rate profile varies with the latents.
    pub output_gain: f64,
    /// Per-latent first-layer gains are drawn log-uniform in
    /// [exp(-spread), exp(spread)]; distinct gains give each latent its
    /// own signature strength (orthogonalized Gaussian columns keep their
    /// unequal norms).
    pub latent_gain_spread: f64,
}

impl Default for MixingOverride {
    fn default() -> Self {
        MixingOverride {
            hidden_widths: vec![40; 4],
            activation: MixingActivation::LeakyRelu { slope: 0.2 },
            bias_scale: 2.0,
            output_gain: 4.0,
            latent_gain_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    /// True background latent dimension.
    pub p: usize,
    /// True salient latent dimension.
    pub q: usize,
    /// Number of observed features.
    pub data_dim: usize,
    pub n_background: usize,
    pub n_target: usize,
    pub noise: Likelihood,
    /// Scale applied to the softmax output of the mixing network.
    pub library_size: f64,
    /// Per-feature NB dispersions are drawn uniformly from this range.
    pub theta_range: (f64, f64),
    /// Observation variance for Gaussian noise.
    pub gaussian_variance: f64,
    pub seed: u64,
    /// When set, target samples receive group labels and `s` is drawn
    /// around per-group means.
    pub group_count: Option<usize>,
    pub mixing: Option<MixingOverride>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 5,
            q: 5,
            data_dim: 150,
            n_background: 1500,
            n_target: 1500,
            noise: Likelihood::Poisson,
            library_size: 1500.0,
            theta_range: (1.0, 5.0),
            gaussian_variance: 1.0,
            seed: 0,
            group_count: None,
            mixing: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.data_dim == 0 {
            return Err(Error::Config("latent and data dimensions must be >= 1".into()));
        }
        if self.n_background == 0 || self.n_target == 0 {
            return Err(Error::Config("sample counts must be >= 1".into()));
        }
        if self.library_size <= 0.0 {
            return Err(Error::Config("library size must be positive".into()));
        }
        if self.theta_range.0 > self.theta_range.1 || self.theta_range.0 <= 0.0 {
            return Err(Error::Config(format!(
                "invalid theta range {:?}",
                self.theta_range
            )));
        }
        if self.gaussian_variance <= 0.0 {
            return Err(Error::Config("gaussian variance must be positive".into()));
        }
        if self.noise == Likelihood::Bernoulli {
            return Err(Error::Config(
                "bernoulli is not a simulation noise model".into(),
            ));
        }
        if let Some(k) = self.group_count {
            if k == 0 {
                return Err(Error::Config("group count must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn mixing_spec(&self, latent_in: usize) -> MlpSpec {
        let over = self.mixing.clone().unwrap_or_default();
        let activation = match over.activation {
            MixingActivation::LeakyRelu { slope } => Activation::LeakyRelu(slope),
            MixingActivation::Tanh { prescale } => Activation::Tanh { prescale },
        };
        MlpSpec {
            input: latent_in,
            layers: over
                .hidden_widths
                .iter()
                .map(|&w| LayerSpec {
                    width: w,
                    activation,
                    batch_norm: false,
                    dropout: 0.0,
                })
                .collect(),
            heads: vec![HeadSpec {
                name: "rate_scale".into(),
                width: self.data_dim,
                activation: HeadActivation::RowSoftmax,
            }],
        }
    }
}

/// Paired background/target observations plus all ground truth.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub x_background: Tensor,
    pub x_target: Tensor,
    /// Background rows first, then target rows.
    pub z_true: Tensor,
    pub s_true: Tensor,
    pub noise: Likelihood,
    pub theta_true: Option<Vec<f64>>,
    /// Group label per target row.
    pub labels: Option<Vec<usize>>,
    pub mixing: ParamStore,
    pub mixing_spec: MlpSpec,
    pub config: SimConfig,
}

impl SimDataset {
    pub fn z_background(&self) -> Tensor {
        self.z_true.select_rows(&(0..self.x_background.rows()).collect::<Vec<_>>())
    }

    pub fn z_target(&self) -> Tensor {
        let nb = self.x_background.rows();
        self.z_true
            .select_rows(&(nb..nb + self.x_target.rows()).collect::<Vec<_>>())
    }
}

/// Shared-plus-private two-group data set.
#[derive(Debug, Clone)]
pub struct MultiGroupDataset {
    pub x1: Tensor,
    pub x2: Tensor,
    /// Dataset-1 rows first, then dataset-2 rows.
    pub z_true: Tensor,
    pub t1_true: Tensor,
    pub t2_true: Tensor,
    pub noise: Likelihood,
    pub theta_true: Option<Vec<f64>>,
    pub mixing: ParamStore,
    pub mixing_spec: MlpSpec,
}

pub const MIXING_PREFIX: &str = "mixing";

/// Initialize the ground-truth mixing: orthonormal weights, hidden biases
/// scaled to each layer's activation spread, and a gained softmax head.
/// The bias draw keeps the net injective while controlling how nonlinear
/// it is on the sampled latent support.
fn init_mixing(spec: &MlpSpec, over: &MixingOverride, rng: &Rng) -> Result<ParamStore> {
    let mut store = init_params(
        spec,
        MIXING_PREFIX,
        &mut rng.substream("mixing-init"),
        InitScheme::OrthonormalColumns,
    )?;
    let mut probe_rng = rng.substream("mixing-probe");
    let mut bias_rng = rng.substream("mixing-bias");
    if over.latent_gain_spread > 0.0 {
        let mut gain_rng = rng.substream("mixing-latent-gain");
        let w0 = store.get_mut(&format!("{MIXING_PREFIX}.l0.w"));
        for r in 0..w0.rows() {
            let g = gain_rng
                .uniform(-over.latent_gain_spread, over.latent_gain_spread)
                .exp();
            for c in 0..w0.cols() {
                w0.set(r, c, w0.get(r, c) * g);
            }
        }
    }
    let mut h = probe_rng.normal_tensor(512, spec.input);
    for (i, layer) in spec.layers.iter().enumerate() {
        let w = store.get(&format!("{MIXING_PREFIX}.l{i}.w")).clone();
        let pre = h.matmul(&w);
        // Aggregate pre-activation sd of this layer on the probe batch.
        let sd = {
            let m = pre.mean();
            (pre.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / (pre.len() as f64 - 1.0))
                .sqrt()
        };
        if over.bias_scale > 0.0 {
            let b = bias_rng
                .normal_tensor(1, layer.width)
                .scale(over.bias_scale * sd);
            *store.get_mut(&format!("{MIXING_PREFIX}.l{i}.b")) = b;
        }
        let b = store.get(&format!("{MIXING_PREFIX}.l{i}.b")).clone();
        let mut next = pre;
        for r in 0..next.rows() {
            for c in 0..next.cols() {
                let v = next.get(r, c) + b.get(0, c);
                let a = match layer.activation {
                    Activation::LeakyRelu(slope) => {
                        if v > 0.0 {
                            v
                        } else {
                            slope * v
                        }
                    }
                    Activation::Tanh { prescale } => (prescale * v).tanh(),
                    Activation::Relu => v.max(0.0),
                    Activation::Softplus => v.max(0.0) + (-v.abs()).exp().ln_1p(),
                    Activation::None => v,
                };
                next.set(r, c, a);
            }
        }
        h = next;
    }
    if over.output_gain != 1.0 {
        let name = format!("{MIXING_PREFIX}.{}.w", spec.heads[0].name);
        let w = store.get(&name).scale(over.output_gain);
        *store.get_mut(&name) = w;
    }
    // Recenter the head so the base rate profile stays near-uniform: the
    // hidden biases otherwise push constant offsets into the logits and
    // the softmax concentrates on a few features.
    {
        let wname = format!("{MIXING_PREFIX}.{}.w", spec.heads[0].name);
        let bname = format!("{MIXING_PREFIX}.{}.b", spec.heads[0].name);
        let logits = h.matmul(store.get(&wname));
        let mut bias = Tensor::zeros(1, logits.cols());
        for c in 0..logits.cols() {
            let m: f64 =
                (0..logits.rows()).map(|r| logits.get(r, c)).sum::<f64>() / logits.rows() as f64;
            bias.set(0, c, -m);
        }
        *store.get_mut(&bname) = bias;
    }
    Ok(store)
}

fn draw_thetas(config: &SimConfig, rng: &Rng) -> Option<Vec<f64>> {
    if config.noise == Likelihood::NegBinomial {
        let mut tr = rng.substream("theta");
        let (lo, hi) = config.theta_range;
        Some((0..config.data_dim).map(|_| tr.uniform(lo, hi)).collect())
    } else {
        None
    }
}

fn apply_noise(
    config: &SimConfig,
    rates: &Tensor,
    thetas: &Option<Vec<f64>>,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut x = Tensor::zeros(rates.rows(), rates.cols());
    for r in 0..rates.rows() {
        for c in 0..rates.cols() {
            let rate = rates.get(r, c);
            let v = match config.noise {
                Likelihood::Poisson => rng.poisson(rate)? as f64,
                Likelihood::NegBinomial => {
                    let theta = thetas.as_ref().expect("thetas drawn for nb")[c];
                    rng.neg_binomial(rate, theta)? as f64
                }
                Likelihood::Gaussian => rng.normal(rate, config.gaussian_variance.sqrt()),
                Likelihood::Bernoulli => unreachable!("rejected by validate"),
            };
            x.set(r, c, v);
        }
    }
    Ok(x)
}

/// Rates for latent rows under the ground-truth mixing: `L * softmax(f(.))`.
pub fn mixing_rates(
    mixing: &ParamStore,
    spec: &MlpSpec,
    latents: &Tensor,
    library_size: f64,
) -> Result<Tensor> {
    let heads = nn::eval_heads(mixing, spec, MIXING_PREFIX, latents)?;
    Ok(heads["rate_scale"].scale(library_size))
}

/// Contrastive data set: target from `f(z, s)`, background from `f(z, 0)`.
pub fn generate_contrastive(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let root = Rng::seeded(config.seed);
    let spec = config.mixing_spec(config.p + config.q);
    let over = config.mixing.clone().unwrap_or_default();
    let mixing = init_mixing(&spec, &over, &root)?;
    let mut latent_rng = root.substream("latents");
    let (nb, nt) = (config.n_background, config.n_target);

    let z_b = latent_rng.normal_tensor(nb, config.p);
    let z_t = latent_rng.normal_tensor(nt, config.p);

    let (s_t, labels) = match config.group_count {
        None | Some(1) => {
            let base = latent_rng.normal_tensor(nt, config.q);
            match config.group_count {
                // A single group still gets its mean shift and labels.
                Some(1) => {
                    let mut group_rng = root.substream("groups");
                    let m = group_rng.normal_tensor(1, config.q).scale(2.0);
                    let mut s = base;
                    for r in 0..nt {
                        for c in 0..config.q {
                            s.set(r, c, s.get(r, c) + m.get(0, c));
                        }
                    }
                    (s, Some(vec![0; nt]))
                }
                _ => (base, None),
            }
        }
        Some(k) => {
            let mut group_rng = root.substream("groups");
            // Group means m_g ~ N(0, 4 I).
            let means = group_rng.normal_tensor(k, config.q).scale(2.0);
            let labels: Vec<usize> = (0..nt).map(|_| group_rng.gen_index(k)).collect();
            let base = latent_rng.normal_tensor(nt, config.q);
            let mut s = base;
            for r in 0..nt {
                let m = labels[r];
                for c in 0..config.q {
                    s.set(r, c, s.get(r, c) + means.get(m, c));
                }
            }
            (s, Some(labels))
        }
    };

    let zeros_b = Tensor::zeros(nb, config.q);
    let lat_b = Tensor::hcat(&[&z_b, &zeros_b]);
    let lat_t = Tensor::hcat(&[&z_t, &s_t]);
    let rates_b = mixing_rates(&mixing, &spec, &lat_b, config.library_size)?;
    let rates_t = mixing_rates(&mixing, &spec, &lat_t, config.library_size)?;

    let thetas = draw_thetas(config, &root);
    let mut noise_rng = root.substream("noise");
    let x_background = apply_noise(config, &rates_b, &thetas, &mut noise_rng)?;
    let x_target = apply_noise(config, &rates_t, &thetas, &mut noise_rng)?;

    Ok(SimDataset {
        x_background,
        x_target,
        z_true: Tensor::vcat(&[&z_b, &z_t]),
        s_true: s_t,
        noise: config.noise,
        theta_true: thetas,
        labels,
        mixing,
        mixing_spec: spec,
        config: config.clone(),
    })
}

/// Grouped-salient variant: requires `group_count >= 2`.
pub fn generate_grouped_salient(config: &SimConfig) -> Result<SimDataset> {
    match config.group_count {
        Some(k) if k >= 2 => generate_contrastive(config),
        _ => Err(Error::Config(
            "generate_grouped_salient requires group_count >= 2".into(),
        )),
    }
}

/// Multi-group data set: dataset 1 from `f(z, t1, 0)`, dataset 2 from
/// `f(z, 0, t2)`; `config.q` is reused for both private blocks and
/// `n_background`/`n_target` set the two dataset sizes.
pub fn generate_multigroup(config: &SimConfig) -> Result<MultiGroupDataset> {
    config.validate()?;
    let root = Rng::seeded(config.seed);
    let spec = config.mixing_spec(config.p + 2 * config.q);
    let over = config.mixing.clone().unwrap_or_default();
    let mixing = init_mixing(&spec, &over, &root)?;
    let mut latent_rng = root.substream("latents");
    let (n1, n2) = (config.n_background, config.n_target);

    let z1 = latent_rng.normal_tensor(n1, config.p);
    let z2 = latent_rng.normal_tensor(n2, config.p);
    let t1 = latent_rng.normal_tensor(n1, config.q);
    let t2 = latent_rng.normal_tensor(n2, config.q);

    let zeros1 = Tensor::zeros(n1, config.q);
    let zeros2 = Tensor::zeros(n2, config.q);
    let lat1 = Tensor::hcat(&[&z1, &t1, &zeros1]);
    let lat2 = Tensor::hcat(&[&z2, &zeros2, &t2]);
    let rates1 = mixing_rates(&mixing, &spec, &lat1, config.library_size)?;
    let rates2 = mixing_rates(&mixing, &spec, &lat2, config.library_size)?;

    let thetas = draw_thetas(config, &root);
    let mut noise_rng = root.substream("noise");
    let x1 = apply_noise(config, &rates1, &thetas, &mut noise_rng)?;
    let x2 = apply_noise(config, &rates2, &thetas, &mut noise_rng)?;

    Ok(MultiGroupDataset {
        x1,
        x2,
        z_true: Tensor::vcat(&[&z1, &z2]),
        t1_true: t1,
        t2_true: t2,
        noise: config.noise,
        theta_true: thetas,
        mixing,
        mixing_spec: spec,
    })
}
