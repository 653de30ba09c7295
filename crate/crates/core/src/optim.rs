//! Training machinery: Adam, the two-objective Pareto (MGDA) step, HSIC
//! penalty and primal–dual constrained regimes, and the epoch driver with
//! validation-based early stopping.
//!
//! Every step differentiates
//! `2a (-L_B) + 2(1-a) (-L_T) + lambda * regularizer`
//! with `a = 0.5` in single-objective mode, so SO is exactly the MGDA
//! path with the weight pinned and the constrained loss at `a = 0.5` is
//! exactly `-L_B - L_T + lambda * residual`.

use std::collections::BTreeMap;

use crate::graph::{Gradients, Graph, Var};
use crate::hsic::{self, cka_graph, constraint_residual_graph, KernelKind};
use crate::models::{wasserstein_penalty_graph, CvaeModel, ElboTerms, VaeModel};
use crate::nn::{self, Mode, ParamBinding, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const LAST_DECODER_WEIGHT: &str = "decoder.rate.w";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    /// Single objective: equal weights on both ELBOs.
    So,
    /// Multi-objective: MGDA weight from last-decoder-layer gradients.
    Mo,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regularizer {
    None,
    /// Fixed-multiplier penalty (the "U" rows).
    Penalty { lambda: f64 },
    /// Primal–dual constrained mode with CKA bound `beta`.
    Constrained { beta: f64 },
    /// Wasserstein penalty on background salient encodings.
    Wasserstein { weight: f64 },
}

/// What the fixed penalty multiplies: the cross-HSIC term alone
/// (default reading) or the full constraint residual at a given beta.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PenaltyForm {
    CrossHsic,
    Residual { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub regularizer: Regularizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_primal: f64,
    pub lr_dual: f64,
    pub kernel: KernelKind,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    pub penalty_form: PenaltyForm,
    /// Linear warm-up of the KL weight from 0 to 1 over this many epochs
    /// (0 disables; validation ELBOs always use weight 1).
    pub kl_warmup_epochs: usize,
    /// Adam denominator constant.
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::So,
            regularizer: Regularizer::None,
            epochs: 500,
            batch_size: 128,
            lr_primal: 1e-3,
            lr_dual: 1.0,
            kernel: KernelKind::RbfMedian,
            validation_fraction: 0.1,
            patience: 20,
            seed: 0,
            penalty_form: PenaltyForm::CrossHsic,
            kl_warmup_epochs: 0,
            adam_eps: ADAM_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        match self.regularizer {
            Regularizer::Penalty { lambda } if lambda < 0.0 => {
                return Err(Error::Config(format!("penalty lambda {lambda} < 0")));
            }
            Regularizer::Constrained { beta } if beta <= 0.0 => {
                return Err(Error::Config(format!("constraint beta {beta} must be > 0")));
            }
            Regularizer::Wasserstein { weight } if weight < 0.0 => {
                return Err(Error::Config(format!("wasserstein weight {weight} < 0")));
            }
            _ => {}
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.lr_primal <= 0.0 || self.lr_dual < 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

// -------------------------------------------------------------------
// Adam.

#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
    eps: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            eps: ADAM_EPS,
        }
    }

    /// Adam with a non-default denominator constant.
    pub fn with_eps(eps: f64) -> Self {
        AdamState { eps, ..Self::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over every trainable parameter. A NaN/Inf gradient
/// aborts with a diagnostic naming the parameter.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
    }
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let names: Vec<String> = params.trainable().keys().cloned().collect();
    for name in names {
        let zero = Tensor::zeros(params.get(&name).rows(), params.get(&name).cols());
        let g = grads.get(&name).unwrap_or(&zero);
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        *m = m.scale(ADAM_BETA1).add(&g.scale(1.0 - ADAM_BETA1));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        *v = v.scale(ADAM_BETA2).add(&g.map(|x| x * x).scale(1.0 - ADAM_BETA2));
        let m_ref = &state.m[&name];
        let v_ref = &state.v[&name];
        let p = params.get_mut(&name);
        for i in 0..p.len() {
            let mhat = m_ref.data()[i] / bc1;
            let vhat = v_ref.data()[i] / bc2;
            p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

// -------------------------------------------------------------------
// MGDA.

#[derive(Debug, Clone, Copy)]
pub struct MgdaAlpha {
    pub alpha: f64,
    /// Both gradients were zero: any weight is optimal.
    pub stationary: bool,
}

/// Closed-form minimizer of `|| a g_b + (1-a) g_t ||^2` over `a in [0,1]`.
pub fn mgda_alpha(g_b: &[f64], g_t: &[f64]) -> MgdaAlpha {
    assert_eq!(g_b.len(), g_t.len(), "gradient length mismatch");
    let mut diff_dot_t = 0.0;
    let mut diff_norm2 = 0.0;
    let mut b_norm2 = 0.0;
    let mut t_norm2 = 0.0;
    for (b, t) in g_b.iter().zip(g_t.iter()) {
        let d = t - b;
        diff_dot_t += d * t;
        diff_norm2 += d * d;
        b_norm2 += b * b;
        t_norm2 += t * t;
    }
    if b_norm2 == 0.0 && t_norm2 == 0.0 {
        return MgdaAlpha {
            alpha: 0.5,
            stationary: true,
        };
    }
    if diff_norm2 == 0.0 {
        // Equal gradients: every convex combination has the same norm.
        return MgdaAlpha {
            alpha: 0.5,
            stationary: false,
        };
    }
    MgdaAlpha {
        alpha: (diff_dot_t / diff_norm2).clamp(0.0, 1.0),
        stationary: false,
    }
}

/// Projected dual ascent: `max(0, lambda + lr * residual)`.
pub fn dual_update(lambda: f64, residual: f64, lr_dual: f64) -> f64 {
    (lambda + lr_dual * residual).max(0.0)
}

// -------------------------------------------------------------------
// Training driver.

/// One history line per epoch (serialized as JSON lines).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Background-side train ELBO; absent for single-data-set models.
    pub train_elbo_b: Option<f64>,
    pub train_elbo_t: f64,
    pub val_elbo: f64,
    pub alpha_mean: f64,
    pub lambda: f64,
    pub cka_estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: AdamState,
    pub lambda: f64,
    pub epoch: usize,
    pub best_val: f64,
    pub patience_left: usize,
    pub last_alpha: f64,
    /// Per-epoch mean constraint residual (constrained mode only).
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
    pub warnings: Vec<String>,
}

struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
    fallback_full: bool,
}

fn split_indices(n: usize, fraction: f64, batch_size: usize, rng: &mut Rng) -> Split {
    let perm = rng.shuffled_indices(n);
    let val_n = ((n as f64) * fraction).floor() as usize;
    if val_n < batch_size.min(n) || val_n == 0 {
        return Split {
            train: (0..n).collect(),
            val: (0..n).collect(),
            fallback_full: true,
        };
    }
    Split {
        train: perm[val_n..].to_vec(),
        val: perm[..val_n].to_vec(),
        fallback_full: false,
    }
}

fn batch_rows(x: &Tensor, order: &[usize], step: usize, batch_size: usize) -> Tensor {
    let n = order.len();
    let idx: Vec<usize> = (0..batch_size)
        .map(|j| order[(step * batch_size + j) % n])
        .collect();
    x.select_rows(&idx)
}

fn collect_grads(
    binding: &ParamBinding,
    grads: &Gradients,
    params: &ParamStore,
) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (name, var) in binding.vars() {
        let g = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| {
                let p = params.get(name);
                Tensor::zeros(p.rows(), p.cols())
            });
        out.insert(name.clone(), g);
    }
    out
}

struct StepStats {
    elbo_b: f64,
    elbo_t: f64,
    alpha: f64,
    cka: Option<f64>,
    residual: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cvae_step(
    model: &mut CvaeModel,
    adam: &mut AdamState,
    lambda: f64,
    xb: &Tensor,
    xt: &Tensor,
    config: &TrainConfig,
    kl_weight: f64,
    noise_rng: &mut Rng,
    dropout_rng: &mut Rng,
    alpha_override: Option<f64>,
    warnings: &mut Vec<String>,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let eps_zb = noise_rng.normal_tensor(xb.rows(), model.p_hat);
    let eps_zt = noise_rng.normal_tensor(xt.rows(), model.p_hat);
    let eps_st = noise_rng.normal_tensor(xt.rows(), model.q_hat);

    let mut mode = Mode::Train { rng: dropout_rng };
    let bb = model.elbo_background(&mut g, &binding, xb, &eps_zb, &mut mode)?;
    let bt = model.elbo_target(&mut g, &binding, xt, &eps_zt, &eps_st, &mut mode)?;

    let s_sample = bt.s_sample.expect("target elbo always samples s");
    let z_val = g.value(bt.z_sample)?.clone();
    let s_val = g.value(s_sample)?.clone();
    let cka_estimate = hsic::cka(&z_val, &s_val, config.kernel).ok();

    // Weighted regularizer node and the detached residual for the dual.
    let mut residual: Option<f64> = None;
    let reg_node: Option<Var> = match config.regularizer {
        Regularizer::None => None,
        Regularizer::Penalty { lambda: pen } => {
            match cka_graph(&mut g, bt.z_sample, s_sample, config.kernel) {
                Ok(terms) => match config.penalty_form {
                    PenaltyForm::CrossHsic => Some(g.affine(terms.hsic_zs, pen, 0.0)),
                    PenaltyForm::Residual { beta } => {
                        let res = constraint_residual_graph(&mut g, &terms, beta);
                        Some(g.affine(res, pen, 0.0))
                    }
                },
                Err(Error::Domain(msg)) => {
                    warnings.push(format!("penalty skipped for one batch: {msg}"));
                    None
                }
                Err(e) => return Err(e),
            }
        }
        Regularizer::Constrained { beta } => {
            match cka_graph(&mut g, bt.z_sample, s_sample, config.kernel) {
                Ok(terms) => {
                    let res = constraint_residual_graph(&mut g, &terms, beta);
                    residual = Some(g.value(res)?.get(0, 0));
                    Some(g.affine(res, lambda, 0.0))
                }
                Err(Error::Domain(msg)) => {
                    warnings.push(format!("dual update skipped for one batch: {msg}"));
                    None
                }
                Err(e) => return Err(e),
            }
        }
        Regularizer::Wasserstein { weight } => {
            let (mu_s, lv_s, upd) = model.encode_s(&mut g, &binding, xb, &mut mode)?;
            let pen = wasserstein_penalty_graph(&mut g, mu_s, lv_s);
            nn::apply_bn_updates(&mut model.params, upd);
            Some(g.affine(pen, weight, 0.0))
        }
    };

    // Differentiated side losses; the KL weight only applies here, never
    // to the reported ELBO terms.
    let loss_b = {
        let nr = g.neg(bb.vars.reconstruction);
        let wk = g.affine(bb.vars.kl_z, kl_weight, 0.0);
        g.add(nr, wk)
    };
    let loss_t = {
        let nr = g.neg(bt.vars.reconstruction);
        let kls = g.add(bt.vars.kl_z, bt.vars.kl_s);
        let wk = g.affine(kls, kl_weight, 0.0);
        g.add(nr, wk)
    };
    let grads_b = collect_grads(&binding, &g.backward(loss_b)?, &model.params);
    let grads_t = collect_grads(&binding, &g.backward(loss_t)?, &model.params);

    let alpha = match alpha_override {
        Some(a) => a,
        None => match config.objective {
            Objective::So => 0.5,
            Objective::Mo => {
                let gb = grads_b[LAST_DECODER_WEIGHT].data();
                let gt = grads_t[LAST_DECODER_WEIGHT].data();
                mgda_alpha(gb, gt).alpha
            }
        },
    };

    let reg_grads = match reg_node {
        Some(node) => Some(collect_grads(&binding, &g.backward(node)?, &model.params)),
        None => None,
    };

    let terms_b = ElboTerms::from_vars(&g, &bb.vars)?;
    let terms_t = ElboTerms::from_vars(&g, &bt.vars)?;

    let mut combined = BTreeMap::new();
    for (name, gb) in &grads_b {
        let gt = &grads_t[name];
        let mut tot = gb.scale(2.0 * alpha).add(&gt.scale(2.0 * (1.0 - alpha)));
        if let Some(rg) = &reg_grads {
            tot = tot.add(&rg[name]);
        }
        combined.insert(name.clone(), tot);
    }
    adam_step(adam, &mut model.params, &combined, config.lr_primal)?;
    nn::apply_bn_updates(&mut model.params, bb.bn_updates);
    nn::apply_bn_updates(&mut model.params, bt.bn_updates);

    Ok(StepStats {
        elbo_b: terms_b.total,
        elbo_t: terms_t.total,
        alpha,
        cka: cka_estimate,
        residual,
    })
}

/// Composite validation ELBO (sum of both sides' batch means), eval mode,
/// one reparameterized draw.
pub fn composite_val_elbo(
    model: &CvaeModel,
    xb: &Tensor,
    xt: &Tensor,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let eps_zb = rng.normal_tensor(xb.rows(), model.p_hat);
    let eps_zt = rng.normal_tensor(xt.rows(), model.p_hat);
    let eps_st = rng.normal_tensor(xt.rows(), model.q_hat);
    let bb = model.elbo_background(&mut g, &binding, xb, &eps_zb, &mut Mode::Eval)?;
    let bt = model.elbo_target(&mut g, &binding, xt, &eps_zt, &eps_st, &mut Mode::Eval)?;
    Ok((
        ElboTerms::from_vars(&g, &bb.vars)?.total,
        ElboTerms::from_vars(&g, &bt.vars)?.total,
    ))
}

/// Fit a contrastive VAE on paired background/target data.
pub fn train_cvae(
    model: &mut CvaeModel,
    x_background: &Tensor,
    x_target: &Tensor,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_cvae_inner(model, x_background, x_target, config, None)
}

fn train_cvae_inner(
    model: &mut CvaeModel,
    x_background: &Tensor,
    x_target: &Tensor,
    config: &TrainConfig,
    alpha_override: Option<f64>,
) -> Result<TrainOutput> {
    config.validate()?;
    if x_background.rows() == 0 || x_target.rows() == 0 {
        return Err(Error::Config("both data sets must be nonempty".into()));
    }
    if x_background.cols() != model.data_dim || x_target.cols() != model.data_dim {
        return Err(Error::Config(format!(
            "data width {} vs model width {}",
            x_target.cols(),
            model.data_dim
        )));
    }
    let root = Rng::seeded(config.seed);
    let mut warnings = Vec::new();

    let split_b = split_indices(
        x_background.rows(),
        config.validation_fraction,
        config.batch_size,
        &mut root.substream("val-split-b"),
    );
    let split_t = split_indices(
        x_target.rows(),
        config.validation_fraction,
        config.batch_size,
        &mut root.substream("val-split-t"),
    );
    if split_b.fallback_full || split_t.fallback_full {
        warnings.push(
            "validation split smaller than one batch; early stopping uses full-data ELBO"
                .to_string(),
        );
    }
    let val_b = x_background.select_rows(&split_b.val);
    let val_t = x_target.select_rows(&split_t.val);

    let mut state = TrainState {
        adam: AdamState::with_eps(config.adam_eps),
        lambda: 0.0,
        epoch: 0,
        best_val: f64::NEG_INFINITY,
        patience_left: config.patience,
        last_alpha: 0.5,
        residual_history: Vec::new(),
    };
    let mut best_params: Option<ParamStore> = None;
    let mut history = Vec::new();

    let steps_per_epoch = {
        let longest = split_b.train.len().max(split_t.train.len());
        longest.div_ceil(config.batch_size)
    };

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let kl_weight = if config.kl_warmup_epochs == 0 {
            1.0
        } else {
            (((epoch + 1) as f64) / config.kl_warmup_epochs as f64).min(1.0)
        };
        let mut shuffle_rng = root.substream(&format!("shuffle-{epoch}"));
        let mut noise_rng = root.substream(&format!("noise-{epoch}"));
        let mut dropout_rng = root.substream(&format!("dropout-{epoch}"));
        let order_b: Vec<usize> = {
            let perm = shuffle_rng.shuffled_indices(split_b.train.len());
            perm.into_iter().map(|i| split_b.train[i]).collect()
        };
        let order_t: Vec<usize> = {
            let perm = shuffle_rng.shuffled_indices(split_t.train.len());
            perm.into_iter().map(|i| split_t.train[i]).collect()
        };

        let mut sum_b = 0.0;
        let mut sum_t = 0.0;
        let mut sum_alpha = 0.0;
        let mut cka_sum = 0.0;
        let mut cka_count = 0usize;
        let mut res_sum = 0.0;
        let mut res_count = 0usize;
        for step in 0..steps_per_epoch {
            let xb = batch_rows(x_background, &order_b, step, config.batch_size);
            let xt = batch_rows(x_target, &order_t, step, config.batch_size);
            let stats = cvae_step(
                model,
                &mut state.adam,
                state.lambda,
                &xb,
                &xt,
                config,
                kl_weight,
                &mut noise_rng,
                &mut dropout_rng,
                alpha_override,
                &mut warnings,
            )
            .map_err(|e| {
                Error::Training(format!("epoch {epoch}, step {step}: {e}"))
            })?;
            sum_b += stats.elbo_b;
            sum_t += stats.elbo_t;
            sum_alpha += stats.alpha;
            state.last_alpha = stats.alpha;
            if let Some(c) = stats.cka {
                cka_sum += c;
                cka_count += 1;
            }
            if let Some(r) = stats.residual {
                state.lambda = dual_update(state.lambda, r, config.lr_dual);
                res_sum += r;
                res_count += 1;
            }
        }
        if res_count > 0 {
            state.residual_history.push(res_sum / res_count as f64);
        }

        let mut val_rng = root.substream(&format!("val-noise-{epoch}"));
        let (vb, vt) = composite_val_elbo(model, &val_b, &val_t, &mut val_rng)?;
        let val_elbo = vb + vt;
        history.push(EpochRecord {
            epoch,
            train_elbo_b: Some(sum_b / steps_per_epoch as f64),
            train_elbo_t: sum_t / steps_per_epoch as f64,
            val_elbo,
            alpha_mean: sum_alpha / steps_per_epoch as f64,
            lambda: state.lambda,
            cka_estimate: if cka_count > 0 {
                Some(cka_sum / cka_count as f64)
            } else {
                None
            },
        });

        if val_elbo > state.best_val {
            state.best_val = val_elbo;
            best_params = Some(model.params.clone());
            state.patience_left = config.patience;
        } else if state.patience_left == 0 {
            break;
        } else {
            state.patience_left -= 1;
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutput {
        history,
        state,
        warnings,
    })
}

/// Fit the plain VAE baseline (single objective, no latent regularizer).
pub fn train_vae(model: &mut VaeModel, x: &Tensor, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if !matches!(config.regularizer, Regularizer::None) {
        return Err(Error::Config(
            "the VAE baseline supports only regularizer = none".into(),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::Config("data set must be nonempty".into()));
    }
    let root = Rng::seeded(config.seed);
    let mut warnings = Vec::new();
    let split = split_indices(
        x.rows(),
        config.validation_fraction,
        config.batch_size,
        &mut root.substream("val-split"),
    );
    if split.fallback_full {
        warnings.push(
            "validation split smaller than one batch; early stopping uses full-data ELBO"
                .to_string(),
        );
    }
    let val_x = x.select_rows(&split.val);

    let mut state = TrainState {
        adam: AdamState::with_eps(config.adam_eps),
        lambda: 0.0,
        epoch: 0,
        best_val: f64::NEG_INFINITY,
        patience_left: config.patience,
        last_alpha: 0.5,
        residual_history: Vec::new(),
    };
    let mut best_params: Option<ParamStore> = None;
    let mut history = Vec::new();
    let steps_per_epoch = split.train.len().div_ceil(config.batch_size);

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let mut shuffle_rng = root.substream(&format!("shuffle-{epoch}"));
        let mut noise_rng = root.substream(&format!("noise-{epoch}"));
        let mut dropout_rng = root.substream(&format!("dropout-{epoch}"));
        let order: Vec<usize> = {
            let perm = shuffle_rng.shuffled_indices(split.train.len());
            perm.into_iter().map(|i| split.train[i]).collect()
        };
        let mut sum = 0.0;
        for step in 0..steps_per_epoch {
            let xb = batch_rows(x, &order, step, config.batch_size);
            let mut g = Graph::new();
            let binding = model.bind(&mut g);
            let eps = noise_rng.normal_tensor(xb.rows(), model.latent);
            let mut mode = Mode::Train {
                rng: &mut dropout_rng,
            };
            let build = model.elbo(&mut g, &binding, &xb, &eps, &mut mode)?;
            let kl_weight = if config.kl_warmup_epochs == 0 {
                1.0
            } else {
                (((epoch + 1) as f64) / config.kl_warmup_epochs as f64).min(1.0)
            };
            let loss = {
                let nr = g.neg(build.vars.reconstruction);
                let wk = g.affine(build.vars.kl_z, kl_weight, 0.0);
                g.add(nr, wk)
            };
            let grads = collect_grads(&binding, &g.backward(loss)?, &model.params);
            adam_step(&mut state.adam, &mut model.params, &grads, config.lr_primal).map_err(
                |e| Error::Training(format!("epoch {epoch}, step {step}: {e}")),
            )?;
            nn::apply_bn_updates(&mut model.params, build.bn_updates);
            sum += ElboTerms::from_vars(&g, &build.vars)?.total;
        }

        let mut val_rng = root.substream(&format!("val-noise-{epoch}"));
        let val_elbo = {
            let mut g = Graph::new();
            let binding = model.bind(&mut g);
            let eps = val_rng.normal_tensor(val_x.rows(), model.latent);
            let build = model.elbo(&mut g, &binding, &val_x, &eps, &mut Mode::Eval)?;
            ElboTerms::from_vars(&g, &build.vars)?.total
        };
        history.push(EpochRecord {
            epoch,
            train_elbo_b: None,
            train_elbo_t: sum / steps_per_epoch as f64,
            val_elbo,
            alpha_mean: 0.5,
            lambda: 0.0,
            cka_estimate: None,
        });
        if val_elbo > state.best_val {
            state.best_val = val_elbo;
            best_params = Some(model.params.clone());
            state.patience_left = config.patience;
        } else if state.patience_left == 0 {
            break;
        } else {
            state.patience_left -= 1;
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutput {
        history,
        state,
        warnings,
    })
}
