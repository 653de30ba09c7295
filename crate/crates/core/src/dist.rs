//! Log-densities, KL terms and reparameterized sampling for the
//! generative and variational distributions. Each log-likelihood exists
//! twice: as plain f64 arithmetic (oracles, reports) and as graph ops so
//! gradients flow to the decoder parameters.

use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::special::ln_gamma;
use crate::tensor::Tensor;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Bounds for the encoder log-variance guard.
pub const LOGVAR_MIN: f64 = -60.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodSpec {
    /// Fixed observation variance.
    Gaussian { variance: f64 },
    Poisson,
    /// Per-feature dispersion is a model parameter supplied at call time.
    NegBinomial,
    /// Included only for the Bernoulli counterexample check, not as a
    /// training likelihood.
    Bernoulli,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        if let LikelihoodSpec::Gaussian { variance } = self {
            if *variance <= 0.0 {
                return Err(Error::Domain(format!(
                    "gaussian observation variance {variance} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Diagonal-Gaussian variational posterior parameters.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub logvar: Tensor,
}

// -------------------------------------------------------------------
// Plain f64 log-densities.

pub fn gaussian_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / variance + variance.ln() + LN_2PI)
}

pub fn poisson_logpmf(x: u64, rate: f64) -> Result<f64> {
    if rate <= 0.0 {
        return Err(Error::Domain(format!("poisson rate {rate} must be positive")));
    }
    let xf = x as f64;
    Ok(xf * rate.ln() - rate - ln_gamma(xf + 1.0))
}

pub fn neg_binomial_logpmf(x: u64, mean: f64, theta: f64) -> Result<f64> {
    if mean <= 0.0 || theta <= 0.0 {
        return Err(Error::Domain(format!(
            "negative binomial requires mean > 0 and theta > 0, got ({mean}, {theta})"
        )));
    }
    let xf = x as f64;
    Ok(ln_gamma(xf + theta) - ln_gamma(theta) - ln_gamma(xf + 1.0)
        + theta * (theta / (theta + mean)).ln()
        + xf * (mean / (theta + mean)).ln())
}

pub fn bernoulli_logpmf(x: u8, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain(format!("bernoulli p {p} outside (0, 1)")));
    }
    Ok(match x {
        0 => (1.0 - p).ln(),
        1 => p.ln(),
        _ => return Err(Error::Domain(format!("bernoulli observation {x} not in {{0,1}}"))),
    })
}

/// Per-sample KL(q || N(0, I)) for a diagonal Gaussian, plain arithmetic.
pub fn kl_diag_gaussian_to_standard(q: &DiagGaussian) -> Tensor {
    assert_eq!(q.mean.shape(), q.logvar.shape());
    let n = q.mean.rows();
    let mut out = Tensor::zeros(n, 1);
    for r in 0..n {
        let mut s = 0.0;
        for c in 0..q.mean.cols() {
            let mu = q.mean.get(r, c);
            let lv = q.logvar.get(r, c).clamp(LOGVAR_MIN, LOGVAR_MAX);
            s += mu * mu + lv.exp() - lv - 1.0;
        }
        out.set(r, 0, 0.5 * s);
    }
    out
}

// -------------------------------------------------------------------
// Graph versions (differentiable w.r.t. the distribution parameters).

/// Per-sample log-likelihood of constant observations `x` under decoder
/// outputs. Returns an `[n, 1]` column; `theta` is the NB dispersion
/// (`[1, G]`, strictly positive), required iff the spec is NB.
pub fn log_likelihood_graph(
    g: &mut Graph,
    spec: &LikelihoodSpec,
    x: &Tensor,
    rate: Var,
    theta: Option<Var>,
) -> Result<Var> {
    spec.validate()?;
    let [n, cols] = x.shape();
    let rate_shape = g.value(rate)?.shape();
    if rate_shape != [n, cols] {
        return Err(Error::Shape(format!(
            "likelihood rate shape {rate_shape:?} vs observations [{n}, {cols}]"
        )));
    }
    let per_feature = match spec {
        LikelihoodSpec::Gaussian { variance } => {
            let xv = g.constant(x.clone());
            let diff = g.sub(xv, rate);
            let sq = g.square(diff);
            // -(x-mu)^2 / (2 var) - 0.5 ln(2 pi var)
            g.affine(sq, -0.5 / variance, -0.5 * (variance.ln() + LN_2PI))
        }
        LikelihoodSpec::Poisson => {
            for &v in x.data() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "poisson observations must be non-negative integers, got {v}"
                    )));
                }
            }
            let xv = g.constant(x.clone());
            let log_rate = g.log(rate);
            let xlog = g.mul(xv, log_rate);
            let minus_rate = g.sub(xlog, rate);
            let lfact = g.constant(x.map(|v| ln_gamma(v + 1.0)));
            g.sub(minus_rate, lfact)
        }
        LikelihoodSpec::NegBinomial => {
            for &v in x.data() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "negative binomial observations must be non-negative integers, got {v}"
                    )));
                }
            }
            let theta = theta.ok_or_else(|| {
                Error::Config("negative binomial likelihood needs a dispersion tensor".into())
            })?;
            if g.value(theta)?.shape() != [1, cols] {
                return Err(Error::Shape("dispersion must be [1, G]".into()));
            }
            let xv = g.constant(x.clone());
            let x_plus_theta = g.add(xv, theta);
            let lg_xt = g.lgamma(x_plus_theta);
            let lg_t = g.lgamma(theta);
            let lfact = g.constant(x.map(|v| ln_gamma(v + 1.0)));
            let theta_plus_mu = g.add(theta, rate);
            let log_tpm = g.log(theta_plus_mu);
            let log_theta = g.log(theta);
            let log_mu = g.log(rate);
            // theta (log theta - log(theta+mu))
            let a = g.sub(log_theta, log_tpm);
            let ta = g.mul(theta, a);
            // x (log mu - log(theta+mu))
            let b = g.sub(log_mu, log_tpm);
            let xb = g.mul(xv, b);
            let t1 = g.sub(lg_xt, lg_t);
            let t2 = g.sub(t1, lfact);
            let t3 = g.add(t2, ta);
            g.add(t3, xb)
        }
        LikelihoodSpec::Bernoulli => {
            for &v in x.data() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Domain(format!(
                        "bernoulli observations must be 0/1, got {v}"
                    )));
                }
            }
            let xv = g.constant(x.clone());
            let log_p = g.log(rate);
            let one_minus = g.affine(rate, -1.0, 1.0);
            let log_q = g.log(one_minus);
            let a = g.mul(xv, log_p);
            let xc = g.constant(x.map(|v| 1.0 - v));
            let b = g.mul(xc, log_q);
            g.add(a, b)
        }
    };
    Ok(g.row_sum(per_feature))
}

/// Per-sample KL(q || N(0, I)) with the log-variance guard applied.
pub fn kl_to_standard_graph(g: &mut Graph, mu: Var, logvar: Var) -> Var {
    let lv = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
    let mu2 = g.square(mu);
    let var = g.exp(lv);
    let a = g.add(mu2, var);
    let b = g.sub(a, lv);
    let c = g.affine(b, 1.0, -1.0);
    let rs = g.row_sum(c);
    g.affine(rs, 0.5, 0.0)
}

/// Reparameterized sample `mu + sigma * eps` with pathwise gradients.
pub fn reparam_sample_graph(g: &mut Graph, mu: Var, logvar: Var, rng: &mut Rng) -> Result<Var> {
    let [n, d] = g.value(mu)?.shape();
    let eps = rng.normal_tensor(n, d);
    reparam_with_eps(g, mu, logvar, &eps)
}

/// Reparameterized sample with caller-supplied standard-normal noise, so
/// the draw is pinned exactly.
pub fn reparam_with_eps(g: &mut Graph, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
    if g.value(mu)?.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "noise shape {:?} vs mean shape {:?}",
            eps.shape(),
            g.value(mu)?.shape()
        )));
    }
    let lv = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
    let half = g.affine(lv, 0.5, 0.0);
    let sigma = g.exp(half);
    let epsv = g.constant(eps.clone());
    let noise = g.mul(sigma, epsv);
    Ok(g.add(mu, noise))
}
