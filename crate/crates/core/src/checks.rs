//! Numerical verifiers for the constructive counterexamples and the
//! linear-misspecification proposition. Each check is deterministic given
//! `(seed, n_samples)`, computes its tolerances from the sample size, and
//! has a documented perturbed construction (negative control) that must
//! fail.

use std::collections::BTreeMap;

use crate::linalg::{orthonormalize_columns, pseudo_inverse};
use crate::rng::Rng;
use crate::special::{normal_cdf, reg_inc_beta};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub statistics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub negative_control: bool,
}

struct CheckBuilder {
    report: CheckReport,
}

impl CheckBuilder {
    fn new(name: &str, n_samples: usize, seed: u64, negative_control: bool) -> Self {
        CheckBuilder {
            report: CheckReport {
                name: name.to_string(),
                pass: true,
                statistics: BTreeMap::new(),
                tolerances: BTreeMap::new(),
                n_samples,
                seed,
                negative_control,
            },
        }
    }

    /// Record `|stat| <= tol`.
    fn within(&mut self, key: &str, stat: f64, tol: f64) {
        self.report.statistics.insert(key.to_string(), stat);
        self.report.tolerances.insert(key.to_string(), tol);
        if !(stat.abs() <= tol) {
            self.report.pass = false;
        }
    }

    /// Record `stat > threshold` (a witness that must be large).
    fn exceeds(&mut self, key: &str, stat: f64, threshold: f64) {
        self.report.statistics.insert(key.to_string(), stat);
        self.report.tolerances.insert(key.to_string(), threshold);
        if !(stat > threshold) {
            self.report.pass = false;
        }
    }

    fn finish(self) -> CheckReport {
        self.report
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// The rotation-by-angle-s map preserves the isotropic Gaussian exactly
/// while entangling the first coordinate with the salient variable.
pub fn check_rotation_counterexample(
    n_samples: usize,
    seed: u64,
    negative_control: bool,
) -> Result<CheckReport> {
    if n_samples < 100_000 {
        return Err(Error::Config(format!(
            "rotation check needs n >= 1e5, got {n_samples}"
        )));
    }
    let mut rng = Rng::seeded(seed).substream("rotation");
    let mut b = CheckBuilder::new("rotation", n_samples, seed, negative_control);
    // The control breaks volume preservation by stretching the first
    // output coordinate.
    let stretch = if negative_control { 1.1 } else { 1.0 };

    let n = n_samples;
    let mut out = Tensor::zeros(n, 3);
    let mut witness = Vec::with_capacity(n);
    let mut max_norm_dev = 0.0_f64;
    for i in 0..n {
        let z1 = rng.standard_normal();
        let z2 = rng.standard_normal();
        let s = rng.standard_normal();
        let o1 = stretch * (z1 * s.cos() - z2 * s.sin());
        let o2 = z1 * s.sin() + z2 * s.cos();
        out.set(i, 0, o1);
        out.set(i, 1, o2);
        out.set(i, 2, s);
        witness.push(s.sin() * z2);
        let norm_in = z1 * z1 + z2 * z2 + s * s;
        let norm_out = o1 * o1 + o2 * o2 + s * s;
        if stretch == 1.0 {
            max_norm_dev = max_norm_dev.max((norm_out - norm_in).abs());
        }
    }
    if !negative_control {
        b.within("norm_preservation_max_dev", max_norm_dev, 1e-12);
    }

    // (a) distribution preservation evidence: mean within 3 sigma of 0,
    // covariance within 3 sqrt(2/n) of the identity.
    let se_mean = (1.0 / n as f64).sqrt();
    let cov_tol = 3.0 * (2.0 / n as f64).sqrt();
    for c in 0..3 {
        let col = out.col_vec(c);
        let (m, _) = mean_and_se(&col);
        b.within(&format!("mean_{c}"), m, 3.0 * se_mean);
    }
    for i in 0..3 {
        for j in i..3 {
            let mut cov = 0.0;
            for r in 0..n {
                cov += out.get(r, i) * out.get(r, j);
            }
            cov /= n as f64;
            let target = if i == j { 1.0 } else { 0.0 };
            b.within(&format!("cov_{i}{j}_dev"), cov - target, cov_tol);
        }
    }

    // (b) restriction to s = 0 is the identity; same battery.
    let mut rng0 = Rng::seeded(seed).substream("rotation-s0");
    let mut max_identity_dev = 0.0_f64;
    let m_restricted = n / 10;
    let mut sum0 = [0.0; 2];
    let mut sum0_sq = [0.0; 2];
    for _ in 0..m_restricted {
        let z1 = rng0.standard_normal();
        let z2 = rng0.standard_normal();
        let s = 0.0_f64;
        let o1 = stretch * (z1 * s.cos() - z2 * s.sin());
        let o2 = z1 * s.sin() + z2 * s.cos();
        if !negative_control {
            max_identity_dev = max_identity_dev.max((o1 - z1).abs().max((o2 - z2).abs()));
        }
        sum0[0] += o1;
        sum0[1] += o2;
        sum0_sq[0] += o1 * o1;
        sum0_sq[1] += o2 * o2;
    }
    if !negative_control {
        b.within("s0_identity_max_dev", max_identity_dev, 1e-15);
    }
    let se0 = (1.0 / m_restricted as f64).sqrt();
    for c in 0..2 {
        b.within(&format!("s0_mean_{c}"), sum0[c] / m_restricted as f64, 3.0 * se0);
        b.within(
            &format!("s0_var_{c}_dev"),
            sum0_sq[c] / m_restricted as f64 - 1.0,
            3.0 * (2.0 / m_restricted as f64).sqrt(),
        );
    }

    // (c) entanglement witness: correlation of the first output with
    // sin(s) z2 is far from zero.
    let col = out.col_vec(0);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mx = col.iter().sum::<f64>() / n as f64;
    let my = witness.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        let a = col[i] - mx;
        let bb = witness[i] - my;
        sxy += a * bb;
        sxx += a * a;
        syy += bb * bb;
    }
    let witness_corr = sxy / (sxx * syy).sqrt();
    b.exceeds("entanglement_witness_abs_corr", witness_corr.abs(), 0.1);

    Ok(b.finish())
}

/// Linear misspecification: equal Gaussian covariances force the learned
/// loading matrices into per-block orthogonal mixes, so the latent map is
/// block-diagonal even when the dimensions are over-specified.
pub fn check_linear_misspec(
    p: usize,
    q: usize,
    p_prime: usize,
    q_prime: usize,
    d: usize,
    seed: u64,
    negative_control: bool,
) -> Result<CheckReport> {
    if p_prime < p || q_prime < q || d < p_prime + q_prime {
        return Err(Error::Config(
            "check needs p' >= p, q' >= q, d >= p' + q'".into(),
        ));
    }
    let mut rng = Rng::seeded(seed).substream("linear-misspec");
    let mut b = CheckBuilder::new("linear_misspec", d, seed, negative_control);

    // Injective U, V (redrawn on rank deficiency, up to 10 times).
    let draw_full_rank = |rng: &mut Rng, rows: usize, cols: usize| -> Result<Tensor> {
        for _ in 0..10 {
            let t = rng.normal_tensor(rows, cols);
            if orthonormalize_columns(&t).is_ok() {
                return Ok(t);
            }
        }
        Err(Error::LinAlg("could not draw a full-rank matrix".into()))
    };
    let u = draw_full_rank(&mut rng, d, p)?;
    let v = draw_full_rank(&mut rng, d, q)?;
    // Orthogonal-row mixers O1 (p x p'), O2 (q x q').
    let o1 = orthonormalize_columns(&rng.normal_tensor(p_prime, p))?.transpose();
    let o2 = orthonormalize_columns(&rng.normal_tensor(q_prime, q))?.transpose();
    let u_tilde = u.matmul(&o1);
    let mut v_tilde = v.matmul(&o2);
    if negative_control {
        // Documented perturbation: leak 10% of the first background
        // loading column into the first salient loading column.
        for r in 0..d {
            v_tilde.set(r, 0, v_tilde.get(r, 0) + 0.1 * u.get(r, 0));
        }
    }

    // (a) equal data covariances.
    let cov_dev_u = u
        .matmul(&u.transpose())
        .sub(&u_tilde.matmul(&u_tilde.transpose()))
        .max_abs();
    let cov_dev_v = v
        .matmul(&v.transpose())
        .sub(&v_tilde.matmul(&v_tilde.transpose()))
        .max_abs();
    b.within("uu_cov_max_dev", cov_dev_u, 1e-10);
    b.within("vv_cov_max_dev", cov_dev_v, 1e-10);

    // (b) v = pinv([U, V]) [U~, V~] is block diagonal.
    let uv = Tensor::hcat(&[&u, &v]);
    let uv_tilde = Tensor::hcat(&[&u_tilde, &v_tilde]);
    let map = pseudo_inverse(&uv)?.matmul(&uv_tilde);
    let mut cross_max = 0.0_f64;
    for r in 0..p {
        for c in p_prime..p_prime + q_prime {
            cross_max = cross_max.max(map.get(r, c).abs());
        }
    }
    for r in p..p + q {
        for c in 0..p_prime {
            cross_max = cross_max.max(map.get(r, c).abs());
        }
    }
    b.within("cross_block_max_abs", cross_max, 1e-8);

    // (c) diagonal blocks recover the orthogonal mixes.
    let mut block_dev = 0.0_f64;
    for r in 0..p {
        for c in 0..p_prime {
            block_dev = block_dev.max((map.get(r, c) - o1.get(r, c)).abs());
        }
    }
    for r in 0..q {
        for c in 0..q_prime {
            block_dev = block_dev.max((map.get(p + r, p_prime + c) - o2.get(r, c)).abs());
        }
    }
    b.within("diagonal_block_max_dev", block_dev, 1e-8);

    Ok(b.finish())
}

/// Non-linear misspecification: swapping the background source for an
/// auxiliary one on half the salient axis leaves every observable moment
/// unchanged while the recovered "background" coordinate depends on s.
pub fn check_nonlinear_misspec(
    n_samples: usize,
    seed: u64,
    negative_control: bool,
) -> Result<CheckReport> {
    if n_samples < 100_000 {
        return Err(Error::Config(format!(
            "nonlinear check needs n >= 1e5, got {n_samples}"
        )));
    }
    let mut rng = Rng::seeded(seed).substream("nonlinear-misspec");
    let mut b = CheckBuilder::new("nonlinear_misspec", n_samples, seed, negative_control);
    let v_scale = if negative_control { 1.2 } else { 1.0 };
    let n = n_samples;

    let mut out = Tensor::zeros(n, 2);
    let mut witness = Vec::with_capacity(n);
    let mut branch_pos: Vec<f64> = Vec::new();
    let mut branch_neg: Vec<f64> = Vec::new();
    let mut max_s0_dev = 0.0_f64;
    for i in 0..n {
        let z = rng.standard_normal();
        let s = rng.standard_normal();
        let v = rng.standard_normal();
        let o1 = if s >= 0.0 { z } else { v_scale * v };
        out.set(i, 0, o1);
        out.set(i, 1, s);
        witness.push(if s < 0.0 { (o1 - z) * (o1 - z) } else { 0.0 });
        if s >= 0.0 {
            branch_pos.push(o1);
        } else {
            branch_neg.push(o1);
        }
        // (b) the map is the identity on the background domain (s=0, v=0):
        // 1(s >= 0) fires, so the output is exactly (z, 0).
        if i < 1000 {
            let o_b = z; // s = 0, v = 0 inputs
            max_s0_dev = max_s0_dev.max((o_b - z).abs());
        }
    }
    b.within("s0_identity_max_dev", max_s0_dev, 1e-15);

    // (a) moment battery against an independent (z, s) reference sample.
    let mut ref_rng = Rng::seeded(seed).substream("nonlinear-reference");
    let reference = ref_rng.normal_tensor(n, 2);
    let se_mean = (2.0 / n as f64).sqrt(); // two-sample difference
    for c in 0..2 {
        let (m_out, _) = mean_and_se(&out.col_vec(c));
        let (m_ref, _) = mean_and_se(&reference.col_vec(c));
        b.within(&format!("mean_diff_{c}"), m_out - m_ref, 3.0 * se_mean);
    }
    let cov = |t: &Tensor, i: usize, j: usize| -> f64 {
        let (mi, _) = mean_and_se(&t.col_vec(i));
        let (mj, _) = mean_and_se(&t.col_vec(j));
        (0..t.rows())
            .map(|r| (t.get(r, i) - mi) * (t.get(r, j) - mj))
            .sum::<f64>()
            / t.rows() as f64
    };
    let cov_tol = 3.0 * (2.0 * 2.0 / n as f64).sqrt();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        b.within(
            &format!("cov_diff_{i}{j}"),
            cov(&out, i, j) - cov(&reference, i, j),
            cov_tol,
        );
    }
    // Fourth moments: Var(x^4) = 105 - 9 = 96 for a standard normal.
    let m4_tol = 3.0 * (2.0 * 96.0 / n as f64).sqrt();
    for c in 0..2 {
        let m4_out: f64 = out.col_vec(c).iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        let m4_ref: f64 =
            reference.col_vec(c).iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        b.within(&format!("m4_diff_{c}"), m4_out - m4_ref, m4_tol);
    }
    // Per-branch conditional variance of the first output is 1.
    for (label, branch) in [("pos", &branch_pos), ("neg", &branch_neg)] {
        let nb = branch.len() as f64;
        let (m, _) = mean_and_se(branch);
        let var = branch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nb - 1.0);
        b.within(
            &format!("branch_{label}_var_dev"),
            var - 1.0,
            3.0 * (2.0 / nb).sqrt(),
        );
    }

    // (c) entanglement witness E[1(s<0) (out1 - z)^2] = E[(v-z)^2]/2 = 1.
    let (w_mean, w_se) = mean_and_se(&witness);
    b.exceeds("entanglement_witness", w_mean, 0.5);
    if !negative_control {
        b.within("witness_vs_closed_form", w_mean - 1.0, 3.0 * w_se);
    }

    Ok(b.finish())
}

/// Bernoulli counterexample: two symmetric-Beta CDF transports of the same
/// Gaussian give different latent-rate distributions yet identical
/// observed binary data.
pub fn check_bernoulli_counterexample(
    n_samples: usize,
    lambda_a: f64,
    lambda_b: f64,
    seed: u64,
    negative_control: bool,
) -> Result<CheckReport> {
    if n_samples < 1_000_000 {
        return Err(Error::Config(format!(
            "bernoulli check needs n >= 1e6, got {n_samples}"
        )));
    }
    if lambda_a <= 0.0 || lambda_b <= 0.0 {
        return Err(Error::Config("beta parameters must be positive".into()));
    }
    // The control collapses the two constructions into one, so the
    // variance-separation requirement must fail.
    let lambda_b = if negative_control { lambda_a } else { lambda_b };
    if !negative_control && lambda_a == lambda_b {
        return Err(Error::Config("lambda_a must differ from lambda_b".into()));
    }
    let mut rng = Rng::seeded(seed).substream("bernoulli");
    let mut b = CheckBuilder::new("bernoulli", n_samples, seed, negative_control);
    let n = n_samples;

    let mut counts_a = [0usize; 4];
    let mut counts_b = [0usize; 4];
    // Central moments about the symmetry point 1/2.
    let mut a_c1 = 0.0;
    let mut a_c2 = 0.0;
    let mut a_c4 = 0.0;
    let mut b_c1 = 0.0;
    let mut b_c2 = 0.0;
    let mut b_c4 = 0.0;
    for _ in 0..n {
        let z1 = rng.standard_normal();
        let z2 = rng.standard_normal();
        let u1 = normal_cdf(z1);
        let u2 = normal_cdf(z2);
        let ya = [reg_inc_beta(lambda_a, lambda_a, u1)?, reg_inc_beta(lambda_a, lambda_a, u2)?];
        let yb = [reg_inc_beta(lambda_b, lambda_b, u1)?, reg_inc_beta(lambda_b, lambda_b, u2)?];
        let xa = [rng.bernoulli(ya[0])? as usize, rng.bernoulli(ya[1])? as usize];
        let xb = [rng.bernoulli(yb[0])? as usize, rng.bernoulli(yb[1])? as usize];
        counts_a[2 * xa[0] + xa[1]] += 1;
        counts_b[2 * xb[0] + xb[1]] += 1;
        let da = ya[0] - 0.5;
        a_c1 += da;
        a_c2 += da * da;
        a_c4 += da.powi(4);
        let db = yb[0] - 0.5;
        b_c1 += db;
        b_c2 += db * db;
        b_c4 += db.powi(4);
    }
    let nf = n as f64;

    // Latent rates are symmetric around 1/2.
    let var_a = a_c2 / nf;
    let var_b = b_c2 / nf;
    b.within("rate_mean_a_dev", a_c1 / nf, 3.0 * (var_a / nf).sqrt());
    b.within("rate_mean_b_dev", b_c1 / nf, 3.0 * (var_b / nf).sqrt());

    // (a) the observed joint pmfs agree within 3 sigma per cell.
    for cell in 0..4 {
        let pa = counts_a[cell] as f64 / nf;
        let pb = counts_b[cell] as f64 / nf;
        let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / nf).sqrt();
        b.within(&format!("joint_pmf_cell{cell}_diff"), pa - pb, 3.0 * se);
    }

    // (b) the latent-rate distributions differ: variance separation must
    // exceed 5 Monte-Carlo standard errors, where
    // Var(sample variance) ~ (mu4 - var^2) / n.
    let se_var_a = ((a_c4 / nf - var_a * var_a).max(0.0) / nf).sqrt();
    let se_var_b = ((b_c4 / nf - var_b * var_b).max(0.0) / nf).sqrt();
    let se_diff = (se_var_a * se_var_a + se_var_b * se_var_b).sqrt();
    b.exceeds("rate_variance_separation", (var_a - var_b).abs(), 5.0 * se_diff);
    b.report.statistics.insert("rate_var_a".into(), var_a);
    b.report.statistics.insert("rate_var_b".into(), var_b);

    // Independence of the two coordinates of x.
    let p1 = (counts_a[2] + counts_a[3]) as f64 / nf;
    let p2 = (counts_a[1] + counts_a[3]) as f64 / nf;
    let p11 = counts_a[3] as f64 / nf;
    let se_ind = (p11 * (1.0 - p11) / nf).sqrt() + (p1 * p2 * ((1.0 - p1) + (1.0 - p2)) / nf).sqrt();
    b.within("joint_independence_dev", p11 - p1 * p2, 3.0 * se_ind);

    Ok(b.finish())
}

/// Run every check with default constructions.
pub fn run_all_checks(seed: u64, negative_control: bool) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_rotation_counterexample(1_000_000, seed, negative_control)?,
        check_linear_misspec(5, 5, 5, 10, 150, seed, negative_control)?,
        check_nonlinear_misspec(1_000_000, seed, negative_control)?,
        check_bernoulli_counterexample(1_000_000, 1.0, 2.0, seed, negative_control)?,
    ])
}
