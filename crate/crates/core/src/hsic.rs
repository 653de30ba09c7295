//! Hilbert–Schmidt independence criterion and centered kernel alignment,
//! with both plain-tensor estimators (reports, oracles) and graph
//! builders (gradients for the penalty/constraint objectives).
//!
//! Kernel bandwidths come from the median heuristic, recomputed per batch
//! from detached sample values and excluded from differentiation.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    RbfMedian,
    Linear,
}

/// Median pairwise Euclidean distance between rows.
pub fn median_bandwidth(x: &Tensor) -> f64 {
    let n = x.rows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    if m == 0 {
        return 0.0;
    }
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

pub fn rbf_kernel(x: &Tensor, bandwidth: f64) -> Tensor {
    let n = x.rows();
    let mut k = Tensor::zeros(n, n);
    let denom = 2.0 * bandwidth * bandwidth;
    for i in 0..n {
        k.set(i, i, 1.0);
        for j in (i + 1)..n {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-d2 / denom).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

pub fn linear_kernel(x: &Tensor) -> Tensor {
    x.matmul(&x.transpose())
}

/// Kernel matrix for samples under `kind`; errors when the median
/// bandwidth degenerates (all rows equal).
pub fn kernel_matrix(x: &Tensor, kind: KernelKind) -> Result<Tensor> {
    match kind {
        KernelKind::Linear => Ok(linear_kernel(x)),
        KernelKind::RbfMedian => {
            let h = median_bandwidth(x);
            if h <= 0.0 {
                return Err(Error::Domain(
                    "degenerate sample block: zero median bandwidth".into(),
                ));
            }
            Ok(rbf_kernel(x, h))
        }
    }
}

/// `(M-1)^{-2} tr(K H L H)` with `H = I - (1/M) 11^T`, via double
/// centering of `L`.
pub fn hsic(k: &Tensor, l: &Tensor) -> Result<f64> {
    let m = k.rows();
    if m < 2 {
        return Err(Error::Domain(format!("hsic needs M >= 2 samples, got {m}")));
    }
    if k.shape() != [m, m] || l.shape() != [m, m] {
        return Err(Error::Shape(format!(
            "hsic expects square kernel matrices of matching size, got {:?} and {:?}",
            k.shape(),
            l.shape()
        )));
    }
    let lc = double_center(l);
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += k.get(i, j) * lc.get(i, j);
        }
    }
    let mf = (m - 1) as f64;
    Ok(s / (mf * mf))
}

fn double_center(l: &Tensor) -> Tensor {
    let m = l.rows();
    let mut row_means = vec![0.0; m];
    let mut grand = 0.0;
    for i in 0..m {
        let rm: f64 = l.row(i).iter().sum::<f64>() / m as f64;
        row_means[i] = rm;
        grand += rm;
    }
    grand /= m as f64;
    let mut out = Tensor::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            // L symmetric: column mean j equals row mean j.
            out.set(i, j, l.get(i, j) - row_means[i] - row_means[j] + grand);
        }
    }
    out
}

/// CKA between two sample blocks: `hsic(Kz, Ks) / sqrt(hsic(Kz,Kz) hsic(Ks,Ks))`.
pub fn cka(z: &Tensor, s: &Tensor, kind: KernelKind) -> Result<f64> {
    let kz = kernel_matrix(z, kind)?;
    let ks = kernel_matrix(s, kind)?;
    let hzz = hsic(&kz, &kz)?;
    let hss = hsic(&ks, &ks)?;
    if hzz <= 1e-12 || hss <= 1e-12 {
        return Err(Error::Domain("zero self-HSIC".into()));
    }
    Ok(hsic(&kz, &ks)? / (hzz * hss).sqrt())
}

// -------------------------------------------------------------------
// Graph builders.

/// Pairwise squared distances of rows as a graph node.
fn sq_dists_graph(g: &mut Graph, x: Var, m: usize) -> Var {
    let sq = g.square(x);
    let r = g.row_sum(sq); // [m, 1]
    let ones_row = g.constant(Tensor::full(1, m, 1.0));
    let ones_col = g.constant(Tensor::full(m, 1, 1.0));
    let a = g.matmul(r, ones_row); // a_ij = r_i
    let rt = g.transpose(r);
    let b = g.matmul(ones_col, rt); // b_ij = r_j
    let xt = g.transpose(x);
    let gram = g.matmul(x, xt);
    let minus2 = g.affine(gram, -2.0, 0.0);
    let ab = g.add(a, b);
    g.add(ab, minus2)
}

/// Kernel matrix node over sample node `x`; RBF bandwidth is taken from
/// the detached forward value (median heuristic, constant to autodiff).
pub fn kernel_matrix_graph(g: &mut Graph, x: Var, kind: KernelKind) -> Result<Var> {
    let xv = g.value(x)?.clone();
    let m = xv.rows();
    match kind {
        KernelKind::Linear => {
            let xt = g.transpose(x);
            Ok(g.matmul(x, xt))
        }
        KernelKind::RbfMedian => {
            let h = median_bandwidth(&xv);
            if h <= 0.0 {
                return Err(Error::Domain(
                    "degenerate sample block: zero median bandwidth".into(),
                ));
            }
            let d2 = sq_dists_graph(g, x, m);
            let scaled = g.affine(d2, -1.0 / (2.0 * h * h), 0.0);
            Ok(g.exp(scaled))
        }
    }
}

/// `(M-1)^{-2} tr(K H L H)` as a graph node.
pub fn hsic_graph(g: &mut Graph, k: Var, l: Var) -> Result<Var> {
    let m = g.value(k)?.rows();
    if m < 2 {
        return Err(Error::Domain(format!("hsic needs M >= 2 samples, got {m}")));
    }
    let h = {
        let mut t = Tensor::full(m, m, -1.0 / m as f64);
        for i in 0..m {
            t.set(i, i, 1.0 - 1.0 / m as f64);
        }
        g.constant(t)
    };
    let hk = g.matmul(h, k);
    let hkh = g.matmul(hk, h);
    let prod = g.mul(hkh, l);
    let tr = g.sum_all(prod);
    let mf = (m - 1) as f64;
    Ok(g.affine(tr, 1.0 / (mf * mf), 0.0))
}

/// HSIC terms of a (z, s) sample pair, ready for CKA or the constraint
/// residual.
pub struct CkaGraph {
    pub hsic_zs: Var,
    pub hsic_zz: Var,
    pub hsic_ss: Var,
    pub cka: Var,
}

pub fn cka_graph(g: &mut Graph, z: Var, s: Var, kind: KernelKind) -> Result<CkaGraph> {
    let kz = kernel_matrix_graph(g, z, kind)?;
    let ks = kernel_matrix_graph(g, s, kind)?;
    let hsic_zs = hsic_graph(g, kz, ks)?;
    let hsic_zz = hsic_graph(g, kz, kz)?;
    let hsic_ss = hsic_graph(g, ks, ks)?;
    if g.value(hsic_zz)?.get(0, 0) <= 1e-12 || g.value(hsic_ss)?.get(0, 0) <= 1e-12 {
        return Err(Error::Domain("zero self-HSIC".into()));
    }
    let prod = g.mul(hsic_zz, hsic_ss);
    let denom = g.sqrt(prod);
    let cka = g.div(hsic_zs, denom);
    Ok(CkaGraph {
        hsic_zs,
        hsic_zz,
        hsic_ss,
        cka,
    })
}

/// Constraint residual `||C_zs||^2 - beta ||C_zz|| ||C_ss||` (HSIC plug-in).
pub fn constraint_residual_graph(g: &mut Graph, terms: &CkaGraph, beta: f64) -> Var {
    let prod = g.mul(terms.hsic_zz, terms.hsic_ss);
    let geo = g.sqrt(prod);
    let scaled = g.affine(geo, beta, 0.0);
    g.sub(terms.hsic_zs, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_kernel_has_zero_hsic() {
        let k = {
            let mut rng = Rng::seeded(1);
            let x = rng.normal_tensor(6, 2);
            rbf_kernel(&x, 1.0)
        };
        let l = Tensor::full(6, 6, 3.7);
        // Centering annihilates constants; only rounding dust survives.
        assert!(hsic(&k, &l).unwrap().abs() <= 1e-13);
    }

    #[test]
    fn hand_trace_oracle_three_by_three() {
        let k = Tensor::new(3, 3, vec![1.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.0]);
        // Direct computation: H = I - 11^T/3, value = tr(KHKH)/4.
        let m = 3;
        let mut h = Tensor::full(m, m, -1.0 / 3.0);
        for i in 0..m {
            h.set(i, i, 1.0 - 1.0 / 3.0);
        }
        let khkh = k.matmul(&h).matmul(&k).matmul(&h);
        let mut tr = 0.0;
        for i in 0..m {
            tr += khkh.get(i, i);
        }
        let want = tr / 4.0;
        let got = hsic(&k, &k).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn hsic_symmetric_and_shift_invariant() {
        let mut rng = Rng::seeded(2);
        for _ in 0..5 {
            let x = rng.normal_tensor(12, 3);
            let y = rng.normal_tensor(12, 2);
            let k = rbf_kernel(&x, 1.3);
            let l = rbf_kernel(&y, 0.8);
            let a = hsic(&k, &l).unwrap();
            let b = hsic(&l, &k).unwrap();
            assert!((a - b).abs() <= 1e-12);
            let shifted = l.map(|v| v + 5.0);
            let c = hsic(&k, &shifted).unwrap();
            assert!((a - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn hsic_rejects_tiny_or_mismatched() {
        let k = Tensor::eye(1);
        assert!(hsic(&k, &k).is_err());
        let a = Tensor::eye(3);
        let b = Tensor::eye(4);
        assert!(hsic(&a, &b).is_err());
    }

    #[test]
    fn cka_self_alignment_is_one() {
        let mut rng = Rng::seeded(3);
        let z = rng.normal_tensor(50, 4);
        let v = cka(&z, &z.clone(), KernelKind::Linear).unwrap();
        assert!((v - 1.0).abs() <= 1e-10);

        // Column permutation leaves the linear kernel unchanged.
        let zp = z.select_cols(&[2, 0, 3, 1]);
        let v = cka(&z, &zp, KernelKind::Linear).unwrap();
        assert!((v - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn linear_cka_invariant_under_orthogonal_maps() {
        let mut rng = Rng::seeded(4);
        let z = rng.normal_tensor(40, 4);
        let s = rng.normal_tensor(40, 3);
        let base = cka(&z, &s, KernelKind::Linear).unwrap();
        let qz = crate::linalg::orthonormalize_columns(&rng.normal_tensor(4, 4)).unwrap();
        let qs = crate::linalg::orthonormalize_columns(&rng.normal_tensor(3, 3)).unwrap();
        let rotated = cka(&z.matmul(&qz), &s.matmul(&qs), KernelKind::Linear).unwrap();
        assert!((base - rotated).abs() <= 1e-8);
    }

    #[test]
    fn independent_blocks_have_small_cka() {
        let mut rng = Rng::seeded(5);
        let z = rng.normal_tensor(512, 5);
        let s = rng.normal_tensor(512, 5);
        let v = cka(&z, &s, KernelKind::RbfMedian).unwrap();
        assert!(v < 0.05, "cka of independent blocks {v}");
    }

    #[test]
    fn degenerate_block_is_an_error() {
        let z = Tensor::full(10, 2, 1.0);
        let s = {
            let mut rng = Rng::seeded(6);
            rng.normal_tensor(10, 2)
        };
        assert!(matches!(cka(&z, &s, KernelKind::RbfMedian), Err(Error::Domain(_))));
        // Linear kernel of an all-zero block has zero self-HSIC.
        let zeros = Tensor::zeros(10, 2);
        assert!(matches!(cka(&zeros, &s, KernelKind::Linear), Err(Error::Domain(_))));
    }

    #[test]
    fn hsic_within_permutation_null_for_independent_samples() {
        let mut rng = Rng::seeded(7);
        let m = 512;
        let z = rng.normal_tensor(m, 3);
        let s = rng.normal_tensor(m, 3);
        let kz = kernel_matrix(&z, KernelKind::RbfMedian).unwrap();
        let ks = kernel_matrix(&s, KernelKind::RbfMedian).unwrap();
        let observed = hsic(&kz, &ks).unwrap();

        let perms = 200;
        let mut null = Vec::with_capacity(perms);
        for _ in 0..perms {
            let idx = rng.shuffled_indices(m);
            let sp = s.select_rows(&idx);
            let ksp = kernel_matrix(&sp, KernelKind::RbfMedian).unwrap();
            null.push(hsic(&kz, &ksp).unwrap());
        }
        let mean: f64 = null.iter().sum::<f64>() / perms as f64;
        let sd = (null.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (perms - 1) as f64)
            .sqrt();
        assert!(
            (observed - mean).abs() <= 3.0 * sd,
            "observed {observed} vs null {mean} +/- {sd}"
        );
    }

    #[test]
    fn graph_hsic_matches_plain_and_is_differentiable() {
        let mut rng = Rng::seeded(8);
        let zv = rng.normal_tensor(16, 3);
        let sv = rng.normal_tensor(16, 2);
        let mut g = Graph::new();
        let z = g.param("z", zv.clone());
        let s = g.param("s", sv.clone());
        let terms = cka_graph(&mut g, z, s, KernelKind::RbfMedian).unwrap();
        let plain = cka(&zv, &sv, KernelKind::RbfMedian).unwrap();
        let graph_val = g.value(terms.cka).unwrap().get(0, 0);
        assert!((plain - graph_val).abs() <= 1e-12);

        let grads = g.backward(terms.cka).unwrap();
        assert!(grads.wrt(z).is_some());
        assert!(grads.wrt(s).is_some());
    }

    #[test]
    fn graph_hsic_gradient_matches_fd() {
        use crate::graph::check_gradient_fd;
        use std::collections::BTreeMap;
        let mut rng = Rng::seeded(9);
        let mut params = BTreeMap::new();
        params.insert("z".to_string(), rng.normal_tensor(10, 2));
        params.insert("s".to_string(), rng.normal_tensor(10, 2));
        // Fix the bandwidths so the finite-difference path sees the same
        // constants the analytic path treats as detached.
        let hz = median_bandwidth(&params["z"]);
        let hs = median_bandwidth(&params["s"]);
        let build = move |g: &mut Graph, p: &BTreeMap<String, Tensor>| {
            let z = g.param("z", p["z"].clone());
            let s = g.param("s", p["s"].clone());
            let d2z = sq_dists_graph(g, z, 10);
            let kz = {
                let sc = g.affine(d2z, -1.0 / (2.0 * hz * hz), 0.0);
                g.exp(sc)
            };
            let d2s = sq_dists_graph(g, s, 10);
            let ks = {
                let sc = g.affine(d2s, -1.0 / (2.0 * hs * hs), 0.0);
                g.exp(sc)
            };
            hsic_graph(g, kz, ks).unwrap()
        };
        let report =
            check_gradient_fd(&build, &params, 1e-5, 1e-4, 12, &mut Rng::seeded(1)).unwrap();
        assert!(report.pass, "max rel err {:.3e}", report.max_rel_err());
    }

    #[test]
    fn residual_graph_matches_formula() {
        let mut rng = Rng::seeded(10);
        let zv = rng.normal_tensor(20, 3);
        let sv = rng.normal_tensor(20, 3);
        let beta = 0.05;
        let mut g = Graph::new();
        let z = g.constant(zv.clone());
        let s = g.constant(sv.clone());
        let terms = cka_graph(&mut g, z, s, KernelKind::RbfMedian).unwrap();
        let res = constraint_residual_graph(&mut g, &terms, beta);
        let kz = kernel_matrix(&zv, KernelKind::RbfMedian).unwrap();
        let ks = kernel_matrix(&sv, KernelKind::RbfMedian).unwrap();
        let want = hsic(&kz, &ks).unwrap()
            - beta * (hsic(&kz, &kz).unwrap() * hsic(&ks, &ks).unwrap()).sqrt();
        assert!((g.value(res).unwrap().get(0, 0) - want).abs() <= 1e-14);
    }
}
