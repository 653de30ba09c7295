//! Disentanglement and clustering evaluation: linear MCC blocks and their
//! delta aggregate, cross-space MCC, contrastive-PCA latent splitting for
//! the VAE baseline, k-means, ARI, NMI and silhouette widths.

use crate::linalg::{covariance, least_squares, sym_eigendecompose, SymMatrix};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrKind {
    Pearson,
    Spearman,
}

/// The four regression-MCC scores between learned and true latent blocks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MccBlock {
    pub mcc_zz: f64,
    pub mcc_zs: f64,
    pub mcc_sz: f64,
    pub mcc_ss: f64,
    pub kind: CorrKind,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Average ranks (ties share the mean rank).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone)]
pub struct MccOutcome {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Regression MCC: fit targets on predictors by least squares, then
/// average the per-component correlation between prediction and truth.
/// A constant target component scores 0 with a warning.
pub fn linear_mcc(predictors: &Tensor, targets: &Tensor, kind: CorrKind) -> Result<MccOutcome> {
    let fit = least_squares(predictors, targets)?;
    let pred = fit.predict(predictors);
    let mut warnings = Vec::new();
    if fit.ridge_fallback {
        warnings.push("collinear predictors: ridge fallback used".to_string());
    }
    let mut sum = 0.0;
    for c in 0..targets.cols() {
        let p = pred.col_vec(c);
        let t = targets.col_vec(c);
        if t.iter().all(|&v| v == t[0]) {
            warnings.push(format!(
                "target component {c} is constant; correlation defined as 0"
            ));
            continue;
        }
        let corr = match kind {
            CorrKind::Pearson => pearson(&p, &t),
            CorrKind::Spearman => spearman(&p, &t),
        };
        match corr {
            Some(v) => sum += v,
            None => {
                warnings.push(format!(
                    "degenerate prediction for component {c}; correlation defined as 0"
                ));
            }
        }
    }
    Ok(MccOutcome {
        value: sum / targets.cols() as f64,
        warnings,
    })
}

/// All four MCC scores for learned (z_hat, s_hat) against true (z, s).
pub fn mcc_block(
    z_hat: &Tensor,
    s_hat: &Tensor,
    z_true: &Tensor,
    s_true: &Tensor,
    kind: CorrKind,
) -> Result<MccBlock> {
    Ok(MccBlock {
        mcc_zz: linear_mcc(z_hat, z_true, kind)?.value,
        mcc_zs: linear_mcc(z_hat, s_true, kind)?.value,
        mcc_sz: linear_mcc(s_hat, z_true, kind)?.value,
        mcc_ss: linear_mcc(s_hat, s_true, kind)?.value,
        kind,
    })
}

/// Within-block recovery minus cross-block leakage:
/// `(mcc_zz + mcc_ss)/2 - (mcc_zs + mcc_sz)/2`.
pub fn delta_mcc(block: &MccBlock) -> f64 {
    0.5 * (block.mcc_zz + block.mcc_ss) - 0.5 * (block.mcc_zs + block.mcc_sz)
}

/// MCC of a regression from one learned latent space to the other;
/// lower means less shared content.
pub fn cross_mcc(latents_a: &Tensor, latents_b: &Tensor, kind: CorrKind) -> Result<f64> {
    Ok(linear_mcc(latents_a, latents_b, kind)?.value)
}

/// Split VAE latent units into background/salient sets by the loadings of
/// the first contrastive principal component of `C_t - alpha C_b`.
/// Ties break toward the lower unit index.
pub fn cpca_split(
    latents_background: &Tensor,
    latents_target: &Tensor,
    q_hat: usize,
    alpha: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("cpca contrast alpha {alpha} < 0")));
    }
    let d = latents_background.cols();
    if latents_target.cols() != d {
        return Err(Error::Shape("latent widths differ between data sets".into()));
    }
    if q_hat > d {
        return Err(Error::Config(format!(
            "salient count {q_hat} exceeds latent width {d}"
        )));
    }
    let ct = covariance(latents_target);
    let cb = covariance(latents_background);
    let mut diff = SymMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            diff.set(i, j, ct.get(i, j) - alpha * cb.get(i, j));
        }
    }
    let (_, vecs) = sym_eigendecompose(&diff)?;
    let top: Vec<f64> = (0..d).map(|i| vecs.get(i, 0).abs()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| top[b].partial_cmp(&top[a]).unwrap().then(a.cmp(&b)));
    let mut salient: Vec<usize> = order[..q_hat].to_vec();
    let mut background: Vec<usize> = order[q_hat..].to_vec();
    salient.sort_unstable();
    background.sort_unstable();
    Ok((background, salient))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; assignment fixpoint or 300
/// iterations. An emptied cluster is re-seeded from the farthest point.
pub fn kmeans(points: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside 1..={n}")));
    }
    let d = points.cols();
    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row(rng.gen_index(n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass at existing centroids: any point works.
            rng.gen_index(n)
        } else {
            let mut u = rng.uniform(0.0, total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centroids.push(points.row(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.row(i), centroids.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _iter in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let dd = sq_dist(points.row(i), cen);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for c in 0..d {
                sums[labels[i]][c] += points.get(i, c);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed from the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), &centroids[labels[a]])
                            .partial_cmp(&sq_dist(points.row(b), &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = points.row(far).to_vec();
                labels[far] = c;
                changed = true;
            } else {
                for j in 0..d {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusteringScores {
    pub ari: f64,
    pub nmi: f64,
    pub asw: f64,
}

/// Full evaluation of one fitted model. MCC fields are null when the
/// data set carries no ground-truth latents; clustering fields are null
/// without labels.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub mcc_pearson: Option<MccBlock>,
    pub mcc_spearman: Option<MccBlock>,
    pub delta_mcc_pearson: Option<f64>,
    pub delta_mcc_spearman: Option<f64>,
    pub cross_mcc_pearson: Option<f64>,
    pub cross_mcc_spearman: Option<f64>,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub asw: Option<f64>,
    pub final_cka: Option<f64>,
    pub warnings: Vec<String>,
    pub config_echo: serde_json::Value,
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0.0; kb]; ka];
    let mut row = vec![0.0; ka];
    let mut col = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[x][y] += 1.0;
        row[x] += 1.0;
        col[y] += 1.0;
    }
    let n = a.len() as f64;
    let sum_ij: f64 = table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_a: f64 = row.iter().map(|&v| comb2(v)).sum();
    let sum_b: f64 = col.iter().map(|&v| comb2(v)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        // Both labelings are a single trivial partition.
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

/// Normalized mutual information `2 MI / (H(a) + H(b))`, natural logs.
/// Zero total entropy (both single-cluster) scores 0.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint_n = vec![vec![0usize; kb]; ka];
    let mut pa_n = vec![0usize; ka];
    let mut pb_n = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b.iter()) {
        joint_n[x][y] += 1;
        pa_n[x] += 1;
        pb_n[y] += 1;
    }
    let joint: Vec<Vec<f64>> = joint_n
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n).collect())
        .collect();
    let pa: Vec<f64> = pa_n.iter().map(|&c| c as f64 / n).collect();
    let pb: Vec<f64> = pb_n.iter().map(|&c| c as f64 / n).collect();
    let entropy = |p: &[f64]| -> f64 {
        -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
    };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha + hb <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let pxy = joint[x][y];
            if pxy > 0.0 {
                mi += pxy * (pxy / (pa[x] * pb[y])).ln();
            }
        }
    }
    2.0 * mi / (ha + hb)
}

/// Mean silhouette width over an embedding with Euclidean distances;
/// singleton-cluster points score 0.
pub fn average_silhouette_width(labels: &[usize], embedding: &Tensor) -> Result<f64> {
    let n = labels.len();
    if n != embedding.rows() {
        return Err(Error::Shape("labels/embedding length mismatch".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Config("silhouette needs at least two clusters".into()));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] <= 1 {
            continue; // silhouette 0 for singletons
        }
        let mut dist_sum = vec![0.0; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            dist_sum[labels[j]] += sq_dist(embedding.row(i), embedding.row(j)).sqrt();
        }
        let a = dist_sum[labels[i]] / (counts[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| dist_sum[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// ARI/NMI between predicted and true labels plus the silhouette of the
/// true labels over the embedding.
pub fn clustering_scores(
    pred: &[usize],
    truth: &[usize],
    embedding: &Tensor,
) -> Result<ClusteringScores> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("label vectors differ in length".into()));
    }
    let distinct_truth = truth.iter().collect::<std::collections::BTreeSet<_>>().len();
    let asw = if distinct_truth >= 2 {
        average_silhouette_width(truth, embedding)?
    } else {
        return Err(Error::Config(
            "clustering scores need at least two distinct true labels".into(),
        ));
    };
    Ok(ClusteringScores {
        ari: adjusted_rand_index(pred, truth),
        nmi: normalized_mutual_information(pred, truth),
        asw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mcc_recovers_invertible_maps() {
        let mut rng = Rng::seeded(1);
        let a = rng.normal_tensor(200, 4);
        let mut m = rng.normal_tensor(4, 4);
        for i in 0..4 {
            m.set(i, i, m.get(i, i) + 3.0);
        }
        let b = a.matmul(&m);
        let v = linear_mcc(&a, &b, CorrKind::Pearson).unwrap().value;
        assert!((v - 1.0).abs() <= 1e-8, "mcc {v}");

        // Sign flips are absorbed by the regression.
        let flipped = a.scale(-1.0);
        let v = linear_mcc(&flipped, &a, CorrKind::Pearson).unwrap().value;
        assert!((v - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn linear_mcc_null_calibration() {
        for seed in [2, 3, 4] {
            let mut rng = Rng::seeded(seed);
            let a = rng.normal_tensor(1500, 5);
            let b = rng.normal_tensor(1500, 5);
            let v = linear_mcc(&a, &b, CorrKind::Pearson).unwrap().value;
            assert!(v.abs() <= 0.1, "null mcc {v} (seed {seed})");
            let v = linear_mcc(&a, &b, CorrKind::Spearman).unwrap().value;
            assert!(v.abs() <= 0.1, "null spearman mcc {v} (seed {seed})");
        }
    }

    #[test]
    fn linear_mcc_invariant_under_predictor_reparameterization() {
        let mut rng = Rng::seeded(5);
        let a = rng.normal_tensor(300, 3);
        let b = rng.normal_tensor(300, 2);
        let base = linear_mcc(&a, &b, CorrKind::Pearson).unwrap().value;
        let mut m = rng.normal_tensor(3, 3);
        for i in 0..3 {
            m.set(i, i, m.get(i, i) + 2.5);
        }
        let shifted = a.matmul(&m).map(|v| v + 0.9);
        let transformed = linear_mcc(&shifted, &b, CorrKind::Pearson).unwrap().value;
        assert!((base - transformed).abs() <= 1e-8);
    }

    #[test]
    fn constant_target_component_scores_zero_with_warning() {
        let mut rng = Rng::seeded(6);
        let a = rng.normal_tensor(50, 2);
        let mut b = rng.normal_tensor(50, 2);
        for r in 0..50 {
            b.set(r, 1, 4.2);
        }
        let out = linear_mcc(&a, &b, CorrKind::Pearson).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.value.abs() <= 0.5, "constant column contributes zero");
    }

    #[test]
    fn delta_mcc_published_examples() {
        let b = |zz, zs, sz, ss| MccBlock {
            mcc_zz: zz,
            mcc_zs: zs,
            mcc_sz: sz,
            mcc_ss: ss,
            kind: CorrKind::Pearson,
        };
        assert!((delta_mcc(&b(0.91, 0.08, 0.07, 0.94)) - 0.85).abs() <= 1e-12);
        assert!((delta_mcc(&b(0.91, 0.08, 0.45, 0.94)) - 0.66).abs() <= 1e-12);
        assert!((delta_mcc(&b(1.0, 0.0, 0.0, 1.0)) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn delta_mcc_strictly_penalizes_cross_leakage() {
        let base = MccBlock {
            mcc_zz: 0.9,
            mcc_zs: 0.1,
            mcc_sz: 0.1,
            mcc_ss: 0.9,
            kind: CorrKind::Pearson,
        };
        let d0 = delta_mcc(&base);
        for pert in [0.05, 0.2, 0.4] {
            let mut worse = base;
            worse.mcc_sz += pert;
            assert!(delta_mcc(&worse) <= d0 - pert / 2.0 + 1e-12);
            let mut worse = base;
            worse.mcc_zs += pert;
            assert!(delta_mcc(&worse) <= d0 - pert / 2.0 + 1e-12);
        }
    }

    #[test]
    fn cpca_split_diagonal_dominant_unit() {
        let mut rng = Rng::seeded(7);
        // Unit 2 carries large target-only variance.
        let n = 2000;
        let mut lat_t = rng.normal_tensor(n, 4);
        for r in 0..n {
            lat_t.set(r, 2, lat_t.get(r, 2) * 4.0);
        }
        let lat_b = rng.normal_tensor(n, 4);
        let (bg, sal) = cpca_split(&lat_b, &lat_t, 1, 1.0).unwrap();
        assert_eq!(sal, vec![2]);
        assert_eq!(bg, vec![0, 1, 3]);
    }

    #[test]
    fn cpca_split_block_of_extra_variance() {
        let mut rng = Rng::seeded(8);
        let n = 4000;
        let mut lat_t = rng.normal_tensor(n, 10);
        for r in 0..n {
            for c in 5..10 {
                lat_t.set(r, c, lat_t.get(r, c) * 2.0);
            }
        }
        let lat_b = rng.normal_tensor(n, 10);
        let (bg, sal) = cpca_split(&lat_b, &lat_t, 5, 1.0).unwrap();
        assert_eq!(sal, vec![5, 6, 7, 8, 9]);
        assert_eq!(bg, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cpca_alpha_zero_is_plain_target_pca() {
        let mut rng = Rng::seeded(9);
        let n = 1000;
        let mut lat_t = rng.normal_tensor(n, 3);
        for r in 0..n {
            lat_t.set(r, 1, lat_t.get(r, 1) * 5.0);
        }
        // Background with huge variance everywhere must be ignored.
        let lat_b = rng.normal_tensor(n, 3).scale(50.0);
        let (_, sal) = cpca_split(&lat_b, &lat_t, 1, 0.0).unwrap();
        assert_eq!(sal, vec![1]);
    }

    #[test]
    fn kmeans_separated_blobs() {
        let mut rng = Rng::seeded(10);
        let n = 60;
        let mut pts = Tensor::zeros(2 * n, 2);
        for i in 0..n {
            pts.set(i, 0, rng.normal(0.0, 1.0));
            pts.set(i, 1, rng.normal(0.0, 1.0));
            pts.set(n + i, 0, rng.normal(30.0, 1.0));
            pts.set(n + i, 1, rng.normal(30.0, 1.0));
        }
        let labels = kmeans(&pts, 2, &mut rng).unwrap();
        let first = labels[0];
        assert!(labels[..n].iter().all(|&l| l == first));
        assert!(labels[n..].iter().all(|&l| l != first));
    }

    #[test]
    fn kmeans_degenerate_ks() {
        let mut rng = Rng::seeded(11);
        let pts = rng.normal_tensor(7, 2);
        let labels = kmeans(&pts, 1, &mut rng).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        let labels = kmeans(&pts, 7, &mut rng).unwrap();
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 7, "each point its own cluster");
        assert!(kmeans(&pts, 8, &mut rng).is_err());
    }

    #[test]
    fn kmeans_deterministic_given_seed() {
        let mut rng = Rng::seeded(12);
        let pts = rng.normal_tensor(40, 3);
        let a = kmeans(&pts, 4, &mut Rng::seeded(99)).unwrap();
        let b = kmeans(&pts, 4, &mut Rng::seeded(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ari_nmi_identical_and_permuted() {
        let truth = vec![0, 0, 1, 1, 2, 2, 2, 0];
        assert_eq!(adjusted_rand_index(&truth, &truth), 1.0);
        assert!((normalized_mutual_information(&truth, &truth) - 1.0).abs() < 1e-12);
        // Relabeling clusters changes nothing.
        let permuted: Vec<usize> = truth.iter().map(|&l| (l + 1) % 3).collect();
        assert!((adjusted_rand_index(&truth, &permuted) - 1.0).abs() < 1e-12);
        assert!((normalized_mutual_information(&truth, &permuted) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_null_calibration() {
        let mut rng = Rng::seeded(13);
        for _ in 0..3 {
            let a: Vec<usize> = (0..1000).map(|_| rng.gen_index(5)).collect();
            let b: Vec<usize> = (0..1000).map(|_| rng.gen_index(5)).collect();
            let ari = adjusted_rand_index(&a, &b);
            assert!(ari.abs() <= 0.05, "null ari {ari}");
        }
    }

    #[test]
    fn single_cluster_edge_cases() {
        let ones = vec![0usize; 10];
        assert_eq!(adjusted_rand_index(&ones, &ones), 1.0);
        assert_eq!(normalized_mutual_information(&ones, &ones), 0.0);
    }

    #[test]
    fn asw_blobs_and_invariance() {
        let mut rng = Rng::seeded(14);
        let n = 40;
        let mut pts = Tensor::zeros(2 * n, 3);
        let mut labels = vec![0usize; 2 * n];
        for i in 0..n {
            for c in 0..3 {
                pts.set(i, c, rng.normal(0.0, 1.0));
                pts.set(n + i, c, rng.normal(40.0, 1.0));
            }
            labels[n + i] = 1;
        }
        let asw = average_silhouette_width(&labels, &pts).unwrap();
        assert!(asw >= 0.9, "blob silhouette {asw}");

        // Global rotation + translation leaves silhouettes unchanged.
        let q = crate::linalg::orthonormalize_columns(&rng.normal_tensor(3, 3)).unwrap();
        let rotated = pts.matmul(&q).map(|v| v + 7.5);
        let asw2 = average_silhouette_width(&labels, &rotated).unwrap();
        assert!((asw - asw2).abs() <= 1e-10);
    }

    #[test]
    fn singleton_cluster_scores_zero() {
        let mut rng = Rng::seeded(15);
        let pts = rng.normal_tensor(5, 2);
        let labels = vec![0, 0, 0, 0, 1];
        let asw = average_silhouette_width(&labels, &pts).unwrap();
        assert!(asw.is_finite());
    }

    #[test]
    fn cross_mcc_examples() {
        let mut rng = Rng::seeded(16);
        let a = rng.normal_tensor(1500, 4);
        let m = {
            let mut t = rng.normal_tensor(4, 3);
            t.set(0, 0, t.get(0, 0) + 2.0);
            t
        };
        let b = a.matmul(&m);
        let v = cross_mcc(&a, &b, CorrKind::Pearson).unwrap();
        assert!((v - 1.0).abs() <= 1e-8);

        let ind = rng.normal_tensor(1500, 4);
        let v = cross_mcc(&a, &ind, CorrKind::Pearson).unwrap();
        assert!(v.abs() <= 0.1);

        // Partially shared content: first component recoverable, the
        // remaining three are independent noise.
        let shared = {
            let first = a.select_cols(&[0]);
            let noise = rng.normal_tensor(1500, 3);
            Tensor::hcat(&[&first, &noise])
        };
        let v = cross_mcc(&a, &shared, CorrKind::Pearson).unwrap();
        assert!((v - 0.25).abs() <= 0.1, "partial cross mcc {v}");
    }

    #[test]
    fn clustering_scores_pipeline() {
        let mut rng = Rng::seeded(17);
        let n = 50;
        let mut pts = Tensor::zeros(2 * n, 2);
        let mut truth = vec![0usize; 2 * n];
        for i in 0..n {
            pts.set(i, 0, rng.normal(0.0, 1.0));
            pts.set(i, 1, rng.normal(0.0, 1.0));
            pts.set(n + i, 0, rng.normal(20.0, 1.0));
            pts.set(n + i, 1, rng.normal(20.0, 1.0));
            truth[n + i] = 1;
        }
        let pred = kmeans(&pts, 2, &mut rng).unwrap();
        let scores = clustering_scores(&pred, &truth, &pts).unwrap();
        assert!((scores.ari - 1.0).abs() < 1e-12);
        assert!((scores.nmi - 1.0).abs() < 1e-12);
        assert!(scores.asw > 0.9);
    }
}
