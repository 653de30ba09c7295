//! Data set, checkpoint and results persistence.
//!
//! Data sets are directories of plain CSV (`X_background.csv`,
//! `X_target.csv`, `latents.csv`) plus `meta.json`; checkpoints are a
//! `manifest.json` next to a little-endian f64 `params.bin`. Numbers in
//! CSV use the shortest round-trip decimal form, so rewriting a file we
//! produced is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::hsic::{cka, KernelKind};
use crate::metrics::{
    clustering_scores, cpca_split, cross_mcc, delta_mcc, kmeans, mcc_block, CorrKind,
    MetricsReport,
};
use crate::models::{CvaeModel, VaeModel};
use crate::nn::Likelihood;
use crate::optim::EpochRecord;
use crate::rng::Rng;
use crate::simgen::{SimConfig, SimDataset};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: &str = "1";
pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.display().to_string(), e)
}

// -------------------------------------------------------------------
// CSV.

fn write_matrix_csv(path: &Path, header_prefix: &str, m: &Tensor) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..m.cols()).map(|c| format!("{header_prefix}{c}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse(path.display().to_string(), "empty file".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse(
                path.display().to_string(),
                format!(
                    "ragged row at line {}: {} fields, expected {cols}",
                    lineno + 2,
                    fields.len()
                ),
            ));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Parse(
                    path.display().to_string(),
                    format!("bad number {f:?} at line {}", lineno + 2),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((header, Tensor::new(rows, cols, data)))
}

// -------------------------------------------------------------------
// Data sets.

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: String,
    pub seed: u64,
    pub noise: Likelihood,
    pub p: usize,
    pub q: usize,
    pub data_dim: usize,
    pub n_background: usize,
    pub n_target: usize,
    pub library_size: f64,
    pub gaussian_variance: f64,
    pub theta_true: Option<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub group_count: Option<usize>,
    pub has_latents: bool,
    pub sim_config: Option<SimConfig>,
}

/// A data set as read back from disk; latents are present only for
/// simulated data.
#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub x_background: Tensor,
    pub x_target: Tensor,
    /// Background rows first, then target rows.
    pub z_true: Option<Tensor>,
    pub s_true: Option<Tensor>,
    pub meta: DatasetMeta,
}

pub fn write_dataset(dir: &Path, ds: &SimDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_matrix_csv(&dir.join("X_background.csv"), "f", &ds.x_background)?;
    write_matrix_csv(&dir.join("X_target.csv"), "f", &ds.x_target)?;
    // latents.csv: z columns for every row; s columns are zero on the
    // background rows (true by construction).
    let nb = ds.x_background.rows();
    let nt = ds.x_target.rows();
    let q = ds.s_true.cols();
    let s_full = Tensor::vcat(&[&Tensor::zeros(nb, q), &ds.s_true]);
    let joint = Tensor::hcat(&[&ds.z_true, &s_full]);
    {
        let path = dir.join("latents.csv");
        let mut out = String::new();
        let mut header: Vec<String> = (0..ds.z_true.cols()).map(|c| format!("z{c}")).collect();
        header.extend((0..q).map(|c| format!("s{c}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for r in 0..nb + nt {
            let row: Vec<String> = joint.row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        seed: ds.config.seed,
        noise: ds.noise,
        p: ds.config.p,
        q: ds.config.q,
        data_dim: ds.config.data_dim,
        n_background: nb,
        n_target: nt,
        library_size: ds.config.library_size,
        gaussian_variance: ds.config.gaussian_variance,
        theta_true: ds.theta_true.clone(),
        labels: ds.labels.clone(),
        group_count: ds.config.group_count,
        has_latents: true,
        sim_config: Some(ds.config.clone()),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Parse("meta.json".into(), e.to_string()))?;
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Parse(meta_path.display().to_string(), e.to_string()))?;
    let (_, x_background) = read_matrix_csv(&dir.join("X_background.csv"))?;
    let (_, x_target) = read_matrix_csv(&dir.join("X_target.csv"))?;
    if x_background.cols() != x_target.cols() {
        return Err(Error::Shape(format!(
            "background has {} features but target has {}",
            x_background.cols(),
            x_target.cols()
        )));
    }
    let (z_true, s_true) = if meta.has_latents {
        let (header, joint) = read_matrix_csv(&dir.join("latents.csv"))?;
        let p = header.iter().filter(|h| h.starts_with('z')).count();
        let q = header.iter().filter(|h| h.starts_with('s')).count();
        if p + q != joint.cols() {
            return Err(Error::Parse(
                "latents.csv".into(),
                "header must be z0..z{p-1}, s0..s{q-1}".into(),
            ));
        }
        let z = joint.select_cols(&(0..p).collect::<Vec<_>>());
        let nb = x_background.rows();
        let s_all = joint.select_cols(&(p..p + q).collect::<Vec<_>>());
        let s_target =
            s_all.select_rows(&(nb..nb + x_target.rows()).collect::<Vec<_>>());
        (Some(z), Some(s_target))
    } else {
        (None, None)
    };
    Ok(StoredDataset {
        x_background,
        x_target,
        z_true,
        s_true,
        meta,
    })
}

/// Rewrite externally supplied CSV matrices into the data set layout.
/// Ground-truth latents are marked absent; labels (one integer per
/// target row) enable the clustering metrics downstream.
pub fn ingest_external(
    background_csv: &Path,
    target_csv: &Path,
    labels_csv: Option<&Path>,
    noise: Likelihood,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (_, xb) = read_matrix_csv(background_csv)?;
    let (_, xt) = read_matrix_csv(target_csv)?;
    if xb.cols() != xt.cols() {
        return Err(Error::Shape(format!(
            "column count mismatch: background {} vs target {}",
            xb.cols(),
            xt.cols()
        )));
    }
    if matches!(noise, Likelihood::Poisson | Likelihood::NegBinomial) {
        for (name, m) in [("background", &xb), ("target", &xt)] {
            for &v in m.data() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "{name} matrix holds {v}, but count likelihoods need non-negative integers"
                    )));
                }
            }
        }
    }
    let labels = match labels_csv {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let mut labels = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || (i == 0 && t.parse::<usize>().is_err()) {
                    continue; // optional header
                }
                labels.push(t.parse::<usize>().map_err(|_| {
                    Error::Parse(path.display().to_string(), format!("bad label {t:?}"))
                })?);
            }
            if labels.len() != xt.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} target rows",
                    labels.len(),
                    xt.rows()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_matrix_csv(&out_dir.join("X_background.csv"), "f", &xb)?;
    write_matrix_csv(&out_dir.join("X_target.csv"), "f", &xt)?;
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        seed: 0,
        noise,
        p: 0,
        q: 0,
        data_dim: xb.cols(),
        n_background: xb.rows(),
        n_target: xt.rows(),
        library_size: 0.0,
        gaussian_variance: 1.0,
        theta_true: None,
        labels,
        group_count: None,
        has_latents: false,
        sim_config: None,
    };
    let path = out_dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Parse("meta.json".into(), e.to_string()))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(out_dir.to_path_buf())
}

// -------------------------------------------------------------------
// Checkpoints.

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cvae,
    Vae,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub p_hat: usize,
    pub q_hat: usize,
    pub data_dim: usize,
    pub likelihood: Likelihood,
    pub gaussian_variance: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into params.bin.
    offset: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format_version: String,
    byte_order: String,
    dtype: String,
    model: ModelMeta,
    params: Vec<TensorEntry>,
    stats: Vec<TensorEntry>,
}

/// A fitted model ready for evaluation or further training.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Cvae(CvaeModel),
    Vae(VaeModel),
}

impl FittedModel {
    pub fn meta(&self, dropout: f64) -> ModelMeta {
        match self {
            FittedModel::Cvae(m) => ModelMeta {
                kind: ModelKind::Cvae,
                p_hat: m.p_hat,
                q_hat: m.q_hat,
                data_dim: m.data_dim,
                likelihood: m.likelihood,
                gaussian_variance: m.gaussian_variance,
                dropout,
            },
            FittedModel::Vae(m) => ModelMeta {
                kind: ModelKind::Vae,
                // The VAE records the intended split of its latent block.
                p_hat: 0,
                q_hat: 0,
                data_dim: m.data_dim,
                likelihood: m.likelihood,
                gaussian_variance: m.gaussian_variance,
                dropout,
            },
        }
    }

    fn store(&self) -> &crate::nn::ParamStore {
        match self {
            FittedModel::Cvae(m) => &m.params,
            FittedModel::Vae(m) => &m.params,
        }
    }
}

pub fn save_checkpoint(dir: &Path, model: &FittedModel, mut meta: ModelMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let FittedModel::Cvae(m) = model {
        meta.p_hat = m.p_hat;
        meta.q_hat = m.q_hat;
    }
    let store = model.store();
    let mut blob: Vec<u8> = Vec::new();
    let mut entry = |name: &str, t: &Tensor, blob: &mut Vec<u8>| -> TensorEntry {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        TensorEntry {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        }
    };
    let params: Vec<TensorEntry> = store
        .trainable()
        .iter()
        .map(|(n, t)| entry(n, t, &mut blob))
        .collect();
    let stats: Vec<TensorEntry> = store
        .stats()
        .iter()
        .map(|(n, t)| entry(n, t, &mut blob))
        .collect();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION.to_string(),
        byte_order: "little-endian".to_string(),
        dtype: "f64".to_string(),
        model: meta,
        params,
        stats,
    };
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse("manifest.json".into(), e.to_string()))?;
    fs::write(&mpath, json).map_err(io_err(&mpath))?;
    let bpath = dir.join("params.bin");
    fs::write(&bpath, blob).map_err(io_err(&bpath))
}

fn read_entry(blob: &[u8], e: &TensorEntry) -> Result<Tensor> {
    let n = e.rows * e.cols;
    let end = e.offset + 8 * n;
    if end > blob.len() {
        return Err(Error::Parse(
            "params.bin".into(),
            format!("entry {} overruns blob ({} > {})", e.name, end, blob.len()),
        ));
    }
    let data: Vec<f64> = blob[e.offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(e.rows, e.cols, data))
}

pub fn load_checkpoint(dir: &Path) -> Result<(FittedModel, ModelMeta)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(mpath.display().to_string(), e.to_string()))?;
    if manifest.dtype != "f64" || manifest.byte_order != "little-endian" {
        return Err(Error::Parse(
            mpath.display().to_string(),
            "unsupported dtype or byte order".into(),
        ));
    }
    let bpath = dir.join("params.bin");
    let blob = fs::read(&bpath).map_err(io_err(&bpath))?;
    let meta = manifest.model.clone();
    let mut rng = Rng::seeded(0);
    let mut model = match meta.kind {
        ModelKind::Cvae => FittedModel::Cvae(CvaeModel::new(
            meta.p_hat,
            meta.q_hat,
            meta.data_dim,
            meta.likelihood,
            meta.gaussian_variance,
            meta.dropout,
            &mut rng,
        )?),
        ModelKind::Vae => FittedModel::Vae(VaeModel::new(
            meta.p_hat + meta.q_hat,
            meta.data_dim,
            meta.likelihood,
            meta.gaussian_variance,
            meta.dropout,
            &mut rng,
        )?),
    };
    {
        let store = match &mut model {
            FittedModel::Cvae(m) => &mut m.params,
            FittedModel::Vae(m) => &mut m.params,
        };
        let expected: Vec<String> = store.trainable().keys().cloned().collect();
        let loaded: Vec<String> = manifest.params.iter().map(|e| e.name.clone()).collect();
        if expected != loaded {
            return Err(Error::Parse(
                "manifest.json".into(),
                format!("parameter names mismatch: expected {expected:?}, got {loaded:?}"),
            ));
        }
        for e in &manifest.params {
            let t = read_entry(&blob, e)?;
            let cur = store.get(&e.name);
            if cur.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?} in checkpoint but {:?} in model",
                    e.name,
                    t.shape(),
                    cur.shape()
                )));
            }
            *store.get_mut(&e.name) = t;
        }
        for e in &manifest.stats {
            let t = read_entry(&blob, e)?;
            store.set_stat(&e.name, t);
        }
    }
    Ok((model, meta))
}

// -------------------------------------------------------------------
// History and manifests.

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for rec in history {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Parse("history".into(), e.to_string()))?;
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parse(path.display().to_string(), e.to_string()))
        })
        .collect()
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_echo: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Parse("manifest".into(), e.to_string()))?;
    fs::write(path, json).map_err(io_err(path))
}

// -------------------------------------------------------------------
// Evaluation pipeline.

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub kernel: KernelKind,
    pub cpca_alpha: f64,
    pub kmeans_seed: u64,
    /// Latent width split for the VAE baseline (salient unit count).
    pub vae_q_hat: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kernel: KernelKind::RbfMedian,
            cpca_alpha: 1.0,
            kmeans_seed: 0,
            vae_q_hat: 0,
        }
    }
}

/// Evaluate a fitted model on a stored data set: MCC blocks (when ground
/// truth exists), cross-space MCC, clustering scores (when labels exist)
/// and the final CKA between the learned blocks.
pub fn evaluate(
    model: &FittedModel,
    ds: &StoredDataset,
    opts: &EvalOptions,
    config_echo: serde_json::Value,
) -> Result<MetricsReport> {
    let data_dim = match model {
        FittedModel::Cvae(m) => m.data_dim,
        FittedModel::Vae(m) => m.data_dim,
    };
    if ds.x_target.cols() != data_dim {
        return Err(Error::Shape(format!(
            "checkpoint expects {data_dim} features but the data set has {}",
            ds.x_target.cols()
        )));
    }
    let mut warnings = Vec::new();

    // Learned latent point estimates: the variational posterior means of
    // the target rows. The VAE baseline is split by contrastive PCA over
    // both data sets' latents.
    let (z_hat, s_hat) = match model {
        FittedModel::Cvae(m) => m.posterior_means(&ds.x_target)?,
        FittedModel::Vae(m) => {
            let lat_b = m.posterior_means(&ds.x_background)?;
            let lat_t = m.posterior_means(&ds.x_target)?;
            let q_hat = if opts.vae_q_hat > 0 {
                opts.vae_q_hat
            } else {
                m.latent / 2
            };
            let (bg_idx, sal_idx) = cpca_split(&lat_b, &lat_t, q_hat, opts.cpca_alpha)?;
            (lat_t.select_cols(&bg_idx), lat_t.select_cols(&sal_idx))
        }
    };

    let (mut mcc_pearson, mut mcc_spearman) = (None, None);
    let (mut dp, mut dsp) = (None, None);
    if let (Some(z_true), Some(s_true)) = (&ds.z_true, &ds.s_true) {
        let nb = ds.x_background.rows();
        let z_true_target =
            z_true.select_rows(&(nb..nb + ds.x_target.rows()).collect::<Vec<_>>());
        let bp = mcc_block(&z_hat, &s_hat, &z_true_target, s_true, CorrKind::Pearson)?;
        let bs = mcc_block(&z_hat, &s_hat, &z_true_target, s_true, CorrKind::Spearman)?;
        dp = Some(delta_mcc(&bp));
        dsp = Some(delta_mcc(&bs));
        mcc_pearson = Some(bp);
        mcc_spearman = Some(bs);
    } else {
        warnings.push("no ground-truth latents: MCC blocks omitted".to_string());
    }

    let cross_p = cross_mcc(&z_hat, &s_hat, CorrKind::Pearson)?;
    let cross_s = cross_mcc(&z_hat, &s_hat, CorrKind::Spearman)?;

    let (mut ari, mut nmi, mut asw) = (None, None, None);
    if let Some(labels) = &ds.meta.labels {
        if labels.len() != ds.x_target.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} target rows",
                labels.len(),
                ds.x_target.rows()
            )));
        }
        let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        if k >= 2 {
            let mut km_rng = Rng::seeded(opts.kmeans_seed).substream("kmeans");
            let pred = kmeans(&s_hat, k, &mut km_rng)?;
            let scores = clustering_scores(&pred, labels, &s_hat)?;
            ari = Some(scores.ari);
            nmi = Some(scores.nmi);
            asw = Some(scores.asw);
        } else {
            warnings.push("fewer than two label groups: clustering scores omitted".into());
        }
    }

    let final_cka = match cka(&z_hat, &s_hat, opts.kernel) {
        Ok(v) => Some(v),
        Err(Error::Domain(msg)) => {
            warnings.push(format!("final CKA unavailable: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };

    Ok(MetricsReport {
        mcc_pearson,
        mcc_spearman,
        delta_mcc_pearson: dp,
        delta_mcc_spearman: dsp,
        cross_mcc_pearson: Some(cross_p),
        cross_mcc_spearman: Some(cross_s),
        ari,
        nmi,
        asw,
        final_cka,
        warnings,
        config_echo,
    })
}
