//! Where is latent information lost: encoder trunk, heads, or the
//! best-validation snapshot?

use comvae::metrics::{linear_mcc, CorrKind};
use comvae::models::CvaeModel;
use comvae::nn::{self, Likelihood};
use comvae::optim::{train_cvae, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, mixing_rates, SimConfig};
use comvae::tensor::Tensor;

fn report(model: &CvaeModel, xt: &Tensor, zt: &Tensor, st: &Tensor, tag: &str) {
    let (zh, sh) = model.posterior_means(xt).unwrap();
    let zz = linear_mcc(&zh, zt, CorrKind::Pearson).unwrap().value;
    let zs = linear_mcc(&zh, st, CorrKind::Pearson).unwrap().value;
    let sz = linear_mcc(&sh, zt, CorrKind::Pearson).unwrap().value;
    let ss = linear_mcc(&sh, st, CorrKind::Pearson).unwrap().value;
    println!("{tag}: zz {zz:.3} zs {zs:.3} sz {sz:.3} ss {ss:.3} delta {:.3}", 0.5*(zz+ss)-0.5*(zs+sz));

    // Hidden-layer probe: rebuild the first layer output in eval mode.
    let xin = xt.map(|v| (1.0 + v).ln());
    let trunk_spec = nn::MlpSpec {
        input: model.encoder_z.input,
        layers: model.encoder_z.layers.clone(),
        heads: vec![nn::HeadSpec { name: "mu".into(), width: model.p_hat, activation: nn::HeadActivation::None },
                    nn::HeadSpec { name: "logvar".into(), width: model.p_hat, activation: nn::HeadActivation::None }],
    };
    let _ = trunk_spec;
    // Reconstruct hidden activations manually for encoder_z.
    let w = model.params.get("encoder_z.l0.w");
    let b = model.params.get("encoder_z.l0.b");
    let rm = model.params.stat("encoder_z.l0.bn.running_mean");
    let rv = model.params.stat("encoder_z.l0.bn.running_var");
    let gamma = model.params.get("encoder_z.l0.bn.gamma");
    let beta = model.params.get("encoder_z.l0.bn.beta");
    let lin = xin.matmul(w);
    let mut h = Tensor::zeros(lin.rows(), lin.cols());
    for r in 0..lin.rows() {
        for c in 0..lin.cols() {
            let v = lin.get(r, c) + b.get(0, c);
            let n = (v - rm.get(0, c)) / (rv.get(0, c) + 1e-5).sqrt() * gamma.get(0, c) + beta.get(0, c);
            h.set(r, c, n.max(0.0));
        }
    }
    let hz = linear_mcc(&h, zt, CorrKind::Pearson).unwrap().value;
    let hs = linear_mcc(&h, st, CorrKind::Pearson).unwrap().value;
    println!("{tag}: hidden(128) probe z {hz:.3} s {hs:.3}");
}

fn main() {
    let scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let sim = SimConfig { seed: 1, ..SimConfig::default() };
    let mut ds = generate_contrastive(&sim).unwrap();
    let names: Vec<String> = ds.mixing.trainable().keys().cloned().collect();
    for n in &names {
        if n.ends_with(".w") {
            let t = ds.mixing.get(n).scale(scale);
            *ds.mixing.get_mut(n) = t;
        }
    }
    let nb = ds.x_background.rows();
    let zb = ds.z_true.select_rows(&(0..nb).collect::<Vec<_>>());
    let zt = ds.z_true.select_rows(&(nb..nb + 1500).collect::<Vec<_>>());
    let lat_b = Tensor::hcat(&[&zb, &Tensor::zeros(nb, 5)]);
    let lat_t = Tensor::hcat(&[&zt, &ds.s_true]);
    let rb = mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_b, 1500.0).unwrap();
    let rt = mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_t, 1500.0).unwrap();
    let mut nrng = Rng::seeded(9).substream("noise");
    for (x, rates) in [(&mut ds.x_background, &rb), (&mut ds.x_target, &rt)] {
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                x.set(r, c, nrng.poisson(rates.get(r, c)).unwrap() as f64);
            }
        }
    }
    let mut rng = Rng::seeded(100).substream("init");
    let mut model = CvaeModel::new(5, 5, 150, Likelihood::Poisson, 1.0, 0.1, &mut rng).unwrap();
    let cfg = TrainConfig { epochs, seed: 100, patience: 10000, ..TrainConfig::default() };
    let cfg2 = TrainConfig { objective: comvae::optim::Objective::Mo, ..cfg.clone() };
    let mo = std::env::var("MO").is_ok();
    let out = if mo {
        train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg2).unwrap()
    } else {
        train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg).unwrap()
    };
    // `model` now holds best-val params.
    report(&model, &ds.x_target, &zt, &ds.s_true, "best-val");

    // Re-estimate encoder BN statistics from the full target set and
    // re-extract posterior means (diagnosis of running-stat mismatch).
    {
        let mut m2 = model.clone();
        let xin = ds.x_target.map(|v| (1.0 + v).ln());
        for prefix in ["encoder_z", "encoder_s"] {
            let w = m2.params.get(&format!("{prefix}.l0.w")).clone();
            let b = m2.params.get(&format!("{prefix}.l0.b")).clone();
            let lin = xin.matmul(&w);
            let n = lin.rows();
            let mut mean = vec![0.0; lin.cols()];
            let mut var = vec![0.0; lin.cols()];
            for r in 0..n { for c in 0..lin.cols() { mean[c] += lin.get(r,c) + b.get(0,c); } }
            for m in mean.iter_mut() { *m /= n as f64; }
            for r in 0..n { for c in 0..lin.cols() { let d = lin.get(r,c)+b.get(0,c)-mean[c]; var[c] += d*d; } }
            for v in var.iter_mut() { *v /= (n - 1) as f64; }
            m2.params.set_stat(&format!("{prefix}.l0.bn.running_mean"), Tensor::new(1, lin.cols(), mean));
            m2.params.set_stat(&format!("{prefix}.l0.bn.running_var"), Tensor::new(1, lin.cols(), var));
        }
        report(&m2, &ds.x_target, &zt, &ds.s_true, "refit-bn");
    }
    let kl_tail: Vec<f64> = out.history.iter().rev().take(3).map(|r| r.val_elbo).collect();
    println!("last val elbos: {kl_tail:?}, best {:.1}", out.state.best_val);
}
