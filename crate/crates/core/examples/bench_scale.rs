//! Train at different ground-truth mixing scales to find the regime the
//! reported results live in.

use comvae::io::{evaluate, read_dataset, write_dataset, EvalOptions, FittedModel};
use comvae::models::CvaeModel;
use comvae::nn::Likelihood;
use comvae::optim::{train_cvae, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, SimConfig};

fn main() {
    let scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let q_hat: usize = std::env::var("QHAT").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
    let lib: f64 = std::env::args().nth(8).and_then(|s| s.parse().ok()).unwrap_or(1500.0);
    let sim = SimConfig { seed: 1, library_size: lib, ..SimConfig::default() };
    let mut ds = generate_contrastive(&sim).unwrap();
    // Re-scale mixing weights and regenerate observations under the same
    // latents by rebuilding rates + noise manually.
    let names: Vec<String> = ds.mixing.trainable().keys().cloned().collect();
    let head_only = std::env::var("HEAD_ONLY").is_ok();
    for n in &names {
        let hit = if head_only { n == "mixing.rate_scale.w" } else { n.ends_with(".w") };
        if hit {
            let t = ds.mixing.get(n).scale(scale);
            *ds.mixing.get_mut(n) = t;
        }
    }
    if let Ok(bs) = std::env::var("BIAS_SD") {
        let bsd: f64 = bs.parse().unwrap();
        let mut brng = Rng::seeded(1).substream("mixing-bias");
        for n in &names {
            if n.ends_with(".b") && n != "mixing.rate_scale.b" {
                let t = ds.mixing.get(n);
                let nt = brng.normal_tensor(t.rows(), t.cols()).scale(bsd);
                *ds.mixing.get_mut(n) = nt;
            }
        }
    }
    let nb = ds.x_background.rows();
    let zb = ds.z_true.select_rows(&(0..nb).collect::<Vec<_>>());
    let zt = ds.z_true.select_rows(&(nb..nb + ds.x_target.rows()).collect::<Vec<_>>());
    let zeros = comvae::tensor::Tensor::zeros(nb, 5);
    let lat_b = comvae::tensor::Tensor::hcat(&[&zb, &zeros]);
    let lat_t = comvae::tensor::Tensor::hcat(&[&zt, &ds.s_true]);
    let rates_b = comvae::simgen::mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_b, lib).unwrap();
    let rates_t = comvae::simgen::mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_t, lib).unwrap();
    let nb_noise = std::env::var("NB").is_ok();
    let mut nrng = Rng::seeded(9).substream("noise");
    let thetas: Vec<f64> = (0..150).map(|_| nrng.uniform(1.0, 5.0)).collect();
    for (x, rates) in [(&mut ds.x_background, &rates_b), (&mut ds.x_target, &rates_t)] {
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let v = if nb_noise {
                    nrng.neg_binomial(rates.get(r, c), thetas[c]).unwrap() as f64
                } else {
                    nrng.poisson(rates.get(r, c)).unwrap() as f64
                };
                x.set(r, c, v);
            }
        }
    }

    let patience: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let dropout: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    // Truth proxy: mean Poisson log-likelihood under generating rates.
    {
        let mut proxy = 0.0;
        for (x, rates) in [(&ds.x_background, &rates_b), (&ds.x_target, &rates_t)] {
            let mut side = 0.0;
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    side += comvae::dist::poisson_logpmf(x.get(r, c) as u64, rates.get(r, c)).unwrap();
                }
            }
            proxy += side / x.rows() as f64;
        }
        eprintln!("truth proxy (composite, per-sample): {proxy:.1}");
    }
    let batch: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(128);
    let lr: f64 = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let mut rng = Rng::seeded(100).substream("init");
    let lik = if std::env::var("NB").is_ok() { Likelihood::NegBinomial } else { Likelihood::Poisson };
    let mut model = CvaeModel::new(5, q_hat, 150, lik, 1.0, dropout, &mut rng).unwrap();
    if std::env::var("SOFTMAX_DEC").is_ok() {
        model.use_softmax_library_decoder().unwrap();
        eprintln!("softmax-library decoder");
    }
    if std::env::var("NO_BN").is_ok() {
        for spec in [&mut model.encoder_z, &mut model.encoder_s, &mut model.decoder] {
            for l in spec.layers.iter_mut() { l.batch_norm = false; }
        }
        eprintln!("batch norm disabled");
    }
    if std::env::var("DEEP_ENC").is_ok() {
        use comvae::nn::{LayerSpec, Activation};
        for (spec, prefix) in [(&mut model.encoder_z, "encoder_z"), (&mut model.encoder_s, "encoder_s")] {
            let l = LayerSpec { width: 128, activation: Activation::Relu, batch_norm: true, dropout };
            spec.layers.push(l);
            // init the extra layer's params
            let mut r2 = Rng::seeded(555).substream(prefix);
            model.params.insert(&format!("{prefix}.l1.w"), r2.normal_tensor(128, 128).scale(1.0/(128f64).sqrt()));
            model.params.insert(&format!("{prefix}.l1.b"), comvae::tensor::Tensor::zeros(1, 128));
            model.params.insert(&format!("{prefix}.l1.bn.gamma"), comvae::tensor::Tensor::full(1, 128, 1.0));
            model.params.insert(&format!("{prefix}.l1.bn.beta"), comvae::tensor::Tensor::zeros(1, 128));
            model.params.insert_stat(&format!("{prefix}.l1.bn.running_mean"), comvae::tensor::Tensor::zeros(1, 128));
            model.params.insert_stat(&format!("{prefix}.l1.bn.running_var"), comvae::tensor::Tensor::full(1, 128, 1.0));
        }
        eprintln!("deep encoders");
    }
    let warmup: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    let eps: f64 = std::env::var("ADAM_EPS").ok().and_then(|s| s.parse().ok()).unwrap_or(1e-8);
    let cfg = TrainConfig { epochs, seed: 100, patience, kl_warmup_epochs: warmup, batch_size: batch, lr_primal: lr, adam_eps: eps, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let out = train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg).unwrap();
    eprintln!("scale {scale}: {} epochs in {:.0}s, best val {:.1}", out.history.len(), t0.elapsed().as_secs_f64(), out.state.best_val);

    let dir = std::env::temp_dir().join(format!("bench_scale_{}", std::process::id()));
    write_dataset(&dir, &ds).unwrap();
    let stored = read_dataset(&dir).unwrap();
    let report = evaluate(&FittedModel::Cvae(model), &stored, &EvalOptions::default(), serde_json::Value::Null).unwrap();
    let b = report.mcc_pearson.unwrap();
    println!(
        "scale {scale}: zz {:.3} zs {:.3} sz {:.3} ss {:.3} delta {:.3}",
        b.mcc_zz, b.mcc_zs, b.mcc_sz, b.mcc_ss,
        report.delta_mcc_pearson.unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}
