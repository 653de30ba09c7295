//! VAE + contrastive-PCA split baseline on the same data regime.

use comvae::metrics::{cpca_split, linear_mcc, CorrKind};
use comvae::models::VaeModel;
use comvae::nn::Likelihood;
use comvae::optim::{train_vae, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, mixing_rates, SimConfig};
use comvae::tensor::Tensor;

fn main() {
    let scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let lib: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1500.0);
    let sim = SimConfig { seed: 1, library_size: lib, ..SimConfig::default() };
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
    let rb = mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_b, lib).unwrap();
    let rt = mixing_rates(&ds.mixing, &ds.mixing_spec, &lat_t, lib).unwrap();
    let mut nrng = Rng::seeded(9).substream("noise");
    for (x, rates) in [(&mut ds.x_background, &rb), (&mut ds.x_target, &rt)] {
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                x.set(r, c, nrng.poisson(rates.get(r, c)).unwrap() as f64);
            }
        }
    }

    let mut rng = Rng::seeded(100).substream("init");
    let mut model = VaeModel::new(10, 150, Likelihood::Poisson, 1.0, 0.1, &mut rng).unwrap();
    if std::env::var("SOFTMAX_DEC").is_ok() {
        model.decoder_family = comvae::models::DecoderFamily::SoftmaxLibrary;
        model.decoder.heads[0].activation = comvae::nn::HeadActivation::RowSoftmax;
    }
    let x_all = Tensor::vcat(&[&ds.x_background, &ds.x_target]);
    let cfg = TrainConfig { epochs, seed: 100, patience: 10000, ..TrainConfig::default() };
    let out = train_vae(&mut model, &x_all, &cfg).unwrap();
    eprintln!("vae trained, best val {:.1}", out.state.best_val);

    let lat_b_hat = model.posterior_means(&ds.x_background).unwrap();
    let lat_t_hat = model.posterior_means(&ds.x_target).unwrap();
    let (bg_idx, sal_idx) = cpca_split(&lat_b_hat, &lat_t_hat, 5, 1.0).unwrap();
    let zh = lat_t_hat.select_cols(&bg_idx);
    let sh = lat_t_hat.select_cols(&sal_idx);
    let zz = linear_mcc(&zh, &zt, CorrKind::Pearson).unwrap().value;
    let zs = linear_mcc(&zh, &ds.s_true, CorrKind::Pearson).unwrap().value;
    let sz = linear_mcc(&sh, &zt, CorrKind::Pearson).unwrap().value;
    let ss = linear_mcc(&sh, &ds.s_true, CorrKind::Pearson).unwrap().value;
    println!("vae+cpca scale {scale}: zz {zz:.3} zs {zs:.3} sz {sz:.3} ss {ss:.3} delta {:.3}",
        0.5 * (zz + ss) - 0.5 * (zs + sz));
    // Full 10-d latent informativeness for reference.
    let fz = linear_mcc(&lat_t_hat, &zt, CorrKind::Pearson).unwrap().value;
    let fs = linear_mcc(&lat_t_hat, &ds.s_true, CorrKind::Pearson).unwrap().value;
    println!("vae full-latent: z {fz:.3} s {fs:.3}");
}
