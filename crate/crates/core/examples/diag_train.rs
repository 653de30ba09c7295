//! Diagnostic: ELBO components and latent statistics after training.

use comvae::graph::Graph;
use comvae::models::{CvaeModel, ElboTerms};
use comvae::nn::{Likelihood, Mode};
use comvae::optim::{train_cvae, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, SimConfig};
use comvae::tensor::Tensor;

fn col_sd(t: &Tensor) -> Vec<f64> {
    (0..t.cols())
        .map(|c| {
            let col = t.col_vec(c);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt()
        })
        .collect()
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let sim = SimConfig { seed: 1, ..SimConfig::default() };
    let ds = generate_contrastive(&sim).unwrap();
    let mut rng = Rng::seeded(100).substream("init");
    let mut model = CvaeModel::new(5, 5, 150, Likelihood::Poisson, 1.0, 0.1, &mut rng).unwrap();
    let cfg = TrainConfig { epochs, seed: 100, patience: 10_000, ..TrainConfig::default() };
    train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg).unwrap();

    // Eval-mode ELBO pieces on a target slice.
    let xt = ds.x_target.select_rows(&(0..256).collect::<Vec<_>>());
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let mut nrng = Rng::seeded(5);
    let ez = nrng.normal_tensor(256, 5);
    let es = nrng.normal_tensor(256, 5);
    let b = model.elbo_target(&mut g, &binding, &xt, &ez, &es, &mut Mode::Eval).unwrap();
    let t = ElboTerms::from_vars(&g, &b.vars).unwrap();
    println!("target eval: recon {:.2} kl_z {:.3} kl_s {:.3} total {:.2}", t.reconstruction, t.kl_z, t.kl_s, t.total);

    let (z_mu, s_mu) = model.posterior_means(&ds.x_target).unwrap();
    println!("posterior mean sds z: {:?}", col_sd(&z_mu).iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    println!("posterior mean sds s: {:?}", col_sd(&s_mu).iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());

    // Train-mode ELBO pieces for comparison (fresh graph).
    let mut g2 = Graph::new();
    let binding2 = model.bind(&mut g2);
    let mut drng = Rng::seeded(6);
    let mut mode = Mode::Train { rng: &mut drng };
    let b2 = model.elbo_target(&mut g2, &binding2, &xt, &ez, &es, &mut mode).unwrap();
    let t2 = ElboTerms::from_vars(&g2, &b2.vars).unwrap();
    println!("target train: recon {:.2} kl_z {:.3} kl_s {:.3} total {:.2}", t2.reconstruction, t2.kl_z, t2.kl_s, t2.total);

    // Truth proxy: log-lik under true rates for those rows.
    let zt = ds.z_true.select_rows(&(1500..1756).collect::<Vec<_>>());
    let st = ds.s_true.select_rows(&(0..256).collect::<Vec<_>>());
    let lat = Tensor::hcat(&[&zt, &st]);
    let rates = comvae::simgen::mixing_rates(&ds.mixing, &ds.mixing_spec, &lat, 1500.0).unwrap();
    let mut ll = 0.0;
    for r in 0..256 {
        for c in 0..150 {
            ll += comvae::dist::poisson_logpmf(xt.get(r, c) as u64, rates.get(r, c)).unwrap();
        }
    }
    println!("truth proxy recon/sample: {:.2}", ll / 256.0);
}
