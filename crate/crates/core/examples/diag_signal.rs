//! Measure how strongly the ground-truth rates depend on the latents for
//! different mixing weight scales.

use comvae::nn::{init_params, InitScheme};
use comvae::rng::Rng;
use comvae::simgen::{mixing_rates, SimConfig, MIXING_PREFIX};
use comvae::tensor::Tensor;

fn main() {
    for scale in [1.0_f64, 1.5, 2.0, 3.0, 4.0] {
        let config = SimConfig { seed: 1, ..SimConfig::default() };
        let spec = {
            let c = config.clone();
            // rebuild default mixing spec via a tiny dance: simulate one set
            comvae::simgen::generate_contrastive(&c).unwrap().mixing_spec
        };
        let mut rng = Rng::seeded(1).substream("mixing-init");
        let mut store = init_params(&spec, MIXING_PREFIX, &mut rng, InitScheme::OrthonormalColumns).unwrap();
        // scale every hidden/output weight
        let names: Vec<String> = store.trainable().keys().cloned().collect();
        for n in names {
            if n.ends_with(".w") {
                let t = store.get(&n).scale(scale);
                *store.get_mut(&n) = t;
            }
        }
        let mut lrng = Rng::seeded(77);
        let lat = lrng.normal_tensor(2000, 10);
        let rates = mixing_rates(&store, &spec, &lat, 1500.0).unwrap();
        // per-feature sd of rates across samples vs mean rate
        let g = rates.cols();
        let mut mean_rate = vec![0.0; g];
        for r in 0..rates.rows() { for c in 0..g { mean_rate[c] += rates.get(r,c); } }
        for m in mean_rate.iter_mut() { *m /= rates.rows() as f64; }
        let mut rel_sd = 0.0;
        for c in 0..g {
            let mut v = 0.0;
            for r in 0..rates.rows() { let d = rates.get(r,c) - mean_rate[c]; v += d*d; }
            v /= rates.rows() as f64 - 1.0;
            rel_sd += v.sqrt() / mean_rate[c];
        }
        rel_sd /= g as f64;
        // truth vs constant-rate Poisson log-lik advantage (expected):
        // E_lambda[ lambda ln(lambda/mean) ] approx per feature
        let mut adv = 0.0;
        for c in 0..g {
            for r in 0..rates.rows() {
                let lam = rates.get(r, c);
                adv += lam * (lam / mean_rate[c]).ln() - (lam - mean_rate[c]);
            }
        }
        adv /= rates.rows() as f64;
        println!("scale {scale}: mean relative rate sd {rel_sd:.3}, truth-vs-constant advantage {adv:.1} nats/sample");
    }
}
