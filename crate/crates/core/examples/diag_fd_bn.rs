//! Finite-difference check through batch-norm train mode and the full
//! cVAE target ELBO.

use comvae::graph::{check_gradient_fd, Graph};
use comvae::nn::{self, BnOptions, LayerSpec, Mode, ParamBinding};
use comvae::rng::Rng;
use comvae::tensor::Tensor;
use std::collections::BTreeMap;

fn main() {
    let mut rng = Rng::seeded(3);
    let spec = nn::MlpSpec {
        input: 4,
        layers: vec![LayerSpec {
            width: 6,
            activation: nn::Activation::Relu,
            batch_norm: true,
            dropout: 0.0,
        }],
        heads: vec![nn::HeadSpec {
            name: "out".into(),
            width: 3,
            activation: nn::HeadActivation::None,
        }],
    };
    let store = nn::init_params(&spec, "n", &mut rng, nn::InitScheme::FanInGaussian).unwrap();
    let x = rng.normal_tensor(12, 4);
    let spec2 = spec.clone();
    let store_template = store.clone();
    let build = move |g: &mut Graph, p: &BTreeMap<String, Tensor>| {
        // Rebuild a store with p's tensors, keeping stats.
        let mut s = store_template.clone();
        for (k, v) in p {
            *s.get_mut(k) = v.clone();
        }
        let binding = ParamBinding::bind(g, &s);
        let xv = g.constant(x.clone());
        let mut dr = Rng::seeded(0);
        let mut mode = Mode::Train { rng: &mut dr };
        let out = nn::mlp_forward(g, &binding, &s, &spec2, "n", xv, BnOptions::default(), &mut mode)
            .unwrap();
        let h = out.head("out");
        let sq = g.square(h);
        g.mean_all(sq)
    };
    let params = store.trainable().clone();
    let report = check_gradient_fd(&build, &params, 1e-5, 1e-4, 30, &mut Rng::seeded(1)).unwrap();
    for b in &report.blocks {
        println!(
            "{}: max rel err {:.3e} (checked {}, excluded {})",
            b.name, b.max_rel_err, b.checked, b.excluded
        );
    }
    println!("PASS = {}", report.pass);
}
